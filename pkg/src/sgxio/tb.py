"""Trusted Boot (TB) enclave logic.

The TB enclave pins the local TPM's AIK (provisioned by an approved
integrator, stored sealed), attests the hypervisor once per boot epoch via a
TPM quote, approves driver enclaves that reach it over a hypervisor-granted
channel, and derives sealing keys on behalf of other enclaves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import enclave as enc
from .attestation import local_attest_verify
from .crypto import DeterministicRng, derive_key, sha256, verify_signature
from .enclave import EnclaveImage, EnclaveInstance, KeyType, Measurement, Report
from .hypervisor import Handle
from .tpm import QUOTE_NONCE_SIZE, verify_quote

TB_CODE = b"sgxio tb-enclave v1: pinned-aik quote check, driver approval, seal delegation"
ROGUE_TB_CODE = b"sgxio tb-enclave (rogue): approves every driver"

APPROVAL_SIZE = 1 + 32 + 8


class TbError(Exception):
    pass


class NoTpmAccess(TbError):
    pass


class BadQuote(TbError):
    def __init__(self, reason: str):
        super().__init__(f"bad quote: {reason}")
        self.reason = reason


class UnauthorizedIntegrator(TbError):
    pass


class ChannelDenied(TbError):
    pass


class AttestationFailed(TbError):
    pass


class UnknownDriver(TbError):
    pass


class AikMissing(TbError):
    pass


@dataclass(frozen=True)
class TbConfig:
    """Policy baked into the TB image, hence part of its measurement."""

    golden_pcr: bytes
    integrator_keys: tuple[bytes, ...]
    driver_allowlist: tuple[Measurement, ...]

    def to_page(self) -> bytes:
        doc = {
            "golden_pcr": self.golden_pcr.hex(),
            "integrators": sorted(k.hex() for k in self.integrator_keys),
            "drivers": sorted(m.hex() for m in self.driver_allowlist),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def tb_image(config: TbConfig, debug: bool = False, code: bytes = TB_CODE) -> EnclaveImage:
    return EnclaveImage((code, config.to_page()), debug)


def aik_endorsement(aik_public: bytes) -> bytes:
    """Message an integrator signs to authorize an AIK."""
    return b"sgxio-aik-provision" + aik_public


@dataclass(frozen=True)
class Approval:
    verdict: bool
    issued_to: Measurement
    step: int

    def to_bytes(self) -> bytes:
        return bytes([1 if self.verdict else 0]) + self.issued_to.digest + self.step.to_bytes(8, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Approval":
        if len(raw) != APPROVAL_SIZE or raw[0] not in (0, 1):
            raise ValueError("malformed approval")
        return cls(raw[0] == 1, Measurement(raw[1:33]), int.from_bytes(raw[33:], "big"))


@dataclass(frozen=True)
class PinnedAik:
    public: bytes
    sealed: bytes


class TbEnclave:
    def __init__(self, instance: EnclaveInstance, config: TbConfig, rng: DeterministicRng,
                 *, pinning: bool = True, rogue: bool = False):
        self.instance = instance
        self.config = config
        self.rng = rng
        self.pinning = pinning
        self.rogue = rogue
        self.pinned: PinnedAik | None = None
        self._attested_epoch: int | None = None

    @property
    def identity(self) -> Measurement:
        return self.instance.identity

    def provision_aik(self, aik_public: bytes, integrator_signature: bytes) -> bytes:
        msg = aik_endorsement(aik_public)
        if not any(verify_signature(k, msg, integrator_signature) for k in self.config.integrator_keys):
            raise UnauthorizedIntegrator("AIK not signed by an approved integrator")
        sealed = enc.seal(self.instance, aik_public, self.rng.bytes(12))
        self.pinned = PinnedAik(aik_public, sealed)
        return sealed

    def load_aik(self, sealed: bytes) -> bytes:
        """Unseal a stored AIK. Raises AuthFailure for blobs from another CPU
        or enclave identity."""
        public = enc.unseal(self.instance, sealed)
        self.pinned = PinnedAik(public, sealed)
        return public

    def attest_hypervisor(self, tpm_handle: Handle | None, epoch: int) -> bool:
        """One quote per epoch; the verdict is cached. Raises NoTpmAccess or BadQuote."""
        if self._attested_epoch == epoch:
            return True
        if tpm_handle is None or tpm_handle.target is None:
            raise NoTpmAccess("no TPM capability")
        if self.pinning and self.pinned is None:
            raise AikMissing("no AIK provisioned")
        challenge = self.rng.bytes(QUOTE_NONCE_SIZE)
        quote, presented_aik = tpm_handle.target.quote(challenge)
        aik = self.pinned.public if self.pinning else presented_aik
        if not verify_quote(quote, aik, quote.pcr_value, quote.nonce):
            raise BadQuote("origin")
        if quote.nonce != challenge:
            raise BadQuote("nonce")
        if quote.pcr_value != self.config.golden_pcr and not self.rogue:
            raise BadQuote("pcr")
        self._attested_epoch = epoch
        return True

    def attested(self, epoch: int) -> bool:
        return self.rogue or self._attested_epoch == epoch

    def approve_driver(self, driver_report: Report, via: Handle | None, step: int,
                       epoch: int) -> tuple[Approval, Report]:
        """Returns the approval and a report targeted at the driver that binds it.

        Raises ChannelDenied without a granted channel, AttestationFailed if the
        hypervisor was not attested this epoch or the report does not verify,
        UnknownDriver for measurements outside the allowlist.
        """
        if via is None:
            raise ChannelDenied("request did not arrive over a granted TB channel")
        if not local_attest_verify(self.instance, driver_report):
            raise AttestationFailed("driver report does not verify")
        if not self.attested(epoch):
            raise AttestationFailed("hypervisor attestation has not succeeded this epoch")
        if driver_report.enclave_id not in self.config.driver_allowlist and not self.rogue:
            raise UnknownDriver(f"driver {driver_report.enclave_id} not allowlisted")
        return self.sign_verdict(True, driver_report.enclave_id, step)

    def sign_verdict(self, verdict: bool, driver_id: Measurement, step: int) -> tuple[Approval, Report]:
        approval = Approval(verdict, driver_id, step)
        return approval, enc.ereport(self.instance, driver_id, sha256(approval.to_bytes()))

    def delegated_seal_key(self, requester_report: Report, epoch: int) -> bytes:
        if not local_attest_verify(self.instance, requester_report):
            raise AttestationFailed("requester report does not verify")
        if not self.attested(epoch):
            raise AttestationFailed("hypervisor attestation has not succeeded this epoch")
        base = enc.egetkey(self.instance, KeyType.SEAL_KEY)
        return derive_key(base, requester_report.enclave_id.digest)

