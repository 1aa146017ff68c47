"""Local attestation, the non-interactive key transport built on it, an
optional liveness confirmation, and trust-chain attestation from a remote
verifier down to hypervisor approval.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field

from .crypto import DIGEST_SIZE, AuthFailure, DeterministicRng, aead_open, aead_seal, cmac, sha256
from .enclave import (
    EnclaveInstance,
    KeyType,
    Measurement,
    RemoteReport,
    Report,
    egetkey,
    ereport,
    verify_remote_report,
)

TRANSPORT_NONCE_SIZE = 32
MESSAGE_SIZE = DIGEST_SIZE + TRANSPORT_NONCE_SIZE

APP_TO_DRIVER = 0
DRIVER_TO_APP = 1

_CONFIRM_AAD = b"sgxio-key-confirm"


def local_attest_verify(verifier: EnclaveInstance, report: Report) -> bool:
    """Target side of local attestation: recompute the MAC under our own
    report key."""
    key = egetkey(verifier, KeyType.REPORT_KEY)
    expected = cmac(key, report.enclave_id.digest + report.data)
    return hmac.compare_digest(expected, report.mac)


@dataclass(frozen=True)
class KeyTransportMessage:
    sender_id: Measurement
    nonce: bytes

    def __post_init__(self):
        if len(self.nonce) != TRANSPORT_NONCE_SIZE:
            raise ValueError("transport nonce must be 32 bytes")

    def to_bytes(self) -> bytes:
        return self.sender_id.digest + self.nonce

    @classmethod
    def from_bytes(cls, raw: bytes) -> "KeyTransportMessage":
        if len(raw) != MESSAGE_SIZE:
            raise ValueError(f"key transport message must be {MESSAGE_SIZE} bytes")
        return cls(Measurement(raw[:32]), raw[32:])


def key_transport_send(sender: EnclaveInstance, receiver_id: Measurement,
                       rng: DeterministicRng) -> tuple[bytes, KeyTransportMessage]:
    """The MAC of a report over a fresh nonce, targeted at the receiver, is the
    key. The report itself is discarded; only (sender id, nonce) is sent."""
    nonce = rng.bytes(TRANSPORT_NONCE_SIZE)
    report = ereport(sender, receiver_id, nonce)
    return report.mac, KeyTransportMessage(sender.identity, nonce)


def key_transport_recv(receiver: EnclaveInstance, msg: KeyTransportMessage) -> bytes:
    # No error path: a wrong receiver just gets a different key, which the
    # first authenticated frame exposes.
    key = egetkey(receiver, KeyType.REPORT_KEY)
    return cmac(key, msg.sender_id.digest + msg.nonce)


def channel_nonce(direction: int, counter: int) -> bytes:
    """12-byte AEAD nonce: direction bit in the top byte, counter in the low 11 bytes."""
    if direction not in (APP_TO_DRIVER, DRIVER_TO_APP):
        raise ValueError("direction must be 0 or 1")
    if counter < 0 or counter >= 1 << 88:
        raise ValueError("counter out of range")
    return bytes([direction << 7]) + counter.to_bytes(11, "big")


def nonce_fields(nonce: bytes) -> tuple[int, int]:
    return nonce[0] >> 7, int.from_bytes(bytes([nonce[0] & 0x7F]) + nonce[1:], "big")


# Counter 0 in the receiver->sender direction is reserved for key confirmation.
CONFIRM_NONCE = channel_nonce(DRIVER_TO_APP, 0)


def confirm_key(key: bytes, msg: KeyTransportMessage) -> bytes:
    """Receiver's liveness proof: the sender's nonce encrypted under the new key."""
    return aead_seal(key, CONFIRM_NONCE, msg.nonce, _CONFIRM_AAD)


@dataclass
class PendingTransport:
    """Sender-side state for one key transport, awaiting optional confirmation."""

    key: bytes
    message: KeyTransportMessage
    confirmed: bool = False

    def confirm(self, confirmation: bytes) -> bool:
        if self.confirmed:
            return False  # one-shot: a second confirmation is a replay
        try:
            plain = aead_open(self.key, CONFIRM_NONCE, confirmation, _CONFIRM_AAD)
        except AuthFailure:
            return False
        if not hmac.compare_digest(plain, self.message.nonce):
            return False
        self.confirmed = True
        return True


def start_transport(sender: EnclaveInstance, receiver_id: Measurement,
                    rng: DeterministicRng) -> PendingTransport:
    key, msg = key_transport_send(sender, receiver_id, rng)
    return PendingTransport(key, msg)


# --- trust chain -----------------------------------------------------------

LINKS = ("user_app", "driver", "tb", "hypervisor")
_FIRST_LINK = {"remote": 0, "user_app": 1, "driver": 2}


class ChainBroken(Exception):
    def __init__(self, link: str, reason: str):
        super().__init__(f"{link}: {reason}")
        self.link = link
        self.reason = reason


@dataclass
class TrustPolicy:
    """Expected identities per role; ``debug`` fixes the required debug flag
    for the remotely attested role (``None`` = either)."""

    user_apps: frozenset[Measurement] = frozenset()
    drivers: frozenset[Measurement] = frozenset()
    tbs: frozenset[Measurement] = frozenset()
    debug: dict[str, bool | None] = field(default_factory=dict)

    def allowed(self, role: str) -> frozenset[Measurement]:
        return {"user_app": self.user_apps, "driver": self.drivers, "tb": self.tbs}[role]


@dataclass
class ChainEvidence:
    """What the entities along the chain present.

    Each local report is checked by the enclave it targets: the driver report
    by ``user_app``, the TB report by ``driver``. ``approval`` is the TB
    verdict bytes, bound into ``tb_report.data`` by hash.
    """

    user_app_report: RemoteReport | None
    user_app: EnclaveInstance | None
    driver_report: Report | None
    driver: EnclaveInstance | None
    tb_report: Report | None
    approval: bytes | None
    challenge: bytes = b""


@dataclass(frozen=True)
class ChainVerdict:
    passed: bool
    links_checked: tuple[str, ...]


def approval_positive(approval: bytes) -> bool:
    return len(approval) > 0 and approval[0] == 1


def attest_chain(policy: TrustPolicy, verifier_role: str, evidence: ChainEvidence,
                 attestation_pubkey: bytes | None = None) -> ChainVerdict:
    """Walk the chain from the verifier's position down to the hypervisor.

    Raises :class:`ChainBroken` naming the first failing link.
    """
    if verifier_role not in _FIRST_LINK:
        raise ValueError(f"unknown verifier role {verifier_role!r}")
    links = LINKS[_FIRST_LINK[verifier_role]:]
    for link in links:
        _CHECKS[link](policy, evidence, attestation_pubkey)
    return ChainVerdict(True, links)


def _check_user_app(policy, ev: ChainEvidence, pubkey):
    rr = ev.user_app_report
    if rr is None or pubkey is None:
        raise ChainBroken("user_app", "no remote report")
    if not verify_remote_report(pubkey, rr):
        raise ChainBroken("user_app", "bad signature")
    if rr.data != sha256(ev.challenge):
        raise ChainBroken("user_app", "stale challenge")
    if rr.identity not in policy.user_apps:
        raise ChainBroken("user_app", "measurement not in policy")
    want_debug = policy.debug.get("user_app")
    if want_debug is not None and rr.debug != want_debug:
        raise ChainBroken("user_app", "debug flag")


def _check_local(link, verifier, report, allowed):
    if report is None or verifier is None:
        raise ChainBroken(link, "no report")
    if not local_attest_verify(verifier, report):
        raise ChainBroken(link, "report mac")
    if report.enclave_id not in allowed:
        raise ChainBroken(link, "measurement not in policy")


def _check_driver(policy, ev: ChainEvidence, pubkey):
    _check_local("driver", ev.user_app, ev.driver_report, policy.drivers)


def _check_tb(policy, ev: ChainEvidence, pubkey):
    _check_local("tb", ev.driver, ev.tb_report, policy.tbs)


def _check_hypervisor(policy, ev: ChainEvidence, pubkey):
    if ev.approval is None or ev.tb_report is None:
        raise ChainBroken("hypervisor", "no approval")
    if ev.tb_report.data != sha256(ev.approval):
        raise ChainBroken("hypervisor", "approval not bound to TB report")
    if not approval_positive(ev.approval):
        raise ChainBroken("hypervisor", "approval withheld")


_CHECKS = {
    "user_app": _check_user_app,
    "driver": _check_driver,
    "tb": _check_tb,
    "hypervisor": _check_hypervisor,
}
