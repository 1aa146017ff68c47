"""Modeled SGX CPU: measured enclave loading, EINITTOKEN launch control,
EREPORT/EGETKEY, remote-attestation reports, sealing and debug access.

All keys handed to enclaves are derived from a per-CPU secret that never
leaves :class:`CpuState`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .crypto import (
    DIGEST_SIZE,
    NONCE_SIZE,
    TAG_SIZE,
    AuthFailure,
    DeterministicRng,
    SigKeyPair,
    aead_open,
    aead_seal,
    cmac,
    derive_key,
    sha256,
    verify_signature,
)

REPORT_DATA_SIZE = 32
REPORT_SIZE = DIGEST_SIZE + REPORT_DATA_SIZE + TAG_SIZE
HEAP_SIZE = 1024

_REPORT_LABEL = b"report"
_SEAL_LABEL = b"seal"
_SEAL_AAD = b"sgxio-sealed-v1"


class EnclaveError(Exception):
    pass


class MeasurementMismatch(EnclaveError):
    pass


class InvalidToken(EnclaveError):
    pass


class DebugFlagMismatch(EnclaveError):
    pass


class ProductionEnclave(EnclaveError):
    """Debug access attempted on a production-mode enclave."""


class Intercepted(EnclaveError):
    """ENCLS debug instruction trapped by the hypervisor."""


class HostContext(enum.Enum):
    HYPERVISOR = "hypervisor-context"
    OS = "os-context"


class KeyType(enum.Enum):
    REPORT_KEY = "report"
    SEAL_KEY = "seal"


@dataclass(frozen=True)
class Measurement:
    """MRENCLAVE: the enclave's identity."""

    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_SIZE:
            raise ValueError("measurement must be 32 bytes")

    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def fromhex(cls, text: str) -> "Measurement":
        return cls(bytes.fromhex(text))

    def __str__(self):
        return self.digest.hex()[:16]


@dataclass(frozen=True)
class EnclaveImage:
    pages: tuple[bytes, ...]
    debug: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pages", tuple(bytes(p) for p in self.pages))


def measure(image: EnclaveImage) -> Measurement:
    """Chained hash log: m0 = H(debug byte), m_{i+1} = H(m_i || page_i)."""
    m = sha256(bytes([1 if image.debug else 0]))
    for page in image.pages:
        m = sha256(m + page)
    return Measurement(m)


@dataclass(frozen=True)
class EinitToken:
    target: Measurement
    debug: bool
    signature: bytes

    @staticmethod
    def signed_bytes(target: Measurement, debug: bool) -> bytes:
        return b"EINITTOKEN" + target.digest + bytes([1 if debug else 0])


class LaunchAuthority:
    """Issues EINITTOKENs. Debug tokens are free; production tokens only for
    licensed measurements."""

    def __init__(self, rng: DeterministicRng):
        self._keypair = SigKeyPair.generate(rng)
        self.public = self._keypair.public
        self._licensed: set[Measurement] = set()

    def license(self, measurement: Measurement) -> None:
        self._licensed.add(measurement)

    def issue(self, target: Measurement, debug: bool) -> EinitToken:
        if not debug and target not in self._licensed:
            raise InvalidToken(f"no production license for {target}")
        sig = self._keypair.sign(EinitToken.signed_bytes(target, debug))
        return EinitToken(target, debug, sig)


def forge_token(signer: SigKeyPair, target: Measurement, debug: bool) -> EinitToken:
    """Token signed by an arbitrary key; used to exercise launch rejection."""
    return EinitToken(target, debug, signer.sign(EinitToken.signed_bytes(target, debug)))


class CpuState:
    """One simulated processor. The secret stays in here; only derived keys
    leave."""

    def __init__(self, rng: DeterministicRng, launch_pubkey: bytes, label: str = "cpu0"):
        self.label = label
        self.__secret = rng.bytes(32)
        self._attestation_keypair = SigKeyPair.generate(rng)
        self.attestation_pubkey = self._attestation_keypair.public
        self.launch_pubkey = launch_pubkey

    def __repr__(self):
        return f"CpuState({self.label!r})"

    def _derive(self, label: bytes, identity: Measurement) -> bytes:
        return derive_key(self.__secret, label, identity.digest)

    def report_key(self, identity: Measurement) -> bytes:
        return self._derive(_REPORT_LABEL, identity)

    def seal_key(self, identity: Measurement) -> bytes:
        return self._derive(_SEAL_LABEL, identity)

    def _sign_attestation(self, msg: bytes) -> bytes:
        return self._attestation_keypair.sign(msg)


@dataclass(eq=False)
class EnclaveInstance:
    identity: Measurement
    debug: bool
    host_context: HostContext
    cpu: CpuState = field(repr=False)
    name: str = ""
    _memory: bytearray = field(default_factory=bytearray, repr=False)
    heap_offset: int = 0

    # In-enclave accessors. Code outside the enclave must use debug_read/debug_write.
    def store(self, offset: int, data: bytes) -> None:
        self._check_range(offset, len(data))
        self._memory[offset:offset + len(data)] = data

    def load(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        return bytes(self._memory[offset:offset + length])

    @property
    def memory_size(self) -> int:
        return len(self._memory)

    def _check_range(self, offset, length):
        if offset < 0 or length < 0 or offset + length > len(self._memory):
            raise IndexError(f"enclave access [{offset}, {offset + length}) out of bounds")


def launch(cpu: CpuState, image: EnclaveImage, token: EinitToken,
           vendor_expected: Measurement, context: HostContext, name: str = "") -> EnclaveInstance:
    actual = measure(image)
    if actual != vendor_expected:
        raise MeasurementMismatch(f"measured {actual}, vendor signed {vendor_expected}")
    if (not verify_signature(cpu.launch_pubkey, EinitToken.signed_bytes(token.target, token.debug),
                             token.signature)
            or token.target != actual):
        raise InvalidToken("EINITTOKEN does not verify for this enclave")
    if token.debug != image.debug:
        raise DebugFlagMismatch(f"token debug={token.debug}, image debug={image.debug}")
    content = b"".join(image.pages)
    memory = bytearray(content) + bytearray(HEAP_SIZE)
    return EnclaveInstance(actual, image.debug, context, cpu, name, memory, len(content))


@dataclass(frozen=True)
class Report:
    enclave_id: Measurement
    data: bytes
    mac: bytes

    def __post_init__(self):
        if len(self.data) != REPORT_DATA_SIZE:
            raise ValueError("report data must be 32 bytes")
        if len(self.mac) != TAG_SIZE:
            raise ValueError("report mac must be 16 bytes")

    def to_bytes(self) -> bytes:
        return self.enclave_id.digest + self.data + self.mac

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Report":
        if len(raw) != REPORT_SIZE:
            raise ValueError(f"report must be {REPORT_SIZE} bytes")
        return cls(Measurement(raw[:32]), raw[32:64], raw[64:])


def ereport(enclave: EnclaveInstance, target_id: Measurement, data: bytes) -> Report:
    """Report of ``enclave`` MACed under the target's report key."""
    key = enclave.cpu.report_key(target_id)
    return Report(enclave.identity, data, cmac(key, enclave.identity.digest + data))


def egetkey(enclave: EnclaveInstance, key_type: KeyType) -> bytes:
    if key_type is KeyType.REPORT_KEY:
        return enclave.cpu.report_key(enclave.identity)
    if key_type is KeyType.SEAL_KEY:
        return enclave.cpu.seal_key(enclave.identity)
    raise ValueError(key_type)


@dataclass(frozen=True)
class RemoteReport:
    identity: Measurement
    debug: bool
    data: bytes
    signature: bytes

    @staticmethod
    def signed_bytes(identity: Measurement, debug: bool, data: bytes) -> bytes:
        return b"QUOTE" + identity.digest + bytes([1 if debug else 0]) + data


def remote_report(enclave: EnclaveInstance, data: bytes) -> RemoteReport:
    if len(data) != REPORT_DATA_SIZE:
        raise ValueError("report data must be 32 bytes")
    msg = RemoteReport.signed_bytes(enclave.identity, enclave.debug, data)
    return RemoteReport(enclave.identity, enclave.debug, data, enclave.cpu._sign_attestation(msg))


def verify_remote_report(attestation_pubkey: bytes, report: RemoteReport) -> bool:
    msg = RemoteReport.signed_bytes(report.identity, report.debug, report.data)
    return verify_signature(attestation_pubkey, msg, report.signature)


def seal(enclave: EnclaveInstance, plaintext: bytes, nonce: bytes, key: bytes | None = None) -> bytes:
    """nonce || AEAD(seal key). The AEAD tag is the integrity redundancy.

    ``key`` overrides the hardware seal key (delegated sealing)."""
    if len(nonce) != NONCE_SIZE:
        raise ValueError("seal nonce must be 12 bytes")
    key = key if key is not None else egetkey(enclave, KeyType.SEAL_KEY)
    return nonce + aead_seal(key, nonce, plaintext, _SEAL_AAD)


def unseal(enclave: EnclaveInstance, blob: bytes, key: bytes | None = None) -> bytes:
    """Raises AuthFailure for blobs sealed by another identity or CPU."""
    if len(blob) < NONCE_SIZE + TAG_SIZE:
        raise AuthFailure("sealed blob truncated")
    key = key if key is not None else egetkey(enclave, KeyType.SEAL_KEY)
    return aead_open(key, blob[:NONCE_SIZE], blob[NONCE_SIZE:], _SEAL_AAD)


def debug_read(enclave: EnclaveInstance, offset: int, length: int, *, intercepted: bool = False) -> bytes:
    """EDBGRD. ``intercepted`` is the platform's ENCLS-exiting verdict."""
    if intercepted:
        raise Intercepted("EDBGRD trapped by ENCLS-exiting bitmap")
    if not enclave.debug:
        raise ProductionEnclave("EDBGRD on production enclave")
    return enclave.load(offset, length)


def debug_write(enclave: EnclaveInstance, offset: int, data: bytes, *, intercepted: bool = False) -> None:
    if intercepted:
        raise Intercepted("EDBGWR trapped by ENCLS-exiting bitmap")
    if not enclave.debug:
        raise ProductionEnclave("EDBGWR on production enclave")
    enclave.store(offset, data)
