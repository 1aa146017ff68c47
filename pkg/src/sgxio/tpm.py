"""TPM with a single PCR, an AIK and quotes over (PCR || nonce)."""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import DIGEST_SIZE, DeterministicRng, SigKeyPair, sha256, verify_signature

PCR_RESET = bytes(DIGEST_SIZE)
QUOTE_NONCE_SIZE = 32


class Pcr:
    def __init__(self):
        self.value = PCR_RESET

    def __repr__(self):
        return f"Pcr({self.value.hex()[:16]}...)"


def extend(pcr: Pcr, measurement: bytes) -> None:
    """pcr <- H(pcr || measurement)"""
    if len(measurement) != DIGEST_SIZE:
        raise ValueError("extend takes a 32-byte digest")
    pcr.value = sha256(pcr.value + measurement)


@dataclass(frozen=True)
class Quote:
    pcr_value: bytes
    nonce: bytes
    signature: bytes

    @staticmethod
    def signed_bytes(pcr_value: bytes, nonce: bytes) -> bytes:
        return pcr_value + nonce


class Aik:
    def __init__(self, rng: DeterministicRng, tpm_label: str):
        self._keypair = SigKeyPair.generate(rng)
        self.public = self._keypair.public
        self.tpm_label = tpm_label

    def sign(self, msg: bytes) -> bytes:
        return self._keypair.sign(msg)


class Tpm:
    def __init__(self, rng: DeterministicRng, label: str = "tpm0"):
        self.label = label
        self.pcr = Pcr()
        self._aik = Aik(rng, label)

    @property
    def aik_public(self) -> bytes:
        return self._aik.public

    def reset(self) -> None:
        self.pcr = Pcr()

    def extend(self, measurement: bytes) -> bytes:
        extend(self.pcr, measurement)
        return self.pcr.value

    def quote(self, nonce: bytes) -> Quote:
        if len(nonce) != QUOTE_NONCE_SIZE:
            raise ValueError("quote nonce must be 32 bytes")
        value = self.pcr.value
        return Quote(value, nonce, self._aik.sign(Quote.signed_bytes(value, nonce)))


def verify_quote(quote: Quote, aik_public: bytes, expected_pcr: bytes, nonce: bytes) -> bool:
    return (
        verify_signature(aik_public, Quote.signed_bytes(quote.pcr_value, quote.nonce), quote.signature)
        and quote.nonce == nonce
        and quote.pcr_value == expected_pcr
    )


def measure_stages(blobs) -> bytes:
    """PCR value after a fresh reset and one extend per boot-stage blob."""
    pcr = Pcr()
    for blob in blobs:
        extend(pcr, sha256(blob))
    return pcr.value


class TpmPort:
    """The wire to a TPM as seen by software: whoever controls the port
    decides which TPM answers. Responses carry the answering AIK."""

    def __init__(self, tpm: Tpm):
        self.tpm = tpm

    def quote(self, nonce: bytes) -> tuple[Quote, bytes]:
        return self.tpm.quote(nonce), self.tpm.aik_public
