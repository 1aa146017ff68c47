"""Hash, MAC, AEAD, signature and RNG primitives used across the model.

Everything here is a pure function of its inputs, except
:class:`DeterministicRng` which carries explicit state.
"""

from __future__ import annotations

import hashlib
import random

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import algorithms
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.cmac import CMAC

DIGEST_SIZE = 32
KEY_SIZE = 16
TAG_SIZE = 16
NONCE_SIZE = 12

# Digests are 32 bytes, AES-128 keys 16: a digest used as a CMAC key is cut here.
CMAC_KEY_TRUNCATION = KEY_SIZE


class AuthFailure(Exception):
    """AEAD open failed: wrong key or tampered nonce/ciphertext/tag/aad."""


def sha256(msg: bytes) -> bytes:
    return hashlib.sha256(msg).digest()


def truncate_key(digest: bytes) -> bytes:
    """Turn a 32-byte digest into a 16-byte symmetric key."""
    if len(digest) != DIGEST_SIZE:
        raise ValueError(f"expected {DIGEST_SIZE}-byte digest, got {len(digest)}")
    return digest[:CMAC_KEY_TRUNCATION]


def derive_key(*parts: bytes) -> bytes:
    """truncate16(sha256(p0 || p1 || ...))"""
    return truncate_key(sha256(b"".join(parts)))


def cmac(key: bytes, msg: bytes) -> bytes:
    """AES-CMAC (RFC 4493) with a 128-bit key."""
    if len(key) != KEY_SIZE:
        raise ValueError(f"CMAC key must be {KEY_SIZE} bytes, got {len(key)}")
    c = CMAC(algorithms.AES(key))
    c.update(msg)
    return c.finalize()


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """AES-128-GCM; returns ciphertext || 16-byte tag."""
    _check_aead_args(key, nonce)
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, sealed: bytes, aad: bytes = b"") -> bytes:
    _check_aead_args(key, nonce)
    if len(sealed) < TAG_SIZE:
        raise AuthFailure("ciphertext shorter than tag")
    try:
        return AESGCM(key).decrypt(nonce, sealed, aad)
    except InvalidTag:
        raise AuthFailure("authentication tag mismatch") from None


def _check_aead_args(key, nonce):
    if len(key) != KEY_SIZE:
        raise ValueError(f"AEAD key must be {KEY_SIZE} bytes")
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"AEAD nonce must be {NONCE_SIZE} bytes")


class SigKeyPair:
    """Signing key pair. Ed25519 is the default (and only shipped) backend.

    Only :attr:`public` is meant to leave the owning object; the secret
    half stays inside and is reachable only through :meth:`sign`.
    """

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("key seed must be 32 bytes")
        self._sk = Ed25519PrivateKey.from_private_bytes(seed)
        self.public: bytes = self._sk.public_key().public_bytes_raw()

    @classmethod
    def generate(cls, rng: "DeterministicRng") -> "SigKeyPair":
        return cls(rng.bytes(32))

    def sign(self, msg: bytes) -> bytes:
        return self._sk.sign(msg)

    def __repr__(self):
        return f"SigKeyPair(public={self.public.hex()[:16]}...)"


def verify_signature(public: bytes, msg: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, msg)
    except (InvalidSignature, ValueError):
        return False
    return True


class DeterministicRng:
    """Seeded byte stream. Never touches ambient entropy."""

    def __init__(self, seed: int):
        self.seed = seed
        self._random = random.Random(seed)

    def bytes(self, n: int) -> bytes:
        if n < 0:
            raise ValueError("n must be non-negative")
        if n == 0:
            return b""
        return self._random.randbytes(n)

    def fork(self, label: str) -> "DeterministicRng":
        """Independent child stream, keyed by label, for subsystems that must
        not perturb each other's draws."""
        child_seed = int.from_bytes(sha256(f"{self.seed}:{label}".encode())[:8], "big")
        return DeterministicRng(child_seed)
