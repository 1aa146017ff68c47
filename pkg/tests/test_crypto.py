import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sgxio.crypto import (
    AuthFailure,
    DeterministicRng,
    SigKeyPair,
    aead_open,
    aead_seal,
    cmac,
    derive_key,
    sha256,
    truncate_key,
    verify_signature,
)

RFC4493_KEY = bytes.fromhex("2b7e151628aed2a6abf7158809cf4f3c")
RFC4493_MSG = bytes.fromhex(
    "6bc1bee22e409f96e93d7e117393172a"
    "ae2d8a571e03ac9c9eb76fac45af8e51"
    "30c81c46a35ce411e5fbc1191a0a52ef"
    "f69f2445df4f9b17ad2b417be66c3710"
)
RFC4493 = [
    (0, "bb1d6929e95937287fa37d129b756746"),
    (16, "070a16b46b4d4144f79bdd9dd04a287c"),
    (40, "dfa66747de9ae63030ca32611497c827"),
    (64, "51f0bebf7e3b9d92fc49741779363cfe"),
]


def test_sha256_fips_vectors():
    assert sha256(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert sha256(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_sha256_extension_changes_digest():
    rnd = random.Random(1)
    for _ in range(1000):
        m = rnd.randbytes(rnd.randrange(0, 64))
        assert sha256(m) == oracles.sha256(m)
        assert sha256(m) != sha256(m + b"\x00")


@pytest.mark.parametrize("length,tag", RFC4493)
def test_cmac_rfc4493(length, tag):
    msg = RFC4493_MSG[:length]
    assert cmac(RFC4493_KEY, msg).hex() == tag
    assert oracles.cmac(RFC4493_KEY, msg).hex() == tag


def test_cmac_matches_oracle_and_separates_keys():
    rnd = random.Random(2)
    for _ in range(1000):
        k, k2 = rnd.randbytes(16), rnd.randbytes(16)
        m = rnd.randbytes(rnd.randrange(0, 70))
        assert cmac(k, m) == oracles.cmac(k, m)
        assert cmac(k, m) == cmac(k, m)
        if k != k2:
            assert cmac(k, m) != cmac(k2, m)


def test_cmac_rejects_long_keys():
    with pytest.raises(ValueError):
        cmac(bytes(32), b"")


def test_key_derivation():
    assert truncate_key(bytes(range(32))) == bytes(range(16))
    with pytest.raises(ValueError):
        truncate_key(bytes(16))
    assert derive_key(b"a", b"bc") == oracles.sha256(b"abc")[:16]


def test_aead_roundtrip_and_aad():
    rnd = random.Random(3)
    key, nonce, pt = rnd.randbytes(16), rnd.randbytes(12), rnd.randbytes(1024)
    sealed = aead_seal(key, nonce, pt, b"hdr")
    assert len(sealed) == len(pt) + 16
    assert aead_open(key, nonce, sealed, b"hdr") == pt
    with pytest.raises(AuthFailure):
        aead_open(key, nonce, sealed, b"other")
    with pytest.raises(AuthFailure):
        aead_open(rnd.randbytes(16), nonce, sealed, b"hdr")
    with pytest.raises(AuthFailure):
        aead_open(key, nonce, b"short")


def test_aead_single_bit_tamper_always_detected():
    rnd = random.Random(4)
    key, nonce = rnd.randbytes(16), rnd.randbytes(12)
    sealed = aead_seal(key, nonce, rnd.randbytes(48))
    for _ in range(1000):
        bit = rnd.randrange(len(sealed) * 8)
        bad = bytearray(sealed)
        bad[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(AuthFailure):
            aead_open(key, nonce, bytes(bad))


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=16, max_size=16), st.binary(min_size=12, max_size=12), st.binary(max_size=200),
       st.binary(max_size=20))
def test_aead_roundtrip_property(key, nonce, pt, aad):
    assert aead_open(key, nonce, aead_seal(key, nonce, pt, aad), aad) == pt


def test_signatures():
    rng = DeterministicRng(5)
    a, b = SigKeyPair.generate(rng), SigKeyPair.generate(rng)
    sig = a.sign(b"msg")
    assert verify_signature(a.public, b"msg", sig)
    assert not verify_signature(b.public, b"msg", sig)
    assert not verify_signature(a.public, b"msg!", sig)
    assert not verify_signature(b"short", b"msg", sig)


def test_rng_contract():
    assert DeterministicRng(9).bytes(64) == DeterministicRng(9).bytes(64)
    assert DeterministicRng(1).bytes(32) != DeterministicRng(2).bytes(32)
    assert DeterministicRng(1).bytes(0) == b""
    r = DeterministicRng(1)
    assert r.fork("x").bytes(16) == DeterministicRng(1).fork("x").bytes(16)
    assert r.fork("x").bytes(16) != r.fork("y").bytes(16)
    with pytest.raises(ValueError):
        r.bytes(-1)
