import random

import pytest

import oracles
from sgxio import enclave as enc
from sgxio.attestation import (
    CONFIRM_NONCE,
    ChainBroken,
    ChainEvidence,
    KeyTransportMessage,
    TrustPolicy,
    attest_chain,
    channel_nonce,
    confirm_key,
    key_transport_recv,
    key_transport_send,
    local_attest_verify,
    nonce_fields,
    start_transport,
)
from sgxio.crypto import DeterministicRng, sha256


def _flip(raw: bytes, bit: int) -> bytes:
    out = bytearray(raw)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def test_local_attestation(world):
    a, b, c = world.enclave("a"), world.enclave("b"), world.enclave("c")
    rp = enc.ereport(a, b.identity, bytes(32))
    assert local_attest_verify(b, rp)
    assert not local_attest_verify(c, rp)
    raw = rp.to_bytes()
    rnd = random.Random(1)
    for _ in range(1000):
        assert not local_attest_verify(b, enc.Report.from_bytes(_flip(raw, rnd.randrange(len(raw) * 8))))


def test_key_transport(world):
    a, b, c = world.enclave("a"), world.enclave("b"), world.enclave("c")
    key, msg = key_transport_send(a, b.identity, DeterministicRng(1))
    assert len(key) == 16
    assert len(msg.to_bytes()) == 64
    assert key_transport_recv(b, KeyTransportMessage.from_bytes(msg.to_bytes())) == key
    assert key_transport_recv(c, msg) != key
    again, _ = key_transport_send(a, b.identity, DeterministicRng(1))
    assert again == key
    secret = oracles.cpu_secret(world.cpu)
    assert key == oracles.report_mac(secret, a.identity.digest, b.identity.digest, msg.nonce)
    flipped = KeyTransportMessage(msg.sender_id, _flip(msg.nonce, 0))
    assert key_transport_recv(b, flipped) != key


def test_key_confirmation(world):
    a, b, c = world.enclave("a"), world.enclave("b"), world.enclave("c")
    rng = DeterministicRng(2)
    pending = start_transport(a, b.identity, rng)
    good = confirm_key(key_transport_recv(b, pending.message), pending.message)
    wrong = confirm_key(key_transport_recv(c, pending.message), pending.message)
    assert not pending.confirm(wrong)
    assert pending.confirm(good)
    assert not pending.confirm(good)  # one-shot
    # confirmation from an earlier session does not confirm a new one
    fresh = start_transport(a, b.identity, rng)
    assert not fresh.confirm(good)


def test_channel_nonce_layout():
    assert channel_nonce(0, 5) == bytes(11) + b"\x05"
    assert CONFIRM_NONCE == b"\x80" + bytes(11)
    rnd = random.Random(3)
    for _ in range(200):
        d, n = rnd.randrange(2), rnd.randrange(1 << 88)
        assert nonce_fields(channel_nonce(d, n)) == (d, n)
    with pytest.raises(ValueError):
        channel_nonce(2, 0)
    with pytest.raises(ValueError):
        channel_nonce(0, 1 << 88)


class _Chain:
    def __init__(self, world):
        self.world = world
        self.app = world.enclave("app", debug=True)
        self.driver = world.enclave("driver")
        self.tb = world.enclave("tb", debug=False)
        self.policy = TrustPolicy(frozenset({self.app.identity}), frozenset({self.driver.identity}),
                                  frozenset({self.tb.identity}))

    def evidence(self, verdict=True, challenge=b"c" * 32, app=None, driver=None, tb=None):
        app, driver, tb = app or self.app, driver or self.driver, tb or self.tb
        approval = bytes([verdict]) + driver.identity.digest + bytes(8)
        return ChainEvidence(
            enc.remote_report(app, sha256(challenge)), app,
            enc.ereport(driver, app.identity, bytes(32)), driver,
            enc.ereport(tb, driver.identity, sha256(approval)), approval, challenge)


def test_chain_honest_and_roles(world):
    ch = _Chain(world)
    pub = world.cpu.attestation_pubkey
    assert attest_chain(ch.policy, "remote", ch.evidence(), pub).links_checked == (
        "user_app", "driver", "tb", "hypervisor")
    assert attest_chain(ch.policy, "user_app", ch.evidence()).links_checked == ("driver", "tb", "hypervisor")
    assert attest_chain(ch.policy, "driver", ch.evidence()).links_checked == ("tb", "hypervisor")
    with pytest.raises(ValueError):
        attest_chain(ch.policy, "tb", ch.evidence())


@pytest.mark.parametrize("link", ["user_app", "driver", "tb", "hypervisor"])
def test_chain_names_the_substituted_link(world, link):
    ch = _Chain(world)
    kw = {}
    if link == "hypervisor":
        kw["verdict"] = False
    else:
        kw[{"user_app": "app"}.get(link, link)] = world.enclave(f"rogue-{link}", debug=link != "tb")
    with pytest.raises(ChainBroken) as info:
        attest_chain(ch.policy, "remote", ch.evidence(**kw), world.cpu.attestation_pubkey)
    assert info.value.link == link


def test_chain_rejects_stale_challenge_and_debug(world):
    ch = _Chain(world)
    ev = ch.evidence()
    ev.challenge = b"d" * 32
    with pytest.raises(ChainBroken, match="stale"):
        attest_chain(ch.policy, "remote", ev, world.cpu.attestation_pubkey)
    ch.policy.debug["user_app"] = False
    with pytest.raises(ChainBroken, match="debug"):
        attest_chain(ch.policy, "remote", ch.evidence(), world.cpu.attestation_pubkey)
