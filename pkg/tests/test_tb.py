import pytest

import oracles
from sgxio import enclave as enc
from sgxio import hypervisor as hv
from sgxio.crypto import AuthFailure, DeterministicRng, SigKeyPair
from sgxio.enclave import HostContext
from sgxio.hypervisor import Handle
from sgxio.tb import (
    AikMissing,
    Approval,
    AttestationFailed,
    BadQuote,
    ChannelDenied,
    NoTpmAccess,
    TbConfig,
    TbEnclave,
    UnauthorizedIntegrator,
    UnknownDriver,
    aik_endorsement,
    tb_image,
)
from sgxio.tpm import Tpm, TpmPort

STAGES = [b"fw", b"loader", b"hv"]


class Setup:
    def __init__(self, world, pinning=True, cpu=None):
        self.world = world
        self.tpm = Tpm(DeterministicRng(11))
        for blob in STAGES:
            self.tpm.extend(oracles.sha256(blob))
        self.integrator = SigKeyPair.generate(DeterministicRng(12))
        self.driver = world.enclave("driver")
        self.config = TbConfig(oracles.pcr_chain(STAGES), (self.integrator.public,), (self.driver.identity,))
        inst = world.launch(tb_image(self.config), HostContext.HYPERVISOR, "tb", cpu=cpu)
        self.tb = TbEnclave(inst, self.config, DeterministicRng(13), pinning=pinning)
        self.port = TpmPort(self.tpm)

    def handle(self, target=None):
        return Handle(hv.TPM, hv.TB_HOST, 1, target or self.port)

    def channel(self):
        return Handle(hv.tb_channel("driver"), hv.driver_domain("driver"), 2, self.tb)

    def provision(self):
        return self.tb.provision_aik(self.tpm.aik_public, self.integrator.sign(aik_endorsement(self.tpm.aik_public)))


def test_aik_provisioning(world):
    s = Setup(world)
    sealed = s.provision()
    assert s.tb.pinned.public == s.tpm.aik_public
    rogue = SigKeyPair.generate(DeterministicRng(99))
    with pytest.raises(UnauthorizedIntegrator):
        s.tb.provision_aik(s.tpm.aik_public, rogue.sign(aik_endorsement(s.tpm.aik_public)))
    # same TB identity on another CPU cannot unseal the blob
    other = Setup(world, cpu=world.second_cpu())
    with pytest.raises(AuthFailure):
        other.tb.load_aik(sealed)
    fresh = Setup(world)
    tampered = bytearray(sealed)
    tampered[-1] ^= 1
    with pytest.raises(AuthFailure):
        fresh.tb.load_aik(bytes(tampered))
    assert fresh.tb.load_aik(sealed) == s.tpm.aik_public


def test_attestation_outcomes(world):
    s = Setup(world)
    with pytest.raises(AikMissing):
        s.tb.attest_hypervisor(s.handle(), 1)
    s.provision()
    with pytest.raises(NoTpmAccess):
        s.tb.attest_hypervisor(None, 1)
    assert s.tb.attest_hypervisor(s.handle(), 1)
    assert s.tb.attested(1) and not s.tb.attested(2)

    # cuckoo: attacker TPM replaying the golden chain
    attacker = Tpm(DeterministicRng(50))
    for blob in STAGES:
        attacker.extend(oracles.sha256(blob))
    with pytest.raises(BadQuote) as info:
        s.tb.attest_hypervisor(s.handle(TpmPort(attacker)), 2)
    assert info.value.reason == "origin"

    unpinned = Setup(world, pinning=False)
    assert unpinned.tb.attest_hypervisor(unpinned.handle(TpmPort(attacker)), 1)

    s.tpm.extend(oracles.sha256(b"implant"))
    with pytest.raises(BadQuote) as info:
        s.tb.attest_hypervisor(s.handle(), 3)
    assert info.value.reason == "pcr"


def test_driver_approval(world):
    s = Setup(world)
    s.provision()
    report = enc.ereport(s.driver, s.tb.identity, bytes(32))
    with pytest.raises(AttestationFailed):
        s.tb.approve_driver(report, s.channel(), 5, epoch=1)
    s.tb.attest_hypervisor(s.handle(), 1)
    with pytest.raises(ChannelDenied):
        s.tb.approve_driver(report, None, 5, epoch=1)
    approval, tb_report = s.tb.approve_driver(report, s.channel(), 5, epoch=1)
    assert approval == Approval(True, s.driver.identity, 5)
    assert Approval.from_bytes(approval.to_bytes()) == approval
    assert tb_report.data == oracles.sha256(approval.to_bytes())
    stranger = world.enclave("stranger")
    with pytest.raises(UnknownDriver):
        s.tb.approve_driver(enc.ereport(stranger, s.tb.identity, bytes(32)), s.channel(), 6, epoch=1)
    with pytest.raises(AttestationFailed):
        s.tb.approve_driver(enc.ereport(s.driver, stranger.identity, bytes(32)), s.channel(), 6, epoch=1)
    with pytest.raises(AttestationFailed):
        s.tb.approve_driver(report, s.channel(), 7, epoch=2)


def test_delegated_sealing(world):
    s = Setup(world)
    s.provision()
    app, other = world.enclave("app"), world.enclave("other")
    rp = enc.ereport(app, s.tb.identity, bytes(32))
    with pytest.raises(AttestationFailed):
        s.tb.delegated_seal_key(rp, 1)
    s.tb.attest_hypervisor(s.handle(), 1)
    key = s.tb.delegated_seal_key(rp, 1)
    assert len(key) == 16
    assert key != s.tb.delegated_seal_key(enc.ereport(other, s.tb.identity, bytes(32)), 1)
    # next boot, fresh TB instance, same key once attestation passes again
    again = Setup(world)
    again.provision()
    again.tb.attest_hypervisor(again.handle(), 2)
    assert again.tb.delegated_seal_key(rp, 2) == key
