import pytest

import oracles
from sgxio import enclave as enc
from sgxio import hypervisor as hv
from sgxio.crypto import DeterministicRng
from sgxio.hypervisor import HYPERVISOR, TB_HOST, VM_OS, AccessDenied, EnclsBitmap, Hypervisor, MmioClaim
from sgxio.tpm import Tpm
from sgxio.trace import Trace

KBD, SCR = hv.driver_domain("kbd"), hv.driver_domain("screen")


@pytest.fixture
def platform():
    h = Hypervisor(Trace())
    h.register_device("kbd", (0x100, 0x200))
    h.register_device("screen", (0x200, 0x300))
    h.register_device("nic", (0x300, 0x400))
    h.add_region("drv-kbd", 0x1000, 0x2000, KBD)
    h.add_region("vm", 0x10000, 0x20000, VM_OS)
    h.add_region("epc", 0x20000, 0x30000, HYPERVISOR, enclave=True)
    h.bind_device(KBD, "kbd")
    h.bind_device(SCR, "screen")
    h.grant(hv.TPM, TB_HOST)
    h.grant(hv.tb_channel("kbd"), KBD)
    return h


def test_labels_roundtrip():
    assert str(hv.parse_domain("driver(kbd)")) == "driver(kbd)"
    assert hv.parse_resource("tpm") == hv.TPM
    assert hv.parse_resource("tb-channel(kbd)") == hv.tb_channel("kbd")
    for bad in ("driver", "vm-os(x)", "os", "tpm(x)", "device"):
        with pytest.raises(ValueError):
            try:
                hv.parse_domain(bad)
            except ValueError:
                hv.parse_resource(bad)


def test_binding_is_exclusive(platform):
    with pytest.raises(hv.AlreadyBound):
        platform.bind_device(SCR, "kbd")
    with pytest.raises(hv.UnknownDevice):
        platform.bind_device(SCR, "mouse")
    assert platform.device_holder("kbd") == KBD
    with pytest.raises(AccessDenied):
        platform.device_io(VM_OS, "kbd", b"x")
    assert platform.device_io(VM_OS, "nic", b"packet") == b"packet"


def test_request_resource(platform):
    with pytest.raises(AccessDenied):
        platform.request_resource(VM_OS, hv.TPM)
    h = platform.request_resource(KBD, hv.tb_channel("kbd"))
    assert h.holder == KBD and h.resource == hv.tb_channel("kbd")
    with pytest.raises(AccessDenied):
        platform.request_resource(KBD, hv.device("screen"))
    assert platform.request_resource(TB_HOST, hv.TPM).grant_id != h.grant_id
    outcomes = [e["outcome"] for e in platform.trace.select("resource_request")]
    assert outcomes == ["denied", "granted", "denied", "granted"]


def test_dma(platform):
    assert not platform.dma_request("nic", 0x1800, 0x1900)
    assert platform.dma_request("nic", 0x10000, 0x10100)
    assert not platform.dma_request("nic", 0x20000, 0x20010)
    assert not platform.dma_request("kbd", 0x20000, 0x20010)
    assert platform.dma_request("kbd", 0x1000, 0x1100)


def test_mmio_and_interrupts(platform):
    assert not platform.claim_mmio(MmioClaim("nic", 0x180, 0x280), VM_OS)
    assert platform.claim_mmio(MmioClaim("nic", 0x500, 0x600), VM_OS)
    assert not platform.claim_mmio(MmioClaim("kbd", 0x700, 0x800), VM_OS)
    assert platform.claim_mmio(MmioClaim("kbd", 0x700, 0x800), KBD)
    assert not platform.route_interrupt("kbd", "nic")
    assert platform.route_interrupt("kbd", "kbd")
    assert platform.route_interrupt("nic", "nic")
    assert platform.trace.select("interrupt", outcome="drop")


def test_encls_gate_and_debug(world):
    dbg = world.enclave("dbg", debug=True)
    prod = world.enclave("prod", debug=False)
    on, off = Hypervisor(Trace(), EnclsBitmap(True)), Hypervisor(Trace(), EnclsBitmap(False))
    assert on.encls_gate(VM_OS, "debug_read") and not on.encls_gate(HYPERVISOR, "debug_read")
    assert not off.encls_gate(VM_OS, "debug_write")
    with pytest.raises(ValueError):
        on.encls_gate(VM_OS, "einit")
    with pytest.raises(enc.Intercepted):
        on.debug_read(VM_OS, dbg, 0, 4)
    assert on.debug_read(HYPERVISOR, dbg, 0, 3) == b"dbg"
    assert off.debug_read(VM_OS, dbg, 0, 3) == b"dbg"
    for h in (on, off):
        with pytest.raises(enc.ProductionEnclave):
            h.debug_read(HYPERVISOR, prod, 0, 4)
    with pytest.raises(enc.Intercepted):
        on.debug_write(VM_OS, prod, 0, b"x")


def test_audit(platform):
    assert platform.audit() == []
    platform.grant(hv.TPM, VM_OS)
    assert any("tpm" in p for p in platform.audit())
    platform.add_region("overlap", 0x1800, 0x1900, VM_OS)
    assert any("overlaps" in p for p in platform.audit())


def test_measured_boot():
    tpm = Tpm(DeterministicRng(1))
    stages = [hv.BootStage("fw", b"fw"), hv.BootStage("hypervisor", b"hv")]
    state = hv.boot(tpm, stages, Trace())
    assert state.pcr == oracles.pcr_chain([b"fw", b"hv"])
    evil = hv.boot(tpm, [stages[0], hv.BootStage("hypervisor", b"hv+implant")], Trace(), epoch=2)
    # the modified stage still boots; only the PCR records it
    assert evil.pcr != state.pcr and evil.epoch == 2 and len(evil.stage_digests) == 2
