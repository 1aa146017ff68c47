import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sgxio import enclave as enc  # noqa: E402
from sgxio.crypto import DeterministicRng  # noqa: E402


class World:
    """One CPU plus a launch authority that licenses whatever it is asked to launch."""

    def __init__(self, seed: int = 7):
        self.rng = DeterministicRng(seed)
        self.authority = enc.LaunchAuthority(self.rng.fork("authority"))
        self.cpu = enc.CpuState(self.rng.fork("cpu"), self.authority.public)

    def launch(self, image, context=enc.HostContext.HYPERVISOR, name="", cpu=None):
        m = enc.measure(image)
        self.authority.license(m)
        return enc.launch(cpu or self.cpu, image, self.authority.issue(m, image.debug), m, context, name)

    def enclave(self, label: str, debug: bool = True, **kw):
        return self.launch(enc.EnclaveImage((label.encode(),), debug), name=label, **kw)

    def second_cpu(self, label="cpu1"):
        return enc.CpuState(self.rng.fork(label), self.authority.public, label)


@pytest.fixture
def world():
    return World()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
