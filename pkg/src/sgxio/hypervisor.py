"""Capability-enforcing hypervisor model.

Every resource (memory region, user device, TPM, TB endpoints) is reachable
only through a capability. Cross-domain access goes through
:meth:`Hypervisor.request_resource`, which hands out explicit grant handles.
The untrusted OS runs confined in the ``vm-os`` domain.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from . import enclave as enc
from .crypto import sha256
from .tpm import Tpm
from .trace import Trace


class AccessDenied(Exception):
    pass


class AlreadyBound(Exception):
    pass


class UnknownDevice(Exception):
    pass


@dataclass(frozen=True, order=True)
class DomainId:
    kind: str
    name: str = ""

    def __str__(self):
        return f"{self.kind}({self.name})" if self.name else self.kind


HYPERVISOR = DomainId("hypervisor")
VM_OS = DomainId("vm-os")
TB_HOST = DomainId("tb-host")
_DOMAIN_KINDS = {"hypervisor", "driver", "vm-os", "tb-host"}


def driver_domain(name: str) -> DomainId:
    return DomainId("driver", name)


@dataclass(frozen=True, order=True)
class Resource:
    kind: str
    name: str = ""

    def __str__(self):
        return f"{self.kind}({self.name})" if self.name else self.kind


TPM = Resource("tpm")
_RESOURCE_KINDS = {"memory", "device", "tpm", "tb-channel", "tb-seal"}
# Resources whose single holder outside the hypervisor is an invariant.
_EXCLUSIVE = {"device", "tpm", "tb-channel", "tb-seal", "memory"}

_LABEL = re.compile(r"^([a-z-]+)(?:\(([A-Za-z0-9_.-]+)\))?$")


def _parse_label(text: str, kinds: set[str], what: str) -> tuple[str, str]:
    m = _LABEL.match(text.strip())
    if not m or m.group(1) not in kinds:
        raise ValueError(f"bad {what} label {text!r}")
    return m.group(1), m.group(2) or ""


def parse_domain(text: str) -> DomainId:
    kind, name = _parse_label(text, _DOMAIN_KINDS, "domain")
    if (kind == "driver") != bool(name):
        raise ValueError(f"bad domain label {text!r}")
    return DomainId(kind, name)


def parse_resource(text: str) -> Resource:
    kind, name = _parse_label(text, _RESOURCE_KINDS, "resource")
    if (kind == "tpm") == bool(name):
        raise ValueError(f"bad resource label {text!r}")
    return Resource(kind, name)


def device(name: str) -> Resource:
    return Resource("device", name)


def tb_channel(client: str) -> Resource:
    return Resource("tb-channel", client)


def tb_seal(client: str) -> Resource:
    return Resource("tb-seal", client)


@dataclass(frozen=True)
class Capability:
    resource: Resource
    holder: DomainId


@dataclass(frozen=True)
class Handle:
    """Proof that the hypervisor granted ``holder`` access to ``resource``."""

    resource: Resource
    holder: DomainId
    grant_id: int
    target: Any = field(compare=False, repr=False)


@dataclass(frozen=True)
class EnclsBitmap:
    intercept_debug: bool = True


@dataclass(frozen=True)
class MmioClaim:
    device: str
    base: int
    limit: int

    def overlaps(self, base: int, limit: int) -> bool:
        return self.base < limit and base < self.limit


@dataclass
class MemoryRegion:
    name: str
    base: int
    limit: int
    holder: DomainId
    enclave: bool = False

    def overlaps(self, base: int, limit: int) -> bool:
        return self.base < limit and base < self.limit


@dataclass
class DeviceInfo:
    name: str
    mmio: tuple[int, int]
    direction: str = "bidirectional"


class Hypervisor:
    def __init__(self, trace: Trace | None = None, bitmap: EnclsBitmap = EnclsBitmap()):
        self.trace = trace if trace is not None else Trace()
        self.bitmap = bitmap
        self.devices: dict[str, DeviceInfo] = {}
        self.regions: dict[str, MemoryRegion] = {}
        self._holders: dict[Resource, set[DomainId]] = {}
        self._targets: dict[Resource, Any] = {}
        self._grants = 0

    # --- configuration ------------------------------------------------

    def register_device(self, name: str, mmio: tuple[int, int], direction: str = "bidirectional") -> None:
        base, limit = mmio
        if base >= limit:
            raise ValueError(f"empty MMIO range for {name}")
        self.devices[name] = DeviceInfo(name, (base, limit), direction)
        # unbound devices belong to the VM and pass straight through
        self._holders.setdefault(device(name), {VM_OS})

    def add_region(self, name: str, base: int, limit: int, holder: DomainId, enclave: bool = False) -> None:
        self.regions[name] = MemoryRegion(name, base, limit, holder, enclave)
        self.grant(Resource("memory", name), holder)

    def attach(self, resource: Resource, target: Any) -> None:
        """Back a resource with the object handles will reach."""
        self._targets[resource] = target

    def grant(self, resource: Resource, holder: DomainId) -> Capability:
        self._holders.setdefault(resource, set()).add(holder)
        self.trace.emit(HYPERVISOR, "grant", resource=resource, holder=holder)
        return Capability(resource, holder)

    def revoke(self, resource: Resource, holder: DomainId) -> None:
        self._holders.get(resource, set()).discard(holder)
        self.trace.emit(HYPERVISOR, "revoke", resource=resource, holder=holder)

    def holders(self, resource: Resource) -> frozenset[DomainId]:
        return frozenset(self._holders.get(resource, ()))

    def capabilities_of(self, holder: DomainId) -> frozenset[Resource]:
        return frozenset(r for r, hs in self._holders.items() if holder in hs)

    def device_holder(self, name: str) -> DomainId:
        if name not in self.devices:
            raise UnknownDevice(name)
        hs = self._holders.get(device(name), set())
        bound = [h for h in hs if h != VM_OS]
        return bound[0] if bound else VM_OS

    def is_bound(self, name: str) -> bool:
        return self.device_holder(name) != VM_OS

    # --- mediated operations ------------------------------------------

    def bind_device(self, driver: DomainId, name: str) -> Capability:
        if name not in self.devices:
            raise UnknownDevice(name)
        if self.is_bound(name):
            raise AlreadyBound(f"device {name} already bound to {self.device_holder(name)}")
        res = device(name)
        if VM_OS in self._holders.get(res, set()):
            self.revoke(res, VM_OS)
        cap = self.grant(res, driver)
        self.trace.emit(HYPERVISOR, "bind_device", device=name, driver=driver)
        return cap

    def request_resource(self, requester: DomainId, resource: Resource) -> Handle:
        if requester == HYPERVISOR or requester in self._holders.get(resource, ()):
            self._grants += 1
            self.trace.emit(HYPERVISOR, "resource_request", requester=requester,
                            resource=resource, outcome="granted", grant=self._grants)
            return Handle(resource, requester, self._grants, self._targets.get(resource))
        self.trace.emit(HYPERVISOR, "resource_request", requester=requester,
                        resource=resource, outcome="denied")
        raise AccessDenied(f"{requester} holds no capability for {resource}")

    def device_io(self, requester: DomainId, name: str, data: bytes) -> bytes:
        """Direct device I/O. Unbound devices pass through unmodified."""
        self.request_resource(requester, device(name))
        return data

    def dma_request(self, device_name: str, base: int, limit: int) -> bool:
        holder = self.device_holder(device_name)
        hit = [r for r in self.regions.values() if r.overlaps(base, limit)]
        allowed = not any(r.enclave or r.holder != holder for r in hit)
        self.trace.emit(HYPERVISOR, "dma", device=device_name, base=base, limit=limit,
                        regions=",".join(r.name for r in hit) or "-",
                        outcome="allow" if allowed else "deny")
        return allowed

    def claim_mmio(self, claim: MmioClaim, issuer: DomainId) -> bool:
        if claim.device not in self.devices:
            raise UnknownDevice(claim.device)
        reason = ""
        if issuer != HYPERVISOR:
            if self.device_holder(claim.device) != issuer:
                reason = "not-holder"
            else:
                for other in self.devices.values():
                    if other.name != claim.device and self.is_bound(other.name) \
                            and claim.overlaps(*other.mmio):
                        reason = f"overlaps-{other.name}"
                        break
        accepted = not reason
        if accepted:
            self.devices[claim.device].mmio = (claim.base, claim.limit)
        self.trace.emit(HYPERVISOR, "mmio_claim", issuer=issuer, device=claim.device,
                        base=claim.base, limit=claim.limit,
                        outcome="accept" if accepted else "reject", reason=reason or None)
        return accepted

    def route_interrupt(self, claimed_source: str, actual_source: str) -> bool:
        if claimed_source not in self.devices or actual_source not in self.devices:
            raise UnknownDevice(claimed_source if claimed_source not in self.devices else actual_source)
        spoofed = self.is_bound(claimed_source) and claimed_source != actual_source
        target = self.device_holder(claimed_source)
        self.trace.emit(HYPERVISOR, "interrupt", claimed=claimed_source, actual=actual_source,
                        target=target, outcome="drop" if spoofed else "deliver")
        return not spoofed

    def encls_gate(self, caller: DomainId, op: str) -> bool:
        """True iff the ENCLS debug op from ``caller`` traps to the hypervisor."""
        if op not in ("debug_read", "debug_write"):
            raise ValueError(op)
        return caller == VM_OS and self.bitmap.intercept_debug

    def debug_read(self, caller: DomainId, target: enc.EnclaveInstance, offset: int, length: int) -> bytes:
        return self._debug(caller, target, "debug_read", offset, length, None)

    def debug_write(self, caller: DomainId, target: enc.EnclaveInstance, offset: int, data: bytes) -> None:
        self._debug(caller, target, "debug_write", offset, len(data), data)

    def _debug(self, caller, target, op, offset, length, data):
        intercepted = self.encls_gate(caller, op)
        try:
            if op == "debug_read":
                result = enc.debug_read(target, offset, length, intercepted=intercepted)
            else:
                result = enc.debug_write(target, offset, data, intercepted=intercepted)
        except enc.Intercepted:
            self._log_debug(caller, target, op, "intercepted")
            raise
        except enc.ProductionEnclave:
            self._log_debug(caller, target, op, "production")
            raise
        self._log_debug(caller, target, op, "ok")
        return result

    def _log_debug(self, caller, target, op, outcome):
        self.trace.emit(HYPERVISOR, "debug_op", caller=caller, enclave=target.name or str(target.identity),
                        op=op, outcome=outcome)

    # --- invariants ----------------------------------------------------

    def audit(self) -> list[str]:
        """Capability disjointness violations (empty list = clean)."""
        problems = []
        for res, hs in sorted(self._holders.items()):
            outside = [h for h in hs if h != HYPERVISOR]
            if res.kind in _EXCLUSIVE and len(outside) > 1:
                problems.append(f"{res} held by {', '.join(sorted(map(str, outside)))}")
        regions = sorted(self.regions.values(), key=lambda r: r.base)
        for i, a in enumerate(regions):
            for b in regions[i + 1:]:
                if a.holder != b.holder and a.overlaps(b.base, b.limit):
                    problems.append(f"memory {a.name} overlaps {b.name}")
        return problems


@dataclass
class BootStage:
    name: str
    blob: bytes


@dataclass
class PlatformState:
    pcr: bytes
    stage_digests: list[bytes]
    epoch: int


def boot(tpm: Tpm, stages: list[BootStage], trace: Trace, epoch: int = 1) -> PlatformState:
    """Measured (not verified) boot: every stage is extended before it runs,
    a modified stage still boots."""
    tpm.reset()
    digests = []
    for stage in stages:
        digest = sha256(stage.blob)
        pcr = tpm.extend(digest)
        digests.append(digest)
        trace.emit(HYPERVISOR, "boot_stage", stage=stage.name, digest=digest, pcr=pcr)
    trace.emit(HYPERVISOR, "boot_done", pcr=tpm.pcr.value, epoch=epoch)
    return PlatformState(tpm.pcr.value, digests, epoch)
