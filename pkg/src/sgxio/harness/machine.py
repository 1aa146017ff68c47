"""The simulated machine: one CPU, one TPM, a hypervisor, the enclaves it hosts
and the untrusted OS, plus the action vocabulary scenarios drive it with.

Attacker actions only use what ``vm-os`` can reach. Every defense lives in the
library modules; nothing here decides whether an attack should work.
"""

from __future__ import annotations

import heapq
import inspect
from dataclasses import dataclass, field
from itertools import count
from typing import Any, Callable

from .. import enclave as enc
from .. import hypervisor as hv_mod
from ..attestation import (
    CONFIRM_NONCE,
    ChainBroken,
    ChainEvidence,
    TrustPolicy,
    attest_chain,
    key_transport_recv,
    key_transport_send,
    KeyTransportMessage,
)
from ..crypto import AuthFailure, DeterministicRng, SigKeyPair, aead_open, aead_seal, sha256
from ..enclave import HostContext, Measurement
from ..hypervisor import HYPERVISOR, TB_HOST, VM_OS, AccessDenied, DomainId, Handle, Hypervisor, MmioClaim
from ..tb import (
    ROGUE_TB_CODE,
    TB_CODE,
    AikMissing,
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
from ..tpm import Tpm, TpmPort
from ..trace import Trace, observed_bytes
from ..trusted_path import (
    DRIVER_CODE,
    ROGUE_DRIVER_CODE,
    ROGUE_USER_APP_CODE,
    USER_APP_CODE,
    AppPolicy,
    ApprovalMissing,
    ChannelRefused,
    DeviceEvent,
    DriverEnclave,
    ReplayDetected,
    TrustedPathError,
    UserAppEnclave,
    UserDevice,
    driver_image,
    session_recv,
    session_send,
    user_app_image,
    user_verify,
)
from .scenario import ConfigError, RegionSpec, Scenario

SCENARIO = "scenario"
REMOTE = "remote"
AIK_BLOB = "tb-aik"


def enclave_domain(name: str) -> str:
    return f"enclave({name})"


@dataclass(frozen=True)
class Toggles:
    encls_tweak: bool = True
    expose_tpm_to_os: bool = False
    aik_pinning: bool = True
    key_confirm: bool = True


class Scheduler:
    """Discrete-event queue ordered by (time, insertion)."""

    def __init__(self):
        self.now = 0
        self._queue: list[tuple[int, int, Callable, tuple]] = []
        self._seq = count()

    def at(self, delay: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (self.now + delay, next(self._seq), fn, args))

    def run(self) -> None:
        while self._queue:
            self.now, _, fn, args = heapq.heappop(self._queue)
            fn(*args)


@dataclass
class TbHost:
    name: str
    domain: DomainId
    tb: TbEnclave
    virtual: bool = False


@dataclass
class DriverHost:
    name: str
    domain: DomainId
    enclave: DriverEnclave
    device: UserDevice
    virtual: bool = False


@dataclass
class AppHost:
    name: str
    app: UserAppEnclave
    virtual: bool = False


@dataclass
class Images:
    tb: enc.EnclaveImage
    tb_genuine_id: Measurement
    tb_config: TbConfig
    drivers: dict[str, enc.EnclaveImage]
    driver_genuine: dict[str, enc.EnclaveImage]
    apps: dict[str, enc.EnclaveImage]
    app_genuine: enc.EnclaveImage
    policy: AppPolicy


def default_memory(scenario: Scenario) -> list[RegionSpec]:
    regions = [
        RegionSpec("hypervisor", 0x0000, 0x1000, "hypervisor"),
        RegionSpec("tb-host", 0x1000, 0x2000, "tb-host"),
    ]
    for i, name in enumerate(scenario.drivers):
        base = 0x2000 + i * 0x1000
        regions.append(RegionSpec(f"driver-{name}", base, base + 0x1000, f"driver({name})"))
    regions.append(RegionSpec("vm", 0x10000, 0x80000, "vm-os"))
    regions.append(RegionSpec("epc", 0x80000, 0x90000, "hypervisor", enclave=True))
    return regions


class Machine:
    def __init__(self, scenario: Scenario, seed: int, toggles: Toggles):
        self.scenario = scenario
        self.seed = seed
        self.toggles = toggles
        self.trace = Trace()
        self.sched = Scheduler()
        self.rng = DeterministicRng(seed)
        self._draws = self.rng.fork("protocol")

        self.authority = enc.LaunchAuthority(self.rng.fork("launch-authority"))
        self.cpu = enc.CpuState(self.rng.fork("cpu"), self.authority.public, "cpu0")
        self.tpm = Tpm(self.rng.fork("tpm"), "tpm0")
        self.attacker_tpm = Tpm(self.rng.fork("attacker-tpm"), "tpm-attacker")
        self.tpm_port = TpmPort(self.tpm)
        self.integrator = SigKeyPair.generate(self.rng.fork("integrator"))
        self.rogue_integrator = SigKeyPair.generate(self.rng.fork("rogue-integrator"))

        secret_rng = self.rng.fork("secrets")
        self.secrets: dict[str, bytes] = {}
        for name, spec in scenario.secrets.items():
            if "random" in spec:
                self.secrets[name] = secret_rng.bytes(spec["random"])
            elif "hex" in spec:
                self.secrets[name] = bytes.fromhex(spec["hex"])
            else:
                self.secrets[name] = str(spec["text"]).encode()

        self.images = self._build_images()
        self.tokens: dict[Measurement, enc.EinitToken] = {}  # EINITTOKENs are public
        self.disk: dict[str, bytes] = {}  # OS-managed storage survives reboots
        self.physical = {d.name: UserDevice(d.name, d.direction) for d in scenario.devices}

        self.epoch = 0
        self.compromised = scenario.hypervisor_compromised
        self.hv: Hypervisor | None = None
        self.tbs: dict[str, TbHost] = {}
        self.drivers: dict[str, DriverHost] = {}
        self.apps: dict[str, AppHost] = {}
        self.routes: dict[str, DriverHost] = {}  # OS routing of app traffic per driver name
        self.links: dict[tuple[str, str], DriverHost] = {}  # open sessions: (app, driver) -> host
        self.frames_seen: dict[str, list[bytes]] = {}
        self.attacker_buffer = b""
        self._violations: set[str] = set()

    # --- construction --------------------------------------------------

    def _build_images(self) -> Images:
        sc = self.scenario
        genuine_drivers = {name: driver_image(name, spec.debug, DRIVER_CODE) for name, spec in sc.drivers.items()}
        drivers = {
            name: genuine_drivers[name] if spec.variant == "genuine"
            else driver_image(name, spec.debug, ROGUE_DRIVER_CODE)
            for name, spec in sc.drivers.items()
        }
        config = TbConfig(sc.golden_pcr, (self.integrator.public,),
                          tuple(enc.measure(img) for img in genuine_drivers.values()))
        genuine_tb = tb_image(config, sc.tb.debug, TB_CODE)
        tb = genuine_tb if sc.tb.variant == "genuine" else tb_image(config, sc.tb.debug, ROGUE_TB_CODE)
        policy = AppPolicy(frozenset(enc.measure(i) for i in genuine_drivers.values()),
                           frozenset({enc.measure(genuine_tb)}))
        debug_apps = {spec.debug for spec in sc.user_apps.values()}
        app_genuine = user_app_image(policy, debug_apps.pop() if len(debug_apps) == 1 else True, USER_APP_CODE)
        apps = {
            name: user_app_image(policy, spec.debug, USER_APP_CODE if spec.variant == "genuine"
                                 else ROGUE_USER_APP_CODE)
            for name, spec in sc.user_apps.items()
        }
        images = [tb, *drivers.values(), *apps.values(), genuine_tb, *genuine_drivers.values(), app_genuine]
        for image in images:
            # the scenario describes what the vendor shipped; every image is licensed
            self.authority.license(enc.measure(image))
        return Images(tb, enc.measure(genuine_tb), config, drivers, genuine_drivers, apps, app_genuine, policy)

    def trust_policy(self) -> TrustPolicy:
        genuine_apps = {enc.measure(user_app_image(self.images.policy, spec.debug, USER_APP_CODE))
                        for spec in self.scenario.user_apps.values()}
        return TrustPolicy(frozenset(genuine_apps), self.images.policy.drivers,
                           frozenset({self.images.tb_genuine_id}))

    def emit(self, domain: Any, event: str, **detail: Any):
        return self.trace.emit(str(domain), event, **detail)

    def step(self) -> int:
        return len(self.trace)

    def _token(self, image: enc.EnclaveImage) -> enc.EinitToken:
        m = enc.measure(image)
        if m not in self.tokens:
            self.tokens[m] = self.authority.issue(m, image.debug)
        return self.tokens[m]

    def _launch(self, image: enc.EnclaveImage, context: HostContext, domain: Any, name: str) -> enc.EnclaveInstance:
        m = enc.measure(image)
        inst = enc.launch(self.cpu, image, self._token(image), m, context, name)
        self.emit(domain, "launch", enclave=name, identity=m, debug=image.debug, context=context.value)
        return inst

    # --- boot ----------------------------------------------------------

    def boot(self) -> None:
        sc = self.scenario
        self.epoch += 1
        stages = []
        for stage in sc.stages:
            blob = sc.compromised_blob if (self.compromised and stage.name == "hypervisor") else stage.blob
            stages.append(hv_mod.BootStage(stage.name, blob))
        bitmap = hv_mod.EnclsBitmap(self.toggles.encls_tweak and not self.compromised)
        self.hv = hv = Hypervisor(self.trace, bitmap)
        hv_mod.boot(self.tpm, stages, self.trace, self.epoch)
        self.tpm_port.tpm = self.tpm

        for r in (sc.memory if sc.memory is not None else default_memory(sc)):
            hv.add_region(r.name, r.base, r.limit, hv_mod.parse_domain(r.holder), r.enclave)
        for d in sc.devices:
            hv.register_device(d.name, d.mmio, d.direction)

        hv.attach(hv_mod.TPM, self.tpm_port)
        for res_label, holder_label in sc.capabilities:
            res, holder = hv_mod.parse_resource(res_label), hv_mod.parse_domain(holder_label)
            try:
                if res.kind == "device":
                    hv.bind_device(holder, res.name)
                else:
                    hv.grant(res, holder)
            except (hv_mod.UnknownDevice, hv_mod.AlreadyBound) as exc:
                raise ConfigError(f"capability {res_label} -> {holder_label}: {exc}") from None
        if self.toggles.expose_tpm_to_os:
            hv.grant(hv_mod.TPM, VM_OS)
            hv.grant(hv_mod.tb_channel("vm-os"), VM_OS)

        self.tbs.clear()
        self.drivers.clear()
        self.apps.clear()
        self.routes.clear()
        self.links.clear()

        tb_inst = self._launch(self.images.tb, HostContext.HYPERVISOR, TB_HOST, "tb")
        tb = TbEnclave(tb_inst, self.images.tb_config, self.rng.fork(f"tb:{self.epoch}"),
                       pinning=self.toggles.aik_pinning, rogue=sc.tb.variant == "rogue")
        self.tbs["tb"] = TbHost("tb", TB_HOST, tb)
        for client in [*sc.drivers, "vm-os"]:
            hv.attach(hv_mod.tb_channel(client), self.tbs["tb"])
            hv.attach(hv_mod.tb_seal(client), self.tbs["tb"])

        for name, image in self.images.drivers.items():
            domain = hv_mod.driver_domain(name)
            inst = self._launch(image, HostContext.HYPERVISOR, domain, name)
            self.drivers[name] = DriverHost(name, domain, DriverEnclave(inst, name, key_confirm=self.toggles.key_confirm),
                                            self.physical[name])
        for name, image in self.images.apps.items():
            inst = self._launch(image, HostContext.OS, VM_OS, name)
            self.apps[name] = AppHost(name, UserAppEnclave(inst, self.images.policy, key_confirm=self.toggles.key_confirm))
        self.audit()

    # --- helpers -------------------------------------------------------

    def audit(self) -> None:
        for problem in self.hv.audit():
            if problem not in self._violations:
                self._violations.add(problem)
                self.emit(HYPERVISOR, "capability_violation", problem=problem)

    def _payload(self, params: dict) -> bytes:
        if "secret" in params:
            return self.secrets[params["secret"]]
        if "hex" in params:
            return bytes.fromhex(params["hex"])
        if "text" in params:
            return str(params["text"]).encode()
        raise ConfigError("action needs one of text/secret/hex")

    def _get(self, table: dict, key: Any, what: str):
        if key not in table:
            raise ConfigError(f"unknown {what} {key!r}")
        return table[key]

    def _instance(self, name: str) -> enc.EnclaveInstance:
        if name in self.tbs:
            return self.tbs[name].tb.instance
        if name in self.drivers:
            return self.drivers[name].enclave.instance
        if name in self.apps:
            return self.apps[name].app.instance
        raise ConfigError(f"unknown enclave {name!r}")

    def _genuine_driver_id(self, name: str) -> Measurement:
        host = self._get(self.drivers, name, "driver")
        base = host.enclave.device
        return enc.measure(self.images.driver_genuine[base])

    # --- system and user actions ----------------------------------------

    def act_provision_aik(self, integrator: str = "approved") -> None:
        signer = {"approved": self.integrator, "rogue": self.rogue_integrator}.get(integrator)
        if signer is None:
            raise ConfigError(f"integrator must be approved or rogue, got {integrator!r}")
        tb = self.tbs["tb"].tb
        try:
            sealed = tb.provision_aik(self.tpm.aik_public, signer.sign(aik_endorsement(self.tpm.aik_public)))
        except UnauthorizedIntegrator:
            self.emit(TB_HOST, "aik_provision", integrator=integrator, outcome="unauthorized")
            return
        self.disk[AIK_BLOB] = sealed
        self.emit(VM_OS, "disk_write", name=AIK_BLOB, data=sealed)
        self.emit(TB_HOST, "aik_provision", integrator=integrator, outcome="ok")

    def act_attest_hypervisor(self, tb: str = "tb") -> None:
        host = self._get(self.tbs, tb, "tb")
        requester = VM_OS if host.virtual else TB_HOST
        try:
            handle = self.hv.request_resource(requester, hv_mod.TPM)
        except AccessDenied:
            handle = None
        if host.tb.pinned is None and AIK_BLOB in self.disk:
            try:
                host.tb.load_aik(self.disk[AIK_BLOB])
            except AuthFailure:
                self.emit(host.domain, "aik_unseal", tb=tb, outcome="failed")
        outcome, reason = "pass", None
        try:
            host.tb.attest_hypervisor(handle, self.epoch)
        except NoTpmAccess:
            outcome = "no_tpm_access"
        except AikMissing:
            outcome = "no_aik"
        except BadQuote as exc:
            outcome, reason = "bad_quote", exc.reason
        self.emit(host.domain, "hv_attest", tb=tb, epoch=self.epoch, outcome=outcome, reason=reason,
                  grant=handle.grant_id if handle else None)

    def act_approve_driver(self, driver: str, tb: str = "tb") -> str:
        dh = self._get(self.drivers, driver, "driver")
        th = self._get(self.tbs, tb, "tb")
        step = self.step()
        report = dh.enclave.approval_request(th.tb.identity, self._draws.bytes(32), step)
        crosses_os = dh.virtual or th.virtual
        if th.virtual:
            # both ends live in the OS; the attacker wires them directly
            via = Handle(hv_mod.tb_channel("vm-os"), VM_OS, 0, th)
        else:
            requester, client = (VM_OS, "vm-os") if dh.virtual else (dh.domain, driver)
            try:
                via = self.hv.request_resource(requester, hv_mod.tb_channel(client))
            except AccessDenied:
                via = None
        self.emit(VM_OS if crosses_os else HYPERVISOR, "tb_request", driver=driver, tb=tb,
                  report=report.to_bytes())
        try:
            approval, tb_report = th.tb.approve_driver(report, via, step, self.epoch)
            outcome = "approved"
        except ChannelDenied:
            self.emit(dh.domain, "approval", driver=driver, tb=tb, outcome="channel_denied", grant=None)
            return "channel_denied"
        except AttestationFailed:
            outcome = "attestation_failed"
        except UnknownDriver:
            outcome = "unknown_driver"
        if outcome != "approved":
            approval, tb_report = th.tb.sign_verdict(False, report.enclave_id, step)
        accepted = dh.enclave.accept_approval(approval.to_bytes(), tb_report)
        self.emit(dh.domain, "approval", driver=driver, tb=tb, outcome=outcome,
                  accepted=accepted, grant=via.grant_id if via else None)
        return outcome

    def _transport(self, driver: str) -> Callable[[bytes], list[bytes]]:
        def deliver(raw: bytes) -> list[bytes]:
            host = self.routes.get(driver) or self._get(self.drivers, driver, "driver")
            self.emit(VM_OS, "kt_message", driver=driver, to=host.name, data=raw)
            replies = host.enclave.accept_transport(raw)
            for r in replies:
                self.emit(VM_OS, "vdev_read", device=f"{host.name}-B", data=r)
            if host.enclave.session is not None:
                self.emit(host.domain, "mode_switch", driver=host.name, mode="trusted")
            return replies
        return deliver

    def act_open_path(self, app: str, driver: str) -> None:
        ah = self._get(self.apps, app, "app")
        driver_id = self._genuine_driver_id(driver)
        outcome, reason = "ok", None
        try:
            ah.app.open_trusted_path(driver_id, self._transport(driver), self._draws)
        except (ApprovalMissing, ChannelRefused) as exc:
            outcome, reason = type(exc).__name__, str(exc)
        except (AuthFailure, ReplayDetected) as exc:
            outcome, reason = "AuthFailure", str(exc)
        if outcome == "ok":
            self.links[(app, driver)] = self.routes.get(driver) or self.drivers[driver]
        self.emit(enclave_domain(app), "session_open", driver=driver, outcome=outcome, reason=reason)

    def act_close_path(self, app: str, driver: str) -> None:
        ah = self._get(self.apps, app, "app")
        ah.app.close(self._genuine_driver_id(driver))
        host = self.links.pop((app, driver), None)
        if host is not None:
            host.enclave.close_session()
            self.emit(host.domain, "mode_switch", driver=host.name, mode="passthrough")

    def _deliver_to_app(self, host: DriverHost, frame: bytes, tag: str, origin: str) -> None:
        self.frames_seen.setdefault(host.name, []).append(frame)
        for (app, driver), linked in list(self.links.items()):
            if linked is not host:
                continue
            session = self.apps[app].app.sessions.get(self._genuine_driver_id(driver))
            if session is None:
                continue
            try:
                payload = session_recv(session, frame)
            except ReplayDetected:
                self.emit(enclave_domain(app), "frame_rejected", driver=driver, reason="replay", tag=tag)
            except (AuthFailure, TrustedPathError):
                self.emit(enclave_domain(app), "frame_rejected", driver=driver, reason="auth", tag=tag)
            else:
                self.emit(enclave_domain(app), "app_input", driver=driver, data=payload, tag=tag, origin=origin)

    def _input_event(self, host: DriverHost, event: DeviceEvent, origin: str) -> None:
        which, out = host.enclave.route(event)
        self.emit(VM_OS, "vdev_read", device=f"{host.name}-{which}", data=out)
        if which == "B":
            self._deliver_to_app(host, out, event.tag, origin)

    def _keystroke(self, device: str, byte: bytes) -> None:
        host = self._get(self.drivers, device, "driver")
        event = host.device.press(byte)
        self.emit(host.domain, "device_event", device=device, data=byte, tag=event.tag)
        if self.hv.route_interrupt(device, device):
            self._input_event(host, event, "physical")

    def act_type(self, device: str, **payload) -> None:
        self._get(self.drivers, device, "driver")
        for i in range(len(data := self._payload(payload))):
            self.sched.at(1, self._keystroke, device, data[i:i + 1])

    def _to_screen(self, host: DriverHost, frame: bytes) -> None:
        self.emit(VM_OS, "vdev_write", device=f"{host.name}-B", data=frame)
        try:
            shown = host.enclave.from_app(frame)
        except (AuthFailure, ReplayDetected, TrustedPathError) as exc:
            self.emit(host.domain, "frame_rejected", driver=host.name, reason=type(exc).__name__)
            return
        host.device.show(shown)
        self.emit(host.domain, "screen_display", device=host.name, data=shown)

    def act_display(self, app: str, driver: str, **payload) -> None:
        ah = self._get(self.apps, app, "app")
        session = ah.app.sessions.get(self._genuine_driver_id(driver))
        host = self.links.get((app, driver))
        if session is None or host is None:
            self.emit(enclave_domain(app), "display_failed", driver=driver)
            return
        self._to_screen(host, session_send(session, self._payload(payload)))

    def act_os_display(self, driver: str, text: str) -> None:
        host = self._get(self.drivers, driver, "driver")
        data = str(text).encode()
        self.emit(VM_OS, "vdev_write", device=f"{driver}-A", data=data)
        if host.enclave.session is not None:
            # the plaintext device is disconnected while a trusted session runs
            self.emit(host.domain, "vdev_drop", device=f"{driver}-A")
            return
        host.device.show(data)
        self.emit(host.domain, "screen_display", device=driver, data=data)

    def _delegated_key(self, requester: str) -> bytes | None:
        if requester in self.apps:
            inst, client, domain, visible = self.apps[requester].app.instance, "vm-os", VM_OS, VM_OS
        elif requester in self.drivers:
            host = self.drivers[requester]
            inst, client, domain, visible = host.enclave.instance, requester, host.domain, host.domain
        else:
            raise ConfigError(f"unknown requester {requester!r}")
        tb = self.tbs["tb"].tb
        report = enc.ereport(inst, tb.identity, sha256(b"sgxio-seal-request" + self._draws.bytes(32)))
        try:
            self.hv.request_resource(domain, hv_mod.tb_seal(client))
        except AccessDenied:
            self.emit(enclave_domain(requester), "seal_delegation", outcome="channel_denied")
            return None
        try:
            key = tb.delegated_seal_key(report, self.epoch)
        except AttestationFailed:
            self.emit(enclave_domain(requester), "seal_delegation", outcome="refused")
            return None
        # wrap the key for the requester only
        wrap_key, msg = key_transport_send(tb.instance, inst.identity, self._draws)
        wrapped = aead_seal(wrap_key, CONFIRM_NONCE, key)
        self.emit(visible, "tb_seal_response", data=msg.to_bytes() + wrapped)
        received = key_transport_recv(inst, KeyTransportMessage.from_bytes(msg.to_bytes()))
        key = aead_open(received, CONFIRM_NONCE, wrapped)
        self.emit(enclave_domain(requester), "seal_delegation", outcome="issued")
        return key

    def act_delegated_seal(self, requester: str) -> None:
        self._delegated_key(requester)

    def act_provision_secret(self, app: str, secret: str, delegated: bool = False) -> None:
        ah = self._get(self.apps, app, "app")
        key = None
        if delegated:
            key = self._delegated_key(app)
            if key is None:
                self.emit(enclave_domain(app), "secret_provisioned", outcome="no_key")
                return
        blob = ah.app.seal_secret(self.secrets[secret], self._draws.bytes(12), key)
        self.disk[f"secret-{app}"] = blob
        self.emit(VM_OS, "disk_write", name=f"secret-{app}", data=blob)
        self.emit(enclave_domain(app), "secret_provisioned", outcome="ok", delegated=delegated)

    def act_user_verify(self, app: str, keyboard: str, screen: str, blob: str | None = None,
                        delegated: bool = False) -> None:
        ah = self._get(self.apps, app, "app")
        sealed = self.disk.get(f"secret-{blob or app}")
        if sealed is None:
            raise ConfigError(f"no provisioned secret for {blob or app!r}")
        key = self._delegated_key(app) if delegated else None
        sessions = ah.app.sessions
        kbd = sessions.get(self._genuine_driver_id(keyboard))
        scr = sessions.get(self._genuine_driver_id(screen))
        host = self.links.get((app, screen))
        if delegated and key is None:
            result = "aborted"
        else:
            result = user_verify(ah.app, scr, kbd, sealed, lambda frame: self._to_screen(host, frame), key)
        self.emit(enclave_domain(app), "user_verify", outcome=result)

    def act_remote_attest(self, app: str, driver: str) -> None:
        ah = self._get(self.apps, app, "app")
        dh = self._get(self.drivers, driver, "driver")
        challenge = self._draws.bytes(32)
        self.emit(REMOTE, "challenge", nonce=challenge)
        rr = enc.remote_report(ah.app.instance, sha256(challenge))
        self.emit(VM_OS, "remote_report", identity=rr.identity, data=rr.data)
        report, tb_report, approval = dh.enclave.evidence_for(ah.app.identity, challenge)
        evidence = ChainEvidence(rr, ah.app.instance, report, dh.enclave.instance, tb_report, approval, challenge)
        try:
            verdict = attest_chain(self.trust_policy(), "remote", evidence, self.cpu.attestation_pubkey)
        except ChainBroken as exc:
            self.emit(REMOTE, "chain_verdict", outcome="broken", link=exc.link, reason=exc.reason)
            return
        self.emit(REMOTE, "chain_verdict", outcome="pass", links="/".join(verdict.links_checked))

    def act_reboot(self, compromised: bool | None = None) -> None:
        if compromised is not None:
            if compromised and self.scenario.compromised_blob is None:
                raise ConfigError("reboot into a compromised hypervisor needs boot.compromised_blob")
            self.compromised = bool(compromised)
        self.boot()

    def act_audit(self) -> None:
        problems = self.hv.audit()
        self.emit(HYPERVISOR, "capability_audit", violations=len(problems), detail="; ".join(problems) or None)

    # --- attacker actions ------------------------------------------------

    def act_load_enclave_in_vm(self, role: str, name: str, of: str | None = None) -> None:
        if name in self.tbs or name in self.drivers or name in self.apps:
            raise ConfigError(f"enclave name {name!r} already in use")
        if role == "tb":
            inst = self._launch(self.images.tb, HostContext.OS, VM_OS, name)
            tb = TbEnclave(inst, self.images.tb_config, self.rng.fork(f"vtb:{name}:{self.epoch}"),
                           pinning=self.toggles.aik_pinning)
            self.tbs[name] = TbHost(name, VM_OS, tb, virtual=True)
        elif role == "driver":
            if of not in self.images.driver_genuine:
                raise ConfigError(f"load_enclave_in_vm: driver needs of=<device>, got {of!r}")
            inst = self._launch(self.images.driver_genuine[of], HostContext.OS, VM_OS, name)
            self.drivers[name] = DriverHost(name, VM_OS, DriverEnclave(inst, of, key_confirm=self.toggles.key_confirm),
                                            UserDevice(name), virtual=True)
        elif role == "user_app":
            inst = self._launch(self.images.app_genuine, HostContext.OS, VM_OS, name)
            self.apps[name] = AppHost(name, UserAppEnclave(inst, self.images.policy, key_confirm=self.toggles.key_confirm),
                                      virtual=True)
        else:
            raise ConfigError(f"load_enclave_in_vm: unknown role {role!r}")

    def act_divert_message(self, what: str, to: str, driver: str | None = None) -> None:
        if what == "kt":
            self._get(self.drivers, driver, "driver")
            self.routes[driver] = self._get(self.drivers, to, "driver")
            self.emit(VM_OS, "divert", what=what, driver=driver, to=to, outcome="installed")
        elif what == "approval":
            outcome = self.act_approve_driver(to, "tb")
            self.emit(VM_OS, "divert", what=what, to=to,
                      outcome="delivered" if outcome != "channel_denied" else "denied")
        elif what == "tpm":
            self.act_attest_hypervisor(to)
        else:
            raise ConfigError(f"divert_message: unknown message kind {what!r}")

    def act_read_vm_traffic(self) -> None:
        self.attacker_buffer = observed_bytes(self.trace.events, str(VM_OS))
        self.emit(VM_OS, "keylogger_capture", size=len(self.attacker_buffer),
                  digest=sha256(self.attacker_buffer).hex()[:16])

    def act_inject_frame(self, driver: str, mode: str = "replay", app: str | None = None) -> None:
        host = self.links.get((app, driver)) if app else None
        host = host or self.routes.get(driver) or self._get(self.drivers, driver, "driver")
        seen = self.frames_seen.get(host.name, [])
        if mode == "forge":
            frame = (44).to_bytes(4, "big") + self._draws.bytes(44)
        elif not seen:
            self.emit(VM_OS, "inject", driver=driver, mode=mode, outcome="nothing_captured")
            return
        elif mode == "replay":
            frame = seen[0]
        elif mode == "tamper":
            last = bytearray(seen[-1])
            last[-1] ^= 0x01
            frame = bytes(last)
        else:
            raise ConfigError(f"inject_frame: unknown mode {mode!r}")
        self.emit(VM_OS, "inject", driver=driver, mode=mode, data=frame)
        self._deliver_to_app(host, frame, f"injected:{mode}", "injected")

    def act_fake_input(self, driver: str, **payload) -> None:
        host = self._get(self.drivers, driver, "driver")
        if not host.virtual:
            raise ConfigError("fake_input targets a driver the attacker loaded in the VM")
        data = self._payload(payload)
        for i in range(len(data)):
            event = host.device.press(data[i:i + 1])
            self.emit(VM_OS, "device_event", device=host.name, data=data[i:i + 1], tag=event.tag)
            self._input_event(host, event, "fake")

    def act_spoof_interrupt(self, **params) -> None:
        claimed, actual = params.get("as"), params.get("from")
        if claimed is None or actual is None:
            raise ConfigError("spoof_interrupt needs as and from")
        try:
            delivered = self.hv.route_interrupt(claimed, actual)
        except hv_mod.UnknownDevice as exc:
            raise ConfigError(f"unknown device {exc}") from None
        if delivered and claimed in self.drivers:
            # the driver would treat it as genuine input
            self.emit(self.drivers[claimed].domain, "device_event", device=claimed, data=b"", tag=f"spoofed:{actual}")

    def act_remote_tpm_quote(self) -> None:
        if not self.compromised:
            # the TPM wire belongs to the hypervisor; a clean one keeps it
            self.emit(VM_OS, "remote_tpm", outcome="denied")
            return
        self.attacker_tpm.reset()
        for stage in self.scenario.stages:
            self.attacker_tpm.extend(sha256(stage.blob))
        self.tpm_port.tpm = self.attacker_tpm
        self.emit(HYPERVISOR, "remote_tpm", outcome="diverted", tpm=self.attacker_tpm.label)

    def act_claim_mmio_overlap(self, device: str, target: str) -> None:
        info = self._get(self.hv.devices, target, "device")
        self._get(self.hv.devices, device, "device")
        self.hv.claim_mmio(MmioClaim(device, *info.mmio), VM_OS)

    def act_claim_mmio(self, device: str, base: int, limit: int) -> None:
        self._get(self.hv.devices, device, "device")
        self.hv.claim_mmio(MmioClaim(device, int(base), int(limit)), VM_OS)

    def act_dma_attack(self, device: str, target: str) -> None:
        region = self._get(self.hv.regions, target, "memory region")
        self._get(self.hv.devices, device, "device")
        self.hv.dma_request(device, region.base, region.limit)

    def _debug_args(self, caller: str, enclave: str) -> tuple[DomainId, enc.EnclaveInstance]:
        try:
            domain = hv_mod.parse_domain(caller)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return domain, self._instance(enclave)

    def act_debug_read(self, caller: str, enclave: str, offset: int = 0, length: int | None = None) -> None:
        domain, inst = self._debug_args(caller, enclave)
        length = inst.memory_size - offset if length is None else length
        try:
            data = self.hv.debug_read(domain, inst, offset, length)
        except (enc.Intercepted, enc.ProductionEnclave):
            return
        self.emit(domain, "debug_capture", enclave=enclave, data=data)

    def act_debug_write(self, caller: str, enclave: str, hex: str, offset: int = 0) -> None:
        domain, inst = self._debug_args(caller, enclave)
        try:
            self.hv.debug_write(domain, inst, offset, bytes.fromhex(hex))
        except (enc.Intercepted, enc.ProductionEnclave):
            pass

    # --- driving ---------------------------------------------------------

    def perform(self, kind: str, params: dict[str, Any]) -> None:
        handler = getattr(self, f"act_{kind}")
        self.emit(SCENARIO, "action", action=kind,
                  args=",".join(f"{k}:{v}" for k, v in sorted(params.items())) or None)
        try:
            inspect.signature(handler).bind(**params)
        except TypeError as exc:
            raise ConfigError(f"{kind}: {exc}") from None
        self.sched.at(0, lambda: handler(**params))
        self.sched.run()
        self.audit()
