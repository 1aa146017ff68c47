"""Scenario files: YAML documents validated against an explicit schema.

Unknown keys are errors everywhere; a misspelled toggle must not silently
fall back to its default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..hypervisor import parse_domain, parse_resource


class ConfigError(Exception):
    pass


TOGGLES = ("encls_tweak", "expose_tpm_to_os", "aik_pinning", "key_confirm")
TOGGLE_DEFAULTS = {"encls_tweak": True, "expose_tpm_to_os": False, "aik_pinning": True, "key_confirm": True}

ACTION_PARAMS: dict[str, set[str]] = {
    # system and user actions
    "provision_aik": {"integrator"},
    "attest_hypervisor": {"tb"},
    "approve_driver": {"driver", "tb"},
    "open_path": {"app", "driver"},
    "close_path": {"app", "driver"},
    "type": {"device", "text", "secret", "hex"},
    "display": {"app", "driver", "text", "secret"},
    "os_display": {"driver", "text"},
    "provision_secret": {"app", "secret", "delegated"},
    "user_verify": {"app", "keyboard", "screen", "blob", "delegated"},
    "remote_attest": {"app", "driver"},
    "delegated_seal": {"requester"},
    "reboot": {"compromised"},
    "audit": set(),
    # attacker actions (vm-os capabilities only)
    "load_enclave_in_vm": {"role", "name", "of"},
    "divert_message": {"what", "driver", "to"},
    "read_vm_traffic": set(),
    "inject_frame": {"app", "driver", "mode"},
    "spoof_interrupt": {"as", "from"},
    "remote_tpm_quote": set(),
    "claim_mmio_overlap": {"device", "target"},
    "claim_mmio": {"device", "base", "limit"},
    "dma_attack": {"device", "target"},
    "debug_read": {"caller", "enclave", "offset", "length"},
    "debug_write": {"caller", "enclave", "offset", "hex"},
    "fake_input": {"driver", "text", "hex"},
}

EXPECTATION_KINDS = ("event", "no_substring", "has_substring", "order", "capability_audit", "mediation_audit")
_EXPECT_KEYS = {"name", "when", "where", "count", "at_least", "at_most", "none", *EXPECTATION_KINDS}


@dataclass
class DeviceSpec:
    name: str
    direction: str
    mmio: tuple[int, int]


@dataclass
class RegionSpec:
    name: str
    base: int
    limit: int
    holder: str
    enclave: bool = False


@dataclass
class EnclaveSpec:
    debug: bool
    variant: str = "genuine"


@dataclass
class Stage:
    name: str
    blob: bytes


@dataclass
class Scenario:
    name: str
    description: str
    seed: int
    platform: dict[str, bool]
    capabilities: list[tuple[str, str]]
    devices: list[DeviceSpec]
    memory: list[RegionSpec] | None
    tb: EnclaveSpec
    drivers: dict[str, EnclaveSpec]
    user_apps: dict[str, EnclaveSpec]
    stages: list[Stage]
    golden_pcr: bytes
    compromised_blob: bytes | None
    hypervisor_compromised: bool
    secrets: dict[str, dict[str, Any]]
    actions: list[tuple[str, dict[str, Any]]]
    expect: list[dict[str, Any]]
    source: str = ""
    raw: dict[str, Any] = field(default_factory=dict, repr=False)


def _keys(obj: Any, allowed: set[str], where: str, required: set[str] = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(map(str, unknown)))}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing key(s) {', '.join(sorted(missing))}")
    return obj


def _bool(value, where) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false")
    return value


def _hex(value, where) -> bytes:
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a hex string")
    try:
        return bytes.fromhex(value.replace(" ", ""))
    except ValueError:
        raise ConfigError(f"{where}: invalid hex") from None


def _range(value, where) -> tuple[int, int]:
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, int) for v in value) or value[0] >= value[1]):
        raise ConfigError(f"{where}: expected [base, limit] with base < limit")
    return value[0], value[1]


def _enclave(obj, where, variants) -> EnclaveSpec:
    _keys(obj, {"debug", "variant"}, where, {"debug"})
    variant = obj.get("variant", "genuine")
    if variant not in variants:
        raise ConfigError(f"{where}.variant: must be one of {', '.join(variants)}")
    return EnclaveSpec(_bool(obj["debug"], f"{where}.debug"), variant)


def parse(doc: Any, source: str = "<memory>") -> Scenario:
    top = _keys(doc, {"name", "description", "seed", "platform", "devices", "memory", "enclaves",
                      "boot", "secrets", "actions", "expect"}, "scenario",
                {"name", "platform", "devices", "enclaves", "boot", "actions", "expect"})
    seed = top.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")

    plat = _keys(top["platform"], {*TOGGLES, "capabilities"}, "platform", {"capabilities"})
    toggles = dict(TOGGLE_DEFAULTS)
    for t in TOGGLES:
        if t in plat:
            toggles[t] = _bool(plat[t], f"platform.{t}")
    caps = []
    if not isinstance(plat["capabilities"], list):
        raise ConfigError("platform.capabilities: expected a list")
    for i, cap in enumerate(plat["capabilities"]):
        where = f"platform.capabilities[{i}]"
        _keys(cap, {"resource", "holder"}, where, {"resource", "holder"})
        try:
            parse_resource(cap["resource"])
            parse_domain(cap["holder"])
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        caps.append((cap["resource"], cap["holder"]))

    devices = []
    if not isinstance(top["devices"], list):
        raise ConfigError("devices: expected a list")
    for i, d in enumerate(top["devices"]):
        where = f"devices[{i}]"
        _keys(d, {"name", "direction", "mmio"}, where, {"name", "mmio"})
        direction = d.get("direction", "bidirectional")
        if direction not in ("input", "output", "bidirectional"):
            raise ConfigError(f"{where}.direction: invalid")
        devices.append(DeviceSpec(str(d["name"]), direction, _range(d["mmio"], f"{where}.mmio")))
    device_names = {d.name for d in devices}

    memory = None
    if "memory" in top:
        memory = []
        for i, r in enumerate(top["memory"]):
            where = f"memory[{i}]"
            _keys(r, {"name", "range", "holder", "enclave"}, where, {"name", "range", "holder"})
            base, limit = _range(r["range"], f"{where}.range")
            try:
                parse_domain(r["holder"])
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from None
            memory.append(RegionSpec(r["name"], base, limit, r["holder"], _bool(r.get("enclave", False), where)))

    encl = _keys(top["enclaves"], {"tb", "drivers", "user_apps"}, "enclaves", {"tb", "drivers", "user_apps"})
    tb = _enclave(encl["tb"], "enclaves.tb", ("genuine", "rogue"))
    drivers = {}
    for name, spec in _keys(encl["drivers"], set(encl["drivers"]) if isinstance(encl["drivers"], dict) else set(),
                            "enclaves.drivers").items():
        if name not in device_names:
            raise ConfigError(f"enclaves.drivers.{name}: no device named {name}")
        drivers[name] = _enclave(spec, f"enclaves.drivers.{name}", ("genuine", "rogue"))
    apps = {}
    for name, spec in _keys(encl["user_apps"], set(encl["user_apps"]) if isinstance(encl["user_apps"], dict) else set(),
                            "enclaves.user_apps").items():
        apps[name] = _enclave(spec, f"enclaves.user_apps.{name}", ("genuine", "attacker"))

    boot = _keys(top["boot"], {"stages", "golden_pcr", "compromised_blob", "hypervisor_compromised"},
                 "boot", {"stages", "golden_pcr"})
    stages = []
    if not isinstance(boot["stages"], list) or not boot["stages"]:
        raise ConfigError("boot.stages: expected a non-empty list")
    for i, s in enumerate(boot["stages"]):
        where = f"boot.stages[{i}]"
        _keys(s, {"name", "blob"}, where, {"name", "blob"})
        stages.append(Stage(str(s["name"]), _hex(s["blob"], f"{where}.blob")))
    golden = _hex(boot["golden_pcr"], "boot.golden_pcr")
    if len(golden) != 32:
        raise ConfigError("boot.golden_pcr: expected 32 bytes")
    compromised_blob = _hex(boot["compromised_blob"], "boot.compromised_blob") if "compromised_blob" in boot else None
    hv_comp = _bool(boot.get("hypervisor_compromised", False), "boot.hypervisor_compromised")
    if (hv_comp or compromised_blob is not None) and not any(s.name == "hypervisor" for s in stages):
        raise ConfigError("boot: a compromised hypervisor needs a stage named 'hypervisor'")
    if hv_comp and compromised_blob is None:
        raise ConfigError("boot.hypervisor_compromised requires boot.compromised_blob")

    secrets = {}
    for name, spec in (top.get("secrets") or {}).items():
        where = f"secrets.{name}"
        _keys(spec, {"random", "hex", "text"}, where)
        if len(spec) != 1:
            raise ConfigError(f"{where}: give exactly one of random/hex/text")
        if "random" in spec and (not isinstance(spec["random"], int) or spec["random"] <= 0):
            raise ConfigError(f"{where}.random: expected a positive length")
        if "hex" in spec:
            _hex(spec["hex"], f"{where}.hex")
        secrets[name] = spec

    actions = []
    if not isinstance(top["actions"], list):
        raise ConfigError("actions: expected a list")
    for i, a in enumerate(top["actions"]):
        where = f"actions[{i}]"
        if isinstance(a, str):
            a = {a: {}}
        if not isinstance(a, dict) or len(a) != 1:
            raise ConfigError(f"{where}: expected a single-key mapping")
        (kind, params), = a.items()
        if kind not in ACTION_PARAMS:
            raise ConfigError(f"{where}: unknown action {kind!r}")
        params = params or {}
        _keys(params, ACTION_PARAMS[kind], f"{where}.{kind}")
        for ref in ("secret",):
            if ref in params and params[ref] not in secrets:
                raise ConfigError(f"{where}.{kind}.{ref}: unknown secret {params[ref]!r}")
        actions.append((kind, params))

    expect = []
    if not isinstance(top["expect"], list):
        raise ConfigError("expect: expected a list")
    for i, e in enumerate(top["expect"]):
        where = f"expect[{i}]"
        _keys(e, _EXPECT_KEYS, where, {"name"})
        kinds = [k for k in EXPECTATION_KINDS if k in e]
        if len(kinds) != 1:
            raise ConfigError(f"{where}: give exactly one of {', '.join(EXPECTATION_KINDS)}")
        if "when" in e:
            _keys(e["when"], set(TOGGLES), f"{where}.when")
        for sub in ("no_substring", "has_substring"):
            if sub in e:
                _keys(e[sub], {"secret", "domain", "window"}, f"{where}.{sub}", {"secret"})
                if e[sub]["secret"] not in secrets:
                    raise ConfigError(f"{where}.{sub}: unknown secret {e[sub]['secret']!r}")
        expect.append(e)

    return Scenario(
        name=str(top["name"]), description=str(top.get("description", "")), seed=seed,
        platform=toggles, capabilities=caps, devices=devices, memory=memory, tb=tb,
        drivers=drivers, user_apps=apps, stages=stages, golden_pcr=golden,
        compromised_blob=compromised_blob, hypervisor_compromised=hv_comp, secrets=secrets,
        actions=actions, expect=expect, source=source, raw=doc,
    )


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML error: {exc}") from None
    return parse(doc, str(path))


def builtin_dir() -> Path:
    return Path(str(resources.files("sgxio.harness") / "scenarios"))


def builtin_names() -> list[str]:
    return sorted(p.stem for p in builtin_dir().glob("*.yaml"))


def resolve(name_or_path: str) -> Scenario:
    """Load a scenario file, or a shipped scenario by name."""
    p = Path(name_or_path)
    if p.exists():
        return load(p)
    builtin = builtin_dir() / f"{name_or_path}.yaml"
    if builtin.exists():
        return load(builtin)
    raise ConfigError(f"no scenario file or shipped scenario named {name_or_path!r}")
