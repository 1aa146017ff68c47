import copy
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

import oracles
from sgxio.harness import cli
from sgxio.harness.runner import run
from sgxio.harness.scenario import ConfigError, builtin_dir, builtin_names, parse, resolve
from sgxio.trace import observed_bytes

ROOT = Path(__file__).resolve().parents[1]


def _doc(name="s1_honest_path"):
    return yaml.safe_load((builtin_dir() / f"{name}.yaml").read_text())


def test_shipped_suite_is_complete():
    names = set(builtin_names())
    for required in ("s1_honest_path", "s2_cuckoo", "s3a_virtual_tb", "s3b_virtual_path", "s4_keylogger",
                     "s5_debug_tweak", "s6_user_verify", "s_spoof", "s_chain"):
        assert required in names


@pytest.mark.parametrize("name", builtin_names())
def test_golden_pcr_matches_oracle(name):
    doc = _doc(name)
    blobs = [bytes.fromhex(s["blob"]) for s in doc["boot"]["stages"]]
    assert doc["boot"]["golden_pcr"] == oracles.pcr_chain(blobs).hex()


@pytest.mark.parametrize("name", builtin_names())
@pytest.mark.parametrize("toggle", [{}, {"aik_pinning": False}, {"expose_tpm_to_os": True}, {"encls_tweak": False}])
def test_shipped_scenarios_pass(name, toggle):
    result = run(resolve(name), **toggle)
    assert result.passed, [r.line() for r in result.failures()]


@pytest.mark.parametrize("path,bad", [
    (("platform",), {"aik_pining": False}),
    ((), {"extra": 1}),
    (("enclaves", "tb"), {"debgu": True}),
    (("expect", 0), {"whre": {}}),
])
def test_schema_rejects_unknown_keys(path, bad):
    doc = _doc()
    node = doc
    for key in path:
        node = node[key]
    node.update(bad)
    with pytest.raises(ConfigError, match="unknown key"):
        parse(doc)


def test_schema_rejects_bad_values():
    doc = _doc()
    doc["actions"].append({"teleport": {}})
    with pytest.raises(ConfigError, match="unknown action"):
        parse(doc)
    doc = _doc()
    doc["platform"]["capabilities"].append({"resource": "tpm(x)", "holder": "vm-os"})
    with pytest.raises(ConfigError):
        parse(doc)
    doc = _doc()
    doc["boot"]["golden_pcr"] = "abcd"
    with pytest.raises(ConfigError, match="32 bytes"):
        parse(doc)
    doc = _doc()
    doc["actions"][0] = {"provision_secret": {"app": "ua", "secret": "nope"}}
    with pytest.raises(ConfigError, match="unknown secret"):
        parse(doc)


def test_runtime_reference_errors_are_config_errors():
    doc = _doc()
    doc["actions"].append({"open_path": {"app": "ghost", "driver": "kbd"}})
    with pytest.raises(ConfigError):
        run(parse(doc))


def test_determinism_and_seed_sensitivity():
    sc = resolve("s4_keylogger")
    assert run(sc, 3).trace.render() == run(sc, 3).trace.render()
    assert run(sc, 3).trace.render() != run(sc, 4).trace.render()


def test_no_key_material_in_os_view():
    result = run(resolve("s1_honest_path"))
    m = result.machine
    os_view = observed_bytes(result.trace.events, "vm-os")
    app = m.apps["ua"].app
    keys = [s.key for s in app.sessions.values()]
    ids = [app.identity] + [h.enclave.identity for h in m.drivers.values()]
    secret = oracles.cpu_secret(m.cpu)
    keys += [oracles.report_key(secret, i.digest) for i in ids]
    keys += [oracles.seal_key(secret, i.digest) for i in ids]
    assert keys and not any(k in os_view for k in keys)


def test_keylogger_buffer_is_ciphertext_only():
    result = run(resolve("s4_keylogger"))
    buf = result.machine.attacker_buffer
    pin = result.machine.secrets["pin"]
    assert buf and not any(w in buf for w in (pin[i:i + 4] for i in range(13)))
    assert result.machine.secrets["greeting"] in buf


def test_expectation_failure_is_reported():
    doc = _doc("s_chain")
    doc["expect"][0]["where"]["outcome"] = "broken"
    result = run(parse(doc))
    assert not result.passed and result.failures()[0].name == "chain passes"


def test_cli_exit_codes(tmp_path, capsys):
    trace = tmp_path / "t.txt"
    assert cli.main(["run", "s1_honest_path", "--trace", str(trace), "-q"]) == 0
    line = trace.read_text().splitlines()[0]
    assert line.startswith("step=0 domain=") and " event=" in line

    doc = _doc("s_chain")
    doc["expect"][0]["count"] = 2
    failing = tmp_path / "fail.yaml"
    failing.write_text(yaml.safe_dump(doc))
    assert cli.main(["run", str(failing)]) == 1

    broken = copy.deepcopy(doc)
    broken["platform"]["typo"] = True
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(broken))
    assert cli.main(["run", str(bad)]) == 2
    (tmp_path / "junk.yaml").write_text("a: [unclosed")
    assert cli.main(["run", str(tmp_path / "junk.yaml")]) == 2
    assert cli.main(["run", "no-such-scenario"]) == 2

    assert cli.main(["list"]) == 0
    assert "s2_cuckoo" in capsys.readouterr().out


def test_cli_flags_flip_toggles(tmp_path):
    trace_on, trace_off = tmp_path / "on.txt", tmp_path / "off.txt"
    cli.main(["run", "s2_cuckoo", "--trace", str(trace_on), "-q"])
    cli.main(["run", "s2_cuckoo", "--no-aik-pinning", "--trace", str(trace_off), "-q"])
    assert "reason=origin" in trace_on.read_text()
    assert "reason=origin" not in trace_off.read_text()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sgxio", "run", "s_spoof", "-q"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0 and "verdict=pass" in proc.stdout


def test_golden_tool_agrees(tmp_path):
    files = sorted(str(p) for p in builtin_dir().glob("*.yaml"))
    proc = subprocess.run([sys.executable, str(ROOT / "tools" / "golden_pcr.py"), *files],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout


@pytest.mark.parametrize("script", sorted((ROOT / "walkthroughs").glob("*.py")), ids=lambda p: p.stem)
def test_walkthrough_runs(script):
    proc = subprocess.run([sys.executable, str(script)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
