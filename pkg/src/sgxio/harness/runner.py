"""run(scenario, seed) -> verdict + trace."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..trace import Trace
from . import query
from .machine import Machine, Toggles
from .scenario import ConfigError, Scenario


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    toggles: Toggles
    machine: Machine
    results: list[query.ExpectationResult]

    @property
    def trace(self) -> Trace:
        return self.machine.trace

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[query.ExpectationResult]:
        return [r for r in self.results if not r.passed]


def effective_toggles(scenario: Scenario, **overrides: bool | None) -> Toggles:
    values = dict(scenario.platform)
    for key, value in overrides.items():
        if key not in values:
            raise ConfigError(f"unknown toggle {key!r}")
        if value is not None:
            values[key] = value
    return Toggles(**values)


def run(scenario: Scenario, seed: int | None = None, **overrides: bool | None) -> RunResult:
    seed = scenario.seed if seed is None else seed
    toggles = effective_toggles(scenario, **overrides)
    machine = Machine(scenario, seed, toggles)
    machine.boot()
    for kind, params in scenario.actions:
        machine.perform(kind, params)
    results = [evaluate(machine, e) for e in scenario.expect]
    return RunResult(scenario, seed, toggles, machine, results)


def evaluate(machine: Machine, exp: dict) -> query.ExpectationResult:
    name = exp["name"]
    when = exp.get("when", {})
    mismatched = [k for k, v in when.items() if getattr(machine.toggles, k) != v]
    if mismatched:
        return query.ExpectationResult(name, True, f"not applicable ({', '.join(mismatched)})", skipped=True)
    events = machine.trace.events

    if "event" in exp:
        n = query.count_matching(events, exp["event"], exp.get("where"))
        bounds = [k for k in ("count", "at_least", "at_most", "none") if k in exp]
        if len(bounds) > 1:
            raise ConfigError(f"expectation {name!r}: give one of count/at_least/at_most/none")
        if not bounds or "at_least" in exp:
            want = exp.get("at_least", 1)
            return query.ExpectationResult(name, n >= want, f"{n} matching, need >= {want}")
        if "count" in exp:
            return query.ExpectationResult(name, n == exp["count"], f"{n} matching, need {exp['count']}")
        if "at_most" in exp:
            return query.ExpectationResult(name, n <= exp["at_most"], f"{n} matching, need <= {exp['at_most']}")
        return query.ExpectationResult(name, n == 0, f"{n} matching, need none")

    if "no_substring" in exp:
        spec = exp["no_substring"]
        domain, window = spec.get("domain", "vm-os"), spec.get("window", 4)
        ok = query.secret_absent(events, machine.secrets[spec["secret"]], domain, window)
        return query.ExpectationResult(name, ok, f"{window}-byte windows of {spec['secret']} "
                                                 f"{'absent from' if ok else 'FOUND in'} {domain}")

    if "has_substring" in exp:
        spec = exp["has_substring"]
        domain = spec.get("domain", "vm-os")
        ok = query.secret_present(events, machine.secrets[spec["secret"]], domain, spec.get("window"))
        return query.ExpectationResult(name, ok, f"{spec['secret']} {'present in' if ok else 'absent from'} {domain}")

    if "order" in exp:
        ok = query.ordered(events, exp["order"])
        return query.ExpectationResult(name, ok, "in order" if ok else "order violated")

    if "capability_audit" in exp:
        want = exp["capability_audit"]
        if want not in ("clean", "violated"):
            raise ConfigError(f"expectation {name!r}: capability_audit must be clean or violated")
        clean = query.capability_clean(events)
        return query.ExpectationResult(name, clean == (want == "clean"),
                                       "no violations" if clean else "violations recorded")

    if "mediation_audit" in exp:
        want = exp["mediation_audit"]
        if want not in ("clean", "violated"):
            raise ConfigError(f"expectation {name!r}: mediation_audit must be clean or violated")
        problems = query.mediation_violations(events)
        return query.ExpectationResult(name, (not problems) == (want == "clean"),
                                       "; ".join(problems) or "every approval traces to a grant")

    raise ConfigError(f"expectation {name!r} has no predicate")


def with_overrides(scenario: Scenario, **platform: bool) -> Scenario:
    return replace(scenario, platform={**scenario.platform, **platform})
