"""Trace predicates. Each is a pure scan of the event log."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

from ..trace import TraceEvent, event_count, select, substring_absent, windows, observed_bytes


class ExpectationFailed(Exception):
    pass


@dataclass(frozen=True)
class ExpectationResult:
    name: str
    passed: bool
    detail: str
    skipped: bool = False

    def line(self) -> str:
        status = "skip" if self.skipped else ("pass" if self.passed else "FAIL")
        return f"[{status}] {self.name}: {self.detail}"


def count_matching(events: Iterable[TraceEvent], event: str, where: dict[str, Any] | None = None) -> int:
    return event_count(events, event, **(where or {}))


def ordered(events: list[TraceEvent], sequence: list[Any]) -> bool:
    """Each entry (an event type, or ``{event, where}``) is matched by an event
    strictly after the one matching the previous entry."""
    pos = 0
    for entry in sequence:
        if isinstance(entry, str):
            entry = {"event": entry}
        where = entry.get("where", {})
        for i in range(pos, len(events)):
            if events[i].event == entry["event"] and events[i].matches(**where):
                pos = i + 1
                break
        else:
            return False
    return True


def secret_absent(events: list[TraceEvent], secret: bytes, domain: str, window: int) -> bool:
    return substring_absent(events, secret, domain=domain, window=window)


def secret_present(events: list[TraceEvent], secret: bytes, domain: str, window: int | None = None) -> bool:
    stream = observed_bytes(events, domain)
    if window is None:
        return secret in stream
    return any(w in stream for w in windows(secret, window))


def capability_clean(events: list[TraceEvent]) -> bool:
    return not any(select(events, event="capability_violation"))


def mediation_violations(events: list[TraceEvent]) -> list[str]:
    """Approvals and passed attestations that no hypervisor grant accounts for."""
    grants = set()
    problems = []
    for ev in events:
        if ev.event == "resource_request" and ev.get("outcome") == "granted":
            grants.add(ev.get("grant"))
        elif ev.event == "approval" and ev.get("outcome") == "approved" and ev.get("grant") not in grants:
            problems.append(f"step {ev.step}: approval for {ev.get('driver')} without a granted channel")
        elif ev.event == "hv_attest" and ev.get("outcome") == "pass" and ev.get("grant") not in grants:
            problems.append(f"step {ev.step}: attestation by {ev.get('tb')} without a granted TPM handle")
    return problems
