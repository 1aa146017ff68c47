"""Append-only, totally ordered event log shared by every simulated domain.

Each event renders as one line::

    step=<n> domain=<d> event=<type> k=v ...

Byte values are rendered as lowercase hex. Raw values are kept on the event
so byte-level queries (substring scans) do not depend on the rendering.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator


def render_value(value: Any) -> str:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex() if value else "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "-"
    if hasattr(value, "hex") and callable(value.hex) and not isinstance(value, (int, float)):
        return value.hex()
    text = str(value)
    return text.replace(" ", "_") if text else "-"


@dataclass(frozen=True)
class TraceEvent:
    step: int
    domain: str
    event: str
    detail: tuple[tuple[str, Any], ...] = ()

    def get(self, key: str, default: Any = None) -> Any:
        for k, v in self.detail:
            if k == key:
                return v
        return default

    def __getitem__(self, key: str) -> Any:
        for k, v in self.detail:
            if k == key:
                return v
        raise KeyError(key)

    def matches(self, **where: Any) -> bool:
        """Compare rendered values, so ``where`` may use strings or raw values."""
        for key, expected in where.items():
            if key == "domain":
                actual = self.domain
            elif key == "event":
                actual = self.event
            else:
                actual = self.get(key, _MISSING)
                if actual is _MISSING:
                    return False
            if render_value(actual) != render_value(expected):
                return False
        return True

    def payload_bytes(self) -> bytes:
        """All byte-valued fields concatenated, in field order."""
        return b"".join(bytes(v) for _, v in self.detail if isinstance(v, (bytes, bytearray)))

    def render(self) -> str:
        parts = [f"step={self.step}", f"domain={self.domain}", f"event={self.event}"]
        parts.extend(f"{k}={render_value(v)}" for k, v in self.detail)
        return " ".join(parts)


_MISSING = object()


class Trace:
    def __init__(self):
        self.events: list[TraceEvent] = []
        self._listeners: list[Callable[[TraceEvent], None]] = []

    def emit(self, domain: str, event: str, **detail: Any) -> TraceEvent:
        ev = TraceEvent(len(self.events), str(domain), event, tuple(detail.items()))
        self.events.append(ev)
        for listener in self._listeners:
            listener(ev)
        return ev

    def subscribe(self, listener: Callable[[TraceEvent], None]) -> None:
        self._listeners.append(listener)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def render(self) -> str:
        return "".join(ev.render() + "\n" for ev in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.render())

    def select(self, event: str | None = None, domain: str | None = None, **where) -> list[TraceEvent]:
        return list(select(self.events, event=event, domain=domain, **where))


def select(events: Iterable[TraceEvent], event=None, domain=None, **where) -> Iterator[TraceEvent]:
    for ev in events:
        if event is not None and ev.event != event:
            continue
        if domain is not None and ev.domain != domain:
            continue
        if where and not ev.matches(**where):
            continue
        yield ev


def observed_bytes(events: Iterable[TraceEvent], domain: str) -> bytes:
    """Everything a domain could observe, as one byte stream."""
    return b"".join(ev.payload_bytes() for ev in events if ev.domain == domain)


def windows(secret: bytes, size: int) -> list[bytes]:
    if size > len(secret):
        return [secret]
    return [secret[i:i + size] for i in range(len(secret) - size + 1)]


def substring_absent(events: Iterable[TraceEvent], secret: bytes, *, domain: str, window: int) -> bool:
    """True iff no ``window``-byte substring of ``secret`` occurs in what
    ``domain`` observed (events are scanned individually and concatenated)."""
    events = list(events)
    stream = observed_bytes(events, domain)
    return not any(w in stream for w in windows(secret, window))


def event_count(events: Iterable[TraceEvent], event: str, **where) -> int:
    return sum(1 for _ in select(events, event=event, **where))


def in_order(events: Iterable[TraceEvent], sequence: list[str]) -> bool:
    """True iff each event type in ``sequence`` occurs, with first occurrences
    of later entries after the matched earlier ones."""
    it = iter(events)
    for wanted in sequence:
        for ev in it:
            if ev.event == wanted:
                break
        else:
            return False
    return True
