"""Episode traces as line-delimited JSON, one event per line."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Union


class TraceFormatError(ValueError):
    def __init__(self, detail: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + detail)
        self.line = line


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    t: float
    payload: dict[str, Any]
    bytes: int

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "kind": self.kind, "t": self.t, "payload": self.payload, "bytes": self.bytes}

    def to_line(self) -> str:
        return _canonical(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TraceEvent:
        try:
            return cls(int(d["seq"]), str(d["kind"]), float(d["t"]), dict(d["payload"]), int(d["bytes"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"bad event: {exc}") from None


class TraceLog:
    """Append-only event list. ``bytes`` defaults to the payload's canonical JSON size."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def emit(self, kind: str, t: float, payload: dict[str, Any], size: Optional[int] = None) -> TraceEvent:
        if size is None:
            size = len(_canonical(payload).encode("utf-8"))
        event = TraceEvent(len(self.events), kind, round(t, 6), payload, size)
        self.events.append(event)
        return event

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]


def dumps(events: Iterable[TraceEvent]) -> str:
    return "".join(e.to_line() + "\n" for e in events)


def write_trace(path: Union[str, Path], events: Iterable[TraceEvent]) -> None:
    Path(path).write_text(dumps(events), encoding="utf-8")


def parse_lines(lines: list[str]) -> list[TraceEvent]:
    events = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise TraceFormatError(f"invalid JSON ({exc})", n) from None
        if not isinstance(obj, dict):
            raise TraceFormatError("event is not an object", n)
        try:
            events.append(TraceEvent.from_dict(obj))
        except TraceFormatError as exc:
            raise TraceFormatError(str(exc), n) from None
    if not events:
        raise TraceFormatError("trace is empty")
    return events


def read_trace(path: Union[str, Path]) -> list[TraceEvent]:
    return parse_lines(Path(path).read_text(encoding="utf-8").splitlines())
