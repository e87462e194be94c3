"""Device/cloud wire messages and the grammars of every model reply.

Parsers accept ``str`` or ``bytes`` and only ever raise :class:`ParseError`
subclasses.
"""

from __future__ import annotations

import base64
import enum
import json
import re
from dataclasses import dataclass
from typing import Any, Optional, Union

from .domain import (
    ACTION_TYPES,
    Action,
    ActionKind,
    Answer,
    DeleteText,
    Enter,
    InputText,
    LongPress,
    OpenApp,
    Plan,
    PlanStep,
    PressBack,
    PressHome,
    Swipe,
    Tap,
    VerificationResult,
)
from .prompts import NO_REPLAN_SENTINEL
from .providers import CompletionRequest, TextSegment


class ParseError(ValueError):
    pass


class MissingSection(ParseError):
    def __init__(self, label: str):
        super().__init__(f"missing section {label!r}")
        self.label = label


class MalformedPlanJson(ParseError):
    def __init__(self, detail: str):
        super().__init__(f"malformed plan JSON: {detail}")
        self.detail = detail


class EmptyPlan(ParseError):
    def __init__(self) -> None:
        super().__init__("plan has no steps")


class StepKeyGap(ParseError):
    def __init__(self, k: int):
        super().__init__(f"plan skips Step{k}")
        self.k = k


class UnparseableAction(ParseError):
    def __init__(self, text: str):
        super().__init__(f"unparseable action: {text[:80]!r}")
        self.text = text


class UnparseableVerdict(ParseError):
    def __init__(self, text: str):
        super().__init__(f"unparseable verdict: {text[:80]!r}")
        self.text = text


def _as_text(text: Union[str, bytes]) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    if not isinstance(text, str):
        raise ParseError(f"expected text, got {type(text).__name__}")
    return text


# -- plans ------------------------------------------------------------------

_SECTION = r"^[ \t]*(?:\*\*)?{label}(?:\*\*)?[ \t]*:"
_FENCE = re.compile(r"```[ \t]*(?:json)?[ \t]*\n?(.*?)```", re.S | re.I)
_STEP_KEY = re.compile(r"Step(\d+)")


def _find_section(text: str, label: str) -> Optional[re.Match[str]]:
    return re.search(_SECTION.format(label=label), text, re.M | re.I)


def _sections(text: str, labels: tuple[str, ...]) -> dict[str, str]:
    """Slice ``text`` into labelled sections; each runs to the next label found."""
    found = {}
    for label in labels:
        m = _find_section(text, label)
        if m is None:
            raise MissingSection(label)
        found[label] = m
    order = sorted(found, key=lambda k: found[k].start())
    out = {}
    for i, label in enumerate(order):
        end = found[order[i + 1]].start() if i + 1 < len(order) else len(text)
        out[label] = text[found[label].end():end].strip()
    return out


def _plan_object(block: str) -> dict[str, Any]:
    m = _FENCE.search(block)
    if m:
        candidate = m.group(1)
    else:
        start, end = block.find("{"), block.rfind("}")
        if start < 0 or end < start:
            raise MalformedPlanJson("no JSON object found")
        candidate = block[start:end + 1]
    try:
        obj = json.loads(candidate)
    except (ValueError, RecursionError) as exc:
        raise MalformedPlanJson(str(exc)[:120]) from None
    if not isinstance(obj, dict):
        raise MalformedPlanJson("top level is not an object")
    return obj


def parse_plan_json(block: str, revision: int = 0, description: str = "") -> Plan:
    obj = _plan_object(block)
    numbered: dict[int, Any] = {}
    for key, value in obj.items():
        m = _STEP_KEY.fullmatch(key.strip())
        if m:
            numbered[int(m.group(1))] = value
    if not numbered:
        raise EmptyPlan()
    for k in range(1, max(numbered) + 1):
        if k not in numbered:
            raise StepKeyGap(k)
    steps = []
    for k in sorted(numbered):
        item = numbered[k]
        if not isinstance(item, dict):
            raise MalformedPlanJson(f"Step{k} is not an object")
        thought = item.get("thought", "")
        step = item.get("step")
        expectation = item.get("expectation")
        for name, value in (("thought", thought), ("step", step), ("expectation", expectation)):
            if not isinstance(value, str):
                raise MalformedPlanJson(f"Step{k}.{name} is not a string")
        if not step.strip() or not expectation.strip():
            raise MalformedPlanJson(f"Step{k} has an empty step or expectation")
        steps.append(PlanStep(k, thought.strip(), step.strip(), expectation.strip()))
    return Plan(revision, tuple(steps), description)


@dataclass(frozen=True)
class PlannerResponse:
    description: str
    thought: str
    plan: Plan


def parse_planner_response(text: Union[str, bytes]) -> PlannerResponse:
    text = _as_text(text)
    parts = _sections(text, ("Description", "Thought", "Plan"))
    plan = parse_plan_json(parts["Plan"], 0, parts["Description"])
    return PlannerResponse(parts["Description"], parts["Thought"], plan)


@dataclass(frozen=True)
class NewPlan:
    reflection: str
    plan: Plan


@dataclass(frozen=True)
class NoReplanNeeded:
    pass


ReplanOutcome = Union[NewPlan, NoReplanNeeded]

_QUOTE_PAIRS = (("'", "'"), ("`", "'"), ("`", "`"), ("‘", "’"), ('"', '"'))


def _is_sentinel(text: str) -> bool:
    t = text.strip()
    if t == NO_REPLAN_SENTINEL:
        return True
    for left, right in _QUOTE_PAIRS:
        if len(t) >= 2 and t.startswith(left) and t.endswith(right) and t[1:-1].strip() == NO_REPLAN_SENTINEL:
            return True
    return False


def parse_replanner_response(text: Union[str, bytes], revision: int = 0) -> ReplanOutcome:
    text = _as_text(text)
    if _is_sentinel(text):
        return NoReplanNeeded()
    parts = _sections(text, ("Reflection", "Plan"))
    return NewPlan(parts["Reflection"], parse_plan_json(parts["Plan"], revision))


# -- actions ----------------------------------------------------------------

_CALL = re.compile(r"\s*([A-Za-z_]+)\s*\((.*)\)\s*", re.S)
_INT = re.compile(r"\s*(-?\d+)\s*")
_STRING = re.compile(r'\s*"((?:[^"\\]|\\.)*)"\s*', re.S)
_EMPTY = re.compile(r"\s*")
_UNESCAPE = re.compile(r"\\(.)", re.S)

_INT_ARITY = {
    ActionKind.TAP: 2,
    ActionKind.LONG_PRESS: 2,
    ActionKind.SWIPE: 4,
}
_STRING_KINDS = {ActionKind.INPUT_TEXT, ActionKind.OPEN_APP, ActionKind.ANSWER}


def parse_action(text: Union[str, bytes]) -> Action:
    """Parse ``KIND(args)``: integers for coordinates, double-quoted strings with backslash escapes."""
    text = _as_text(text)
    m = _CALL.fullmatch(text)
    if not m:
        raise UnparseableAction(text)
    try:
        kind = ActionKind(m.group(1).upper())
    except ValueError:
        raise UnparseableAction(text) from None
    args = m.group(2)
    cls = ACTION_TYPES[kind]
    if kind in _INT_ARITY:
        pieces = args.split(",")
        if len(pieces) != _INT_ARITY[kind]:
            raise UnparseableAction(text)
        values = []
        for piece in pieces:
            im = _INT.fullmatch(piece)
            if not im or len(im.group(1)) > 12:
                raise UnparseableAction(text)
            values.append(int(im.group(1)))
        return cls(*values)
    if kind in _STRING_KINDS:
        sm = _STRING.fullmatch(args)
        if not sm:
            raise UnparseableAction(text)
        return cls(_UNESCAPE.sub(r"\1", sm.group(1)))
    if not _EMPTY.fullmatch(args):
        raise UnparseableAction(text)
    return cls()


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def render_action(action: Action) -> str:
    if isinstance(action, (Tap, LongPress)):
        return f"{action.kind.value}({action.x},{action.y})"
    if isinstance(action, Swipe):
        return f"SWIPE({action.x1},{action.y1},{action.x2},{action.y2})"
    if isinstance(action, (InputText, Answer)):
        return f"{action.kind.value}({_quote(action.text)})"
    if isinstance(action, OpenApp):
        return f"OPEN_APP({_quote(action.name)})"
    if isinstance(action, (DeleteText, Enter, PressBack, PressHome)):
        return f"{action.kind.value}()"
    raise TypeError(f"not an action: {action!r}")


def action_to_dict(action: Action) -> dict[str, Any]:
    return {"kind": action.kind.value, "text": render_action(action)}


# -- verdicts ---------------------------------------------------------------

_VERDICT = re.compile(r"\s*(pass(?:ed)?|fail(?:ed|ure)?)\b[\s:.,\-]*", re.I)


def parse_verdict(text: Union[str, bytes]) -> VerificationResult:
    text = _as_text(text)
    stripped = text.lstrip()
    first, _, rest = stripped.partition("\n")
    m = _VERDICT.match(first)
    if not m:
        raise UnparseableVerdict(text)
    if m.group(1).lower().startswith("pass"):
        return VerificationResult.ok()
    summary = (first[m.end():] + ("\n" + rest if rest else "")).strip()
    return VerificationResult.fail(summary or "the screen does not meet the expectation")


# -- uplink -------------------------------------------------------------


class UplinkKind(enum.Enum):
    PLAN_REQUEST = "plan_request"
    REPLAN_REQUEST = "replan_request"
    # Only the emulated upload baseline sends these.
    VERIFY_REQUEST = "verify_request"
    SCREENSHOT_REPLAN_REQUEST = "screenshot_replan_request"


@dataclass(frozen=True)
class UplinkMessage:
    """A device-to-cloud send.

    ``body`` is the JSON text without the image; the image, when present,
    travels base64-encoded under ``image_b64`` and is billed at
    ``attached_image_bytes`` (the emulated raw screenshot size).
    """

    kind: UplinkKind
    body: str
    attached_image_bytes: int = 0
    image_b64: Optional[str] = None

    def __post_init__(self) -> None:
        if self.attached_image_bytes < 0:
            raise ValueError("attached_image_bytes must be >= 0")
        if self.kind is UplinkKind.REPLAN_REQUEST and (self.attached_image_bytes or self.image_b64):
            raise ValueError("replan requests carry text only")

    @property
    def size_bytes(self) -> int:
        return measure_uplink(self)

    def to_wire(self) -> dict[str, Any]:
        wire = json.loads(self.body)
        if self.image_b64 is not None:
            wire["image_b64"] = self.image_b64
            wire["attached_image_bytes"] = self.attached_image_bytes
        return wire


def measure_uplink(message: UplinkMessage) -> int:
    return len(message.body.encode("utf-8")) + message.attached_image_bytes


def make_uplink(kind: UplinkKind, task_id: str, request: CompletionRequest) -> UplinkMessage:
    payload = {
        "system": request.system,
        "text": [s.text for s in request.user_segments if isinstance(s, TextSegment)],
    }
    body = json.dumps({"kind": kind.value, "task_id": task_id, "payload": payload}, ensure_ascii=False, sort_keys=True)
    images = request.images
    if not images:
        return UplinkMessage(kind, body)
    b64 = base64.b64encode("".join(i.payload for i in images).encode("utf-8")).decode("ascii")
    return UplinkMessage(kind, body, request.image_bytes, b64)
