"""Value types shared by the planner, the device agents and the simulator.

Everything here is immutable and free of I/O.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Any, ClassVar, Optional, Union

SUMMARY_TOKEN_CAP = 150
IMAGE_TOKEN_COST = 1400
DEFAULT_RESOLUTION = (1080, 2400)


def count_tokens(text: str) -> int:
    """Proxy tokenizer: ceil(utf-8 bytes / 4).

    Lone surrogates (which JSON escapes can produce) count as their 3-byte encoding.
    """
    return -(-len(text.encode("utf-8", "surrogatepass")) // 4)


@dataclass(frozen=True)
class Instruction:
    task_id: str
    goal: str

    def __post_init__(self) -> None:
        if not self.goal.strip():
            raise ValueError("instruction goal must be non-empty")


@dataclass(frozen=True)
class Screen:
    """A pseudo-screenshot.

    ``payload`` is canonical JSON describing the visible elements.
    ``payload_bytes`` is the emulated transfer size of the raw image and is
    independent of ``len(payload)``.
    """

    screen_id: str
    width_px: int
    height_px: int
    payload: str
    payload_bytes: int

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("screen dimensions must be positive")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be >= 0")
        for el in self.elements():
            x1, y1, x2, y2 = el["bounds"]
            if not (0 <= x1 <= x2 <= self.width_px and 0 <= y1 <= y2 <= self.height_px):
                raise ValueError(f"element {el.get('id')!r} bounds {el['bounds']} outside screen")

    def document(self) -> dict[str, Any]:
        return json.loads(self.payload)

    def elements(self) -> list[dict[str, Any]]:
        return self.document().get("elements", [])


# -- actions ---------------------------------------------------------------


class ActionKind(enum.Enum):
    TAP = "TAP"
    SWIPE = "SWIPE"
    LONG_PRESS = "LONG_PRESS"
    INPUT_TEXT = "INPUT_TEXT"
    DELETE_TEXT = "DELETE_TEXT"
    OPEN_APP = "OPEN_APP"
    ENTER = "ENTER"
    ANSWER = "ANSWER"
    PRESS_BACK = "PRESS_BACK"
    PRESS_HOME = "PRESS_HOME"


@dataclass(frozen=True)
class Tap:
    x: int
    y: int
    kind: ClassVar[ActionKind] = ActionKind.TAP


@dataclass(frozen=True)
class Swipe:
    x1: int
    y1: int
    x2: int
    y2: int
    kind: ClassVar[ActionKind] = ActionKind.SWIPE


@dataclass(frozen=True)
class LongPress:
    x: int
    y: int
    kind: ClassVar[ActionKind] = ActionKind.LONG_PRESS


@dataclass(frozen=True)
class InputText:
    text: str
    kind: ClassVar[ActionKind] = ActionKind.INPUT_TEXT


@dataclass(frozen=True)
class DeleteText:
    kind: ClassVar[ActionKind] = ActionKind.DELETE_TEXT


@dataclass(frozen=True)
class OpenApp:
    name: str
    kind: ClassVar[ActionKind] = ActionKind.OPEN_APP


@dataclass(frozen=True)
class Enter:
    kind: ClassVar[ActionKind] = ActionKind.ENTER


@dataclass(frozen=True)
class Answer:
    text: str
    kind: ClassVar[ActionKind] = ActionKind.ANSWER


@dataclass(frozen=True)
class PressBack:
    kind: ClassVar[ActionKind] = ActionKind.PRESS_BACK


@dataclass(frozen=True)
class PressHome:
    kind: ClassVar[ActionKind] = ActionKind.PRESS_HOME


Action = Union[Tap, Swipe, LongPress, InputText, DeleteText, OpenApp, Enter, Answer, PressBack, PressHome]

ACTION_TYPES: dict[ActionKind, type] = {
    t.kind: t
    for t in (Tap, Swipe, LongPress, InputText, DeleteText, OpenApp, Enter, Answer, PressBack, PressHome)
}

# Keywords the planner prompts offer, in prompt order (the replanning prompt
# adds the last two).
PLANNER_VOCABULARY = (
    "TAP",
    "SWIPE",
    "INPUT",
    "ENTER",
    "ANSWER",
    "OPEN_APP",
    "DELETE",
    "PRESS_BACK",
    "PRESS_HOME",
)

_KEYWORD_TO_KIND = {
    "TAP": ActionKind.TAP,
    "SWIPE": ActionKind.SWIPE,
    "INPUT": ActionKind.INPUT_TEXT,
    "ENTER": ActionKind.ENTER,
    "ANSWER": ActionKind.ANSWER,
    "OPEN_APP": ActionKind.OPEN_APP,
    "DELETE": ActionKind.DELETE_TEXT,
    "PRESS_BACK": ActionKind.PRESS_BACK,
    "PRESS_HOME": ActionKind.PRESS_HOME,
}


class UnknownActionKeyword(ValueError):
    def __init__(self, keyword: str):
        super().__init__(f"unknown action keyword: {keyword!r}")
        self.keyword = keyword


def canonical_action_kind(keyword: str) -> ActionKind:
    try:
        return _KEYWORD_TO_KIND[keyword]
    except (KeyError, TypeError):
        raise UnknownActionKeyword(keyword) from None


# Natural spellings models use at the start of a step ("Open the X app",
# "Press back"); longest first so "PRESS BACK" wins over nothing.
_LEADING = [
    (re.compile(r"press[\s_]+back\b", re.I), "PRESS_BACK"),
    (re.compile(r"press[\s_]+home\b", re.I), "PRESS_HOME"),
    (re.compile(r"open[\s_]*app\b", re.I), "OPEN_APP"),
    (re.compile(r"open\b", re.I), "OPEN_APP"),
    (re.compile(r"(tap|swipe|input|enter|answer|delete)\b", re.I), None),
]
_ANYWHERE = re.compile(r"\b(PRESS_BACK|PRESS_HOME|OPEN_APP|TAP|SWIPE|INPUT|ENTER|ANSWER|DELETE)\b")


def step_keyword(step_text: str) -> str:
    """Planner-vocabulary keyword of a plan step.

    The leading verb decides; failing that, the step must mention exactly one
    upper-case vocabulary token.
    """
    text = step_text.strip()
    for pattern, keyword in _LEADING:
        m = pattern.match(text)
        if m:
            return keyword or m.group(1).upper()
    found = set(_ANYWHERE.findall(text))
    if len(found) == 1:
        return found.pop()
    raise UnknownActionKeyword(text[:40])


class Validity(enum.Enum):
    OK = "ok"
    OUT_OF_BOUNDS = "out-of-bounds"
    BAD_TEXT = "invalid-text"

    @property
    def ok(self) -> bool:
        return self is Validity.OK


def _coords(action: Action) -> tuple[int, ...]:
    if isinstance(action, (Tap, LongPress)):
        return (action.x, action.y)
    if isinstance(action, Swipe):
        return (action.x1, action.y1, action.x2, action.y2)
    return ()


def validate_action(action: Action, screen: Screen) -> Validity:
    coords = _coords(action)
    for i, value in enumerate(coords):
        if not isinstance(value, int) or isinstance(value, bool):
            return Validity.OUT_OF_BOUNDS
        limit = screen.width_px if i % 2 == 0 else screen.height_px
        if not 0 <= value <= limit:
            return Validity.OUT_OF_BOUNDS
    if isinstance(action, InputText) and not action.text:
        return Validity.BAD_TEXT
    if isinstance(action, OpenApp) and not action.name.strip():
        return Validity.BAD_TEXT
    return Validity.OK


# -- plans -----------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    index: int
    thought: str
    step: str
    expectation: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("step index is 1-based")
        if not self.step.strip() or not self.expectation.strip():
            raise ValueError(f"step {self.index}: step and expectation must be non-empty")

    @property
    def keyword(self) -> str:
        return step_keyword(self.step)


@dataclass(frozen=True)
class Plan:
    revision: int
    steps: tuple[PlanStep, ...]
    source_description: str = ""

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("plan has no steps")
        if [s.index for s in self.steps] != list(range(1, len(self.steps) + 1)):
            raise ValueError("plan step indices must be contiguous from 1")
        if self.revision < 0:
            raise ValueError("plan revision must be >= 0")

    def to_step_json(self) -> str:
        """Render as the ``{"Step1": {...}, ...}`` object the prompts use, one step per line."""
        lines = []
        for s in self.steps:
            body = json.dumps(
                {"thought": s.thought, "step": s.step, "expectation": s.expectation}, ensure_ascii=False
            )
            lines.append(f'"Step{s.index}": {body}')
        return "{\n" + ",\n".join(lines) + "\n}"

    def with_revision(self, revision: int) -> Plan:
        return Plan(revision, self.steps, self.source_description)


# -- verification / memory ------------------------------------------------


class Verdict(enum.Enum):
    PASS = "Pass"
    FAIL = "Fail"


@dataclass(frozen=True)
class VerificationResult:
    verdict: Verdict
    failure_summary: str = ""

    def __post_init__(self) -> None:
        if self.verdict is Verdict.FAIL and not self.failure_summary.strip():
            raise ValueError("a Fail verdict needs a failure summary")
        if self.verdict is Verdict.PASS and self.failure_summary:
            raise ValueError("a Pass verdict carries no failure summary")

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    @classmethod
    def ok(cls) -> VerificationResult:
        return cls(Verdict.PASS)

    @classmethod
    def fail(cls, summary: str) -> VerificationResult:
        return cls(Verdict.FAIL, summary)


@dataclass(frozen=True)
class ScreenSummary:
    text: str
    token_count: int
    truncated: bool = False

    def __post_init__(self) -> None:
        if self.token_count != count_tokens(self.text):
            raise ValueError("token_count must equal count_tokens(text)")

    @classmethod
    def of(cls, text: str, truncated: bool = False) -> ScreenSummary:
        return cls(text, count_tokens(text), truncated)


@dataclass(frozen=True)
class MemoryEntry:
    step_index: int
    summary: ScreenSummary
    action: Optional[Action] = None
    verification: Optional[VerificationResult] = None


class FailureClass(enum.Enum):
    PLANNING = "Planning"
    VISUAL_GROUNDING = "VisualGrounding"
    MAX_STEPS = "MaxSteps"
    VERIFICATION = "Verification"


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    mc: int
    mt: int
    step_latencies: tuple[float, ...] = ()
    uplink_bytes: int = 0
    replans: int = 0
    steps_executed: int = 0
    failure_class: Optional[FailureClass] = None
    image_bytes: int = 0
    claimed_success: bool = False

    @property
    def mean_step_latency(self) -> float:
        if not self.step_latencies:
            return 0.0
        return sum(self.step_latencies) / len(self.step_latencies)

    def to_dict(self) -> dict[str, Any]:
        return {
            "success": self.success,
            "mc": self.mc,
            "mt": self.mt,
            "step_latencies": list(self.step_latencies),
            "uplink_bytes": self.uplink_bytes,
            "image_bytes": self.image_bytes,
            "replans": self.replans,
            "steps_executed": self.steps_executed,
            "failure_class": self.failure_class.value if self.failure_class else None,
            "claimed_success": self.claimed_success,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EpisodeMetrics:
        fc = d.get("failure_class")
        return cls(
            success=d["success"],
            mc=d["mc"],
            mt=d["mt"],
            step_latencies=tuple(d.get("step_latencies", ())),
            uplink_bytes=d.get("uplink_bytes", 0),
            replans=d.get("replans", 0),
            steps_executed=d.get("steps_executed", 0),
            failure_class=FailureClass(fc) if fc else None,
            image_bytes=d.get("image_bytes", 0),
            claimed_success=d.get("claimed_success", False),
        )
