"""Scripted oracle providers for the bundled worlds.

The oracle reads the same prompts a real model would. It never sees the
world state directly. The planner rebuilds the state from the start-screen
pseudo-screenshot, and the replanner from the text summary in the prompt.
Either way it runs the breadth-first search and phrases the result as a
plan. The device-side oracles ground step text against the pseudo-screenshot
and check expectation sentences against it.

Step, expectation and summary texts follow small fixed grammars, defined
here next to their parsers.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .domain import (
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
    count_tokens,
)
from .planner import SCREENSHOT_PLACEHOLDER
from .prompts import NO_REPLAN_SENTINEL
from .protocol import render_action
from .providers import (
    CLOUD_DEFAULT,
    EXECUTOR_DEFAULT,
    OBSERVER_DEFAULT,
    Completion,
    CompletionRequest,
    Provider,
    ProviderBindings,
    ProviderConfig,
    ScriptedProvider,
    Usage,
)
from .simenv.fixture import Element, Fixture, TaskDef
from .simenv.search import SearchStep, focused_field, shortest_path
from .simenv.world import (
    WorldState,
    element_label,
    element_state,
    evaluate_success,
    hit_test,
    reset,
    set_path,
    visible_elements,
)

log = logging.getLogger(__name__)


_JS = r'"(?:[^"\\]|\\.)*"'  # one JSON string literal


def q(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def _unq(literal: str) -> str:
    try:
        return json.loads(literal)
    except ValueError:
        return literal[1:-1]


# -- summaries ----------------------------------------------------------------

_ROLE_NOUN = {"button": "button", "field": "field", "icon": "icon", "list_item": "item"}


def _doc_noun(el: dict[str, Any]) -> str:
    return "switch" if "state" in el else _ROLE_NOUN[el["role"]]


def summarize(doc: dict[str, Any]) -> str:
    """Single-line summary of a pseudo-screenshot.

    The sentences a replanner needs to rebuild the state come first, so a
    length cut removes the least important ones.
    """
    title = doc["title"]
    if doc.get("dialog"):
        sentences = [f"A {q(title)} dialog is shown over the dimmed {q(doc['background'])} screen."]
    elif doc.get("app"):
        head = f"This is the {q(title)} screen of the {q(doc['app'])} app"
        if "page" in doc:
            head += f", scrolled to page {doc['page']} of {doc['pages']}"
        sentences = [head + "."]
    else:
        sentences = [f"This is the {q(title)} screen of the launcher."]
    elements = doc.get("elements", [])
    fields = []
    for el in elements:
        if el["role"] != "field":
            continue
        value = q(el["content"]) if el.get("content") else "empty"
        fields.append(f"{q(el['label'])} is {value}" + (" (focused)" if el.get("focused") else ""))
    if fields:
        sentences.append("Fields: " + ", ".join(fields) + ".")
    switches = [f"{q(el['label'])} is {el['state']}" for el in elements if "state" in el]
    if switches:
        sentences.append("Switches: " + ", ".join(switches) + ".")
    if doc.get("toast"):
        sentences.append(f"A message reads {q(doc['toast'])}.")
    if doc.get("description"):
        sentences.append(doc["description"].strip())
    controls = [f"{q(el['label'])} {_doc_noun(el)}" for el in elements if el["role"] != "field" and "state" not in el]
    if controls:
        sentences.append("Visible controls: " + ", ".join(controls) + ".")
    return " ".join(sentences)


_HEAD_DIALOG = re.compile(rf"^A ({_JS}) dialog is shown over the dimmed ({_JS}) screen\.")
_HEAD_APP = re.compile(rf"^This is the ({_JS}) screen of the ({_JS}) app(?:, scrolled to page (\d+) of (\d+))?\.")
_HEAD_HOME = re.compile(rf"^This is the ({_JS}) screen of the launcher\.")
_FIELDS = re.compile(rf"Fields: ((?:{_JS} is (?:{_JS}|empty)(?: \(focused\))?(?:, )?)+)\.")
_FIELD = re.compile(rf"({_JS}) is ({_JS}|empty)( \(focused\))?")
_SWITCHES = re.compile(rf"Switches: ((?:{_JS} is (?:on|off)(?:, )?)+)\.")
_SWITCH = re.compile(rf"({_JS}) is (on|off)")
_TOAST = re.compile(rf"A message reads ({_JS})\.")


@dataclass
class ParsedSummary:
    title: str
    dialog: bool = False
    background: Optional[str] = None
    app: Optional[str] = None
    page: Optional[int] = None
    fields: dict[str, tuple[str, bool]] = field(default_factory=dict)
    switches: dict[str, bool] = field(default_factory=dict)
    toast: Optional[str] = None


def parse_summary(text: str) -> Optional[ParsedSummary]:
    """Inverse of :func:`summarize` for the parts that matter; None if the head sentence is missing."""
    text = text.strip()
    if m := _HEAD_DIALOG.match(text):
        out = ParsedSummary(_unq(m.group(1)), dialog=True, background=_unq(m.group(2)))
    elif m := _HEAD_APP.match(text):
        out = ParsedSummary(_unq(m.group(1)), app=_unq(m.group(2)), page=int(m.group(3)) if m.group(3) else None)
    elif m := _HEAD_HOME.match(text):
        out = ParsedSummary(_unq(m.group(1)))
    else:
        return None
    if fm := _FIELDS.search(text):
        for f in _FIELD.finditer(fm.group(1)):
            value = "" if f.group(2) == "empty" else _unq(f.group(2))
            out.fields[_unq(f.group(1))] = (value, bool(f.group(3)))
    if sm := _SWITCHES.search(text):
        for s in _SWITCH.finditer(sm.group(1)):
            out.switches[_unq(s.group(1))] = s.group(2) == "on"
    if tm := _TOAST.search(text):
        out.toast = _unq(tm.group(1))
    return out


# -- step phrasing ------------------------------------------------------------


def _noun(el: Element) -> str:
    return "switch" if el.state_from else _ROLE_NOUN[el.role]


def _title(state: WorldState) -> str:
    return state.fixture.screen(state.screen).title


def _shown(state: WorldState) -> str:
    if state.popup_active:
        return f"The {q(state.fixture.popup(state.popup_active).title)} dialog is shown."
    return f"The {q(_title(state))} screen is shown."


def describe_step(step: SearchStep) -> tuple[str, str, str]:
    """(thought, step text, expectation) for one search move."""
    a, before, after = step.action, step.before, step.after
    where = f"on the {q(_title(before))} screen"
    if isinstance(a, (Tap, LongPress)):
        el = hit_test(before, a.x, a.y)
        label, noun = element_label(before, el), _noun(el)
        verb = "Tap" if isinstance(a, Tap) else "Long press"
        if after.screen != before.screen or after.popup_active != before.popup_active:
            expectation = _shown(after)
        elif el.role == "field":
            expectation = f"The {q(label)} field is focused."
        elif el.state_from:
            expectation = f"The {q(label)} switch is {element_state(after, el)}."
        else:
            expectation = _shown(after)
        return f"The {q(label)} {noun} is {where}.", f"{verb} the {q(label)} {noun}.", expectation
    if isinstance(a, (InputText, DeleteText, Enter)):
        el = focused_field(before)
        label = element_label(before, el)
        if isinstance(a, InputText):
            return (f"The {q(label)} field is focused and needs the value.",
                    f"Input {q(a.text)} into the {q(label)} field.",
                    f"The {q(label)} field contains {q(after.fields.get(el.id, ''))}.")
        if isinstance(a, DeleteText):
            return (f"The {q(label)} field holds old text that has to go.",
                    f"Delete the text in the {q(label)} field.",
                    f"The {q(label)} field is empty.")
        return (f"Submitting the {q(label)} field saves it.",
                f"Enter to submit the {q(label)} field.", _shown(after))
    if isinstance(a, Swipe):
        direction = "up" if a.y2 < a.y1 else "down"
        seen = {e.id for e in visible_elements(before)}
        fresh = [e for e in visible_elements(after) if e.id not in seen]
        expectation = (f"The {q(element_label(after, fresh[0]))} {_noun(fresh[0])} is visible."
                       if fresh and after.screen == before.screen else _shown(after))
        return f"More of the list is hidden {where}.", f"Swipe {direction} on the screen.", expectation
    if isinstance(a, OpenApp):
        return f"The {q(a.name)} app is not open yet.", f"Open the {q(a.name)} app.", _shown(after)
    if isinstance(a, PressHome):
        return "Going back to the launcher.", "Press home.", _shown(after)
    if isinstance(a, PressBack):
        return "Going back one screen.", "Press back.", _shown(after)
    if isinstance(a, Answer):
        return (f"The answer {q(a.text)} is {where}.", f"Answer {q(a.text)}.",
                f"The answer {q(a.text)} is shown.")
    raise TypeError(f"cannot phrase {a!r}")


def plan_from_path(path: list[SearchStep], revision: int = 0, description: str = "") -> Plan:
    steps = tuple(PlanStep(i, *describe_step(s)) for i, s in enumerate(path, start=1))
    return Plan(revision, steps, description)


# -- state reconstruction -------------------------------------------------------


class Reconstructor:
    """Rebuilds a plausible world state from a summary.

    Only what the summary shows is restored. Off-screen fields are taken as
    empty and hidden app data as its initial value, which is sound for the
    bundled worlds since their committing action is always the last step.
    """

    def __init__(self, fixture: Fixture):
        self.fixture = fixture
        self.screens = {}
        for s in fixture.screens:
            if s.title in self.screens:
                raise ValueError(f"oracle needs unique screen titles; {s.title!r} repeats")
            self.screens[s.title] = s
        self.popups = {}
        for p in fixture.popups:
            if p.title in self.popups:
                raise ValueError(f"oracle needs unique popup titles; {p.title!r} repeats")
            self.popups[p.title] = p

    def from_summary(self, text: str) -> Optional[WorldState]:
        parsed = parse_summary(text)
        if parsed is None:
            return None
        fx = self.fixture
        state = reset(fx, 0)
        if parsed.dialog:
            popup, sdef = self.popups.get(parsed.title), self.screens.get(parsed.background or "")
            if popup is None or sdef is None:
                return None
            state.popup_active = popup.id
            state.popups_fired = [popup.id]
        else:
            sdef = self.screens.get(parsed.title)
            if sdef is None:
                return None
        state.screen = sdef.id
        if parsed.page:
            state.pages[sdef.id] = parsed.page - 1
        for el in sdef.elements:
            if el.role == "field" and el.label in parsed.fields:
                value, focused = parsed.fields[el.label]
                if value:
                    state.fields[el.id] = value
                if focused:
                    state.focus = el.id
            if el.state_from and el.label in parsed.switches:
                set_path(state.app_data, el.state_from, parsed.switches[el.label])
        if parsed.toast and parsed.toast.startswith("Answer: "):
            state.toast = parsed.toast
            state.answer = parsed.toast[len("Answer: "):]
        return state

    def from_payload(self, payload: str) -> Optional[WorldState]:
        return self.from_summary(summarize(json.loads(payload)))


# -- expectation checking --------------------------------------------------------

_CLAUSES = [
    ("screen", re.compile(rf"The ({_JS}) screen is shown\.")),
    ("dialog", re.compile(rf"The ({_JS}) dialog is shown\.")),
    ("contains", re.compile(rf"The ({_JS}) field contains ({_JS})\.")),
    ("empty", re.compile(rf"The ({_JS}) field is empty\.")),
    ("focused", re.compile(rf"The ({_JS}) field is focused\.")),
    ("switch", re.compile(rf"The ({_JS}) switch is (on|off)\.")),
    ("visible", re.compile(rf"The ({_JS}) (?:button|field|icon|item|switch) is visible\.")),
    ("answer", re.compile(rf"The answer ({_JS}) is shown\.")),
]


def _by_label(doc: dict[str, Any], label: str) -> Optional[dict[str, Any]]:
    return next((e for e in doc.get("elements", []) if e["label"] == label), None)


def _check_clause(kind: str, args: tuple[str, ...], doc: dict[str, Any]) -> Optional[str]:
    """None when the clause holds, else the reason it does not."""
    title = doc["title"]
    if kind == "dialog":
        if doc.get("dialog") and title == _unq(args[0]):
            return None
        return f"the {q(_unq(args[0]))} dialog is not shown"
    if doc.get("dialog"):
        return f"a {q(title)} dialog is blocking the {q(doc['background'])} screen"
    if kind == "screen":
        want = _unq(args[0])
        return None if title == want else f"the {q(title)} screen is shown instead of {q(want)}"
    if kind == "answer":
        want = _unq(args[0])
        return None if doc.get("toast") == f"Answer: {want}" else f"no answer {q(want)} is shown"
    label = _unq(args[0])
    el = _by_label(doc, label)
    if el is None:
        return f"there is no {q(label)} element on the {q(title)} screen"
    if kind == "visible":
        return None
    if kind == "contains":
        want, got = _unq(args[1]), el.get("content", "")
        return None if got == want else f"the {q(label)} field holds {q(got)} instead of {q(want)}"
    if kind == "empty":
        got = el.get("content", "")
        return None if got == "" else f"the {q(label)} field still holds {q(got)}"
    if kind == "focused":
        return None if el.get("focused") else f"the {q(label)} field is not focused"
    if kind == "switch":
        return None if el.get("state") == args[1] else f"the {q(label)} switch is {el.get('state')}"
    raise ValueError(kind)


def judge(expectation: str, doc: dict[str, Any]) -> str:
    """Verdict text (``Pass`` or ``Fail: reason``) for an expectation against a pseudo-screenshot."""
    clauses = [(kind, m.groups()) for kind, rx in _CLAUSES for m in rx.finditer(expectation)]
    if not clauses:
        return f"Fail: the expectation cannot be confirmed on the {q(doc['title'])} screen."
    for kind, args in clauses:
        reason = _check_clause(kind, args, doc)
        if reason is not None:
            return f"Fail: {reason}."
    return "Pass"


# -- grounding ------------------------------------------------------------------

_STEP_FORMS = [
    ("tap", re.compile(rf"Tap the ({_JS}) (?:button|field|icon|item|switch)")),
    ("long_press", re.compile(rf"Long press the ({_JS}) (?:button|field|icon|item|switch)")),
    ("input", re.compile(rf"Input ({_JS}) into the ({_JS}) field")),
    ("delete", re.compile(rf"Delete the text in the ({_JS}) field")),
    ("enter", re.compile(rf"Enter to submit the ({_JS}) field")),
    ("swipe", re.compile(r"Swipe (up|down) on the screen")),
    ("open", re.compile(rf"Open the ({_JS}) app")),
    ("back", re.compile(r"Press back")),
    ("home", re.compile(r"Press home")),
    ("answer", re.compile(rf"Answer ({_JS})")),
]


def _center(el: dict[str, Any]) -> tuple[int, int]:
    x1, y1, x2, y2 = el["bounds"]
    return (x1 + x2) // 2, (y1 + y2) // 2


def ground(step_text: str, doc: dict[str, Any]) -> str:
    """One action call for ``step_text`` on the pseudo-screenshot, or ``NONE``."""
    text = step_text.strip().rstrip(".")
    for kind, rx in _STEP_FORMS:
        m = rx.fullmatch(text)
        if not m:
            continue
        if kind in ("tap", "long_press"):
            el = _by_label(doc, _unq(m.group(1)))
            if el is None:
                return "NONE"
            action = Tap(*_center(el)) if kind == "tap" else LongPress(*_center(el))
        elif kind == "input":
            action = InputText(_unq(m.group(1)))
        elif kind == "delete":
            action = DeleteText()
        elif kind == "enter":
            action = Enter()
        elif kind == "swipe":
            w, h = doc["width"], doc["height"]
            lo, hi = h // 4, h * 3 // 4
            action = Swipe(w // 2, hi, w // 2, lo) if m.group(1) == "up" else Swipe(w // 2, lo, w // 2, hi)
        elif kind == "open":
            action = OpenApp(_unq(m.group(1)))
        elif kind == "back":
            action = PressBack()
        elif kind == "home":
            action = PressHome()
        else:
            action = Answer(_unq(m.group(1)))
        return render_action(action)
    return "NONE"


def blank_point(doc: dict[str, Any], step: int = 20) -> tuple[int, int]:
    """First grid point, row by row, that no visible element covers."""
    boxes = [e["bounds"] for e in doc.get("elements", [])]
    for y in range(step // 2, doc["height"], step):
        for x in range(step // 2, doc["width"], step):
            if not any(x1 <= x <= x2 and y1 <= y <= y2 for x1, y1, x2, y2 in boxes):
                return x, y
    raise ValueError("screen has no blank point")


# -- responders -----------------------------------------------------------------


def _image_doc(request: CompletionRequest) -> dict[str, Any]:
    if not request.images:
        raise ValueError("request carries no screenshot")
    return json.loads(request.images[0].payload)


def _fenced(plan_json: str) -> str:
    return f"```JSON\n{plan_json}\n```"


class OracleBrain:
    """Cloud and device responders for one fixture."""

    def __init__(self, fixture: Fixture):
        self.fixture = fixture
        self.recon = Reconstructor(fixture)
        self._tasks = {}
        for t in fixture.tasks:
            self._tasks.setdefault(t.instruction.strip(), t)

    def task_for(self, instruction: str) -> Optional[TaskDef]:
        return self._tasks.get(instruction.strip())

    def plan_response(self, request: CompletionRequest, m: re.Match[str]) -> str:
        task = self.task_for(m.group(1))
        doc = _image_doc(request)
        description = summarize(doc)
        state = self.recon.from_payload(request.images[0].payload)
        path = shortest_path(state, task) if task and state else None
        if not path:
            return f"Description: {description}\nThought: I cannot find a way to finish this task.\nPlan: {{}}"
        plan = plan_from_path(path)
        thought = (f"Starting from the {q(doc['title'])} screen, the task takes {len(path)} steps "
                   f"and ends on the {q(_title(path[-1].after))} screen.")
        return f"Description: {description}\nThought: {thought}\nPlan:\n{_fenced(plan.to_step_json())}"

    def replan_response(self, request: CompletionRequest, m: re.Match[str]) -> str:
        task = self.task_for(m.group(1))
        text = "\n".join(request.texts)
        dm = re.search(r"^The current screen description is: ([^\n]*)$", text, re.M)
        rm = re.search(r"^The reason why you failed at the last step is: ([^\n]*)$", text, re.M)
        description = dm.group(1) if dm else ""
        reason = (rm.group(1) if rm else "").strip().rstrip(".") or "the last step failed"
        if description.strip() == SCREENSHOT_PLACEHOLDER and request.images:
            description = summarize(_image_doc(request))
        state = self.recon.from_summary(description)
        if task is None or state is None:
            return "Reflection: I cannot recognise the current screen.\nPlan: {}"
        if evaluate_success(state, task):
            return NO_REPLAN_SENTINEL
        path = shortest_path(state, task)
        reflection = f"The last step failed because {reason}. The new plan starts from the {q(_title(state))} screen."
        if not path:
            return f"Reflection: {reflection} No route to the goal remains.\nPlan: {{}}"
        return f"Reflection: {reflection}\nPlan:\n{_fenced(plan_from_path(path, 1).to_step_json())}"

    def verify_response(self, request: CompletionRequest, m: re.Match[str]) -> str:
        return judge(m.group(1), _image_doc(request))

    def summary_response(self, request: CompletionRequest, m: re.Match[str]) -> str:
        return summarize(_image_doc(request))

    def ground_response(self, request: CompletionRequest, m: re.Match[str]) -> str:
        return ground(m.group(1), _image_doc(request))


_PLAN_RX = r"please help me with: ([^\n]+)"
_REPLAN_RX = r"create a new plan for goal: ([^\n]+)"
_VERIFY_RX = r"user expectation: ([^\n]+)"
_SUMMARY_RX = r"describe main contents and functionality"
_GROUND_RX = r"Execute: ([^\n]*?)\. Respond with exactly one action call\."


def cloud_oracle(brain: OracleBrain, config: ProviderConfig = CLOUD_DEFAULT) -> ScriptedProvider:
    """Plans, replans, and (for the upload baseline) verifies."""
    return ScriptedProvider(config, [
        (_REPLAN_RX, brain.replan_response),
        (_PLAN_RX, brain.plan_response),
        (_VERIFY_RX, brain.verify_response),
    ])


def executor_oracle(brain: OracleBrain, config: ProviderConfig = EXECUTOR_DEFAULT) -> ScriptedProvider:
    return ScriptedProvider(config, [(_GROUND_RX, brain.ground_response)])


def observer_oracle(brain: OracleBrain, config: ProviderConfig = OBSERVER_DEFAULT) -> ScriptedProvider:
    return ScriptedProvider(config, [
        (_VERIFY_RX, brain.verify_response),
        (_SUMMARY_RX, brain.summary_response),
    ])


class SabotageProvider:
    """Executor wrapper that, with probability ``rate``, taps a blank spot instead.

    A random draw is made on every call, so the miss pattern depends only on
    the seed and the call count.
    """

    def __init__(self, inner: Provider, rate: float, rng: random.Random):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        self.inner = inner
        self.config = inner.config
        self.rate = rate
        self.rng = rng
        self.misses = 0

    def complete(self, request: CompletionRequest) -> Completion:
        completion = self.inner.complete(request)
        if self.rng.random() >= self.rate:
            return completion
        self.misses += 1
        text = render_action(Tap(*blank_point(_image_doc(request))))
        usage = Usage(completion.usage.prompt_tokens, count_tokens(text))
        return Completion(text, usage, completion.synthetic_latency)


BindingsFactory = Callable[[str, int], ProviderBindings]


@dataclass
class OracleProviders:
    """Per-episode bindings of the oracle providers; call with ``(task_id, seed)``.

    The scripted providers are shared across episodes. Only the sabotage
    wrapper, seeded from the task and seed, is created fresh each time.
    """

    fixture: Fixture
    sabotage: float = 0.0
    cloud_config: ProviderConfig = CLOUD_DEFAULT
    executor_config: ProviderConfig = EXECUTOR_DEFAULT
    observer_config: ProviderConfig = OBSERVER_DEFAULT

    def __post_init__(self) -> None:
        brain = OracleBrain(self.fixture)
        self.brain = brain
        self.cloud = cloud_oracle(brain, self.cloud_config)
        self.executor = executor_oracle(brain, self.executor_config)
        self.observer = observer_oracle(brain, self.observer_config)

    def __call__(self, task_id: str, seed: int) -> ProviderBindings:
        executor: Provider = self.executor
        if self.sabotage > 0:
            rng = random.Random(f"sabotage:{self.fixture.name}:{task_id}:{seed}")
            executor = SabotageProvider(self.executor, self.sabotage, rng)
        return ProviderBindings(self.cloud, executor, self.observer)
