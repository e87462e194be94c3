"""World fixtures: screen graphs, transitions, popups and tasks loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema

DEFAULT_SCREENSHOT_BYTES = 100_000


class FixtureInvalid(ValueError):
    """Raised with a location: ``line L col C`` for syntax errors, a field path otherwise."""

    def __init__(self, detail: str, location: str = ""):
        super().__init__(f"{location}: {detail}" if location else detail)
        self.detail = detail
        self.location = location


@dataclass(frozen=True)
class Element:
    id: str
    label: str
    role: str
    bounds: tuple[int, int, int, int]
    label_from: Optional[str] = None
    state_from: Optional[str] = None
    page: Optional[int] = None

    @property
    def center(self) -> tuple[int, int]:
        x1, y1, x2, y2 = self.bounds
        return (x1 + x2) // 2, (y1 + y2) // 2

    def contains(self, x: int, y: int) -> bool:
        x1, y1, x2, y2 = self.bounds
        return x1 <= x <= x2 and y1 <= y <= y2


@dataclass(frozen=True)
class ScreenDef:
    id: str
    title: str
    app: Optional[str]
    home: bool
    description: str
    elements: tuple[Element, ...]

    @property
    def pages(self) -> int:
        return 1 + max((e.page or 0 for e in self.elements), default=0)

    def element(self, element_id: str) -> Optional[Element]:
        for el in self.elements:
            if el.id == element_id:
                return el
        return None


@dataclass(frozen=True)
class Effect:
    op: str
    path: Optional[str] = None
    record: Optional[tuple[tuple[str, str], ...]] = None
    value: Any = None
    field: Optional[str] = None


@dataclass(frozen=True)
class TransitionDef:
    screen: str
    element: Optional[str]
    action: str
    target: Optional[str]
    effects: tuple[Effect, ...]


@dataclass(frozen=True)
class PopupDef:
    id: str
    title: str
    description: str
    trigger_kind: str  # "step", "step_range" or "screen"
    trigger_value: Any
    elements: tuple[Element, ...]
    dismiss: str


@dataclass(frozen=True)
class TaskDef:
    task_id: str
    instruction: str
    success: str  # canonical JSON of the predicate; kept as text so the dataclass stays hashable
    inputs: tuple[tuple[str, str], ...]
    answers: tuple[str, ...]
    popups: tuple[str, ...]

    @property
    def predicate(self) -> dict[str, Any]:
        return json.loads(self.success)

    @property
    def input_hints(self) -> dict[str, str]:
        return dict(self.inputs)


@dataclass(frozen=True)
class Fixture:
    name: str
    width_px: int
    height_px: int
    screenshot_bytes: int
    app_data_json: str
    apps: tuple[tuple[str, str], ...]
    screens: tuple[ScreenDef, ...]
    transitions: tuple[TransitionDef, ...]
    popups: tuple[PopupDef, ...]
    tasks: tuple[TaskDef, ...]
    document: str  # canonical JSON of the source, embedded in traces for replay

    @property
    def home(self) -> ScreenDef:
        return next(s for s in self.screens if s.home)

    @property
    def app_data(self) -> dict[str, Any]:
        return json.loads(self.app_data_json)

    @property
    def app_entries(self) -> dict[str, str]:
        return dict(self.apps)

    def screen(self, screen_id: str) -> ScreenDef:
        for s in self.screens:
            if s.id == screen_id:
                return s
        raise KeyError(screen_id)

    def popup(self, popup_id: str) -> PopupDef:
        for p in self.popups:
            if p.id == popup_id:
                return p
        raise KeyError(popup_id)

    def task(self, task_id: str) -> TaskDef:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    def transition(self, screen: str, element: Optional[str], action: str) -> Optional[TransitionDef]:
        for t in self.transitions:
            if t.screen == screen and t.element == element and t.action == action:
                return t
        return None

    def field_ids(self) -> set[str]:
        return {e.id for s in self.screens for e in s.elements if e.role == "field"}


@lru_cache(maxsize=1)
def _schema() -> dict[str, Any]:
    return json.loads(resources.files(__package__).joinpath("fixture.schema.json").read_text())


def _path_str(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _elements(raw: list[dict[str, Any]]) -> tuple[Element, ...]:
    return tuple(
        Element(
            id=e["id"],
            label=e["label"],
            role=e["role"],
            bounds=tuple(e["bounds"]),
            label_from=e.get("label_from"),
            state_from=e.get("state_from"),
            page=e.get("page"),
        )
        for e in raw
    )


def _resolve(data: Any, dotted: str) -> tuple[bool, Any]:
    cur = data
    for part in dotted.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        elif isinstance(cur, list) and part.isdigit() and int(part) < len(cur):
            cur = cur[int(part)]
        else:
            return False, None
    return True, cur


def _check_app_path(app_data: dict[str, Any], path: str, where: str) -> None:
    if not path.startswith("app_data."):
        raise FixtureInvalid(f"path {path!r} must start with 'app_data.'", where)
    ok, _ = _resolve(app_data, path[len("app_data."):])
    if not ok:
        raise FixtureInvalid(f"path {path!r} does not exist in app_data", where)


def _check_predicate(pred: dict[str, Any], fx: Fixture, where: str) -> None:
    (op, arg), = pred.items()
    if op in ("all", "any"):
        for i, sub in enumerate(arg):
            _check_predicate(sub, fx, f"{where}.{op}[{i}]")
        return
    if op == "not":
        _check_predicate(arg, fx, f"{where}.not")
        return
    path = arg["path"]
    loc = f"{where}.{op}.path"
    if path in ("answer", "screen"):
        return
    if path.startswith("fields."):
        if path[len("fields."):] not in fx.field_ids():
            raise FixtureInvalid(f"no field element {path[len('fields.'):]!r}", loc)
        return
    _check_app_path(fx.app_data, path, loc)


def _validate(fx: Fixture) -> None:
    ids = [s.id for s in fx.screens]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise FixtureInvalid(f"duplicate screen ids {sorted(dup)}", "screens")
    homes = [s.id for s in fx.screens if s.home]
    if len(homes) != 1:
        raise FixtureInvalid(f"expected exactly one home screen, found {len(homes)} {homes}", "screens")

    element_ids: list[str] = []
    for si, s in enumerate(fx.screens):
        for ei, e in enumerate(s.elements):
            where = f"screens[{si}].elements[{ei}]"
            x1, y1, x2, y2 = e.bounds
            if not (0 <= x1 < x2 <= fx.width_px and 0 <= y1 < y2 <= fx.height_px):
                raise FixtureInvalid(f"bounds {list(e.bounds)} outside {fx.width_px}x{fx.height_px}", where)
            for attr in ("label_from", "state_from"):
                if getattr(e, attr):
                    _check_app_path(fx.app_data, getattr(e, attr), f"{where}.{attr}")
            element_ids.append(e.id)
        if s.app is not None and s.app not in fx.app_entries:
            raise FixtureInvalid(f"unknown app {s.app!r}", f"screens[{si}].app")
    for p in fx.popups:
        element_ids.extend(e.id for e in p.elements)
    dup = {i for i in element_ids if element_ids.count(i) > 1}
    if dup:
        raise FixtureInvalid(f"duplicate element ids {sorted(dup)}", "screens")

    for name, entry in fx.apps:
        if entry not in ids:
            raise FixtureInvalid(f"entry screen {entry!r} does not exist", f"apps.{name}.entry")

    fields = fx.field_ids()
    for ti, t in enumerate(fx.transitions):
        where = f"transitions[{ti}]"
        if t.screen not in ids:
            raise FixtureInvalid(f"source screen {t.screen!r} does not exist", f"{where}.screen")
        if t.target is not None and t.target not in ids:
            raise FixtureInvalid(f"target screen {t.target!r} does not exist", f"{where}.target")
        src = fx.screen(t.screen)
        if t.action.startswith("swipe"):
            if t.element is not None:
                raise FixtureInvalid("swipe transitions are screen-wide", f"{where}.element")
        elif t.element is None or src.element(t.element) is None:
            raise FixtureInvalid(f"element {t.element!r} not on screen {t.screen!r}", f"{where}.element")
        if t.action == "enter" and t.element not in fields:
            raise FixtureInvalid("enter transitions must be keyed on a field", f"{where}.element")
        for fi, eff in enumerate(t.effects):
            loc = f"{where}.effects[{fi}]"
            if eff.op in ("append", "set", "toggle", "load_field"):
                if not eff.path:
                    raise FixtureInvalid("effect needs a path", loc)
                _check_app_path(fx.app_data, eff.path, loc)
            if eff.op == "append":
                ok, target = _resolve(fx.app_data, eff.path[len("app_data."):])
                if not isinstance(target, list):
                    raise FixtureInvalid("append target is not a list", loc)
                for _, v in eff.record or ():
                    if v.startswith("$") and v[1:] not in fields:
                        raise FixtureInvalid(f"record refers to unknown field {v!r}", loc)
            if eff.op == "load_field" and eff.field not in fields:
                raise FixtureInvalid(f"unknown field {eff.field!r}", loc)
            if eff.op == "set" and isinstance(eff.value, str) and eff.value.startswith("$"):
                if eff.value[1:] not in fields:
                    raise FixtureInvalid(f"value refers to unknown field {eff.value!r}", loc)

    popup_ids = [p.id for p in fx.popups]
    for pi, p in enumerate(fx.popups):
        where = f"popups[{pi}]"
        if p.dismiss not in {e.id for e in p.elements}:
            raise FixtureInvalid(f"dismiss element {p.dismiss!r} not among popup elements", f"{where}.dismiss")
        if p.trigger_kind == "screen" and p.trigger_value not in ids:
            raise FixtureInvalid(f"trigger screen {p.trigger_value!r} does not exist", f"{where}.trigger")
        if p.trigger_kind == "step_range" and p.trigger_value[0] > p.trigger_value[1]:
            raise FixtureInvalid("empty step_range", f"{where}.trigger")
        for ei, e in enumerate(p.elements):
            x1, y1, x2, y2 = e.bounds
            if not (0 <= x1 < x2 <= fx.width_px and 0 <= y1 < y2 <= fx.height_px):
                raise FixtureInvalid(f"bounds {list(e.bounds)} out of screen", f"{where}.elements[{ei}]")

    task_ids = [t.task_id for t in fx.tasks]
    dup = {i for i in task_ids if task_ids.count(i) > 1}
    if dup:
        raise FixtureInvalid(f"duplicate task ids {sorted(dup)}", "tasks")
    for ti, t in enumerate(fx.tasks):
        where = f"tasks[{ti}]"
        _check_predicate(t.predicate, fx, f"{where}.success")
        for fid, _ in t.inputs:
            if fid not in fields:
                raise FixtureInvalid(f"input hint for unknown field {fid!r}", f"{where}.inputs")
        for pid in t.popups:
            if pid not in popup_ids:
                raise FixtureInvalid(f"unknown popup {pid!r}", f"{where}.popups")


def parse_fixture(doc: dict[str, Any]) -> Fixture:
    """Build and invariant-check a fixture from an already-decoded JSON document."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise FixtureInvalid(err.message, _path_str(err.absolute_path))

    screens = tuple(
        ScreenDef(
            id=s["id"],
            title=s["title"],
            app=s.get("app"),
            home=s.get("home", False),
            description=s.get("description", ""),
            elements=_elements(s["elements"]),
        )
        for s in doc["screens"]
    )
    transitions = tuple(
        TransitionDef(
            screen=t["screen"],
            element=t.get("element"),
            action=t["action"],
            target=t.get("target"),
            effects=tuple(
                Effect(
                    op=e["op"],
                    path=e.get("path"),
                    record=tuple(sorted(e["record"].items())) if "record" in e else None,
                    value=e.get("value"),
                    field=e.get("field"),
                )
                for e in t.get("effects", [])
            ),
        )
        for t in doc.get("transitions", [])
    )
    popups = []
    for p in doc.get("popups", []):
        (kind, value), = p["trigger"].items()
        popups.append(
            PopupDef(
                id=p["id"],
                title=p["title"],
                description=p.get("description", ""),
                trigger_kind=kind,
                trigger_value=tuple(value) if isinstance(value, list) else value,
                elements=_elements(p["elements"]),
                dismiss=p["dismiss"],
            )
        )
    tasks = tuple(
        TaskDef(
            task_id=t["task_id"],
            instruction=t["instruction"],
            success=json.dumps(t["success"], sort_keys=True),
            inputs=tuple(sorted(t.get("inputs", {}).items())),
            answers=tuple(t.get("answers", [])),
            popups=tuple(t.get("popups", [])),
        )
        for t in doc["tasks"]
    )
    fx = Fixture(
        name=doc["name"],
        width_px=doc["resolution"]["width_px"],
        height_px=doc["resolution"]["height_px"],
        screenshot_bytes=doc.get("screenshot_bytes", DEFAULT_SCREENSHOT_BYTES),
        app_data_json=json.dumps(doc.get("app_data", {}), sort_keys=True),
        apps=tuple(sorted((name, a["entry"]) for name, a in doc["apps"].items())),
        screens=screens,
        transitions=transitions,
        popups=tuple(popups),
        tasks=tasks,
        document=json.dumps(doc, sort_keys=True, ensure_ascii=False),
    )
    _validate(fx)
    return fx


def parse_fixture_text(text: str) -> Fixture:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FixtureInvalid(exc.msg, f"line {exc.lineno} col {exc.colno}") from None
    if not isinstance(doc, dict):
        raise FixtureInvalid("top level must be an object", "<root>")
    return parse_fixture(doc)


def load_fixture(path: Union[str, Path]) -> Fixture:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FixtureInvalid("file not found", str(path)) from None
    except UnicodeDecodeError as exc:
        raise FixtureInvalid(f"not UTF-8 text ({exc.reason})", str(path)) from None
    return parse_fixture_text(text)


BUNDLED = ("contacts", "notes", "settings", "qa")


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"no bundled fixture {name!r}; have {BUNDLED}")
    return Path(str(resources.files(__package__).joinpath("fixtures", f"{name}.json")))


@lru_cache(maxsize=None)
def load_bundled(name: str) -> Fixture:
    return load_fixture(bundled_path(name))


def resolve_fixture(ref: str, base: Optional[Path] = None) -> Fixture:
    """A bundled fixture name or a path (relative to ``base`` when given)."""
    if ref in BUNDLED:
        return load_bundled(ref)
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    return load_fixture(path)
