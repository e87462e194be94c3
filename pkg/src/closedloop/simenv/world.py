"""World state and action semantics of the simulated phone."""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from ..domain import (
    Action,
    Answer,
    DeleteText,
    Enter,
    InputText,
    LongPress,
    OpenApp,
    PressBack,
    PressHome,
    Screen,
    Swipe,
    Tap,
)
from .fixture import Element, Fixture, TaskDef, TransitionDef, _resolve


class UnknownApp(LookupError):
    def __init__(self, name: str):
        super().__init__(f"no app named {name!r}")
        self.name = name


@dataclass
class WorldState:
    fixture: Fixture = field(repr=False, compare=False)
    screen: str
    stack: list[str] = field(default_factory=list)
    fields: dict[str, str] = field(default_factory=dict)
    focus: Optional[str] = None
    app_data: dict[str, Any] = field(default_factory=dict)
    popup_active: Optional[str] = None
    popups_fired: list[str] = field(default_factory=list)
    popup_schedule: dict[str, int] = field(default_factory=dict)
    enabled_popups: list[str] = field(default_factory=list)
    pages: dict[str, int] = field(default_factory=dict)
    answer: Optional[str] = None
    toast: Optional[str] = None
    step_counter: int = 0

    def copy(self) -> WorldState:
        return WorldState(
            fixture=self.fixture,
            screen=self.screen,
            stack=list(self.stack),
            fields=dict(self.fields),
            focus=self.focus,
            # Shared until a transition writes to it; see _fire.
            app_data=self.app_data,
            popup_active=self.popup_active,
            popups_fired=list(self.popups_fired),
            popup_schedule=dict(self.popup_schedule),
            enabled_popups=list(self.enabled_popups),
            pages=dict(self.pages),
            answer=self.answer,
            toast=self.toast,
            step_counter=self.step_counter,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "screen": self.screen,
            "stack": list(self.stack),
            "fields": dict(sorted(self.fields.items())),
            "focus": self.focus,
            "app_data": self.app_data,
            "popup_active": self.popup_active,
            "popups_fired": list(self.popups_fired),
            "popup_schedule": dict(sorted(self.popup_schedule.items())),
            "enabled_popups": list(self.enabled_popups),
            "pages": dict(sorted(self.pages.items())),
            "answer": self.answer,
            "toast": self.toast,
            "step_counter": self.step_counter,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    def search_key(self, with_stack: bool = True) -> str:
        """Identity for graph search: what the user could observe or change, minus bookkeeping."""
        d = self.to_dict()
        for k in ("step_counter", "toast", "popups_fired", "popup_schedule", "enabled_popups"):
            d.pop(k)
        if not with_stack:
            d.pop("stack")
        return json.dumps(d, sort_keys=True)


@dataclass(frozen=True)
class TransitionResult:
    state: WorldState
    effect: str
    no_effect: bool = False


def reset(fixture: Fixture, seed: int = 0, popups: Iterable[str] = ()) -> WorldState:
    """Fresh state on the home screen. ``seed`` draws any ``step_range`` popup schedule."""
    rng = random.Random(seed)
    schedule = {}
    for p in fixture.popups:
        if p.trigger_kind == "step":
            schedule[p.id] = p.trigger_value
        elif p.trigger_kind == "step_range":
            lo, hi = p.trigger_value
            schedule[p.id] = rng.randint(lo, hi)
    enabled = [p.id for p in fixture.popups if p.id in set(popups)]
    return WorldState(
        fixture=fixture,
        screen=fixture.home.id,
        app_data=fixture.app_data,
        popup_schedule=schedule,
        enabled_popups=enabled,
    )


# -- rendering ----------------------------------------------------------------


def visible_elements(state: WorldState) -> list[Element]:
    if state.popup_active:
        return list(state.fixture.popup(state.popup_active).elements)
    sdef = state.fixture.screen(state.screen)
    page = state.pages.get(state.screen, 0)
    return [e for e in sdef.elements if e.page is None or e.page == page]


def element_label(state: WorldState, el: Element) -> str:
    if el.label_from:
        ok, value = _resolve(state.app_data, el.label_from[len("app_data."):])
        if ok and value not in (None, ""):
            return str(value)
    return el.label


def element_state(state: WorldState, el: Element) -> Optional[str]:
    if not el.state_from:
        return None
    _, value = _resolve(state.app_data, el.state_from[len("app_data."):])
    if isinstance(value, bool):
        return "on" if value else "off"
    return str(value)


def _render_element(state: WorldState, el: Element) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": el.id,
        "label": element_label(state, el),
        "role": el.role,
        "bounds": list(el.bounds),
    }
    if el.role == "field":
        out["content"] = state.fields.get(el.id, "")
        if state.focus == el.id:
            out["focused"] = True
    st = element_state(state, el)
    if st is not None:
        out["state"] = st
    return out


def current_screen(state: WorldState) -> Screen:
    fx = state.fixture
    sdef = fx.screen(state.screen)
    doc: dict[str, Any] = {"width": fx.width_px, "height": fx.height_px}
    if state.popup_active:
        popup = fx.popup(state.popup_active)
        doc.update(
            screen_id=popup.id,
            title=popup.title,
            app=sdef.app,
            dialog=True,
            dimmed=True,
            background=sdef.title,
            description=popup.description,
        )
        screen_id = popup.id
    else:
        doc.update(screen_id=sdef.id, title=sdef.title, app=sdef.app, dimmed=False, description=sdef.description)
        screen_id = sdef.id
        if state.toast:
            doc["toast"] = state.toast
        if sdef.pages > 1:
            doc["page"] = state.pages.get(sdef.id, 0) + 1
            doc["pages"] = sdef.pages
    doc["elements"] = [_render_element(state, e) for e in visible_elements(state)]
    payload = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return Screen(screen_id, fx.width_px, fx.height_px, payload, fx.screenshot_bytes)


# -- actions ------------------------------------------------------------------


def hit_test(state: WorldState, x: int, y: int) -> Optional[Element]:
    hit = None
    for el in visible_elements(state):
        if el.contains(x, y):
            hit = el  # later elements are drawn on top
    return hit


def set_path(app_data: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted[len("app_data."):].split(".")
    cur: Any = app_data
    for part in parts[:-1]:
        cur = cur[int(part)] if isinstance(cur, list) else cur[part]
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value


def _field_value(state: WorldState, ref: Any) -> Any:
    if isinstance(ref, str) and ref.startswith("$"):
        return state.fields.get(ref[1:], "")
    return ref


def _navigate(state: WorldState, target: str, push: bool = True) -> None:
    if target != state.screen:
        for el in state.fixture.screen(state.screen).elements:
            if el.role == "field":
                state.fields.pop(el.id, None)  # unsaved input is discarded on leaving
        if push:
            state.stack.append(state.screen)
        state.screen = target
        state.pages.pop(target, None)
    state.focus = None


def _fire(state: WorldState, t: TransitionDef) -> str:
    post = []
    if any(eff.op != "load_field" for eff in t.effects):
        state.app_data = copy.deepcopy(state.app_data)
    for eff in t.effects:
        if eff.op == "load_field":
            post.append(eff)
        elif eff.op == "append":
            ok, target = _resolve(state.app_data, eff.path[len("app_data."):])
            target.append({k: _field_value(state, v) for k, v in eff.record or ()})
        elif eff.op == "set":
            set_path(state.app_data, eff.path, _field_value(state, eff.value))
        elif eff.op == "toggle":
            _, value = _resolve(state.app_data, eff.path[len("app_data."):])
            set_path(state.app_data, eff.path, not value)
    if t.target is not None:
        _navigate(state, t.target)
    for eff in post:
        _, value = _resolve(state.app_data, eff.path[len("app_data."):])
        if value not in (None, ""):
            state.fields[eff.field] = str(value)
        else:
            state.fields.pop(eff.field, None)
    where = f" to {t.target}" if t.target else ""
    return f"{t.action} {t.element or 'screen'}{where}"


def _focused_field(state: WorldState) -> Optional[Element]:
    if state.focus is None:
        return None
    for el in visible_elements(state):
        if el.id == state.focus:
            return el
    return None


def _swipe_direction(a: Swipe) -> Optional[str]:
    dx, dy = a.x2 - a.x1, a.y2 - a.y1
    if dx == 0 and dy == 0:
        return None
    if abs(dy) >= abs(dx):
        return "up" if dy < 0 else "down"
    return "left" if dx < 0 else "right"


def _dispatch(state: WorldState, action: Action) -> tuple[str, bool]:
    fx = state.fixture
    if state.popup_active:
        popup = fx.popup(state.popup_active)
        if isinstance(action, (Tap, LongPress)):
            el = hit_test(state, action.x, action.y)
            if el is not None and el.id == popup.dismiss:
                state.popup_active = None
                return f"dismissed {popup.id}", False
        return f"blocked by {popup.id}", True

    if isinstance(action, (Tap, LongPress)):
        el = hit_test(state, action.x, action.y)
        if el is None:
            return "tap hit nothing", True
        kind = "tap" if isinstance(action, Tap) else "long_press"
        t = fx.transition(state.screen, el.id, kind)
        if t is not None:
            return _fire(state, t), False
        if kind == "tap" and el.role == "field":
            if state.focus == el.id:
                return f"{el.id} already focused", True
            state.focus = el.id
            return f"focused {el.id}", False
        return f"{kind} on {el.id} did nothing", True

    if isinstance(action, Swipe):
        direction = _swipe_direction(action)
        if direction is None:
            return "zero-length swipe", True
        t = fx.transition(state.screen, None, f"swipe_{direction}")
        if t is not None:
            return _fire(state, t), False
        pages = fx.screen(state.screen).pages
        page = state.pages.get(state.screen, 0)
        new = page + 1 if direction == "up" else page - 1 if direction == "down" else page
        new = max(0, min(pages - 1, new))
        if new == page:
            return f"swipe {direction} did nothing", True
        if new:
            state.pages[state.screen] = new
        else:
            state.pages.pop(state.screen, None)
        el = _focused_field(state)
        if el is None:
            state.focus = None
        return f"scrolled to page {new}", False

    if isinstance(action, InputText):
        el = _focused_field(state)
        if el is None:
            return "no focused field", True
        state.fields[el.id] = state.fields.get(el.id, "") + action.text
        return f"typed into {el.id}", False

    if isinstance(action, DeleteText):
        el = _focused_field(state)
        if el is None:
            return "no focused field", True
        state.fields.pop(el.id, None)
        return f"cleared {el.id}", False

    if isinstance(action, Enter):
        el = _focused_field(state)
        if el is None:
            return "no focused field", True
        t = fx.transition(state.screen, el.id, "enter")
        if t is None:
            return "enter did nothing", True
        return _fire(state, t), False

    if isinstance(action, OpenApp):
        entries = {name.casefold(): entry for name, entry in fx.apps}
        entry = entries.get(action.name.strip().casefold())
        if entry is None:
            raise UnknownApp(action.name)
        _navigate(state, entry)
        return f"opened {action.name}", False

    if isinstance(action, PressBack):
        if not state.stack:
            return "nothing to go back to", True
        _navigate(state, state.stack.pop(), push=False)
        return "went back", False

    if isinstance(action, PressHome):
        if state.screen == fx.home.id and not state.stack:
            return "already home", True
        _navigate(state, fx.home.id, push=False)
        state.stack.clear()
        return "went home", False

    if isinstance(action, Answer):
        state.answer = action.text
        state.toast = f"Answer: {action.text}"
        return "answered", False

    raise TypeError(f"not an action: {action!r}")


def _fire_popups(state: WorldState) -> None:
    if state.popup_active:
        return
    for pid in state.enabled_popups:
        if pid in state.popups_fired:
            continue
        popup = state.fixture.popup(pid)
        if popup.trigger_kind == "screen":
            due = state.screen == popup.trigger_value
        else:
            due = state.step_counter >= state.popup_schedule[pid]
        if due:
            state.popup_active = pid
            state.popups_fired.append(pid)
            return


def apply_action(state: WorldState, action: Action) -> TransitionResult:
    """Apply one action to a copy of ``state``; the input state is never mutated.

    Raises :class:`UnknownApp` for ``OpenApp`` of an app the fixture lacks.
    """
    new = state.copy()
    new.step_counter += 1
    new.toast = None
    effect, no_effect = _dispatch(new, action)
    _fire_popups(new)
    return TransitionResult(new, effect, no_effect)


# -- evaluation ---------------------------------------------------------------


def _lookup(state: WorldState, path: str) -> Any:
    if path == "answer":
        return state.answer
    if path == "screen":
        return state.screen
    if path.startswith("fields."):
        return state.fields.get(path[len("fields."):], "")
    _, value = _resolve(state.app_data, path[len("app_data."):])
    return value


def _holds(state: WorldState, pred: dict[str, Any]) -> bool:
    (op, arg), = pred.items()
    if op == "all":
        return all(_holds(state, p) for p in arg)
    if op == "any":
        return any(_holds(state, p) for p in arg)
    if op == "not":
        return not _holds(state, arg)
    value = _lookup(state, arg["path"])
    if op == "equals":
        return value == arg["value"]
    if op == "contains":
        if not isinstance(value, list):
            return False
        item = arg["item"]
        return any(isinstance(r, dict) and all(r.get(k) == v for k, v in item.items()) for r in value)
    raise ValueError(f"unknown predicate op {op!r}")


def evaluate_success(state: WorldState, task: TaskDef) -> bool:
    return _holds(state, task.predicate)
