"""Breadth-first search over world states.

This is the offline reachability check run during fixture validation, and
the source of the oracle planner's plans. Scheduled popups are switched off
in the search since no planner can foresee them.

A move that changes ``app_data`` without completing the task is a dead end:
fixtures are written so the one committing action comes last, and this keeps
the search from enumerating every half-filled record that could be saved.
Plans never use Back, so the navigation stack is left out of the state key;
otherwise every route to a screen would count as a separate state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from ..domain import (
    Action,
    Answer,
    DeleteText,
    Enter,
    InputText,
    OpenApp,
        PressHome,
    Swipe,
    Tap,
)
from .fixture import Fixture, TaskDef
from .world import (
    UnknownApp,
    WorldState,
    apply_action,
    element_label,
    evaluate_success,
    reset,
    visible_elements,
)

MAX_DEPTH = 30
MAX_STATES = 200_000


@dataclass(frozen=True)
class SearchStep:
    action: Action
    before: WorldState
    after: WorldState


def focused_field(state: WorldState):
    if state.focus is None:
        return None
    return next((e for e in visible_elements(state) if e.id == state.focus), None)


def swipe(fixture: Fixture, direction: str) -> Swipe:
    w, h = fixture.width_px, fixture.height_px
    if direction == "up":
        return Swipe(w // 2, h * 3 // 4, w // 2, h // 4)
    return Swipe(w // 2, h // 4, w // 2, h * 3 // 4)


def _key(state: WorldState) -> str:
    return state.search_key(with_stack=False)


def candidate_actions(state: WorldState, task: TaskDef) -> list[Action]:
    """Actions worth trying from ``state``, in a fixed order so searches are deterministic."""
    fx = state.fixture
    elements = visible_elements(state)
    actions: list[Action] = [Tap(*el.center) for el in elements]
    if state.popup_active:
        return actions
    el = focused_field(state)
    if el is not None:
        content = state.fields.get(el.id, "")
        want = task.input_hints.get(el.id)
        if want is not None and content == "":
            actions.append(InputText(want))
        elif content and content != want:
            actions.append(DeleteText())
        actions.append(Enter())
    sdef = fx.screen(state.screen)
    if sdef.pages > 1 or any(t.screen == state.screen and t.action.startswith("swipe") for t in fx.transitions):
        actions += [swipe(fx, "up"), swipe(fx, "down")]
    actions += [OpenApp(name) for name, _ in fx.apps]
    actions.append(PressHome())
    labels = {element_label(state, e) for e in elements}
    actions += [Answer(a) for a in task.answers if a in labels]
    return actions


def shortest_path(
    start: WorldState,
    task: TaskDef,
    max_depth: int = MAX_DEPTH,
    max_states: int = MAX_STATES,
) -> Optional[list[SearchStep]]:
    """Fewest actions from ``start`` to a state satisfying ``task``; None if none within the bounds."""
    root = start.copy()
    root.enabled_popups = []
    if evaluate_success(root, task):
        return []
    seen = {_key(root): None}
    parents: dict[str, tuple[str, SearchStep]] = {}
    frontier = deque([(root, 0)])
    while frontier:
        state, depth = frontier.popleft()
        if depth >= max_depth:
            continue
        key = _key(state)
        for action in candidate_actions(state, task):
            try:
                result = apply_action(state, action)
            except UnknownApp:
                continue
            if result.no_effect:
                continue
            nxt = result.state
            done = evaluate_success(nxt, task)
            if not done and nxt.app_data != state.app_data:
                continue
            nkey = _key(nxt)
            if nkey in seen:
                continue
            seen[nkey] = key
            parents[nkey] = (key, SearchStep(action, state, nxt))
            if done:
                path = []
                cur = nkey
                while cur in parents:
                    prev, step = parents[cur]
                    path.append(step)
                    cur = prev
                return path[::-1]
            if len(seen) >= max_states:
                return None
            frontier.append((nxt, depth + 1))
    return None


def check_reachability(fixture: Fixture, max_depth: int = MAX_DEPTH) -> dict[str, Optional[int]]:
    """Shortest solution length per task from the reset state, None where unreachable."""
    out = {}
    for task in fixture.tasks:
        path = shortest_path(reset(fixture, 0), task, max_depth)
        out[task.task_id] = None if path is None else len(path)
    return out
