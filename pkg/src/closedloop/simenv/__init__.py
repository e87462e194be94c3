"""Deterministic simulated phone: fixtures, state, action semantics and task checks."""

from .fixture import (
    BUNDLED,
    Element,
    Fixture,
    FixtureInvalid,
    PopupDef,
    ScreenDef,
    TaskDef,
    bundled_path,
    load_bundled,
    load_fixture,
    parse_fixture,
    parse_fixture_text,
    resolve_fixture,
)
from .search import check_reachability, shortest_path
from .world import (
    TransitionResult,
    UnknownApp,
    WorldState,
    apply_action,
    current_screen,
    evaluate_success,
    reset,
    visible_elements,
)

__all__ = [
    "BUNDLED",
    "Element",
    "Fixture",
    "FixtureInvalid",
    "PopupDef",
    "ScreenDef",
    "TaskDef",
    "TransitionResult",
    "UnknownApp",
    "WorldState",
    "apply_action",
    "bundled_path",
    "check_reachability",
    "current_screen",
    "evaluate_success",
    "load_bundled",
    "load_fixture",
    "parse_fixture",
    "parse_fixture_text",
    "reset",
    "resolve_fixture",
    "shortest_path",
    "visible_elements",
]
