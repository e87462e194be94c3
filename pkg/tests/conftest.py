from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from closedloop.oracle import OracleProviders
from closedloop.orchestrator import EpisodeConfig, run_episode
from closedloop.providers import (
    CLOUD_DEFAULT,
    EXECUTOR_DEFAULT,
    OBSERVER_DEFAULT,
    ProviderBindings,
    RuleMiss,
    ScriptedProvider,
)
from closedloop.simenv import BUNDLED, load_bundled

GOLDEN = Path(__file__).parent / "golden"


def bundled(name: str):
    return load_bundled(name)


def all_tasks():
    """(fixture name, task id) for every bundled task."""
    return [(name, t.task_id) for name in BUNDLED for t in load_bundled(name).tasks]


def oracle_episode(fixture_name: str, task_id: str, sabotage: float = 0.0, **overrides):
    fx = load_bundled(fixture_name)
    config = EpisodeConfig(fx, task_id, OracleProviders(fx, sabotage), **overrides)
    return run_episode(config)


def golden_texts(sub: str) -> list[Path]:
    return sorted((GOLDEN / sub).glob("*.txt"))


def golden_json(name: str):
    return json.loads((GOLDEN / name).read_text(encoding="utf-8"))


def scripted(cloud=(), executor=(), observer=()) -> ProviderBindings:
    """Bindings built from (pattern, response) rule lists."""
    return ProviderBindings(
        ScriptedProvider(CLOUD_DEFAULT, list(cloud)),
        ScriptedProvider(EXECUTOR_DEFAULT, list(executor)),
        ScriptedProvider(OBSERVER_DEFAULT, list(observer)),
    )


def mini(**changes) -> dict:
    """A two-screen app: focus a field, type, save into app_data.items."""
    doc = {
        "name": "mini",
        "resolution": {"width_px": 1080, "height_px": 2400},
        "app_data": {"items": []},
        "apps": {"Box": {"entry": "form"}},
        "screens": [
            {"id": "home", "title": "Home", "app": None, "home": True, "description": "Launcher.",
             "elements": [{"id": "icon_box", "label": "Box", "role": "icon", "bounds": [60, 300, 260, 500]}]},
            {"id": "form", "title": "New item", "app": "Box", "description": "A form.",
             "elements": [
                 {"id": "field_name", "label": "Name", "role": "field", "bounds": [60, 260, 1020, 420]},
                 {"id": "btn_save", "label": "Save", "role": "button", "bounds": [580, 2160, 1020, 2320]},
             ]},
            {"id": "done", "title": "Saved", "app": "Box", "description": "Saved.", "elements": []},
        ],
        "transitions": [
            {"screen": "home", "element": "icon_box", "action": "tap", "target": "form"},
            {"screen": "form", "element": "btn_save", "action": "tap", "target": "done",
             "effects": [{"op": "append", "path": "app_data.items", "record": {"name": "$field_name"}}]},
        ],
        "popups": [
            {"id": "nag", "title": "Rate us", "description": "A rating prompt.", "trigger": {"step": 2},
             "elements": [{"id": "nag_ok", "label": "OK", "role": "button", "bounds": [600, 1240, 960, 1380]}],
             "dismiss": "nag_ok"},
        ],
        "tasks": [
            {"task_id": "save_pen", "instruction": "Save an item named Pen.",
             "success": {"contains": {"path": "app_data.items", "item": {"name": "Pen"}}},
             "inputs": {"field_name": "Pen"}},
        ],
    }
    doc.update(changes)
    return doc


@pytest.fixture
def contacts():
    return load_bundled("contacts")


class Chain:
    """Try ``first``; on a rule miss (or a request it should not see) fall through to ``second``."""

    def __init__(self, first, second, first_only=None):
        self.first, self.second = first, second
        self.config = second.config
        self.only = re.compile(first_only) if first_only else None

    def complete(self, request):
        if self.only is None or self.only.search(request.matching_text()):
            try:
                return self.first.complete(request)
            except RuleMiss:
                pass
        return self.second.complete(request)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if rep.failed or (rep.when == "call" and label not in _CRITERIA):
        _CRITERIA[label] = "FAIL" if rep.failed else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s[2:].split()[0])):
        terminalreporter.write_line(f"{_CRITERIA[label]}  {label}")
