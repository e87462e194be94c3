from __future__ import annotations

import copy
import json

import pytest
from conftest import all_tasks, mini
from hypothesis import given, settings
from hypothesis import strategies as st

from closedloop.domain import (
    Answer,
    DeleteText,
    Enter,
    InputText,
    OpenApp,
    PressBack,
    PressHome,
    Swipe,
    Tap,
)
from closedloop.simenv import (
    FixtureInvalid,
    UnknownApp,
    apply_action,
    check_reachability,
    current_screen,
    evaluate_success,
    load_bundled,
    load_fixture,
    parse_fixture,
    reset,
    shortest_path,
)


FIELD, SAVE, ICON = Tap(540, 340), Tap(800, 2240), Tap(160, 400)


def run(state, *actions):
    for a in actions:
        state = apply_action(state, a).state
    return state


def test_bundled_contacts_loads():
    fx = load_bundled("contacts")
    assert len(fx.screens) >= 6
    assert fx.screenshot_bytes == 100_000


def test_load_fixture_by_path(tmp_path):
    p = tmp_path / "mini.json"
    p.write_text(json.dumps(mini()))
    assert load_fixture(p).name == "mini"


def test_transition_to_missing_screen():
    doc = mini()
    doc["transitions"][0]["target"] = "nowhere"
    with pytest.raises(FixtureInvalid):
        parse_fixture(doc)


def test_two_home_screens():
    doc = mini()
    doc["screens"][1]["home"] = True
    with pytest.raises(FixtureInvalid):
        parse_fixture(doc)


def test_malformed_json_reports_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"name": "x",\n  "screens": [}')
    with pytest.raises(FixtureInvalid) as exc:
        load_fixture(p)
    assert "line 2" in str(exc.value)


@pytest.mark.parametrize("mutate", [
    lambda d: d["screens"][1]["elements"][0].update(bounds=[0, 0, 5000, 10]),
    lambda d: d["tasks"].append(dict(d["tasks"][0])),
    lambda d: d["popups"][0].update(dismiss="ghost"),
    lambda d: d["apps"].update(Ghost={"entry": "void"}),
])
def test_other_invalid_fixtures(mutate):
    doc = mini()
    mutate(doc)
    with pytest.raises(FixtureInvalid):
        parse_fixture(doc)


def test_form_rendering_lists_field_content():
    fx = parse_fixture(mini())
    s = run(reset(fx), ICON, FIELD, InputText("John"))
    doc = current_screen(s).document()
    name = next(e for e in doc["elements"] if e["id"] == "field_name")
    assert name["label"] == "Name" and name["content"] == "John" and name["focused"]
    assert current_screen(s).payload_bytes == 100_000


def test_popup_overlay_hides_the_screen():
    fx = parse_fixture(mini())
    s = run(reset(fx, popups=["nag"]), ICON, FIELD)
    assert s.popup_active == "nag"
    doc = current_screen(s).document()
    assert doc["dimmed"] and doc["dialog"] and doc["background"] == "New item"
    assert [e["id"] for e in doc["elements"]] == ["nag_ok"]


def test_overlay_blocks_everything_but_dismiss():
    fx = parse_fixture(mini())
    s = run(reset(fx, popups=["nag"]), ICON, FIELD)
    for a in (SAVE, InputText("x"), PressHome(), Swipe(540, 1800, 540, 600), OpenApp("Box")):
        r = apply_action(s, a)
        assert r.no_effect and r.state.popup_active == "nag" and r.state.screen == "form"
    after = apply_action(s, Tap(700, 1300)).state
    assert after.popup_active is None and after.screen == "form"


def test_delete_text_clears_focused_field():
    fx = parse_fixture(mini())
    s = run(reset(fx), ICON, FIELD, InputText("John"), DeleteText())
    assert s.fields.get("field_name", "") == ""


def test_input_without_focus_has_no_effect():
    fx = parse_fixture(mini())
    r = apply_action(run(reset(fx), ICON), InputText("x"))
    assert r.no_effect


def test_press_home_and_back():
    fx = parse_fixture(mini())
    s = run(reset(fx), ICON)
    assert run(s, PressHome()).screen == "home"
    assert run(s, PressBack()).screen == "home"
    assert apply_action(reset(fx), PressHome()).no_effect


def test_unknown_app():
    with pytest.raises(UnknownApp):
        apply_action(reset(parse_fixture(mini())), OpenApp("Nope"))


def test_open_app_is_case_insensitive():
    assert run(reset(parse_fixture(mini())), OpenApp(" box ")).screen == "form"


def test_success_predicate():
    fx = parse_fixture(mini())
    task = fx.task("save_pen")
    s = run(reset(fx), ICON, FIELD, InputText("Pen"), SAVE)
    assert s.screen == "done"
    assert evaluate_success(s, task) and evaluate_success(s, task)
    assert not evaluate_success(reset(fx), task)


def test_contacts_predicate():
    fx = load_bundled("contacts")
    task = fx.task("add_contact")
    s = reset(fx)
    assert not evaluate_success(s, task)
    s.app_data = dict(s.app_data, contacts=s.app_data["contacts"] + [
        {"name": "John Doe", "phone": "555-1234", "email": "john.doe@example.com", "company": ""}])
    assert evaluate_success(s, task)


def test_answer_predicate():
    fx = load_bundled("qa")
    task = fx.task("dentist_time")
    assert evaluate_success(apply_action(reset(fx), Answer("10:30 AM")).state, task)
    assert not evaluate_success(apply_action(reset(fx), Answer("11:00 AM")).state, task)


def test_apply_action_does_not_mutate_input():
    fx = parse_fixture(mini())
    s = run(reset(fx), ICON, FIELD, InputText("Pen"))
    before = s.to_json()
    apply_action(s, SAVE)
    assert s.to_json() == before
    assert fx.app_data == {"items": []}


def test_reset_is_deterministic_and_clean():
    fx = load_bundled("settings")
    a, b = reset(fx, 7, ["low_battery"]), reset(fx, 7, ["low_battery"])
    assert a.to_json() == b.to_json()
    assert a.fields == {}


def test_step_popup_fires_at_its_step():
    fx = parse_fixture(mini())
    for _ in range(2):
        s = reset(fx, 3, ["nag"])
        s = run(s, ICON)
        assert s.popup_active is None
        s = run(s, FIELD)
        assert s.popup_active == "nag" and s.step_counter == 2


def test_disabled_popup_never_fires():
    fx = parse_fixture(mini())
    assert run(reset(fx), ICON, FIELD, FIELD).popup_active is None


def test_fields_are_cleared_on_leaving_a_screen():
    fx = parse_fixture(mini())
    s = run(reset(fx), ICON, FIELD, InputText("Pen"), PressBack(), ICON)
    assert s.fields == {}


def test_paged_settings_screen_scrolls():
    fx = load_bundled("settings")
    s = run(reset(fx), OpenApp("Settings"))
    doc = current_screen(s).document()
    assert doc["page"] == 1 and doc["pages"] == 2
    s = run(s, Swipe(540, 1800, 540, 600))
    assert current_screen(s).document()["page"] == 2


# -- properties -------------------------------------------------------------

_mini_actions = st.sampled_from([ICON, FIELD, SAVE, Tap(700, 1300), Tap(10, 10), InputText("Pen"), InputText("x"),
                                 DeleteText(), Enter(), PressBack(), PressHome(), OpenApp("Box"),
                                 Swipe(540, 1800, 540, 600), Answer("a")])


@settings(max_examples=150)
@given(st.lists(_mini_actions, max_size=12), st.integers(0, 1000))
def test_trajectory_is_determined_by_seed_and_actions(actions, seed):
    fx = parse_fixture(mini())
    a = run(reset(fx, seed, ["nag"]), *actions)
    b = run(reset(fx, seed, ["nag"]), *actions)
    assert a.to_json() == b.to_json()


@settings(max_examples=150)
@given(st.lists(_mini_actions, max_size=12))
def test_overlay_discipline(actions):
    fx = parse_fixture(mini())
    s = reset(fx, 0, ["nag"])
    for a in actions:
        r = apply_action(s, a)
        if s.popup_active:
            dismissed = r.state.popup_active is None
            unchanged = {k: v for k, v in r.state.to_dict().items() if k not in ("step_counter", "toast")} == \
                {k: v for k, v in s.to_dict().items() if k not in ("step_counter", "toast")}
            assert dismissed or (r.no_effect and unchanged)
        s = r.state


@settings(max_examples=100)
@given(st.lists(_mini_actions, max_size=10))
def test_evaluate_success_has_no_side_effects(actions):
    fx = parse_fixture(mini())
    s = run(reset(fx), *actions)
    snap = copy.deepcopy(s.to_dict())
    first = evaluate_success(s, fx.task("save_pen"))
    assert evaluate_success(s, fx.task("save_pen")) == first
    assert s.to_dict() == snap


# -- reachability -------------------------------------------------------------

def test_mini_reachability():
    fx = parse_fixture(mini())
    assert check_reachability(fx) == {"save_pen": 4}
    path = shortest_path(reset(fx), fx.task("save_pen"))
    s = reset(fx)
    for step in path:
        s = apply_action(s, step.action).state
    assert evaluate_success(s, fx.task("save_pen"))


def test_unreachable_goal():
    doc = mini()
    doc["tasks"][0]["success"] = {"contains": {"path": "app_data.items", "item": {"name": "Pen", "x": 1}}}
    assert check_reachability(parse_fixture(doc)) == {"save_pen": None}


# Shortest solution lengths, found once by brute-force search and frozen here.
SHORTEST = {
    ("contacts", "add_contact"): 9, ("contacts", "add_contact_permission"): 9,
    ("contacts", "add_contact_full"): 11, ("contacts", "add_contact_work"): 11,
    ("notes", "rename_groceries"): 6, ("notes", "rename_ideas"): 6,
    ("settings", "enable_wifi"): 3, ("settings", "enable_dark_theme"): 3, ("settings", "enable_location"): 4,
    ("settings", "enable_bluetooth"): 3, ("settings", "disable_battery_saver"): 4,
    ("qa", "dentist_time"): 3, ("qa", "paris_temperature"): 3, ("qa", "meeting_room"): 3,
}


def test_shortest_table_covers_every_task():
    assert set(SHORTEST) == set(all_tasks())


@pytest.mark.parametrize("name", ["contacts", "notes", "settings", "qa"])
def test_bundled_tasks_are_reachable(name):
    lengths = check_reachability(load_bundled(name))
    assert lengths == {t: n for (f, t), n in SHORTEST.items() if f == name}
