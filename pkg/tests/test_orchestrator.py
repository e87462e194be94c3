from __future__ import annotations

import json
from dataclasses import replace

import pytest
from conftest import Chain, all_tasks, oracle_episode, scripted

from closedloop.domain import FailureClass
from closedloop.oracle import OracleProviders
from closedloop.orchestrator import (
    EpisodeConfig,
    Mode,
    StopReason,
    classify_failure,
    replay,
    run_episode,
    run_suite,
)
from closedloop.providers import CountingProvider, ProviderBindings
from closedloop.simenv import load_bundled
from closedloop.trace import TraceEvent, TraceFormatError, dumps, parse_lines, read_trace, write_trace

STEP_KINDS = ("execute", "apply", "verify", "compress", "memory_update")


def step_blocks(trace):
    """Per-step kind sequences, cut at each execute event."""
    blocks, cur = [], None
    for e in trace:
        if e.kind == "execute":
            cur = [e.kind]
            blocks.append(cur)
        elif cur is not None and e.kind in STEP_KINDS:
            cur.append(e.kind)
        elif e.kind in ("replan", "episode_end"):
            cur = None
    return blocks


def wiretapped(fixture_name, task_id, **overrides):
    fx = load_bundled(fixture_name)
    inner = OracleProviders(fx, overrides.pop("sabotage", 0.0))(task_id, overrides.get("seed", 0))
    taps = ProviderBindings(*(CountingProvider(p) for p in (inner.cloud, inner.executor, inner.observer)))
    return run_episode(EpisodeConfig(fx, task_id, taps, **overrides)), taps


def test_happy_path():
    r = oracle_episode("contacts", "add_contact")
    assert r.success and r.stop_reason == StopReason.ALL_PASSED
    assert r.metrics.mc == 1 and r.metrics.replans == 0
    assert r.metrics.steps_executed == 9
    assert r.metrics.failure_class is None


def test_popup_forces_one_replan():
    r = oracle_episode("contacts", "add_contact_permission")
    assert r.success and r.metrics.mc == 2 and r.metrics.replans == 1


def test_episode_opens_with_summary_then_plan():
    kinds = [e.kind for e in oracle_episode("qa", "dentist_time").trace]
    first_plan = kinds.index("plan")
    assert kinds[0] == "episode_start"
    assert kinds.index("compress") < kinds.index("memory_update") < kinds.index("uplink") < first_plan
    assert kinds[-1] == "episode_end"


@pytest.mark.parametrize("fixture_name,task_id", all_tasks())
def test_loop_order_and_mc_wiretap(fixture_name, task_id):
    r, taps = wiretapped(fixture_name, task_id, sabotage=0.3, seed=4)
    for block in step_blocks(r.trace):
        assert block in (list(STEP_KINDS), ["execute", "verify", "compress", "memory_update"])
    assert r.metrics.mc == taps.cloud.calls == 1 + r.metrics.replans
    assert r.metrics.mt == taps.cloud.tokens
    cloud_completions = [e for e in r.trace if e.kind == "completion" and e.payload["role"] == "cloud"]
    assert len(cloud_completions) == r.metrics.mc


def test_observer_calls_do_not_count():
    r, taps = wiretapped("contacts", "add_contact")
    assert taps.observer.calls == 1 + 2 * 9
    assert taps.executor.calls == 9
    assert r.metrics.mc == 1


def test_text_only_feedback():
    r = oracle_episode("contacts", "add_contact_permission")
    uplinks = [e for e in r.trace if e.kind == "uplink"]
    assert [u.payload["kind"] for u in uplinks] == ["plan_request", "replan_request"]
    assert uplinks[1].payload["attached_image_bytes"] == 0 and "image_b64" not in uplinks[1].payload["wire"]
    assert r.metrics.image_bytes == 100_000
    assert r.metrics.uplink_bytes == sum(u.bytes for u in uplinks)


def test_virtual_clock_step_latency():
    r = oracle_episode("contacts", "add_contact")
    assert set(r.metrics.step_latencies) == {0.9}
    base = oracle_episode("contacts", "add_contact", mode=Mode.UPLOAD_BASELINE)
    assert set(base.metrics.step_latencies) == {3.3}


def test_upload_baseline_sends_screens():
    r = oracle_episode("contacts", "add_contact_permission", mode=Mode.UPLOAD_BASELINE)
    kinds = [e.payload["kind"] for e in r.trace if e.kind == "uplink"]
    assert kinds[0] == "plan_request"
    assert "screenshot_replan_request" in kinds and "replan_request" not in kinds
    assert kinds.count("verify_request") == r.metrics.steps_executed
    assert r.metrics.image_bytes == 100_000 * len(kinds)
    assert not [e for e in r.trace if e.kind == "compress"]
    assert r.success


def test_always_missing_executor_is_visual_grounding():
    r = oracle_episode("contacts", "add_contact", sabotage=1.0)
    assert not r.success
    assert r.metrics.replans == 3 and r.stop_reason == StopReason.MAX_REPLANS
    assert r.metrics.failure_class is FailureClass.VISUAL_GROUNDING
    assert classify_failure(r.trace) is FailureClass.VISUAL_GROUNDING


def test_action_cap_all_passing_is_max_steps():
    r = oracle_episode("contacts", "add_contact_full", max_total_actions=5)
    assert r.stop_reason == StopReason.MAX_ACTIONS and r.metrics.steps_executed == 5
    assert all(e.payload["verdict"] == "Pass" for e in r.trace if e.kind == "verify")
    assert r.metrics.failure_class is FailureClass.MAX_STEPS


def test_false_no_replan_needed_is_verification():
    fx = load_bundled("qa")
    oracle = OracleProviders(fx)("dentist_time", 0)
    b = scripted(cloud=[(r"create a new plan", "No need to replan.")])
    cloud = Chain(b.cloud, oracle.cloud)
    observer = Chain(scripted(observer=[(r"user expectation", "Fail: the screen looks wrong")]).observer,
                      oracle.observer, first_only=r"user expectation")
    r = run_episode(EpisodeConfig(fx, "dentist_time", ProviderBindings(cloud, oracle.executor, observer)))
    assert r.stop_reason == StopReason.NO_REPLAN_NEEDED and r.metrics.claimed_success
    assert not r.success and r.metrics.failure_class is FailureClass.VERIFICATION


def test_unparseable_replan_is_planning():
    fx = load_bundled("contacts")
    oracle = OracleProviders(fx, 1.0)("add_contact", 0)
    cloud = Chain(scripted(cloud=[(r"create a new plan", "Reflection: oops")]).cloud, oracle.cloud)
    r = run_episode(EpisodeConfig(fx, "add_contact", ProviderBindings(cloud, oracle.executor, oracle.observer)))
    assert r.stop_reason == StopReason.REPLANNING_FAILED
    assert r.metrics.failure_class is FailureClass.PLANNING and r.metrics.mc == 2


def test_bad_plan_is_planning():
    fx = load_bundled("qa")
    oracle = OracleProviders(fx)("dentist_time", 0)
    cloud = scripted(cloud=[(".", "Description: d\nThought: t\nPlan: {broken")]).cloud
    r = run_episode(EpisodeConfig(fx, "dentist_time", ProviderBindings(cloud, oracle.executor, oracle.observer)))
    assert r.stop_reason == StopReason.PLANNING_FAILED
    assert r.metrics.failure_class is FailureClass.PLANNING
    assert r.metrics.mc == 1 and r.metrics.steps_executed == 0


def test_replanning_disabled_stops_on_first_failure():
    r = oracle_episode("contacts", "add_contact_permission", replanning=False)
    assert r.stop_reason == StopReason.STEP_FAILED and r.metrics.mc == 1 and not r.success
    assert r.metrics.failure_class is FailureClass.MAX_STEPS


def test_unknown_app_is_a_no_effect_step():
    fx = load_bundled("qa")
    oracle = OracleProviders(fx)("dentist_time", 0)
    executor = scripted(executor=[(".", 'OPEN_APP("Nope")')]).executor
    r = run_episode(EpisodeConfig(fx, "dentist_time", ProviderBindings(oracle.cloud, executor, oracle.observer),
                                  max_replans=0))
    apply = next(e for e in r.trace if e.kind == "apply")
    assert apply.payload["no_effect"] and "unknown app" in apply.payload["effect"]
    assert r.metrics.failure_class is FailureClass.VISUAL_GROUNDING


def test_summarizer_fault_is_contained():
    fx = load_bundled("qa")
    oracle = OracleProviders(fx)("dentist_time", 0)
    observer = scripted(observer=[(".", "   ")]).observer
    r = run_episode(EpisodeConfig(fx, "dentist_time", ProviderBindings(oracle.cloud, oracle.executor, observer)))
    assert r.stop_reason == StopReason.SUMMARIZATION_FAILED and r.metrics.mc == 0
    assert r.metrics.failure_class is FailureClass.VERIFICATION


def test_config_validation():
    fx = load_bundled("qa")
    with pytest.raises(KeyError):
        EpisodeConfig(fx, "nope", OracleProviders(fx))
    with pytest.raises(ValueError):
        EpisodeConfig(fx, "dentist_time", OracleProviders(fx), max_total_actions=0)
    with pytest.raises(ValueError):
        EpisodeConfig(fx, "dentist_time", OracleProviders(fx), clock="sundial")


def test_classify_failure_needs_an_end():
    with pytest.raises(ValueError):
        classify_failure([])
    assert classify_failure(oracle_episode("qa", "dentist_time").trace) is None


def test_real_clock_runs():
    r = oracle_episode("qa", "dentist_time", clock="real")
    assert r.success and all(x < 1.0 for x in r.metrics.step_latencies)


# -- suites ---------------------------------------------------------------------

def suite_configs(sabotage=0.0, seeds=(0,)):
    out = []
    for name in ("contacts", "settings"):
        fx = load_bundled(name)
        provs = OracleProviders(fx, sabotage)
        out += [EpisodeConfig(fx, t.task_id, provs, seed=s) for t in fx.tasks for s in seeds]
    return out


def test_oracle_suite_succeeds():
    report = run_suite(suite_configs())
    assert report.episodes == 9 and report.raw["SR"] == 100.0 and report.raw["MC"] >= 1


def test_suite_is_order_preserving_and_parallel_safe():
    configs = suite_configs(0.3, seeds=(0, 1))
    a, b = run_suite(configs, 1), run_suite(configs, 8)
    assert a.to_json() == b.to_json()
    assert [(r.task_id, r.seed) for r in a.rows] == [(c.task_id, c.seed) for c in configs]


def test_empty_suite():
    with pytest.raises(ValueError):
        run_suite([])


# -- traces and replay ----------------------------------------------------------

def test_trace_round_trips(tmp_path):
    r = oracle_episode("contacts", "add_contact_permission")
    path = tmp_path / "t.jsonl"
    write_trace(path, r.trace)
    back = read_trace(path)
    assert [e.to_dict() for e in back] == [e.to_dict() for e in r.trace]
    assert [e.seq for e in back] == list(range(len(back)))


def test_trace_format_errors():
    with pytest.raises(TraceFormatError):
        parse_lines([])
    with pytest.raises(TraceFormatError) as exc:
        parse_lines(['{"seq":0,"kind":"x","t":0,"payload":{},"bytes":0}', "{nope"])
    assert exc.value.line == 2


@pytest.mark.parametrize("fixture_name,task_id", [("contacts", "add_contact_permission"), ("notes", "rename_ideas"),
                                                  ("settings", "enable_location"), ("qa", "meeting_room")])
def test_replay_reproduces_final_state(fixture_name, task_id):
    r = oracle_episode(fixture_name, task_id, sabotage=0.3, seed=2)
    rep = replay(parse_lines(dumps(r.trace).splitlines()))
    assert rep.ok, rep.detail
    end = rep.replayed[-1]
    assert end.payload["final_state"] == r.final_state.to_dict()


def edit_first_action(lines):
    """Point the first recorded execute event at a blank spot; returns the 1-based line edited."""
    i = next(n for n, line in enumerate(lines) if json.loads(line)["kind"] == "execute")
    d = json.loads(lines[i])
    d["payload"]["action"] = {"kind": "TAP", "text": "TAP(10,10)"}
    lines[i] = json.dumps(d)
    return i + 1


def test_replay_flags_edited_action_line():
    lines = dumps(oracle_episode("contacts", "add_contact").trace).splitlines()
    line = edit_first_action(lines)
    rep = replay(parse_lines(lines))
    assert not rep.ok and rep.first_divergence == line


def test_replay_flags_edited_completion():
    lines = dumps(oracle_episode("contacts", "add_contact").trace).splitlines()
    i = next(n for n, line in enumerate(lines) if json.loads(line)["kind"] == "completion")
    d = json.loads(lines[i])
    d["payload"]["text"] += " "
    lines[i] = json.dumps(d)
    rep = replay(parse_lines(lines))
    assert not rep.ok and rep.first_divergence == i + 1


def test_replay_of_real_clock_trace_ignores_timing():
    r = oracle_episode("qa", "paris_temperature", clock="real")
    assert replay(r.trace).ok


def test_replay_rejects_foreign_first_line():
    r = oracle_episode("qa", "paris_temperature")
    rep = replay(r.trace[1:])
    assert not rep.ok and rep.first_divergence == 1


def test_trace_event_from_dict():
    e = TraceEvent(0, "x", 1.5, {"a": 1}, 7)
    assert TraceEvent.from_dict(e.to_dict()) == e


def test_replace_keeps_config_valid():
    c = suite_configs()[0]
    assert replace(c, mode=Mode.UPLOAD_BASELINE).mode is Mode.UPLOAD_BASELINE
