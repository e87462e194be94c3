"""Run configuration parsing and expansion into episode configs."""

from __future__ import annotations

import json

import pytest
from conftest import mini

from closedloop.config import ConfigError, load_config, parse_config
from closedloop.oracle import OracleProviders
from closedloop.orchestrator import Mode
from closedloop.providers import RemoteProvider, ScriptedProvider

REMOTE = {"base_url": "https://models.test/v1", "model": "m"}


def test_minimal_config_defaults():
    c = parse_config({"fixture": "contacts"})
    assert [t for _, ts in c.suite for t in ts][:2] == ["add_contact", "add_contact_permission"]
    assert (c.max_actions, c.max_replans, c.mode, c.clock, c.parallel) == (30, 3, Mode.CLOSED_LOOP, "virtual", 1)
    assert c.providers == {"kind": "oracle"}


@pytest.mark.parametrize("doc,where", [
    ({}, "(top level)"),
    ({"fixture": "qa", "suite": [{"fixture": "qa"}]}, "(top level)"),
    ({"fixture": "qa", "max_actions": 0}, "max_actions"),
    ({"fixture": "qa", "mode": "upload"}, "mode"),
    ({"fixture": "qa", "colour": "red"}, "(top level)"),
    ({"fixture": "qa", "providers": {"kind": "oracle", "sabotage": 2}}, "providers.sabotage"),
    ({"fixture": "qa", "providers": {"kind": "oracle", "latency": {"gpu": {}}}}, "providers.latency"),
])
def test_schema_errors(doc, where):
    with pytest.raises(ConfigError, match=f"^{where}".replace("(", r"\(").replace(")", r"\)").replace(".", r"\.")):
        parse_config(doc)


def test_unknown_task_and_fixture():
    with pytest.raises(ConfigError, match="no task"):
        parse_config({"fixture": "qa", "tasks": ["fly"]})
    with pytest.raises(ConfigError, match="nowhere.json"):
        parse_config({"fixture": "nowhere.json"})


def test_relative_fixture_path(tmp_path):
    (tmp_path / "mini.json").write_text(json.dumps(mini()))
    (tmp_path / "run.json").write_text(json.dumps({"fixture": "mini.json", "seeds": [1, 2]}))
    c = load_config(tmp_path / "run.json")
    assert c.suite[0][0].name == "mini"
    assert [e.seed for e in c.episode_configs()] == [1, 2]


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_suite_crosses_tasks_and_seeds():
    c = parse_config({"suite": [{"fixture": "qa", "tasks": ["dentist_time"]},
                                {"fixture": "notes"}], "seeds": [0, 1]})
    configs = c.episode_configs()
    assert len(configs) == 2 * (1 + len(c.suite[1][1]))
    assert configs[0].providers is configs[1].providers
    assert isinstance(configs[0].providers, OracleProviders)


def test_episodes_cycle_tasks_with_rising_seeds():
    c = parse_config({"fixture": "contacts", "episodes": 6, "seeds": [10]})
    configs = c.episode_configs()
    assert [e.seed for e in configs] == list(range(10, 16))
    assert configs[4].task_id == configs[0].task_id


def test_override_and_mode():
    c = parse_config({"fixture": "qa"}).override(seed=7, max_actions=None, parallel=4)
    assert c.seeds == (7,) and c.max_actions == 30 and c.parallel == 4
    assert all(e.mode is Mode.UPLOAD_BASELINE for e in c.episode_configs(Mode.UPLOAD_BASELINE))


def test_scripted_rules():
    c = parse_config({"fixture": "qa", "providers": {
        "kind": "scripted", "cloud": [{"pattern": "help", "response": "Plan: {}"}],
        "latency": {"cloud": {"fixed": 0.5}}}})
    b = c.episode_configs()[0].providers
    assert isinstance(b.cloud, ScriptedProvider)
    assert b.cloud.config.latency_model.fixed == 0.5


@pytest.mark.parametrize("rules", [{"pattern": "x"}, [{"pattern": "(", "response": "r"}], [{"pattern": "x"}]])
def test_bad_scripted_rules(rules):
    with pytest.raises(ConfigError, match="providers.cloud"):
        parse_config({"fixture": "qa", "providers": {"kind": "scripted", "cloud": rules}})


def test_remote_endpoints():
    c = parse_config({"fixture": "qa", "providers": {"kind": "remote", "cloud": REMOTE,
                                                     "executor": REMOTE, "observer": REMOTE}})
    assert isinstance(c.episode_configs()[0].providers.observer, RemoteProvider)
    with pytest.raises(ConfigError, match="providers.executor"):
        parse_config({"fixture": "qa", "providers": {"kind": "remote", "cloud": REMOTE, "observer": REMOTE}})
    with pytest.raises(ConfigError, match="providers.cloud"):
        parse_config({"fixture": "qa", "providers": {"kind": "remote", "cloud": {**REMOTE, "api_key": "k"},
                                                     "executor": REMOTE, "observer": REMOTE}})
