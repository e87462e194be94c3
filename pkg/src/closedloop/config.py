"""Run configuration files: which fixtures and tasks, which seeds, which providers, which caps."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema

from .oracle import OracleProviders
from .orchestrator import EpisodeConfig, Mode
from .providers import (
    CLOUD_DEFAULT,
    EXECUTOR_DEFAULT,
    OBSERVER_DEFAULT,
    LatencyModel,
    ProviderBindings,
    ProviderConfig,
    RemoteEndpoint,
    RemoteProvider,
    Role,
    ScriptedProvider,
)
from .simenv import Fixture, FixtureInvalid, resolve_fixture

_DEFAULT_CONFIGS = {"cloud": CLOUD_DEFAULT, "executor": EXECUTOR_DEFAULT, "observer": OBSERVER_DEFAULT}
_ROLES = {"cloud": Role.CLOUD, "executor": Role.DEVICE_EXECUTOR, "observer": Role.DEVICE_OBSERVER}


class ConfigError(ValueError):
    pass


@lru_cache(maxsize=None)
def config_schema() -> dict[str, Any]:
    return json.loads(resources.files(__package__).joinpath("config.schema.json").read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RunConfig:
    suite: tuple[tuple[Fixture, tuple[str, ...]], ...]
    providers: dict[str, Any]
    seeds: tuple[int, ...] = (0,)
    episodes: Optional[int] = None
    max_actions: int = 30
    max_replans: int = 3
    replanning: bool = True
    mode: Mode = Mode.CLOSED_LOOP
    clock: str = "virtual"
    parallel: int = 1
    summary_cap: int = 150
    popups: Optional[tuple[str, ...]] = None

    def override(self, **changes: Any) -> RunConfig:
        """Apply command-line overrides; ``None`` values leave a field alone."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if "seed" in changes:
            changes["seeds"] = (changes.pop("seed"),)
        return replace(self, **changes)

    def episode_configs(self, mode: Optional[Mode] = None) -> list[EpisodeConfig]:
        """One config per episode, in a fixed order.

        Without ``episodes`` this is every task crossed with every seed. With
        it, episode i runs task i modulo the task count, with seed
        ``seeds[0] + i``.
        """
        bindings = {}
        pairs = []
        for fixture, task_ids in self.suite:
            if fixture.name not in bindings:
                bindings[fixture.name] = build_providers(self.providers, fixture)
            pairs += [(fixture, t) for t in task_ids]
        if self.episodes is None:
            plan = [(f, t, s) for f, t in pairs for s in self.seeds]
        else:
            plan = [(*pairs[i % len(pairs)], self.seeds[0] + i) for i in range(self.episodes)]
        return [
            EpisodeConfig(
                fixture=f,
                task_id=t,
                providers=bindings[f.name],
                seed=s,
                max_total_actions=self.max_actions,
                max_replans=self.max_replans,
                replanning=self.replanning,
                mode=mode or self.mode,
                clock=self.clock,
                popups=self.popups,
                summary_cap=self.summary_cap,
            )
            for f, t, s in plan
        ]


def _latency_configs(options: dict[str, Any]) -> dict[str, ProviderConfig]:
    out = dict(_DEFAULT_CONFIGS)
    for role, lat in options.get("latency", {}).items():
        out[role] = ProviderConfig(_ROLES[role], LatencyModel(lat.get("fixed", 0.0), lat.get("per_token", 0.0)))
    return out


def _scripted(role: str, rules: Any, config: ProviderConfig) -> ScriptedProvider:
    if not isinstance(rules, list):
        raise ConfigError(f"providers.{role}: expected a list of {{pattern, response}} rules")
    provider = ScriptedProvider(config)
    for i, rule in enumerate(rules):
        if not isinstance(rule, dict) or set(rule) != {"pattern", "response"}:
            raise ConfigError(f"providers.{role}[{i}]: a rule needs exactly 'pattern' and 'response'")
        try:
            provider.register(rule["pattern"], rule["response"])
        except Exception as exc:  # re.error and friends
            raise ConfigError(f"providers.{role}[{i}]: {exc}") from None
    return provider


def build_providers(options: dict[str, Any], fixture: Fixture):
    """Bindings (or a per-episode bindings factory) for one fixture."""
    configs = _latency_configs(options)
    kind = options["kind"]
    if kind == "oracle":
        return OracleProviders(fixture, options.get("sabotage", 0.0),
                               configs["cloud"], configs["executor"], configs["observer"])
    if kind == "scripted":
        return ProviderBindings(*(_scripted(r, options.get(r, []), configs[r]) for r in ("cloud", "executor", "observer")))
    providers = []
    for role in ("cloud", "executor", "observer"):
        try:
            endpoint = RemoteEndpoint.from_mapping(options[role])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"providers.{role}: bad remote endpoint ({exc})") from None
        providers.append(RemoteProvider(configs[role], endpoint))
    return ProviderBindings(*providers)


def parse_config(doc: Any, base_dir: Optional[Path] = None) -> RunConfig:
    try:
        jsonschema.validate(doc, config_schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigError(f"{where}: {exc.message}") from None
    entries = doc.get("suite") or [{"fixture": doc["fixture"], "tasks": doc.get("tasks")}]
    suite = []
    for i, entry in enumerate(entries):
        try:
            fixture = resolve_fixture(entry["fixture"], base_dir)
        except FixtureInvalid as exc:
            raise ConfigError(f"fixture {entry['fixture']!r}: {exc}") from None
        task_ids = entry.get("tasks") or [t.task_id for t in fixture.tasks]
        known = {t.task_id for t in fixture.tasks}
        missing = [t for t in task_ids if t not in known]
        if missing:
            raise ConfigError(f"fixture {fixture.name!r} has no task(s) {missing}")
        suite.append((fixture, tuple(task_ids)))
    providers = doc.get("providers", {"kind": "oracle"})
    popups = doc.get("popups")
    config = RunConfig(
        suite=tuple(suite),
        providers=providers,
        seeds=tuple(doc.get("seeds", (0,))),
        episodes=doc.get("episodes"),
        max_actions=doc.get("max_actions", 30),
        max_replans=doc.get("max_replans", 3),
        replanning=doc.get("replanning", True),
        mode=Mode(doc.get("mode", Mode.CLOSED_LOOP.value)),
        clock=doc.get("clock", "virtual"),
        parallel=doc.get("parallel", 1),
        summary_cap=doc.get("summary_cap", 150),
        popups=tuple(popups) if popups is not None else None,
    )
    # Surface provider mistakes as config errors now rather than mid-run.
    if providers["kind"] == "remote":
        for role in ("cloud", "executor", "observer"):
            try:
                RemoteEndpoint.from_mapping(providers[role])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"providers.{role}: bad remote endpoint ({exc})") from None
    else:
        for fixture, _ in config.suite:
            try:
                build_providers(providers, fixture)
            except ValueError as exc:
                raise ConfigError(f"providers: {exc}") from None
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)
