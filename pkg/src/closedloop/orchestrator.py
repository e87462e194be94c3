"""The closed loop: plan, then execute/verify/compress/remember per step, replanning on failure.

Every episode writes a trace. The trace is enough to rebuild the episode and
replay it against its own recorded completions.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence, Union

from .clock import Clock, make_clock
from .domain import (
    SUMMARY_TOKEN_CAP,
    EpisodeMetrics,
    FailureClass,
    Instruction,
    MemoryEntry,
    ScreenSummary,
    Verdict,
    VerificationResult,
)
from .executor import NO_VALID_ACTION, GroundingFailed, execute_step
from .observer import SummarizationFailed, VerificationFailed, pre_understand, verify
from .planner import (
    SCREENSHOT_PLACEHOLDER,
    MemoryStore,
    PlanningFailed,
    ReplanningFailed,
    initial_plan,
    memory_append,
    replan,
)
from .protocol import NewPlan, UplinkKind, action_to_dict, make_uplink
from .providers import (
    Completion,
    CompletionRequest,
    Provider,
    ProviderBindings,
    ProviderConfig,
    ProviderError,
    Role,
    Usage,
)
from .simenv import Fixture, TransitionResult, UnknownApp, WorldState, apply_action, current_screen, evaluate_success, reset
from .simenv.fixture import parse_fixture
from .trace import TraceEvent, TraceLog

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    CLOSED_LOOP = "closed-loop"
    UPLOAD_BASELINE = "upload-baseline"


class StopReason:
    ALL_PASSED = "all_passed"
    NO_REPLAN_NEEDED = "no_replan_needed"
    MAX_ACTIONS = "max_actions"
    MAX_REPLANS = "max_replans"
    STEP_FAILED = "step_failed"  # failure with replanning switched off
    PLANNING_FAILED = "planning_failed"
    REPLANNING_FAILED = "replanning_failed"
    VERIFICATION_FAILED = "verification_failed"
    SUMMARIZATION_FAILED = "summarization_failed"

    CLAIMED = (ALL_PASSED, NO_REPLAN_NEEDED)


BindingsFactory = Callable[[str, int], ProviderBindings]


@dataclass(frozen=True)
class EpisodeConfig:
    fixture: Fixture
    task_id: str
    providers: Union[ProviderBindings, BindingsFactory]
    seed: int = 0
    max_total_actions: int = 30
    max_replans: int = 3
    replanning: bool = True
    mode: Mode = Mode.CLOSED_LOOP
    clock: str = "virtual"
    popups: Optional[tuple[str, ...]] = None  # None: the task's own popups
    summary_cap: int = SUMMARY_TOKEN_CAP

    def __post_init__(self) -> None:
        if self.max_total_actions < 1:
            raise ValueError("max_total_actions must be >= 1")
        if self.max_replans < 0:
            raise ValueError("max_replans must be >= 0")
        if self.clock not in ("virtual", "real"):
            raise ValueError(f"unknown clock {self.clock!r}")
        self.fixture.task(self.task_id)  # raises for an unknown task

    @property
    def task(self):
        return self.fixture.task(self.task_id)

    @property
    def enabled_popups(self) -> tuple[str, ...]:
        return self.task.popups if self.popups is None else self.popups

    def bindings(self) -> ProviderBindings:
        if isinstance(self.providers, ProviderBindings):
            return self.providers
        return self.providers(self.task_id, self.seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "fixture": self.fixture.name,
            "task_id": self.task_id,
            "seed": self.seed,
            "max_total_actions": self.max_total_actions,
            "max_replans": self.max_replans,
            "replanning": self.replanning,
            "mode": self.mode.value,
            "clock": self.clock,
            "popups": list(self.enabled_popups),
            "summary_cap": self.summary_cap,
        }


@dataclass
class EpisodeResult:
    task_id: str
    seed: int
    final_state: WorldState
    metrics: EpisodeMetrics
    trace: list[TraceEvent]
    stop_reason: str
    fixture_name: str = ""

    @property
    def success(self) -> bool:
        return self.metrics.success


def request_digest(request: CompletionRequest) -> str:
    blob = json.dumps(request.to_dict(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class _Episode:
    """Mutable bookkeeping for one run; never shared between threads."""

    config: EpisodeConfig
    clock: Clock
    log: TraceLog = field(default_factory=TraceLog)
    mc: int = 0
    mt: int = 0
    uplink_bytes: int = 0
    image_bytes: int = 0
    pending_uplink: Optional[UplinkKind] = None

    def emit(self, kind: str, payload: dict[str, Any], size: Optional[int] = None) -> None:
        self.log.emit(kind, self.clock.now(), payload, size)


class _Channel:
    """Provider wrapper that records every call and bills cloud traffic.

    Cloud calls must announce their uplink kind first, through
    ``episode.pending_uplink``.
    """

    def __init__(self, inner: Provider, role: Role, episode: _Episode):
        self.inner = inner
        self.config: ProviderConfig = inner.config
        self.role = role
        self.ep = episode

    def complete(self, request: CompletionRequest) -> Completion:
        ep = self.ep
        if self.role is Role.CLOUD:
            kind, ep.pending_uplink = ep.pending_uplink, None
            if kind is None:
                raise RuntimeError("cloud call without a declared uplink kind")
            msg = make_uplink(kind, ep.config.task_id, request)
            ep.uplink_bytes += msg.size_bytes
            ep.image_bytes += msg.attached_image_bytes
            ep.emit("uplink", {"kind": kind.value, "wire": msg.to_wire(),
                               "attached_image_bytes": msg.attached_image_bytes}, msg.size_bytes)
        ep.emit("request", {"role": self.role.value, "sha256": request_digest(request),
                            "images": len(request.images), "image_bytes": request.image_bytes})
        try:
            completion = self.inner.complete(request)
        except ProviderError as exc:
            ep.emit("fault", {"role": self.role.value, "error": type(exc).__name__, "detail": str(exc)})
            raise
        ep.clock.advance(completion.synthetic_latency)
        if self.role is Role.CLOUD:
            ep.mc += 1
            ep.mt += completion.usage.total
        ep.emit("completion", {
            "role": self.role.value,
            "text": completion.text,
            "usage": {"prompt_tokens": completion.usage.prompt_tokens,
                      "completion_tokens": completion.usage.completion_tokens},
            "latency": completion.synthetic_latency,
            "retries": completion.retries,
        })
        return completion


def _verify_event(result: VerificationResult, grounding_failed: bool = False) -> dict[str, Any]:
    return {"verdict": result.verdict.value, "failure_summary": result.failure_summary,
            "grounding_failed": grounding_failed}


def run_episode(config: EpisodeConfig) -> EpisodeResult:
    """Run one task to completion. Internal faults end the episode as a classified failure."""
    fixture, task = config.fixture, config.task
    baseline = config.mode is Mode.UPLOAD_BASELINE
    ep = _Episode(config, make_clock(config.clock))
    bindings = config.bindings()
    cloud = _Channel(bindings.cloud, Role.CLOUD, ep)
    executor = _Channel(bindings.executor, Role.DEVICE_EXECUTOR, ep)
    observer = _Channel(bindings.observer, Role.DEVICE_OBSERVER, ep)
    instruction = Instruction(task.task_id, task.instruction)
    state = reset(fixture, config.seed, config.enabled_popups)
    memory = MemoryStore()
    latencies: list[float] = []
    actions = replans = 0
    ep.emit("episode_start", {"config": config.to_dict(), "fixture": json.loads(fixture.document),
                              "instruction": task.instruction})

    def summarize(step_index: int, action=None, result=None) -> Optional[ScreenSummary]:
        """Compress the current screen and remember it; None in baseline mode."""
        if baseline:
            return None
        screen = current_screen(state)
        summary = pre_understand(screen, observer, config.summary_cap)
        ep.emit("compress", {"step": step_index, "screen_id": screen.screen_id, "text": summary.text,
                             "tokens": summary.token_count, "truncated": summary.truncated})
        memory_append(memory, MemoryEntry(step_index, summary, action, result))
        ep.emit("memory_update", {"entries": len(memory)})
        return summary

    stop = None
    try:
        s0 = current_screen(state)
        summary = summarize(0)  # (a)
        ep.pending_uplink = UplinkKind.PLAN_REQUEST  # (b)
        plan = initial_plan(instruction, s0, cloud)
        memory.original_plan = plan
        ep.emit("plan", {"revision": plan.revision, "steps": json.loads(plan.to_step_json())})
        while stop is None:
            failure: Optional[str] = None
            for step in plan.steps:  # (c)
                if actions >= config.max_total_actions:
                    stop = StopReason.MAX_ACTIONS
                    break
                t0 = ep.clock.now()
                screen = current_screen(state)
                action = None
                try:
                    action = execute_step(screen, step, executor)
                except GroundingFailed as exc:
                    ep.emit("fault", {"error": "GroundingFailed", "detail": str(exc), "step": step.index})
                    result = VerificationResult.fail(NO_VALID_ACTION)
                    ep.emit("execute", {"step": step.index, "text": step.step, "action": None})
                    ep.emit("verify", {"step": step.index, **_verify_event(result, grounding_failed=True)})
                if action is not None:
                    ep.emit("execute", {"step": step.index, "text": step.step, "action": action_to_dict(action)})
                    try:
                        transition = apply_action(state, action)
                    except UnknownApp as exc:
                        transition = TransitionResult(state, f"unknown app {exc}", no_effect=True)
                    state = transition.state
                    actions += 1
                    ep.emit("apply", {"step": step.index, "effect": transition.effect,
                                      "no_effect": transition.no_effect, "screen": state.screen,
                                      "popup": state.popup_active})
                    after = current_screen(state)
                    if baseline:
                        ep.pending_uplink = UplinkKind.VERIFY_REQUEST
                        result = verify(after, step.expectation, cloud)
                    else:
                        result = verify(after, step.expectation, observer)
                    ep.emit("verify", {"step": step.index, **_verify_event(result)})
                summary = summarize(step.index, action, result)
                latencies.append(round(ep.clock.now() - t0, 6))
                if not result.passed:
                    failure = result.failure_summary
                    break
            else:
                stop = StopReason.ALL_PASSED
            if stop is not None:
                break
            # (d) a failed step
            if not config.replanning:
                stop = StopReason.STEP_FAILED
                break
            if replans >= config.max_replans:
                stop = StopReason.MAX_REPLANS
                break
            replans += 1
            if baseline:
                ep.pending_uplink = UplinkKind.SCREENSHOT_REPLAN_REQUEST
                outcome = replan(instruction, plan, memory, ScreenSummary.of(SCREENSHOT_PLACEHOLDER),
                                 failure, cloud, screenshot=current_screen(state))
            else:
                ep.pending_uplink = UplinkKind.REPLAN_REQUEST
                outcome = replan(instruction, plan, memory, summary, failure, cloud)
            if isinstance(outcome, NewPlan):
                plan = outcome.plan
                ep.emit("replan", {"outcome": "new_plan", "revision": plan.revision,
                                   "reflection": outcome.reflection,
                                   "steps": json.loads(plan.to_step_json())})
            else:
                ep.emit("replan", {"outcome": "no_replan_needed"})
                stop = StopReason.NO_REPLAN_NEEDED
    except PlanningFailed as exc:
        ep.emit("fault", {"error": "PlanningFailed", "detail": exc.detail})
        stop = StopReason.PLANNING_FAILED
    except ReplanningFailed as exc:
        ep.emit("fault", {"error": "ReplanningFailed", "detail": exc.detail})
        stop = StopReason.REPLANNING_FAILED
    except VerificationFailed as exc:
        ep.emit("fault", {"error": "VerificationFailed", "detail": str(exc)})
        stop = StopReason.VERIFICATION_FAILED
    except SummarizationFailed as exc:
        ep.emit("fault", {"error": "SummarizationFailed", "detail": str(exc)})
        stop = StopReason.SUMMARIZATION_FAILED

    success = evaluate_success(state, task)
    failure_class = None if success else _classify(stop, ep.log.events)
    metrics = EpisodeMetrics(
        success=success,
        mc=ep.mc,
        mt=ep.mt,
        step_latencies=tuple(latencies),
        uplink_bytes=ep.uplink_bytes,
        replans=replans,
        steps_executed=actions,
        failure_class=failure_class,
        image_bytes=ep.image_bytes,
        claimed_success=stop in StopReason.CLAIMED,
    )
    ep.emit("episode_end", {"stop_reason": stop, "success": success, "metrics": metrics.to_dict(),
                            "final_state": state.to_dict()})
    log.info("%s seed=%d: %s (%s) MC=%d MT=%d", task.task_id, config.seed,
             "success" if success else "failure", stop, ep.mc, ep.mt)
    return EpisodeResult(task.task_id, config.seed, state, metrics, ep.log.events, stop, fixture.name)


# -- failure classes ------------------------------------------------------------


def _classify(stop: Optional[str], events: Sequence[TraceEvent]) -> FailureClass:
    if stop in (StopReason.PLANNING_FAILED, StopReason.REPLANNING_FAILED):
        return FailureClass.PLANNING
    if stop in StopReason.CLAIMED or stop in (StopReason.VERIFICATION_FAILED, StopReason.SUMMARIZATION_FAILED):
        return FailureClass.VERIFICATION
    # A cap ended the loop. Blame grounding when the last step went nowhere.
    last_verify = next((e for e in reversed(events) if e.kind == "verify"), None)
    if last_verify is not None and last_verify.payload["verdict"] == Verdict.FAIL.value:
        if last_verify.payload.get("grounding_failed"):
            return FailureClass.VISUAL_GROUNDING
        last_apply = next((e for e in reversed(events[: last_verify.seq]) if e.kind == "apply"), None)
        if last_apply is not None and last_apply.payload["step"] == last_verify.payload["step"] \
                and last_apply.payload["no_effect"]:
            return FailureClass.VISUAL_GROUNDING
    return FailureClass.MAX_STEPS


def classify_failure(trace: Sequence[TraceEvent]) -> Optional[FailureClass]:
    """Failure class of a finished episode's trace; None when it succeeded."""
    end = next((e for e in reversed(trace) if e.kind == "episode_end"), None)
    if end is None:
        raise ValueError("trace has no episode_end event")
    if end.payload["success"]:
        return None
    return _classify(end.payload["stop_reason"], trace)


# -- suites ---------------------------------------------------------------------


def run_suite(configs: Sequence[EpisodeConfig], parallelism: int = 1, label: str = "closed-loop"):
    """Run independent episodes, up to ``parallelism`` at a time; results keep input order."""
    from .report import SuiteReport

    if not configs:
        raise ValueError("a suite needs at least one episode")
    if parallelism <= 1:
        results = [run_episode(c) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_episode, configs))
    return SuiteReport.from_results(results, label)


def with_mode(configs: Sequence[EpisodeConfig], mode: Mode) -> list[EpisodeConfig]:
    return [replace(c, mode=mode) for c in configs]


# -- replay ---------------------------------------------------------------------


class ReplayProvider:
    """Serves one role's recorded completions in order."""

    def __init__(self, role: Role, completions: list[dict[str, Any]]):
        self.config = ProviderConfig(role)
        self._queue = list(completions)
        self._pos = 0

    def complete(self, request: CompletionRequest) -> Completion:
        if self._pos >= len(self._queue):
            raise ProviderError(f"trace holds no further {self.config.role.value} completions")
        rec = self._queue[self._pos]
        self._pos += 1
        usage = Usage(rec["usage"]["prompt_tokens"], rec["usage"]["completion_tokens"])
        return Completion(rec["text"], usage, rec["latency"], rec.get("retries", 0))


@dataclass(frozen=True)
class ReplayReport:
    ok: bool
    recorded: list[TraceEvent]
    replayed: list[TraceEvent]
    first_divergence: Optional[int] = None  # 1-based line number in the trace file
    detail: str = ""


def config_from_trace(events: Sequence[TraceEvent]) -> EpisodeConfig:
    start = events[0]
    if start.kind != "episode_start":
        raise ValueError("trace does not begin with episode_start")
    fixture = parse_fixture(start.payload["fixture"])
    c = start.payload["config"]
    by_role: dict[Role, list[dict[str, Any]]] = {r: [] for r in Role}
    for e in events:
        if e.kind == "completion":
            by_role[Role(e.payload["role"])].append(e.payload)
    bindings = ProviderBindings(
        ReplayProvider(Role.CLOUD, by_role[Role.CLOUD]),
        ReplayProvider(Role.DEVICE_EXECUTOR, by_role[Role.DEVICE_EXECUTOR]),
        ReplayProvider(Role.DEVICE_OBSERVER, by_role[Role.DEVICE_OBSERVER]),
    )
    return EpisodeConfig(
        fixture=fixture,
        task_id=c["task_id"],
        providers=bindings,
        seed=c["seed"],
        max_total_actions=c["max_total_actions"],
        max_replans=c["max_replans"],
        replanning=c["replanning"],
        mode=Mode(c["mode"]),
        clock=c["clock"],
        popups=tuple(c["popups"]),
        summary_cap=c["summary_cap"],
    )


def _comparable(event: TraceEvent, wall_clock: bool) -> dict[str, Any]:
    d = event.to_dict()
    if wall_clock:
        d.pop("t")
        if event.kind == "episode_end":
            d["payload"] = dict(d["payload"], metrics=dict(d["payload"]["metrics"], step_latencies=None))
            d["bytes"] = None
    return d


def replay(events: Sequence[TraceEvent]) -> ReplayReport:
    """Re-run a recorded episode on its own completions and compare event by event."""
    events = list(events)
    try:
        config = config_from_trace(events)
    except (KeyError, TypeError, ValueError) as exc:
        return ReplayReport(False, events, [], 1, f"cannot rebuild the episode: {exc}")
    wall_clock = events[0].payload["config"].get("clock") == "real"
    replayed = run_episode(config).trace
    for i, (a, b) in enumerate(zip(events, replayed)):
        if _comparable(a, wall_clock) != _comparable(b, wall_clock):
            return ReplayReport(False, events, replayed, i + 1,
                                f"recorded {a.kind} event differs from replayed {b.kind} event")
    if len(events) != len(replayed):
        n = min(len(events), len(replayed)) + 1
        return ReplayReport(False, events, replayed, n,
                            f"recorded {len(events)} events, replay produced {len(replayed)}")
    return ReplayReport(True, events, replayed)
