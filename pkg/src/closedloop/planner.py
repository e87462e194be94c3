"""Cloud-side planning: the initial plan from S0, episode memory, and replanning from text."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from . import prompts
from .domain import (
    Instruction,
    MemoryEntry,
    Plan,
    Screen,
    ScreenSummary,
    UnknownActionKeyword,
    canonical_action_kind,
)
from .protocol import NewPlan, ParseError, ReplanOutcome, parse_planner_response, parse_replanner_response
from .providers import CompletionRequest, ImageSegment, Provider, ProviderError, TextSegment

log = logging.getLogger(__name__)

# Stands in for the screen description when the upload baseline sends the
# screenshot itself along with a replanning request.
SCREENSHOT_PLACEHOLDER = "(see attached screenshot)"


class PlanningFailed(RuntimeError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ReplanningFailed(RuntimeError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


@dataclass
class MemoryStore:
    """Screen summaries seen so far in one episode; entry 0 is the start screen."""

    entries: list[MemoryEntry] = field(default_factory=list)
    original_plan: Optional[Plan] = None
    current_revision: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def memory_append(store: MemoryStore, entry: MemoryEntry) -> None:
    store.entries.append(entry)


def memory_descriptions(store: MemoryStore) -> str:
    """One summary per line, oldest first; empty text for an empty store."""
    return "\n".join(e.summary.text for e in store.entries)


def _check_keywords(plan: Plan) -> None:
    for step in plan.steps:
        canonical_action_kind(step.keyword)


def build_initial_prompt(instruction: Instruction, screen: Screen) -> CompletionRequest:
    return CompletionRequest(
        system=prompts.load("plan_system"),
        user_segments=(
            ImageSegment(screen.payload, screen.payload_bytes),
            TextSegment(prompts.render("plan_user", instruction=instruction.goal)),
        ),
    )


def initial_plan(instruction: Instruction, screen: Screen, provider: Provider) -> Plan:
    """Ask the cloud model for a plan covering the whole task. Exactly one provider call."""
    request = build_initial_prompt(instruction, screen)
    try:
        completion = provider.complete(request)
    except ProviderError as exc:
        raise PlanningFailed(f"provider error: {exc}") from exc
    try:
        plan = parse_planner_response(completion.text).plan
        _check_keywords(plan)
    except (ParseError, UnknownActionKeyword) as exc:
        raise PlanningFailed(str(exc)) from exc
    log.debug("initial plan for %s has %d steps", instruction.task_id, len(plan.steps))
    return plan


def build_replan_prompt(
    instruction: Instruction,
    prev_plan: Plan,
    memory: MemoryStore,
    current_summary: ScreenSummary,
    failure_summary: str,
    screenshot: Optional[Screen] = None,
) -> CompletionRequest:
    """Text-only replanning request.

    ``screenshot`` exists for the emulated upload baseline only: the image is
    attached and the description slot says so.
    """
    if not failure_summary.strip():
        raise ValueError("failure_summary must be non-empty")
    text = prompts.render(
        "replan_user",
        instruction=instruction.goal,
        original_plan=prev_plan.to_step_json(),
        descriptions=memory_descriptions(memory),
        description=SCREENSHOT_PLACEHOLDER if screenshot is not None else current_summary.text,
        summary=failure_summary,
    )
    segments: tuple = (TextSegment(text),)
    if screenshot is not None:
        segments = (ImageSegment(screenshot.payload, screenshot.payload_bytes),) + segments
    return CompletionRequest(system=prompts.load("replan_system"), user_segments=segments)


def replan(
    instruction: Instruction,
    prev_plan: Plan,
    memory: MemoryStore,
    current_summary: ScreenSummary,
    failure_summary: str,
    provider: Provider,
    screenshot: Optional[Screen] = None,
) -> ReplanOutcome:
    """Reflect on the failure and return a fresh plan, or NoReplanNeeded. One provider call."""
    request = build_replan_prompt(instruction, prev_plan, memory, current_summary, failure_summary, screenshot)
    try:
        completion = provider.complete(request)
    except ProviderError as exc:
        raise ReplanningFailed(f"provider error: {exc}") from exc
    try:
        outcome = parse_replanner_response(completion.text, prev_plan.revision + 1)
        if isinstance(outcome, NewPlan):
            _check_keywords(outcome.plan)
    except (ParseError, UnknownActionKeyword) as exc:
        raise ReplanningFailed(str(exc)) from exc
    if isinstance(outcome, NewPlan):
        memory.current_revision = outcome.plan.revision
    return outcome
