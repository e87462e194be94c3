"""Device-side grounding of a plan step into one concrete action."""

from __future__ import annotations

import logging

from .domain import Action, PlanStep, Screen, validate_action
from .protocol import ParseError, parse_action
from .providers import CompletionRequest, ImageSegment, Provider, ProviderError, TextSegment

log = logging.getLogger(__name__)

GROUNDING_SYSTEM = (
    "You operate an Android phone. The attached screenshot is a JSON listing of the visible "
    "elements with their pixel bounds. Reply with one action call and nothing else:\n"
    "TAP(x,y)\nLONG_PRESS(x,y)\nSWIPE(x1,y1,x2,y2)\nINPUT_TEXT(\"text\")\nDELETE_TEXT()\n"
    "ENTER()\nOPEN_APP(\"name\")\nANSWER(\"text\")\nPRESS_BACK()\nPRESS_HOME()\n"
    "Reply NONE if the step cannot be carried out on this screen."
)

NO_VALID_ACTION = "executor produced no valid action"


class GroundingFailed(RuntimeError):
    def __init__(self, text: str, reason: str = ""):
        super().__init__(f"{NO_VALID_ACTION}: {reason or text[:80]!r}")
        self.text = text
        self.reason = reason


def build_grounding_prompt(screen: Screen, step: PlanStep) -> CompletionRequest:
    # The expectation is deliberately withheld: the executor acts on the step alone.
    instruction = f"Execute: {step.step.rstrip().rstrip('.')}. Respond with exactly one action call."
    return CompletionRequest(
        system=GROUNDING_SYSTEM,
        user_segments=(ImageSegment(screen.payload, screen.payload_bytes), TextSegment(instruction)),
    )


def execute_step(screen: Screen, step: PlanStep, provider: Provider) -> Action:
    """Ground ``step`` on ``screen``. The result always passes validate_action for that screen."""
    try:
        completion = provider.complete(build_grounding_prompt(screen, step))
    except ProviderError as exc:
        raise GroundingFailed("", f"provider error: {exc}") from exc
    try:
        action = parse_action(completion.text.strip())
    except ParseError as exc:
        raise GroundingFailed(completion.text, str(exc)) from exc
    validity = validate_action(action, screen)
    if not validity.ok:
        raise GroundingFailed(completion.text, validity.value)
    log.debug("step %d grounded to %s", step.index, action)
    return action
