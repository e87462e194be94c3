"""Device-side observation: step verification and screen compression into short text."""

from __future__ import annotations

import logging
import re

from . import prompts
from .domain import SUMMARY_TOKEN_CAP, Screen, ScreenSummary, VerificationResult, count_tokens
from .protocol import ParseError, parse_verdict
from .providers import CompletionRequest, ImageSegment, Provider, ProviderError, TextSegment

log = logging.getLogger(__name__)


class SummarizationFailed(RuntimeError):
    pass


class VerificationFailed(RuntimeError):
    pass


# A sentence ends at . ! or ? followed by whitespace or the end of the text.
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def truncate_summary(text: str, cap: int = SUMMARY_TOKEN_CAP) -> tuple[str, bool]:
    """Cut ``text`` at the last sentence boundary that fits within ``cap`` tokens.

    Falls back to a hard byte cut when not even the first sentence fits.
    """
    text = text.strip()
    if count_tokens(text) <= cap:
        return text, False
    best = ""
    for m in _SENTENCE_END.finditer(text):
        candidate = text[: m.end()]
        if count_tokens(candidate) > cap:
            break
        best = candidate
    if not best:
        raw = text.encode("utf-8", "surrogatepass")[: cap * 4]
        best = raw.decode("utf-8", "ignore").rstrip()
    return best, True


def build_summary_prompt(screen: Screen) -> CompletionRequest:
    return CompletionRequest(
        system=prompts.load("preunderstand_system"),
        user_segments=(ImageSegment(screen.payload, screen.payload_bytes), TextSegment(prompts.load("preunderstand_user"))),
    )


def pre_understand(screen: Screen, provider: Provider, cap: int = SUMMARY_TOKEN_CAP) -> ScreenSummary:
    try:
        completion = provider.complete(build_summary_prompt(screen))
    except ProviderError as exc:
        raise SummarizationFailed(f"provider error: {exc}") from exc
    if not completion.text.strip():
        raise SummarizationFailed(f"empty summary for screen {screen.screen_id}")
    text, truncated = truncate_summary(completion.text, cap)
    if truncated:
        log.info("summary of %s truncated from %d to %d tokens",
                 screen.screen_id, count_tokens(completion.text), count_tokens(text))
    return ScreenSummary.of(text, truncated)


def build_verify_prompt(screen: Screen, expectation: str) -> CompletionRequest:
    return CompletionRequest(
        system=prompts.load("observe_system"),
        user_segments=(
            ImageSegment(screen.payload, screen.payload_bytes),
            TextSegment(prompts.render("observe_user", expectation=expectation)),
        ),
    )


def verify(screen: Screen, expectation: str, provider: Provider) -> VerificationResult:
    if not expectation.strip():
        raise ValueError("expectation must be non-empty")
    try:
        completion = provider.complete(build_verify_prompt(screen, expectation))
    except ProviderError as exc:
        raise VerificationFailed(f"provider error: {exc}") from exc
    try:
        return parse_verdict(completion.text)
    except ParseError as exc:
        raise VerificationFailed(str(exc)) from exc
