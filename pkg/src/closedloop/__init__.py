"""Closed-loop device/cloud mobile agent with a deterministic simulated phone.

A cloud planner writes the whole plan from the first screenshot. Device-side
agents ground each step, check its outcome, and compress every new screen
into a short text summary. When a step fails, the planner replans from that
text alone.
"""

from .domain import EpisodeMetrics, FailureClass, Plan, PlanStep, count_tokens
from .orchestrator import EpisodeConfig, EpisodeResult, Mode, classify_failure, replay, run_episode, run_suite
from .oracle import OracleProviders
from .report import Comparison, SuiteReport

__version__ = "0.1.0"

__all__ = [
    "Comparison",
    "EpisodeConfig",
    "EpisodeMetrics",
    "EpisodeResult",
    "FailureClass",
    "Mode",
    "OracleProviders",
    "Plan",
    "PlanStep",
    "SuiteReport",
    "classify_failure",
    "count_tokens",
    "replay",
    "run_episode",
    "run_suite",
]
