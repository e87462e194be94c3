"""Suite-level figures, written as JSON, Markdown and CSV from one set of rounded numbers."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence, Union

from .domain import FailureClass
from .trace import write_trace

COLUMNS = ("SR", "MC", "MT", "Latency", "Uplink(kB)")
_DECIMALS = {"SR": 1, "MC": 2, "MT": 1, "Latency": 3, "Uplink(kB)": 2}

BASELINE_LABEL = "emulated upload baseline"
TOKEN_DISCLAIMER = (
    "Token figures use a proxy tokenizer (ceil(UTF-8 bytes / 4), 1400 tokens per attached image); "
    "ratios indicate direction and rough size, not provider billing."
)


def _fmt(column: str, value: float) -> str:
    return f"{value:.{_DECIMALS[column]}f}"


@dataclass(frozen=True)
class EpisodeRow:
    fixture: str
    task_id: str
    seed: int
    success: bool
    mc: int
    mt: int
    mean_latency: float
    uplink_bytes: int
    image_bytes: int
    replans: int
    actions: int
    stop_reason: str
    failure_class: str

    @classmethod
    def of(cls, result) -> EpisodeRow:
        m = result.metrics
        return cls(
            fixture=result.fixture_name,
            task_id=result.task_id,
            seed=result.seed,
            success=m.success,
            mc=m.mc,
            mt=m.mt,
            mean_latency=round(m.mean_step_latency, 6),
            uplink_bytes=m.uplink_bytes,
            image_bytes=m.image_bytes,
            replans=m.replans,
            actions=m.steps_executed,
            stop_reason=result.stop_reason or "",
            failure_class=m.failure_class.value if m.failure_class else "",
        )


@dataclass(frozen=True)
class SuiteReport:
    label: str
    rows: tuple[EpisodeRow, ...]
    # Raw means before rounding; kept for ratio computations.
    raw: dict[str, float]
    failures: dict[str, int]
    results: list = field(default_factory=list, compare=False, repr=False)

    @classmethod
    def from_results(cls, results: Sequence, label: str = "closed-loop") -> SuiteReport:
        if not results:
            raise ValueError("no episodes to report")
        n = len(results)
        latencies = [x for r in results for x in r.metrics.step_latencies]
        raw = {
            "SR": 100.0 * sum(r.metrics.success for r in results) / n,
            "MC": sum(r.metrics.mc for r in results) / n,
            "MT": sum(r.metrics.mt for r in results) / n,
            "Latency": sum(latencies) / len(latencies) if latencies else 0.0,
            "Uplink(kB)": sum(r.metrics.uplink_bytes for r in results) / n / 1000.0,
        }
        failures = {fc.value: 0 for fc in FailureClass}
        for r in results:
            if r.metrics.failure_class is not None:
                failures[r.metrics.failure_class.value] += 1
        return cls(label, tuple(EpisodeRow.of(r) for r in results), raw, failures, list(results))

    @property
    def episodes(self) -> int:
        return len(self.rows)

    def figures(self) -> dict[str, str]:
        """The rounded figures every output format prints."""
        return {c: _fmt(c, self.raw[c]) for c in COLUMNS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "episodes": self.episodes,
            "figures": {k: float(v) for k, v in self.figures().items()},
            "failures": dict(self.failures),
            "rows": [r.__dict__ for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def to_markdown(self) -> str:
        f = self.figures()
        lines = [
            f"## {self.label}",
            "",
            "| Suite | Episodes | " + " | ".join(COLUMNS) + " |",
            "|---|---|" + "---|" * len(COLUMNS),
            f"| {self.label} | {self.episodes} | " + " | ".join(f[c] for c in COLUMNS) + " |",
            "",
            "Failures: " + ", ".join(f"{k} {v}" for k, v in self.failures.items()),
            "",
            "| Fixture | Task | Seed | Success | MC | MT | Latency | Uplink(kB) | Replans | Actions | Failure |",
            "|---|---|---|---|---|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            lines.append(
                f"| {r.fixture} | {r.task_id} | {r.seed} | {'yes' if r.success else 'no'} | {r.mc} | {r.mt} "
                f"| {_fmt('Latency', r.mean_latency)} | {_fmt('Uplink(kB)', r.uplink_bytes / 1000)} "
                f"| {r.replans} | {r.actions} | {r.failure_class or '-'} |"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "episodes", *COLUMNS, *self.failures])
        f = self.figures()
        w.writerow([self.label, self.episodes, *(f[c] for c in COLUMNS), *self.failures.values()])
        return buf.getvalue()

    def episodes_csv(self) -> str:
        buf = io.StringIO()
        names = list(EpisodeRow.__dataclass_fields__)
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r.__dict__)
        return buf.getvalue()

    def write(self, out_dir: Union[str, Path], stem: str = "report", traces: bool = True) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        (out / f"{stem}.md").write_text(self.to_markdown(), encoding="utf-8")
        (out / f"{stem}.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / f"{stem}_episodes.csv").write_text(self.episodes_csv(), encoding="utf-8")
        if traces and self.results:
            tdir = out / "traces"
            tdir.mkdir(exist_ok=True)
            for r in self.results:
                write_trace(tdir / trace_name(r.fixture_name, r.task_id, r.seed), r.trace)
        return out


def trace_name(fixture: str, task_id: str, seed: int) -> str:
    return f"{fixture}__{task_id}__seed{seed}.jsonl"


@dataclass(frozen=True)
class Comparison:
    closed: SuiteReport
    baseline: SuiteReport

    @property
    def uplink_ratio(self) -> float:
        return self.baseline.raw["Uplink(kB)"] / self.closed.raw["Uplink(kB)"]

    @property
    def mt_ratio(self) -> float:
        return self.baseline.raw["MT"] / self.closed.raw["MT"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "closed_loop": self.closed.to_dict(),
            "baseline": self.baseline.to_dict(),
            "uplink_ratio": round(self.uplink_ratio, 2),
            "mt_ratio": round(self.mt_ratio, 2),
            "note": TOKEN_DISCLAIMER,
        }

    def to_markdown(self) -> str:
        lines = ["| Mode | " + " | ".join(COLUMNS) + " |", "|---|" + "---|" * len(COLUMNS)]
        for rep in (self.closed, self.baseline):
            f = rep.figures()
            lines.append(f"| {rep.label} | " + " | ".join(f[c] for c in COLUMNS) + " |")
        lines += [
            "",
            f"Uplink reduction: {self.uplink_ratio:.2f}x",
            f"MT reduction: {self.mt_ratio:.2f}x",
            "",
            TOKEN_DISCLAIMER,
        ]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Union[str, Path]) -> Path:
        out = Path(out_dir)
        self.closed.write(out / "closed-loop")
        self.baseline.write(out / "upload-baseline")
        (out / "comparison.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "comparison.md").write_text(self.to_markdown(), encoding="utf-8")
        return out
