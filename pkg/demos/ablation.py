"""How much does replanning buy when the on-device executor mis-grounds steps?

Fifty seeded episodes over every bundled fixture, with the executor missing
its target at the given rate, run once with replanning and once without.

    python demos/ablation.py [--sabotage 0.3] [--episodes 50]
"""

from __future__ import annotations

import argparse

from closedloop.config import parse_config
from closedloop.orchestrator import run_suite
from closedloop.simenv import BUNDLED


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sabotage", type=float, default=0.3)
    parser.add_argument("--episodes", type=int, default=50)
    parser.add_argument("--parallel", type=int, default=4)
    args = parser.parse_args()

    doc = {
        "suite": [{"fixture": name} for name in BUNDLED],
        "episodes": args.episodes,
        "providers": {"kind": "oracle", "sabotage": args.sabotage},
    }
    print(f"{'variant':<22} {'SR':>6} {'MC':>6} {'MT':>8}   failures")
    for label, replanning in (("replanning", True), ("no replanning", False)):
        config = parse_config({**doc, "replanning": replanning})
        report = run_suite(config.episode_configs(), args.parallel, label)
        f = report.figures()
        failures = ", ".join(f"{k} {v}" for k, v in report.failures.items() if v)
        print(f"{label:<22} {f['SR']:>6} {f['MC']:>6} {f['MT']:>8}   {failures or '-'}")


if __name__ == "__main__":
    main()
