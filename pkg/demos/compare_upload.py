"""Run the long contacts tasks in both modes and print the cost of shipping screenshots.

The closed loop uploads one screenshot per episode and text afterwards. The
emulated baseline sends a screenshot with every verification and replan.
Token figures come from a proxy tokenizer, so read the ratios as direction
and rough size only.

    python demos/compare_upload.py [--out DIR]
"""

from __future__ import annotations

import argparse

from closedloop.config import parse_config
from closedloop.orchestrator import Mode, run_suite
from closedloop.report import BASELINE_LABEL, Comparison


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", help="also write reports and traces here")
    parser.add_argument("--sabotage", type=float, default=0.0, help="executor mis-grounding rate")
    args = parser.parse_args()

    config = parse_config({
        "fixture": "contacts",
        "tasks": ["add_contact_full", "add_contact_work"],
        "seeds": [0, 1, 2],
        "providers": {"kind": "oracle", "sabotage": args.sabotage},
    })
    closed = run_suite(config.episode_configs(Mode.CLOSED_LOOP), label="closed-loop")
    baseline = run_suite(config.episode_configs(Mode.UPLOAD_BASELINE), label=BASELINE_LABEL)
    comparison = Comparison(closed, baseline)
    print(comparison.to_markdown(), end="")
    if args.out:
        comparison.write(args.out)
        print(f"\nreports written under {args.out}")


if __name__ == "__main__":
    main()
