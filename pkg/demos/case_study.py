"""Walk through one episode where a permission dialog interrupts contact creation.

The planner sees the home screen once, writes a plan, and the device works
through it. When the dialog appears the observer's verdict fails, the planner
gets a text description of the screen (no image), and the new plan dismisses
the dialog before carrying on.

    python demos/case_study.py
"""

from __future__ import annotations

import argparse

from closedloop.oracle import OracleProviders
from closedloop.orchestrator import EpisodeConfig, run_episode
from closedloop.simenv import load_bundled


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--task", default="add_contact_permission")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    fx = load_bundled("contacts")
    result = run_episode(EpisodeConfig(fx, args.task, OracleProviders(fx), seed=args.seed))

    for e in result.trace:
        p = e.payload
        if e.kind == "plan":
            print(f"[t={e.t:5.1f}s] plan with {len(p['steps'])} steps")
        elif e.kind == "execute":
            action = p["action"]["text"] if p["action"] else "(none)"
            print(f"[t={e.t:5.1f}s]   step {p['step']}: {p['text']:<45} {action}")
        elif e.kind == "verify" and p["verdict"] != "Pass":
            print(f"[t={e.t:5.1f}s]   verdict Fail: {p['failure_summary']}")
        elif e.kind == "uplink":
            print(f"[t={e.t:5.1f}s] uplink {p['kind']}: {e.bytes} bytes ({p['attached_image_bytes']} of image)")
        elif e.kind == "replan":
            print(f"[t={e.t:5.1f}s] replan -> {p['outcome']}")

    m = result.metrics
    print()
    print(f"success={m.success}  MC={m.mc}  MT={m.mt}  replans={m.replans}  actions={m.steps_executed}")
    print(f"uplink {m.uplink_bytes} bytes, of which {m.image_bytes} are the single starting screenshot")


if __name__ == "__main__":
    main()
