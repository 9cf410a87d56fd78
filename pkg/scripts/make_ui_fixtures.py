#!/usr/bin/env python3
"""Regenerate the frontend test fixtures from a real broker run.

The UI test suite checks that folding the event stream client-side
reproduces the server's reports byte for byte, so the fixtures must come
from the engine itself, never be hand-written. The scenario is small but
deliberately awkward: a mid-run QoS patch (so a QoSChanged record lands
between marks) and a finish instant off the sampling grid (so the
final-mark rule differs between intervals).

Usage:
    python3 scripts/make_ui_fixtures.py [--out frontend/tests/fixtures]
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gridbroker.engine import TaskFarmingEngine
from gridbroker.journal import KIND_QUANTUM_MARK
from gridbroker.model import QoSConstraints, Strategy
from gridbroker.plan import JobSpec
from gridbroker.reporting import render_csv, summarize

SEED = 3
TESTBED = json.dumps({"resources": [
    {"id": "farm", "organization": "test", "nodes": 3, "speed": 1.0,
     "price": {"model": "posted_price", "base_price": 2}},
    {"id": "spare", "organization": "test", "nodes": 1, "speed": 1.0,
     "price": {"model": "posted_price", "base_price": 5}},
]})


def specs(n=8, nominal=61):
    return [JobSpec(id=f"job{i:02d}", binding={"i": i},
                    command=f"run -i {i}", nominal_cpu_seconds=nominal)
            for i in range(1, n + 1)]


def qos():
    return QoSConstraints(deadline_min=60, budget=10**6,
                          strategy=Strategy.COST)


def build(patch_at=None):
    engine = TaskFarmingEngine.create(specs(), qos(), testbed_text=TESTBED,
                                      seed=SEED)
    engine.start()
    if patch_at is not None:
        engine.schedule_command(patch_at, "qos",
                                patch={"budget": 1_500_000})
    engine.run()
    return engine


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--out", type=Path,
        default=Path(__file__).resolve().parents[1]
        / "frontend" / "tests" / "fixtures")
    args = parser.parse_args(argv)

    # probe run to find an instant where the experiment is demonstrably
    # live, then redo the run with the QoS patch scheduled there
    probe = build()
    running = next(r for r in probe.records
                   if r.kind == KIND_QUANTUM_MARK
                   and r.payload["phase"] == "running")
    engine = build(patch_at=running.t + 5)

    records = engine.records
    origin = records[0].t
    final = next(r for r in reversed(records)
                 if r.kind == KIND_QUANTUM_MARK)
    if (final.t - origin) % 60 == 0:
        raise SystemExit("scenario finished on the sampling grid; "
                         "tweak the nominal runtime so the final mark "
                         "stays misaligned")

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "journal.jsonl").write_text(
        "".join(r.to_json() + "\n" for r in records))
    (out / "timeseries60.csv").write_text(render_csv(records, 60))
    (out / "timeseries120.csv").write_text(render_csv(records, 120))
    (out / "summary.json").write_text(
        json.dumps(summarize(records), sort_keys=True, indent=2) + "\n")

    print(f"wrote {len(records)} records to {out}")
    print(f"phase: {engine.exp.phase.value}, "
          f"qos patch at t={running.t + 5}, final mark t={final.t}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
