#!/usr/bin/env python3
"""Run the same sweep under both optimization strategies and tabulate
the tradeoff: the cost optimizer packs the cheap cluster and rides the
deadline, the time optimizer buys speed across every resource.

Usage:
    python3 scripts/compare_strategies.py [--jobs 165] [--seed 1] ...
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gridbroker.config import BrokerConfig
from gridbroker.engine import run_experiment
from gridbroker.fabric import default_testbed_text, load_testbed
from gridbroker.model import QoSConstraints, Strategy
from gridbroker.plan import JobSpec
from gridbroker.reporting import summarize


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--jobs", type=int, default=165)
    parser.add_argument("--nominal-seconds", type=int, default=300)
    parser.add_argument("--deadline", type=float, default=120.0,
                        metavar="MINUTES")
    parser.add_argument("--budget", type=int, default=396000)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--testbed", type=Path, default=None,
                        help="testbed JSON; default is the shipped grid")
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    testbed = (args.testbed.read_text() if args.testbed
               else default_testbed_text())
    width = len(str(args.jobs))
    specs = [JobSpec(id=f"run{i:0{width}d}", binding={"i": str(i)},
                     command=f"calc -i {i}",
                     nominal_cpu_seconds=args.nominal_seconds)
             for i in range(1, args.jobs + 1)]
    resources = load_testbed(testbed)

    results = {}
    for strategy in (Strategy.COST, Strategy.TIME):
        qos = QoSConstraints(deadline_min=args.deadline, budget=args.budget,
                             strategy=strategy)
        engine = run_experiment(specs, qos, testbed_text=testbed,
                                seed=args.seed, config=BrokerConfig())
        results[strategy] = engine

    print(f"{args.jobs} jobs x {args.nominal_seconds}s nominal, "
          f"deadline {args.deadline:g} min, budget {args.budget}, "
          f"seed {args.seed}\n")
    print(f"{'':24}" + "".join(f"{s.value:>12}" for s in results))
    rows = []
    for strategy, engine in results.items():
        summary = summarize(engine.records)
        rows.append((engine.exp.phase.value, summary["makespan_min"],
                     summary["total_cost"], summary["per_resource_jobs"]))
    print(f"{'phase':24}" + "".join(f"{r[0]:>12}" for r in rows))
    print(f"{'makespan (min)':24}" + "".join(f"{r[1]:>12.2f}" for r in rows))
    print(f"{'total cost':24}" + "".join(f"{r[2]:>12}" for r in rows))
    print()
    print("jobs done per resource:")
    for res in resources:
        counts = [r[3].get(res.id, 0) for r in rows]
        price = res.policy.base_price
        line = f"  {res.id:22}" + "".join(f"{c:>12}" for c in counts)
        print(f"{line}   (price {price}, {res.node_count} nodes)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
