"""Headless command line front end.

Exit codes: 0 completed, 2 failed the deadline, 3 failed the budget,
1 any other error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import BrokerConfig
from .engine import TaskFarmingEngine
from .fabric import default_testbed_text
from .model import BrokerError, ExperimentPhase, QoSConstraints, Strategy
from .plan import PlanError, expand_jobs, parse_plan
from .reporting import render_csv, summarize

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEADLINE = 2
EXIT_BUDGET = 3
EXIT_USAGE = 64

_PHASE_EXIT = {
    ExperimentPhase.COMPLETED: EXIT_OK,
    ExperimentPhase.FAILED_DEADLINE: EXIT_DEADLINE,
    ExperimentPhase.FAILED_BUDGET: EXIT_BUDGET,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="broker",
                     description="Deadline/budget-constrained grid resource broker")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment headlessly")
    run.add_argument("plan", help="plan file (.pln)")
    run.add_argument("--testbed", help="testbed document (JSON); default is the shipped grid")
    run.add_argument("--deadline", type=float, default=120.0, metavar="MINUTES")
    run.add_argument("--budget", type=int, default=396000, metavar="GS")
    run.add_argument("--strategy", choices=[s.value for s in Strategy],
                     default=Strategy.COST.value)
    run.add_argument("--no-deadline", action="store_true",
                     help="do not enforce the deadline")
    run.add_argument("--no-budget", action="store_true",
                     help="do not enforce the budget")
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--out", default=".", metavar="DIR",
                     help="directory for journal.jsonl, timeseries.csv, summary.json")
    run.add_argument("--quantum", type=int, default=None, metavar="SECONDS")
    run.add_argument("--nominal-seconds", type=int, default=None,
                     help="simulated CPU demand per job")
    run.add_argument("--interval", type=int, default=60,
                     help="time series sample interval (virtual seconds)")

    resume = sub.add_parser("resume", help="recover a run from its journal and continue")
    resume.add_argument("out", metavar="DIR", help="directory holding journal.jsonl")
    resume.add_argument("--interval", type=int, default=60)

    validate = sub.add_parser("validate", help="parse a plan and report its cardinality")
    validate.add_argument("plan", help="plan file (.pln)")

    serve = sub.add_parser("serve", help="start the HTTP steering service")
    serve.add_argument("--port", type=int,
                       default=int(os.environ.get("BROKER_PORT", "8000")))
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--pace", type=float, default=60.0,
                       help="virtual seconds advanced per real second (0 = unpaced)")

    return parser


def _write_artifacts(out_dir: Path, engine: TaskFarmingEngine, interval: int) -> None:
    records = engine.records
    (out_dir / "timeseries.csv").write_text(render_csv(records, interval))
    summary = summarize(records)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _finish(engine: TaskFarmingEngine, out_dir: Path, interval: int) -> int:
    phase = engine.exp.phase
    _write_artifacts(out_dir, engine, interval)
    summary = summarize(engine.records)
    print(f"phase: {phase.value}")
    print(f"makespan_min: {summary['makespan_min']}")
    print(f"total_cost: {summary['total_cost']}")
    if engine.storage_failed:
        print("journal write failed; run frozen at last durable record",
              file=sys.stderr)
        return EXIT_ERROR
    return _PHASE_EXIT.get(phase, EXIT_ERROR)


def _cmd_run(args: argparse.Namespace) -> int:
    plan_text = Path(args.plan).read_text()
    model = parse_plan(plan_text)
    specs = expand_jobs(model)
    testbed_text = (Path(args.testbed).read_text() if args.testbed
                    else default_testbed_text())
    qos = QoSConstraints(
        deadline_min=args.deadline,
        budget=args.budget,
        strategy=Strategy(args.strategy),
        enforce_deadline=not args.no_deadline,
        enforce_budget=not args.no_budget,
    )
    overrides = {}
    if args.quantum is not None:
        overrides["quantum_s"] = args.quantum
    if args.nominal_seconds is not None:
        overrides["nominal_cpu_seconds"] = args.nominal_seconds
    config = BrokerConfig(**overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal_path = out_dir / "journal.jsonl"
    if journal_path.exists():
        journal_path.unlink()  # a fresh run owns its journal
    engine = TaskFarmingEngine.create(
        specs, qos, testbed_text=testbed_text, seed=args.seed, config=config,
        journal_path=journal_path, experiment_id=Path(args.plan).stem)
    engine.start()
    engine.run()
    engine.writer.close()
    return _finish(engine, out_dir, args.interval)


def _cmd_resume(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    journal_path = out_dir / "journal.jsonl"
    if not journal_path.exists():
        print(f"no journal at {journal_path}", file=sys.stderr)
        return EXIT_ERROR
    engine = TaskFarmingEngine.resume(journal_path)
    if engine.exp.phase is ExperimentPhase.CREATED:
        engine.start()
    engine.run()
    engine.writer.close()
    return _finish(engine, out_dir, args.interval)


def _cmd_validate(args: argparse.Namespace) -> int:
    text = Path(args.plan).read_text()
    try:
        model = parse_plan(text)
    except PlanError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"parameters: {len(model.parameters)}")
    for p in model.parameters:
        print(f"  {p.name}: {len(p.values())} values")
    print(f"jobs: {model.cardinality()}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(pace=args.pace)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "resume": _cmd_resume,
        "validate": _cmd_validate,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"broker: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (BrokerError, PlanError, OSError, ValueError) as exc:
        print(f"broker: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
