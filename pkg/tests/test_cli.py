"""End-to-end command line runs, in process via main(argv)."""

import json

import pytest

from gridbroker.cli import (EXIT_BUDGET, EXIT_DEADLINE, EXIT_ERROR, EXIT_OK,
                            EXIT_USAGE, main)
from gridbroker.journal import KIND_EXPERIMENT_CREATED, read_journal

from helpers import testbed_text

PLAN = """\
parameter x range from 1 to 6 step 1

task main
  execute calc -x $x
endtask
"""


@pytest.fixture
def plan_file(tmp_path):
    path = tmp_path / "sweep.pln"
    path.write_text(PLAN)
    return path


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grid.testbed"
    path.write_text(testbed_text([("farm", 3, 2), ("spare", 1, 5)]))
    return path


def run_args(plan_file, grid_file, out, **extra):
    args = ["run", str(plan_file), "--testbed", str(grid_file),
            "--out", str(out), "--nominal-seconds", "60",
            "--deadline", "60"]
    for key, val in extra.items():
        args.append(f"--{key.replace('_', '-')}")
        if val is not None:
            args.append(str(val))
    return args


def test_run_writes_artifacts_and_reports(tmp_path, plan_file, grid_file,
                                          capsys):
    out = tmp_path / "out"
    assert main(run_args(plan_file, grid_file, out)) == EXIT_OK
    stdout = capsys.readouterr().out
    assert "phase: completed" in stdout
    assert "makespan_min:" in stdout
    assert "total_cost:" in stdout
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"makespan_min", "total_cost",
                            "per_resource_jobs"}
    assert sum(summary["per_resource_jobs"].values()) == 6
    csv = (out / "timeseries.csv").read_text()
    assert csv.startswith("t_min,resource,executing,done_cum,spent\n")
    records = read_journal(out / "journal.jsonl")
    assert records[0].kind == KIND_EXPERIMENT_CREATED
    assert records[0].payload["experiment"] == "sweep"


def test_identical_invocations_are_byte_identical(tmp_path, plan_file,
                                                  grid_file):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(run_args(plan_file, grid_file, out_a, seed=7)) == EXIT_OK
    assert main(run_args(plan_file, grid_file, out_b, seed=7)) == EXIT_OK
    for name in ("journal.jsonl", "timeseries.csv", "summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_the_seed_actually_reaches_the_simulation(tmp_path, plan_file,
                                                  grid_file):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(run_args(plan_file, grid_file, out_a, seed=7))
    main(run_args(plan_file, grid_file, out_b, seed=8))
    assert (out_a / "journal.jsonl").read_bytes() != \
        (out_b / "journal.jsonl").read_bytes()


def test_rerun_into_the_same_directory_replaces_the_journal(
        tmp_path, plan_file, grid_file):
    out = tmp_path / "out"
    main(run_args(plan_file, grid_file, out))
    first = (out / "journal.jsonl").read_bytes()
    main(run_args(plan_file, grid_file, out))
    assert (out / "journal.jsonl").read_bytes() == first


def test_hopeless_deadline_exits_2(tmp_path, plan_file, capsys):
    grid = tmp_path / "one.testbed"
    grid.write_text(testbed_text([("lone", 1, 1)]))
    code = main(["run", str(plan_file), "--testbed", str(grid),
                 "--out", str(tmp_path / "out"), "--nominal-seconds", "60",
                 "--deadline", "4"])
    assert code == EXIT_DEADLINE
    assert "phase: failed_deadline" in capsys.readouterr().out


def test_hopeless_budget_exits_3(tmp_path, plan_file, grid_file, capsys):
    code = main(run_args(plan_file, grid_file, tmp_path / "out", budget=10))
    assert code == EXIT_BUDGET
    assert "phase: failed_budget" in capsys.readouterr().out


def test_no_deadline_flag_lets_a_late_run_finish(tmp_path, plan_file,
                                                 capsys):
    grid = tmp_path / "one.testbed"
    grid.write_text(testbed_text([("lone", 1, 1)]))
    code = main(["run", str(plan_file), "--testbed", str(grid),
                 "--out", str(tmp_path / "out"), "--nominal-seconds", "60",
                 "--deadline", "4", "--no-deadline"])
    assert code == EXIT_OK
    assert "phase: completed" in capsys.readouterr().out


def test_missing_plan_is_a_plain_error(tmp_path, capsys):
    code = main(["run", str(tmp_path / "nope.pln")])
    assert code == EXIT_ERROR
    assert "broker:" in capsys.readouterr().err


def test_bad_plan_text_fails_both_run_and_validate(tmp_path, capsys):
    bad = tmp_path / "bad.pln"
    bad.write_text("parameter x range from 5 to 1 step 1\n")
    assert main(["validate", str(bad)]) == EXIT_ERROR
    assert "invalid plan:" in capsys.readouterr().err
    assert main(["run", str(bad), "--out", str(tmp_path)]) == EXIT_ERROR


def test_usage_errors_exit_64():
    with pytest.raises(SystemExit) as exc:
        main(["run"])  # plan argument missing
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_validate_reports_plan_shape(tmp_path, capsys):
    plan = tmp_path / "two.pln"
    plan.write_text(
        "parameter x range from 1 to 3 step 1\n"
        "parameter kind select anyof \"a\" \"b\" \"c\" \"d\"\n"
        "\n"
        "task main\n"
        "  execute calc -x $x -k $kind\n"
        "endtask\n")
    assert main(["validate", str(plan)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "parameters: 2" in out
    assert "x: 3 values" in out
    assert "kind: 4 values" in out
    assert "jobs: 12" in out


def test_resume_finishes_a_truncated_run(tmp_path, plan_file, grid_file,
                                         capsys):
    out = tmp_path / "out"
    assert main(run_args(plan_file, grid_file, out)) == EXIT_OK
    journal = out / "journal.jsonl"
    lines = journal.read_text().splitlines(keepends=True)
    journal.write_text("".join(lines[:len(lines) // 2]))
    capsys.readouterr()
    assert main(["resume", str(out)]) == EXIT_OK
    assert "phase: completed" in capsys.readouterr().out
    resumed = json.loads((out / "summary.json").read_text())
    assert sum(resumed["per_resource_jobs"].values()) == 6
    records = read_journal(journal)
    assert len(records) > len(lines) // 2


def test_resume_with_no_journal_is_an_error(tmp_path, capsys):
    assert main(["resume", str(tmp_path)]) == EXIT_ERROR
    assert "no journal" in capsys.readouterr().err
