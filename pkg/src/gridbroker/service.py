"""HTTP steering service.

Each experiment gets a runner thread that owns its engine end to end: the
thread advances the simulation (paced against wall time or flat out) and
executes steering commands from a queue, so the engine keeps its
single-writer guarantee while the HTTP layer stays freely concurrent.
Event streaming is read-only fan-out over the journal's record list.
"""

from __future__ import annotations

import itertools
import queue
import threading
import time
from concurrent.futures import Future
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from . import __version__
from .config import BrokerConfig
from .engine import (InvalidPhase, JobExecuting, TaskFarmingEngine,
                     UnknownJob)
from .fabric import ConfigError, default_testbed_text
from .journal import KIND_PHASE_CHANGED, StorageFailure
from .model import (BrokerError, ExperimentPhase, ExperimentTerminal,
                    JobState, QoSConstraints, Strategy, TERMINAL_PHASES)
from .plan import JobSpec, PlanError, expand_jobs, parse_plan
from .reporting import NoData, render_csv

_POLL_S = 0.02
_ADVANCE_BATCH = 500
_CALL_TIMEOUT_S = 10.0


class ExperimentRunner(threading.Thread):
    """Single writer for one experiment: advances the simulation and
    serializes every command and stateful read."""

    def __init__(self, engine: TaskFarmingEngine, pace: float):
        super().__init__(daemon=True, name=f"runner-{engine.exp.id}")
        self.engine = engine
        self.pace = pace
        self.commands: "queue.Queue[tuple[str, dict, Future]]" = queue.Queue()
        self.deleted = threading.Event()
        self._halt = threading.Event()
        self._real0 = time.monotonic()
        self._virt0 = engine.sim.clock

    # -- client side ---------------------------------------------------------

    def submit(self, op: str, **args: Any) -> Future:
        fut: Future = Future()
        self.commands.put((op, args, fut))
        return fut

    def call(self, op: str, **args: Any) -> Any:
        return self.submit(op, **args).result(timeout=_CALL_TIMEOUT_S)

    def shutdown(self) -> None:
        self.deleted.set()
        writer = self.engine.writer
        with writer.changed:
            writer.changed.notify_all()

    # -- runner side ---------------------------------------------------------

    def run(self) -> None:
        while not self._halt.is_set() and not self.deleted.is_set():
            busy = self._drain_commands()
            busy = self._advance() or busy
            if not busy:
                time.sleep(_POLL_S)

    def _drain_commands(self) -> bool:
        busy = False
        while True:
            try:
                op, args, fut = self.commands.get_nowait()
            except queue.Empty:
                return busy
            busy = True
            try:
                fut.set_result(self._execute(op, args))
            except Exception as exc:
                fut.set_exception(exc)

    def _execute(self, op: str, args: Mapping[str, Any]) -> Any:
        engine = self.engine
        if op == "snapshot":
            return engine.snapshot()
        if op == "jobs":
            state = args.get("state")
            resource = args.get("resource")
            return engine.query_jobs(JobState(state) if state else None,
                                     resource)
        if op == "qos":
            return engine.set_qos(args["patch"]).as_dict()
        if op == "start":
            engine.start()
        elif op == "pause":
            engine.pause()
        elif op == "resume":
            engine.resume_run()
        elif op == "stop":
            engine.stop()
        elif op == "add_jobs":
            return engine.add_jobs(args["specs"])
        elif op == "remove_jobs":
            engine.remove_jobs(args["ids"])
        else:
            raise BrokerError(f"unknown command {op!r}")
        if op in ("start", "resume"):
            # rebase pacing so a long-idle experiment does not fast-forward
            self._real0 = time.monotonic()
            self._virt0 = engine.sim.clock
        return engine.snapshot()

    def _advance(self) -> bool:
        engine = self.engine
        if engine.exp.phase in TERMINAL_PHASES or not engine.sim.pending():
            return False
        budget = _ADVANCE_BATCH
        target: Optional[float] = None
        if self.pace > 0:
            target = self._virt0 + (time.monotonic() - self._real0) * self.pace
        advanced = False
        try:
            while (budget > 0 and engine.sim.pending()
                   and engine.exp.phase not in TERMINAL_PHASES):
                if target is not None and engine.sim.peek_time() > target:
                    break
                engine.sim.advance()
                budget -= 1
                advanced = True
        except StorageFailure:
            engine.storage_failed = True
            engine.state.exp.phase = ExperimentPhase.PAUSED
        return advanced


def _event_stream(runner: ExperimentRunner, from_seq: int) -> Iterator[str]:
    writer = runner.engine.writer
    idx = max(0, from_seq - 1)
    while True:
        with writer.changed:
            while (len(writer.records) <= idx and not writer.closed
                   and not runner.deleted.is_set()):
                writer.changed.wait(0.25)
        records = writer.records
        while idx < len(records):
            record = records[idx]
            idx += 1
            yield f"data: {record.to_json()}\n\n"
            if (record.kind == KIND_PHASE_CHANGED
                    and ExperimentPhase(record.payload["phase"]) in TERMINAL_PHASES):
                return
        if runner.deleted.is_set():
            yield 'event: error\ndata: {"error": "experiment deleted"}\n\n'
            return
        if writer.closed:
            return


def _parse_qos(body: Mapping[str, Any]) -> QoSConstraints:
    if "deadline_min" in body:
        deadline = body["deadline_min"]
    else:
        deadline = body.get("deadline", 120.0)
    return QoSConstraints(
        deadline_min=float(deadline),
        budget=int(body.get("budget", 396000)),
        strategy=Strategy(body.get("strategy", "cost")),
        enforce_deadline=bool(body.get("enforce_deadline", True)),
        enforce_budget=bool(body.get("enforce_budget", True)),
    )


def _qos_patch(body: Mapping[str, Any]) -> dict[str, Any]:
    patch: dict[str, Any] = {}
    if "deadline_min" in body:
        patch["deadline_min"] = float(body["deadline_min"])
    elif "deadline" in body:
        patch["deadline_min"] = float(body["deadline"])
    if "budget" in body:
        patch["budget"] = int(body["budget"])
    if "strategy" in body:
        patch["strategy"] = body["strategy"]
    for flag in ("enforce_deadline", "enforce_budget"):
        if flag in body:
            patch[flag] = bool(body[flag])
    return patch


def create_app(pace: float = 60.0, ui_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="gridbroker", version=__version__)
    registry: dict[str, ExperimentRunner] = {}
    ids = itertools.count(1)
    registry_lock = threading.Lock()

    def runner_for(exp_id: str) -> ExperimentRunner:
        with registry_lock:
            runner = registry.get(exp_id)
        if runner is None or runner.deleted.is_set():
            raise HTTPException(status_code=404,
                                detail=f"unknown experiment {exp_id!r}")
        return runner

    def guarded(runner: ExperimentRunner, op: str, **args: Any) -> Any:
        try:
            return runner.call(op, **args)
        except (InvalidPhase, ExperimentTerminal, JobExecuting) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownJob as exc:
            raise HTTPException(status_code=404, detail=f"unknown job {exc}")
        except (ValueError, PlanError, ConfigError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except BrokerError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/experiments", status_code=201)
    async def create_experiment(request: Request) -> JSONResponse:
        body = await request.json()
        if not isinstance(body, dict) or not isinstance(body.get("plan"), str):
            raise HTTPException(status_code=422,
                                detail='body must be JSON with a "plan" string')
        try:
            specs = expand_jobs(parse_plan(body["plan"]))
            testbed_text = body.get("testbed") or default_testbed_text()
            qos = _parse_qos(body.get("qos", {}))
            config = BrokerConfig.from_dict(body.get("config", {}))
            exp_id = f"exp-{next(ids)}"
            engine = TaskFarmingEngine.create(
                specs, qos, testbed_text=testbed_text,
                seed=int(body.get("seed", 1)), config=config,
                experiment_id=exp_id)
        except (PlanError, ConfigError, ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        runner = ExperimentRunner(engine, pace=pace)
        with registry_lock:
            registry[exp_id] = runner
        runner.start()
        return JSONResponse(status_code=201, content={"id": exp_id})

    @app.get("/experiments")
    def list_experiments() -> list[dict[str, Any]]:
        with registry_lock:
            runners = [r for r in registry.values() if not r.deleted.is_set()]
        return [guarded(r, "snapshot") for r in runners]

    @app.get("/experiments/{exp_id}")
    def snapshot(exp_id: str) -> dict[str, Any]:
        return guarded(runner_for(exp_id), "snapshot")

    @app.post("/experiments/{exp_id}/start")
    def start(exp_id: str) -> dict[str, Any]:
        return guarded(runner_for(exp_id), "start")

    @app.post("/experiments/{exp_id}/stop")
    def stop(exp_id: str) -> dict[str, Any]:
        return guarded(runner_for(exp_id), "stop")

    @app.post("/experiments/{exp_id}/pause")
    def pause(exp_id: str) -> dict[str, Any]:
        return guarded(runner_for(exp_id), "pause")

    @app.post("/experiments/{exp_id}/resume")
    def resume(exp_id: str) -> dict[str, Any]:
        return guarded(runner_for(exp_id), "resume")

    @app.patch("/experiments/{exp_id}/qos")
    def patch_qos(exp_id: str, body: dict) -> dict[str, Any]:
        runner = runner_for(exp_id)
        try:
            patch = _qos_patch(body)
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"qos": guarded(runner, "qos", patch=patch)}

    @app.get("/experiments/{exp_id}/jobs")
    def jobs(exp_id: str, state: Optional[str] = None,
             resource: Optional[str] = None) -> list[dict[str, Any]]:
        return guarded(runner_for(exp_id), "jobs", state=state,
                       resource=resource)

    @app.post("/experiments/{exp_id}/jobs")
    def add_jobs(exp_id: str, body: dict) -> dict[str, Any]:
        runner = runner_for(exp_id)
        entries = body.get("jobs")
        if not isinstance(entries, list):
            raise HTTPException(status_code=422,
                                detail='body must carry a "jobs" list')
        try:
            specs = [JobSpec(id=e["id"], binding=dict(e.get("binding", {})),
                             command=e.get("command", ""),
                             nominal_cpu_seconds=e.get("nominal_cpu_seconds"))
                     for e in entries]
        except (KeyError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=f"bad job entry: {exc}")
        return {"added": guarded(runner, "add_jobs", specs=specs)}

    @app.delete("/experiments/{exp_id}/jobs")
    def remove_jobs(exp_id: str, body: dict) -> dict[str, Any]:
        runner = runner_for(exp_id)
        ids_arg = body.get("ids")
        if not isinstance(ids_arg, list):
            raise HTTPException(status_code=422,
                                detail='body must carry an "ids" list')
        guarded(runner, "remove_jobs", ids=ids_arg)
        return {"removed": ids_arg}

    @app.get("/experiments/{exp_id}/timeseries")
    def timeseries(exp_id: str, interval: int = 60) -> PlainTextResponse:
        runner = runner_for(exp_id)
        try:
            csv = render_csv(list(runner.engine.writer.records), interval)
        except NoData as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return PlainTextResponse(csv, media_type="text/csv")

    @app.get("/experiments/{exp_id}/events")
    def events(exp_id: str, from_seq: int = 0) -> StreamingResponse:
        runner = runner_for(exp_id)
        return StreamingResponse(_event_stream(runner, from_seq),
                                 media_type="text/event-stream")

    @app.delete("/experiments/{exp_id}")
    def delete(exp_id: str) -> dict[str, Any]:
        with registry_lock:
            runner = registry.pop(exp_id, None)
        if runner is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown experiment {exp_id!r}")
        runner.shutdown()
        return {"deleted": exp_id}

    if ui_dir is None:
        ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True),
                  name="ui")

    return app
