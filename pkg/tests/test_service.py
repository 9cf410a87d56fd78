"""HTTP steering surface, exercised in process with the test client."""

import threading
import time

import pytest
from fastapi.testclient import TestClient

from gridbroker.journal import (KIND_EXPERIMENT_CREATED, KIND_PHASE_CHANGED,
                                JournalRecord)
from gridbroker.reporting import render_csv
from gridbroker.service import create_app

from helpers import testbed_text

GRID = testbed_text([("farm", 3, 2), ("spare", 1, 5)])

PLAN = """\
parameter x range from 1 to 6 step 1

task main
  execute calc -x $x
endtask
"""

BODY = {
    "plan": PLAN,
    "testbed": GRID,
    "qos": {"deadline_min": 60, "budget": 1_000_000},
    "config": {"nominal_cpu_seconds": 60},
    "seed": 3,
}


@pytest.fixture
def client():
    with TestClient(create_app(pace=0.0)) as c:
        yield c


def create(client, **overrides):
    body = {**BODY, **overrides}
    resp = client.post("/experiments", json=body)
    assert resp.status_code == 201
    return resp.json()["id"]


def wait_for(client, exp_id, *phases, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        snap = client.get(f"/experiments/{exp_id}").json()
        if snap["phase"] in phases:
            return snap
        time.sleep(0.01)
    raise AssertionError(f"never reached {phases}")


def stream_records(client, exp_id, from_seq=0):
    frames = []
    with client.stream("GET", f"/experiments/{exp_id}/events",
                       params={"from_seq": from_seq}) as resp:
        assert resp.headers["content-type"].startswith("text/event-stream")
        for line in resp.iter_lines():
            if line.startswith("data: "):
                frames.append(JournalRecord.from_json(line[len("data: "):]))
    return frames


def test_experiments_get_sequential_ids(client):
    assert create(client) == "exp-1"
    assert create(client) == "exp-2"
    listed = {s["id"] for s in client.get("/experiments").json()}
    assert listed == {"exp-1", "exp-2"}


def test_lifecycle_runs_to_completion(client):
    exp_id = create(client)
    snap = client.get(f"/experiments/{exp_id}").json()
    assert snap["phase"] == "created"
    started = client.post(f"/experiments/{exp_id}/start").json()
    assert started["phase"] == "calibrating"
    snap = wait_for(client, exp_id, "completed")
    assert snap["jobs"]["done"] == 6
    assert snap["makespan_min"] > 0
    assert snap["accounts"]["committed"] == 0


def test_event_stream_folds_back_into_the_timeseries(client):
    exp_id = create(client)
    client.post(f"/experiments/{exp_id}/start")
    records = stream_records(client, exp_id)
    assert [r.seq for r in records] == list(range(1, len(records) + 1))
    assert records[0].kind == KIND_EXPERIMENT_CREATED
    last = records[-1]
    assert last.kind == KIND_PHASE_CHANGED
    assert last.payload["phase"] == "completed"
    csv = client.get(f"/experiments/{exp_id}/timeseries")
    assert csv.status_code == 200
    assert csv.headers["content-type"].startswith("text/csv")
    assert render_csv(records) == csv.text


def test_stream_resumes_from_a_given_sequence(client):
    exp_id = create(client)
    client.post(f"/experiments/{exp_id}/start")
    wait_for(client, exp_id, "completed")
    full = stream_records(client, exp_id)
    tail = stream_records(client, exp_id, from_seq=5)
    assert tail[0].seq == 5
    assert [r.seq for r in tail] == [r.seq for r in full[4:]]


def test_qos_patch_round_trips(client):
    exp_id = create(client)
    resp = client.patch(f"/experiments/{exp_id}/qos",
                        json={"budget": 500_000, "strategy": "time"})
    assert resp.status_code == 200
    qos = resp.json()["qos"]
    assert qos["budget"] == 500_000
    assert qos["strategy"] == "time"
    snap = client.get(f"/experiments/{exp_id}").json()
    assert snap["qos"]["budget"] == 500_000


def test_job_listing_supports_filters(client):
    exp_id = create(client)
    client.post(f"/experiments/{exp_id}/start")
    wait_for(client, exp_id, "completed")
    jobs = client.get(f"/experiments/{exp_id}/jobs").json()
    assert len(jobs) == 6
    assert all(j["state"] == "done" for j in jobs)
    done = client.get(f"/experiments/{exp_id}/jobs",
                      params={"state": "done"}).json()
    assert len(done) == 6
    failed = client.get(f"/experiments/{exp_id}/jobs",
                        params={"state": "failed"}).json()
    assert failed == []
    # settled jobs hold no live placement; history lives in the attempts
    on_farm = client.get(f"/experiments/{exp_id}/jobs",
                         params={"resource": "farm"}).json()
    assert on_farm == []
    assert all(j["resource"] is None for j in jobs)
    placements = {a["resource"] for j in jobs for a in j["attempts"]}
    assert placements <= {"farm", "spare"}
    assert "farm" in placements


def test_jobs_can_be_added_and_withdrawn(client):
    exp_id = create(client)
    resp = client.post(f"/experiments/{exp_id}/jobs", json={"jobs": [
        {"id": "extra", "binding": {"x": "7"}, "command": "calc -x 7"}]})
    assert resp.status_code == 200
    assert resp.json() == {"added": ["extra"]}
    resp = client.request("DELETE", f"/experiments/{exp_id}/jobs",
                          json={"ids": ["extra"]})
    assert resp.json() == {"removed": ["extra"]}
    resp = client.request("DELETE", f"/experiments/{exp_id}/jobs",
                          json={"ids": ["ghost"]})
    assert resp.status_code == 404
    resp = client.post(f"/experiments/{exp_id}/jobs", json={"jobs": "nope"})
    assert resp.status_code == 422


def test_guard_codes_map_engine_errors(client):
    exp_id = create(client)
    client.post(f"/experiments/{exp_id}/start")
    assert client.post(f"/experiments/{exp_id}/start").status_code == 409
    wait_for(client, exp_id, "completed")
    resp = client.patch(f"/experiments/{exp_id}/qos", json={"budget": 1})
    assert resp.status_code == 409
    assert client.get("/experiments/exp-99").status_code == 404
    assert client.post("/experiments/exp-99/start").status_code == 404
    bad = client.post("/experiments", json={"plan": "parameter ???"})
    assert bad.status_code == 422
    assert client.post("/experiments", json={"nope": 1}).status_code == 422
    resp = client.get(f"/experiments/{exp_id}/timeseries",
                      params={"interval": 0})
    assert resp.status_code == 422


def test_stop_is_terminal(client):
    exp_id = create(client)
    snap = client.post(f"/experiments/{exp_id}/stop").json()
    assert snap["phase"] == "stopped"
    assert client.post(f"/experiments/{exp_id}/stop").status_code == 409


def test_pause_and_resume_under_pacing():
    with TestClient(create_app(pace=60.0)) as client:
        exp_id = create(client)
        client.post(f"/experiments/{exp_id}/start")
        snap = client.post(f"/experiments/{exp_id}/pause").json()
        assert snap["phase"] == "paused"
        snap = client.post(f"/experiments/{exp_id}/resume").json()
        assert snap["phase"] in ("calibrating", "running")
        snap = client.post(f"/experiments/{exp_id}/stop").json()
        assert snap["phase"] == "stopped"


def test_delete_tombstones_the_experiment(client):
    exp_id = create(client)
    assert client.delete(f"/experiments/{exp_id}").json() == {
        "deleted": exp_id}
    assert client.get(f"/experiments/{exp_id}").status_code == 404
    assert client.delete(f"/experiments/{exp_id}").status_code == 404
    assert client.get("/experiments").json() == []


def test_open_stream_reports_deletion(client):
    exp_id = create(client)  # never started: the stream will idle
    errors = []

    def reap():
        time.sleep(0.4)
        client.delete(f"/experiments/{exp_id}")

    reaper = threading.Thread(target=reap)
    reaper.start()
    with client.stream("GET", f"/experiments/{exp_id}/events") as resp:
        lines = [ln for ln in resp.iter_lines() if ln]
        errors.extend(lines)
    reaper.join()
    assert errors[-2] == "event: error"
    assert "experiment deleted" in errors[-1]
