"""Append-only experiment journal.

Every state change the engine makes is written here first (JSON Lines,
one record per line, canonical key order) and only then applied in
memory. Recovery is therefore a fold over this file. Sequence numbers
start at 1 and are gapless; any gap or undecodable line is corruption
and refuses recovery outright.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from .model import BrokerError

KIND_EXPERIMENT_CREATED = "ExperimentCreated"
KIND_QOS_CHANGED = "QoSChanged"
KIND_JOB_TRANSITION = "JobTransition"
KIND_ATTEMPT_CLOSED = "AttemptClosed"
KIND_QUANTUM_MARK = "QuantumMark"
KIND_PHASE_CHANGED = "PhaseChanged"

RECORD_KINDS = frozenset({
    KIND_EXPERIMENT_CREATED,
    KIND_QOS_CHANGED,
    KIND_JOB_TRANSITION,
    KIND_ATTEMPT_CLOSED,
    KIND_QUANTUM_MARK,
    KIND_PHASE_CHANGED,
})


class StorageFailure(BrokerError):
    pass


class CorruptJournal(BrokerError):
    def __init__(self, message: str, last_good_seq: int):
        super().__init__(f"{message} (last good sequence: {last_good_seq})")
        self.last_good_seq = last_good_seq


@dataclass(frozen=True)
class JournalRecord:
    seq: int
    t: int
    kind: str
    payload: Mapping[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "t": self.t, "kind": self.kind,
             "payload": self.payload},
            sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "JournalRecord":
        doc = json.loads(line)
        kind = doc["kind"]
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        return cls(seq=int(doc["seq"]), t=int(doc["t"]), kind=kind,
                   payload=doc["payload"])


class JournalWriter:
    """Single-writer appender. Records live in memory for streaming and,
    when a path is given, on disk ahead of every in-memory mutation. A
    condition variable lets any number of readers block for new records."""

    def __init__(self, path: Optional[Path] = None, *, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self.records: list[JournalRecord] = []
        self.changed = threading.Condition()
        self.closed = False
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")

    @property
    def last_seq(self) -> int:
        return self.records[-1].seq if self.records else 0

    def preload(self, records: Iterable[JournalRecord]) -> None:
        """Seed the in-memory tail with records already on disk (resume)."""
        assert not self.records
        self.records.extend(records)

    def append(self, t: int, kind: str, payload: Mapping[str, Any]) -> JournalRecord:
        if self.closed:
            raise StorageFailure("journal is closed")
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        record = JournalRecord(seq=self.last_seq + 1, t=t, kind=kind,
                               payload=dict(payload))
        if self._fh is not None:
            try:
                self._fh.write(record.to_json() + "\n")
                self._fh.flush()
                if self.fsync:
                    import os
                    os.fsync(self._fh.fileno())
            except (OSError, ValueError) as exc:
                raise StorageFailure(str(exc)) from exc
        with self.changed:
            self.records.append(record)
            self.changed.notify_all()
        return record

    def close(self) -> None:
        with self.changed:
            self.closed = True
            self.changed.notify_all()
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def verify_integrity(records: list[JournalRecord]) -> None:
    for i, rec in enumerate(records):
        if rec.seq != i + 1:
            raise CorruptJournal(f"sequence gap: expected {i + 1}, found {rec.seq}",
                                 last_good_seq=i)
        if i and rec.t < records[i - 1].t:
            raise CorruptJournal(f"time went backwards at sequence {rec.seq}",
                                 last_good_seq=i)


def parse_records(lines: Iterable[str]) -> list[JournalRecord]:
    records: list[JournalRecord] = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            records.append(JournalRecord.from_json(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptJournal(f"undecodable record: {exc}",
                                 last_good_seq=len(records)) from exc
    verify_integrity(records)
    return records


def read_journal(path: Path) -> list[JournalRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageFailure(str(exc)) from exc
    return parse_records(text.splitlines())
