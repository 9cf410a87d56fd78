// Experiment view model: a pure fold over journal records. Accounting
// mirrors the broker's own books (commit on stage, settle on attempt
// close) so the view stays consistent between quantum marks, not just
// at them.

import type {
  JobState,
  JournalRecord,
  Phase,
  QoS,
  QuantumMarkPayload,
  ResourceCell,
} from "./types.js";
import { TERMINAL_PHASES } from "./types.js";

export interface JobCell {
  id: string;
  state: JobState;
  resource: string | null;
  attempts: number;
}

export interface ExperimentView {
  id: string;
  phase: Phase;
  origin: number;
  t: number;
  seed: number;
  qos: QoS | null;
  spent: number;
  committed: number;
  jobs: Map<string, JobCell>;
  resources: Record<string, ResourceCell>;
  lastMark: QuantumMarkPayload | null;
  infeasible: string | null;
  reason: string | null;
  lastSeq: number;
  terminal: boolean;
}

export function emptyView(): ExperimentView {
  return {
    id: "",
    phase: "created",
    origin: 0,
    t: 0,
    seed: 0,
    qos: null,
    spent: 0,
    committed: 0,
    jobs: new Map(),
    resources: {},
    lastMark: null,
    infeasible: null,
    reason: null,
    lastSeq: 0,
    terminal: false,
  };
}

const EVENT_TO_STATE: Record<string, JobState> = {
  add: "ready",
  assign: "scheduled",
  stage: "staged",
  start: "executing",
  complete: "done",
  fail: "failed",
  requeue: "ready",
  cancel: "cancelled",
  recover: "ready",
};

const SETTLED: ReadonlySet<JobState> = new Set(["done", "failed", "cancelled"]);

export function applyRecord(view: ExperimentView,
                            record: JournalRecord): ExperimentView {
  if (record.seq !== view.lastSeq + 1) {
    throw new Error(
      `journal gap: expected seq ${view.lastSeq + 1}, got ${record.seq}`);
  }
  view.lastSeq = record.seq;
  view.t = record.t;
  switch (record.kind) {
    case "ExperimentCreated": {
      const p = record.payload;
      view.id = p.experiment;
      view.origin = record.t;
      view.seed = p.seed;
      view.qos = p.qos;
      for (const job of p.jobs) {
        view.jobs.set(job.id, {
          id: job.id, state: "ready", resource: null, attempts: 0,
        });
      }
      break;
    }
    case "QoSChanged":
      view.qos = record.payload.effective;
      break;
    case "JobTransition": {
      const p = record.payload;
      if (p.event === "add") {
        view.jobs.set(p.job, {
          id: p.job, state: "ready", resource: null, attempts: 0,
        });
        break;
      }
      const job = view.jobs.get(p.job);
      if (!job) throw new Error(`transition for unknown job ${p.job}`);
      const next = EVENT_TO_STATE[p.event];
      if (!next) throw new Error(`unknown transition event ${p.event}`);
      job.state = next;
      if (p.event === "assign") job.resource = p.resource ?? null;
      if (next === "ready" || SETTLED.has(next)) job.resource = null;
      if (p.event === "stage") view.committed += p.authorized ?? 0;
      if (p.event === "recover" || p.event === "cancel") {
        view.committed -= p.released ?? 0;
      }
      break;
    }
    case "AttemptClosed": {
      const p = record.payload;
      view.committed -= p.released;
      view.spent += p.cost;
      const job = view.jobs.get(p.job);
      if (job) job.attempts += 1;
      break;
    }
    case "QuantumMark": {
      const p = record.payload;
      view.phase = p.phase;
      view.resources = p.resources;
      view.lastMark = p;
      view.infeasible = p.infeasible;
      break;
    }
    case "PhaseChanged": {
      view.phase = record.payload.phase;
      view.reason = record.payload.reason;
      view.terminal = TERMINAL_PHASES.has(record.payload.phase);
      break;
    }
  }
  return view;
}

export function foldView(records: readonly JournalRecord[]): ExperimentView {
  const view = emptyView();
  for (const record of records) applyRecord(view, record);
  return view;
}

export function stateCounts(view: ExperimentView): Record<JobState, number> {
  const counts: Record<JobState, number> = {
    ready: 0, scheduled: 0, staged: 0, executing: 0,
    done: 0, failed: 0, cancelled: 0,
  };
  for (const job of view.jobs.values()) counts[job.state] += 1;
  return counts;
}
