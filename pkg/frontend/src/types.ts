// Wire types for the broker's journal stream and REST surface. The
// journal is the single source of truth: every UI state is a fold over
// these records, in sequence order, with no gaps.

export type Phase =
  | "created"
  | "calibrating"
  | "running"
  | "paused"
  | "completed"
  | "stopped"
  | "failed_deadline"
  | "failed_budget";

export const TERMINAL_PHASES: ReadonlySet<Phase> = new Set([
  "completed",
  "stopped",
  "failed_deadline",
  "failed_budget",
]);

export type StrategyName = "cost" | "time";

export interface QoS {
  deadline_min: number;
  budget: number;
  strategy: StrategyName;
  enforce_deadline: boolean;
  enforce_budget: boolean;
}

export interface JobDoc {
  id: string;
  binding: Record<string, string>;
  command: string;
  nominal_cpu_seconds: number;
}

export interface ExperimentCreatedPayload {
  experiment: string;
  qos: QoS;
  seed: number;
  consumer: string;
  config: Record<string, unknown>;
  testbed: Record<string, unknown>;
  jobs: JobDoc[];
}

export interface QoSChangedPayload {
  requested: QoS;
  effective: QoS;
}

export type JobState =
  | "ready"
  | "scheduled"
  | "staged"
  | "executing"
  | "done"
  | "failed"
  | "cancelled";

export type TransitionEvent =
  | "add"
  | "assign"
  | "stage"
  | "start"
  | "complete"
  | "fail"
  | "requeue"
  | "cancel"
  | "recover";

export interface JobTransitionPayload {
  job: string;
  event: TransitionEvent;
  at?: number;
  resource?: string;
  node?: number;
  price?: number;
  authorized?: number;
  released?: number;
  outcome?: string;
  spec?: { binding: Record<string, string>; command: string;
           nominal_cpu_seconds: number };
}

export interface AttemptClosedPayload {
  job: string;
  resource: string;
  node: number;
  start: number;
  end: number;
  cpu_seconds: number;
  wall_seconds: number;
  outcome: "success" | "task_error" | "resource_down" | "preempted";
  price: number;
  cost: number;
  released: number;
}

export interface ResourceCell {
  executing: number;
  done_cum: number;
  spent: number;
}

export interface QuantumMarkPayload {
  now: number;
  phase: Phase;
  replanned: boolean;
  infeasible: string | null;
  moved: number;
  assigned: number;
  withheld: number;
  dispatched: number;
  estimated_cost: number | null;
  estimated_completion: number | null;
  final: boolean;
  spent: number;
  committed: number;
  executing: number;
  done: number;
  resources: Record<string, ResourceCell>;
}

export interface PhaseChangedPayload {
  phase: Phase;
  previous: Phase;
  reason: string;
}

interface RecordBase {
  seq: number;
  t: number;
}

export type JournalRecord = RecordBase &
  (
    | { kind: "ExperimentCreated"; payload: ExperimentCreatedPayload }
    | { kind: "QoSChanged"; payload: QoSChangedPayload }
    | { kind: "JobTransition"; payload: JobTransitionPayload }
    | { kind: "AttemptClosed"; payload: AttemptClosedPayload }
    | { kind: "QuantumMark"; payload: QuantumMarkPayload }
    | { kind: "PhaseChanged"; payload: PhaseChangedPayload }
  );

export interface Snapshot {
  id: string;
  phase: Phase;
  t: number;
  origin: number;
  qos: QoS;
  accounts: {
    spent: number;
    committed: number;
    ledgers: Record<string, { spent: number; jobs_done: number }>;
  };
  jobs: Record<JobState, number>;
  seed: number;
  makespan_min?: number;
}

export interface JobRow {
  id: string;
  state: JobState;
  resource: string | null;
  command: string;
  attempts: unknown[];
}
