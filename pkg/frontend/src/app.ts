// DOM wiring for the steering console. All broker I/O goes through the
// injected client, so tests drive the whole page with fakes.

import { BrokerClient } from "./api.js";
import type { CreateBody, QoSPatch, StreamHandle } from "./api.js";
import { chartSvg, legendHtml } from "./chart.js";
import { applyRecord, emptyView, stateCounts } from "./state.js";
import type { ExperimentView } from "./state.js";
import { TimeseriesBuffer, minutesStr } from "./timeseries.js";
import type { JournalRecord, StrategyName } from "./types.js";

const LOG_CAP = 200;

export interface AppHandle {
  view(): ExperimentView;
  buffer(): TimeseriesBuffer;
  /** Settles once every action queued so far has finished. */
  pending(): Promise<void>;
  dispose(): void;
}

function byId<T extends HTMLElement>(doc: Document, id: string): T {
  const el = doc.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function summarize(record: JournalRecord): string {
  switch (record.kind) {
    case "ExperimentCreated":
      return `experiment ${record.payload.experiment}, `
        + `${record.payload.jobs.length} jobs, seed ${record.payload.seed}`;
    case "QoSChanged": {
      const q = record.payload.effective;
      return `deadline ${q.deadline_min}min, budget ${q.budget}, ${q.strategy}`;
    }
    case "JobTransition":
      return `${record.payload.job} ${record.payload.event}`
        + (record.payload.resource ? ` @ ${record.payload.resource}` : "");
    case "AttemptClosed":
      return `${record.payload.job} ${record.payload.outcome}, `
        + `cost ${record.payload.cost}`;
    case "QuantumMark":
      return `${record.payload.phase}, done ${record.payload.done}, `
        + `spent ${record.payload.spent}`
        + (record.payload.replanned ? ", replanned" : "");
    case "PhaseChanged":
      return `${record.payload.previous} -> ${record.payload.phase}`
        + ` (${record.payload.reason})`;
  }
}

export function init(doc: Document, client: BrokerClient): AppHandle {
  const planInput = byId<HTMLTextAreaElement>(doc, "plan");
  const seedInput = byId<HTMLInputElement>(doc, "seed");
  const createBtn = byId<HTMLButtonElement>(doc, "create");
  const startBtn = byId<HTMLButtonElement>(doc, "start");
  const pauseBtn = byId<HTMLButtonElement>(doc, "pause");
  const resumeBtn = byId<HTMLButtonElement>(doc, "resume");
  const stopBtn = byId<HTMLButtonElement>(doc, "stop");
  const deadlineInput = byId<HTMLInputElement>(doc, "qos-deadline");
  const budgetInput = byId<HTMLInputElement>(doc, "qos-budget");
  const strategyInput = byId<HTMLSelectElement>(doc, "qos-strategy");
  const applyBtn = byId<HTMLButtonElement>(doc, "qos-apply");
  const effectiveEl = byId<HTMLElement>(doc, "qos-effective");
  const statusEl = byId<HTMLElement>(doc, "status");
  const statPhase = byId<HTMLElement>(doc, "stat-phase");
  const statClock = byId<HTMLElement>(doc, "stat-clock");
  const statSpent = byId<HTMLElement>(doc, "stat-spent");
  const statCommitted = byId<HTMLElement>(doc, "stat-committed");
  const statJobs = byId<HTMLElement>(doc, "stat-jobs");
  const resourceBody = byId<HTMLElement>(doc, "resources");
  const chartEl = byId<HTMLElement>(doc, "chart");
  const legendEl = byId<HTMLElement>(doc, "legend");
  const logEl = byId<HTMLElement>(doc, "log");

  let view = emptyView();
  let buffer = new TimeseriesBuffer();
  let currentId: string | null = null;
  let stream: StreamHandle | null = null;
  let chain: Promise<void> = Promise.resolve();

  const setStatus = (text: string, error = false) => {
    statusEl.textContent = text;
    statusEl.classList.toggle("error", error);
  };

  const refresh = () => {
    statPhase.textContent = view.phase;
    statClock.textContent =
      view.lastSeq > 0 ? `${minutesStr(view.t, view.origin)} min` : "-";
    statSpent.textContent = String(view.spent);
    statCommitted.textContent = String(view.committed);
    const counts = stateCounts(view);
    statJobs.textContent = `${counts.done}/${view.jobs.size} done`;
    if (view.qos) {
      const q = view.qos;
      effectiveEl.textContent =
        `deadline ${q.deadline_min} min, budget ${q.budget}, ${q.strategy}`;
    } else {
      effectiveEl.textContent = "-";
    }
    const ids = Object.keys(view.resources).sort();
    resourceBody.innerHTML = ids
      .map((rid) => {
        const cell = view.resources[rid]!;
        return `<tr data-resource="${rid}"><td>${rid}</td>`
          + `<td>${cell.executing}</td><td>${cell.done_cum}</td>`
          + `<td>${cell.spent}</td></tr>`;
      })
      .join("");
    if (view.lastSeq > 0) {
      const points = buffer.rows();
      chartEl.innerHTML = chartSvg(points, view.origin);
      legendEl.innerHTML = legendHtml(points);
    }
    if (view.infeasible) {
      setStatus(`planner flagged the ${view.infeasible} as infeasible`, true);
    }
  };

  const logRecord = (record: JournalRecord) => {
    const line = doc.createElement("li");
    line.textContent = `#${record.seq} ${record.kind}: ${summarize(record)}`;
    logEl.insertBefore(line, logEl.firstChild);
    while (logEl.childNodes.length > LOG_CAP) {
      logEl.removeChild(logEl.lastChild!);
    }
  };

  const onRecord = (record: JournalRecord) => {
    try {
      applyRecord(view, record);
    } catch (err) {
      setStatus(String(err), true);
      return;
    }
    buffer.push(record);
    logRecord(record);
    refresh();
  };

  const enqueue = (label: string, work: () => Promise<void>) => {
    chain = chain
      .then(work)
      .catch((err: unknown) => {
        setStatus(`${label}: ${err instanceof Error ? err.message : err}`, true);
      });
  };

  const onCreate = () => enqueue("create", async () => {
    const plan = planInput.value.trim();
    if (!plan) throw new Error("plan is empty");
    const body: CreateBody = { plan };
    const seed = seedInput.value.trim();
    if (seed) body.seed = Number(seed);
    const qos: QoSPatch = {};
    if (deadlineInput.value.trim()) {
      qos.deadline_min = Number(deadlineInput.value);
    }
    if (budgetInput.value.trim()) qos.budget = Number(budgetInput.value);
    qos.strategy = strategyInput.value as StrategyName;
    body.qos = qos;
    const { id } = await client.create(body);
    stream?.close();
    view = emptyView();
    buffer = new TimeseriesBuffer();
    logEl.innerHTML = "";
    currentId = id;
    setStatus(`created ${id}`);
    stream = client.subscribe(id, 1, {
      onRecord,
      onEnd: (why) => {
        if (why === "deleted") setStatus("experiment deleted on server", true);
      },
    });
    refresh();
  });

  const simpleAction = (label: string,
                        call: (id: string) => Promise<unknown>) => () =>
    enqueue(label, async () => {
      if (!currentId) throw new Error("no experiment yet");
      await call(currentId);
      setStatus(label);
    });

  const onApply = () => enqueue("steer", async () => {
    if (!currentId) throw new Error("no experiment yet");
    const patch: QoSPatch = {};
    if (deadlineInput.value.trim()) {
      patch.deadline_min = Number(deadlineInput.value);
    }
    if (budgetInput.value.trim()) patch.budget = Number(budgetInput.value);
    if (strategyInput.value) {
      patch.strategy = strategyInput.value as StrategyName;
    }
    if (Object.keys(patch).length === 0) throw new Error("nothing to change");
    await client.patchQos(currentId, patch);
    setStatus("steering applied");
  });

  createBtn.addEventListener("click", onCreate);
  startBtn.addEventListener("click",
    simpleAction("started", (id) => client.start(id)));
  pauseBtn.addEventListener("click",
    simpleAction("paused", (id) => client.pause(id)));
  resumeBtn.addEventListener("click",
    simpleAction("resumed", (id) => client.resume(id)));
  stopBtn.addEventListener("click",
    simpleAction("stopped", (id) => client.stop(id)));
  applyBtn.addEventListener("click", onApply);

  refresh();
  return {
    view: () => view,
    buffer: () => buffer,
    pending: () => chain,
    dispose: () => {
      stream?.close();
      stream = null;
    },
  };
}

/** Browser entry point; tests call init() with fakes instead. */
export function boot(): void {
  if (typeof document !== "undefined" && document.getElementById("create")) {
    init(document, new BrokerClient(""));
  }
}

boot();
