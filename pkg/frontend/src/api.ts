// REST + SSE client for the broker service. Both transports are
// injectable so tests can drive the client without a network: fetch for
// the request/response surface, an EventSource constructor for the
// journal stream.

import type {
  JobRow,
  JournalRecord,
  QoS,
  Snapshot,
  StrategyName,
} from "./types.js";
import { TERMINAL_PHASES } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface EventSourceLike {
  addEventListener(type: string, listener: (ev: MessageEvent) => void): void;
  close(): void;
}

export type EventSourceCtor = new (url: string) => EventSourceLike;

export interface QoSPatch {
  deadline_min?: number;
  budget?: number;
  strategy?: StrategyName;
  enforce_deadline?: boolean;
  enforce_budget?: boolean;
}

export interface CreateBody {
  plan: string;
  testbed?: string;
  qos?: Partial<QoS>;
  config?: Record<string, unknown>;
  seed?: number;
}

export interface StreamHandle {
  close(): void;
}

export interface StreamHandlers {
  onRecord(record: JournalRecord): void;
  onEnd?(reason: "terminal" | "deleted"): void;
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // not JSON; the status line is all we have
    }
    throw new Error(`HTTP ${response.status}: ${detail}`);
  }
  return (await response.json()) as T;
}

export class BrokerClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
    private readonly eventSource: EventSourceCtor =
      EventSource as unknown as EventSourceCtor,
    private readonly retryMs = 1000,
  ) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    return expectJson<T>(await this.fetchFn(this.url(path), init));
  }

  list(): Promise<Snapshot[]> {
    return this.call("/experiments");
  }

  create(body: CreateBody): Promise<{ id: string }> {
    return this.call("/experiments", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  snapshot(id: string): Promise<Snapshot> {
    return this.call(`/experiments/${id}`);
  }

  start(id: string): Promise<Snapshot> {
    return this.call(`/experiments/${id}/start`, { method: "POST" });
  }

  stop(id: string): Promise<Snapshot> {
    return this.call(`/experiments/${id}/stop`, { method: "POST" });
  }

  pause(id: string): Promise<Snapshot> {
    return this.call(`/experiments/${id}/pause`, { method: "POST" });
  }

  resume(id: string): Promise<Snapshot> {
    return this.call(`/experiments/${id}/resume`, { method: "POST" });
  }

  patchQos(id: string, patch: QoSPatch): Promise<{ qos: QoS }> {
    return this.call(`/experiments/${id}/qos`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(patch),
    });
  }

  jobs(id: string, filter: { state?: string; resource?: string } = {}):
      Promise<JobRow[]> {
    const params = new URLSearchParams();
    if (filter.state) params.set("state", filter.state);
    if (filter.resource) params.set("resource", filter.resource);
    const query = params.toString();
    return this.call(`/experiments/${id}/jobs${query ? `?${query}` : ""}`);
  }

  timeseriesCsv(id: string, interval = 60): Promise<string> {
    return this.fetchFn(
      this.url(`/experiments/${id}/timeseries?interval=${interval}`),
    ).then(async (response) => {
      if (!response.ok) throw new Error(`HTTP ${response.status}`);
      return response.text();
    });
  }

  /**
   * Follow the journal from a given sequence number. Reconnects after
   * transport drops, resuming exactly where the fold left off, so the
   * subscriber never sees a gap or a duplicate. Ends for good on the
   * terminal phase record or an explicit deletion frame.
   */
  subscribe(id: string, fromSeq: number, handlers: StreamHandlers,
            ): StreamHandle {
    let next = fromSeq;
    let source: EventSourceLike | null = null;
    let finished = false;
    let timer: ReturnType<typeof setTimeout> | null = null;

    const open = () => {
      source = new this.eventSource(
        this.url(`/experiments/${id}/events?from_seq=${next}`));
      source.addEventListener("message", (ev) => {
        const record = JSON.parse(ev.data as string) as JournalRecord;
        if (record.seq < next) return; // replica of something already seen
        next = record.seq + 1;
        handlers.onRecord(record);
        if (record.kind === "PhaseChanged"
            && TERMINAL_PHASES.has(record.payload.phase)) {
          finished = true;
          teardown();
          handlers.onEnd?.("terminal");
        }
      });
      source.addEventListener("error", (ev) => {
        if (finished) return;
        if ((ev as MessageEvent).data !== undefined) {
          // the server says the experiment is gone; nothing to resume
          finished = true;
          teardown();
          handlers.onEnd?.("deleted");
          return;
        }
        source?.close();
        source = null;
        timer = setTimeout(open, this.retryMs);
      });
    };

    const teardown = () => {
      if (timer !== null) clearTimeout(timer);
      timer = null;
      source?.close();
      source = null;
    };

    open();
    return {
      close() {
        finished = true;
        teardown();
      },
    };
  }
}
