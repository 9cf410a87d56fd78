// Shared fakes and fixture loaders. The fixtures are generated from a
// real broker run by scripts/make_ui_fixtures.py; regenerate them there,
// never edit them by hand.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { EventSourceLike, FetchLike } from "../src/api.js";
import type { JournalRecord } from "../src/types.js";

// plain paths, not file: URLs; the DOM test environment swaps the URL
// global for its own and node:fs refuses that class
const HERE = dirname(fileURLToPath(import.meta.url));

export function loadText(name: string): string {
  return readFileSync(join(HERE, "fixtures", name), "utf8");
}

export function loadJson<T>(name: string): T {
  return JSON.parse(loadText(name)) as T;
}

export function loadRecords(): JournalRecord[] {
  return loadText("journal.jsonl")
    .trim()
    .split("\n")
    .map((line) => JSON.parse(line) as JournalRecord);
}

export interface FixtureSummary {
  makespan_min: number;
  total_cost: number;
  per_resource_jobs: Record<string, number>;
}

/** Stand-in for the browser EventSource; tests emit frames by hand. */
export class FakeEventSource implements EventSourceLike {
  static instances: FakeEventSource[] = [];

  static reset(): void {
    FakeEventSource.instances = [];
  }

  readonly url: string;
  closed = false;
  private listeners = new Map<string, Array<(ev: MessageEvent) => void>>();

  constructor(url: string) {
    this.url = url;
    FakeEventSource.instances.push(this);
  }

  addEventListener(type: string, listener: (ev: MessageEvent) => void): void {
    const list = this.listeners.get(type) ?? [];
    list.push(listener);
    this.listeners.set(type, list);
  }

  close(): void {
    this.closed = true;
  }

  emit(type: string, data?: string): void {
    for (const listener of this.listeners.get(type) ?? []) {
      listener({ data } as MessageEvent);
    }
  }

  emitRecord(record: JournalRecord): void {
    this.emit("message", JSON.stringify(record));
  }
}

export interface FetchCall {
  url: string;
  method: string;
  body?: unknown;
}

export interface Route {
  method?: string;
  path: string;
  status?: number;
  json?: unknown;
  text?: string;
}

const JSON_HEADERS = { "content-type": "application/json" };

/** Tiny route-table fetch. Unmatched requests 404 so a typo in a test
 *  fails loudly instead of hanging on a real network call. */
export function makeFetch(routes: Route[]): {
  fetch: FetchLike;
  calls: FetchCall[];
} {
  const calls: FetchCall[] = [];
  const fetch: FetchLike = (url, init) => {
    const method = init?.method ?? "GET";
    calls.push({ url, method, body: init?.body });
    const pathname = url.split("?")[0]!;
    const route = routes.find(
      (r) => (r.method ?? "GET") === method
        && (pathname === r.path || pathname.endsWith(r.path)));
    if (!route) {
      return Promise.resolve(new Response(
        JSON.stringify({ detail: `no route for ${method} ${url}` }),
        { status: 404, headers: JSON_HEADERS }));
    }
    if (route.text !== undefined) {
      return Promise.resolve(new Response(route.text, {
        status: route.status ?? 200,
        headers: { "content-type": "text/csv" },
      }));
    }
    return Promise.resolve(new Response(JSON.stringify(route.json ?? {}), {
      status: route.status ?? 200,
      headers: JSON_HEADERS,
    }));
  };
  return { fetch, calls };
}
