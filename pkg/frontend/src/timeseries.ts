// Client-side fold of the journal stream into the same time series the
// service exposes at /timeseries. The arithmetic is integer-only so the
// rendered CSV is byte-identical to the server's: minutes are stored as
// hundredths, rounded half up, never as floats.

import type { JournalRecord, QuantumMarkPayload } from "./types.js";

export function minutesStr(tSeconds: number, origin = 0): string {
  const delta = tSeconds - origin;
  if (delta < 0) throw new RangeError("instant precedes the origin");
  const hundredths = Math.floor((delta * 100 + 30) / 60);
  const whole = Math.floor(hundredths / 100);
  const cents = hundredths % 100;
  return `${whole}.${String(cents).padStart(2, "0")}`;
}

export interface Point {
  t: number;
  tMin: string;
  resource: string;
  executing: number;
  doneCum: number;
  spent: number;
}

export const CSV_HEADER = "t_min,resource,executing,done_cum,spent";

/**
 * Streaming fold. Push records as they arrive; rows() yields the same
 * points a batch fold of the full journal would. A later mark on the
 * same instant supersedes the earlier one (a stop can share a second
 * with the regular tick), so rows are derived, not accumulated.
 */
export class TimeseriesBuffer {
  private origin: number | null = null;
  private marks = new Map<number, QuantumMarkPayload>();

  push(record: JournalRecord): void {
    if (record.kind === "ExperimentCreated" && this.origin === null) {
      this.origin = record.t;
    } else if (record.kind === "QuantumMark") {
      this.marks.set(record.t, record.payload);
    }
  }

  rows(interval = 60): Point[] {
    if (interval <= 0) throw new RangeError("interval must be positive");
    if (this.origin === null) throw new Error("journal has no experiment");
    const origin = this.origin;
    const points: Point[] = [];
    const instants = [...this.marks.keys()].sort((a, b) => a - b);
    for (const t of instants) {
      const mark = this.marks.get(t)!;
      const aligned = (t - origin) % interval === 0;
      if (!aligned && !mark.final) continue;
      for (const resource of Object.keys(mark.resources).sort()) {
        const cell = mark.resources[resource]!;
        points.push({
          t,
          tMin: minutesStr(t, origin),
          resource,
          executing: cell.executing,
          doneCum: cell.done_cum,
          spent: cell.spent,
        });
      }
    }
    return points;
  }

  csv(interval = 60): string {
    const lines = [CSV_HEADER];
    for (const p of this.rows(interval)) {
      lines.push(`${p.tMin},${p.resource},${p.executing},${p.doneCum},${p.spent}`);
    }
    return lines.join("\n") + "\n";
  }
}

export function foldTimeseries(records: readonly JournalRecord[],
                               interval = 60): Point[] {
  const buffer = new TimeseriesBuffer();
  for (const record of records) buffer.push(record);
  return buffer.rows(interval);
}

export function renderCsv(records: readonly JournalRecord[],
                          interval = 60): string {
  const buffer = new TimeseriesBuffer();
  for (const record of records) buffer.push(record);
  return buffer.csv(interval);
}
