// Dependency-free progress chart: one polyline per resource, done jobs
// over virtual minutes. Pure string output so it renders anywhere and
// tests can assert on it directly.

import { minutesStr } from "./timeseries.js";
import type { Point } from "./timeseries.js";

const PALETTE = [
  "#2563eb", "#db2777", "#059669", "#d97706",
  "#7c3aed", "#0891b2", "#dc2626", "#4d7c0f",
];

export interface Series {
  resource: string;
  color: string;
  points: Array<{ t: number; value: number }>;
}

export function buildSeries(points: readonly Point[]): Series[] {
  const byResource = new Map<string, Array<{ t: number; value: number }>>();
  for (const p of points) {
    let list = byResource.get(p.resource);
    if (!list) {
      list = [];
      byResource.set(p.resource, list);
    }
    list.push({ t: p.t, value: p.doneCum });
  }
  return [...byResource.keys()].sort().map((resource, i) => ({
    resource,
    color: PALETTE[i % PALETTE.length]!,
    points: byResource.get(resource)!,
  }));
}

export function chartSvg(points: readonly Point[], origin: number,
                         width = 640, height = 240): string {
  const series = buildSeries(points);
  const pad = { left: 42, right: 8, top: 10, bottom: 22 };
  const innerW = width - pad.left - pad.right;
  const innerH = height - pad.top - pad.bottom;
  const ts = points.map((p) => p.t);
  const tMin = ts.length ? Math.min(...ts) : 0;
  const tMax = ts.length ? Math.max(...ts) : 1;
  const vMax = Math.max(1, ...points.map((p) => p.doneCum));
  const x = (t: number) =>
    pad.left + (tMax === tMin ? 0 : ((t - tMin) / (tMax - tMin)) * innerW);
  const y = (v: number) => pad.top + innerH - (v / vMax) * innerH;

  const parts: string[] = [];
  parts.push(
    `<svg viewBox="0 0 ${width} ${height}" class="chart" role="img" ` +
    `aria-label="jobs done per resource over time">`);
  parts.push(
    `<line class="axis" x1="${pad.left}" y1="${pad.top}" ` +
    `x2="${pad.left}" y2="${pad.top + innerH}"/>`);
  parts.push(
    `<line class="axis" x1="${pad.left}" y1="${pad.top + innerH}" ` +
    `x2="${pad.left + innerW}" y2="${pad.top + innerH}"/>`);
  parts.push(
    `<text class="tick" x="${pad.left - 6}" y="${pad.top + 4}" ` +
    `text-anchor="end">${vMax}</text>`);
  parts.push(
    `<text class="tick" x="${pad.left - 6}" y="${pad.top + innerH}" ` +
    `text-anchor="end">0</text>`);
  if (ts.length) {
    parts.push(
      `<text class="tick" x="${pad.left}" y="${height - 6}">` +
      `${minutesStr(tMin, origin)}m</text>`);
    parts.push(
      `<text class="tick" x="${pad.left + innerW}" y="${height - 6}" ` +
      `text-anchor="end">${minutesStr(tMax, origin)}m</text>`);
  }
  for (const s of series) {
    const coords = s.points
      .map((p) => `${x(p.t).toFixed(1)},${y(p.value).toFixed(1)}`)
      .join(" ");
    parts.push(
      `<polyline fill="none" stroke="${s.color}" stroke-width="2" ` +
      `data-resource="${s.resource}" points="${coords}"/>`);
  }
  parts.push("</svg>");
  return parts.join("");
}

export function legendHtml(points: readonly Point[]): string {
  return buildSeries(points)
    .map((s) =>
      `<span class="legend-item">` +
      `<span class="swatch" style="background:${s.color}"></span>` +
      `${s.resource}</span>`)
    .join("");
}
