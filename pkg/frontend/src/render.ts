/**
 * Figure rendering: greyscale deme-by-time maps (darker = higher
 * proportion), tracer maps from ancestral-origin files, and the
 * four-scenario global-proportion overlay.
 *
 * Normalisation is fixed to [0, 1] (not per-file min/max), so maps from
 * different scenarios are directly comparable; time runs along the
 * horizontal axis and deme index along the vertical axis.
 */

import { writeFileSync } from "node:fs";
import { basename } from "node:path";

import { encodeGreyPng } from "./png.js";
import type { RecordSeries } from "./records.js";

export type FigureKind = "deme-map" | "tracer-map" | "global-overlay";

export interface FigureJob {
  kind: FigureKind;
  inputs: string[];
  output: string;
  /** integer pixel scale per record cell */
  scale?: number;
  /** invert = false renders darker-for-higher (the default greyscale) */
  colourMap?: "greyscale" | "inverted";
}

/** Map a proportion in [0,1] to a grey byte; darker means higher. */
export function greyByte(value: number, inverted = false): number {
  const v = Math.min(1, Math.max(0, value));
  const byte = Math.round(255 * (inverted ? v : 1 - v));
  return Math.min(255, Math.max(0, byte));
}

/**
 * Render a record series as a space-time map: columns are record times,
 * rows are demes (deme 0 at the top), each cell `scale` pixels wide.
 */
export function renderMap(series: RecordSeries, scale = 4, inverted = false): Buffer {
  const nTimes = series.values.length;
  const nDemes = series.values[0]?.length ?? 0;
  if (nTimes === 0 || nDemes === 0) throw new Error("record series is empty");
  const width = nTimes * scale;
  const rows: Uint8Array[] = [];
  for (let d = 0; d < nDemes; d++) {
    const row = new Uint8Array(width);
    for (let t = 0; t < nTimes; t++) {
      const byte = greyByte(series.values[t][d], inverted);
      row.fill(byte, t * scale, (t + 1) * scale);
    }
    for (let s = 0; s < scale; s++) rows.push(row);
  }
  return encodeGreyPng(rows, width);
}

/** Colours follow the reference figure: blue anticorrelated, green
 * correlated, black constant, yellow (darkened for visibility) neutral. */
const SERIES_COLOURS: Record<string, string> = {
  anticorrelated: "#1f4fd8",
  correlated: "#1a8f3c",
  constant: "#000000",
  neutral: "#d4a017",
};
const FALLBACK_COLOURS = ["#1f4fd8", "#1a8f3c", "#000000", "#d4a017", "#b03030"];

export interface OverlaySeries {
  label: string;
  times: number[];
  values: number[];
}

function fmt(x: number): string {
  return Number(x.toFixed(3)).toString();
}

/**
 * Deterministic SVG with one labelled polyline per scenario; the y-axis
 * is the global type-a proportion on the fixed [0, 1] scale.
 */
export function renderOverlay(series: OverlaySeries[], width = 720, height = 440): string {
  if (series.length === 0) throw new Error("no series to overlay");
  const margin = { left: 56, right: 160, top: 24, bottom: 44 };
  const plotW = width - margin.left - margin.right;
  const plotH = height - margin.top - margin.bottom;
  const tMax = Math.max(...series.map((s) => s.times[s.times.length - 1] ?? 0), 1e-12);
  const sx = (t: number) => margin.left + (t / tMax) * plotW;
  const sy = (v: number) => margin.top + (1 - Math.min(1, Math.max(0, v))) * plotH;
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  // axes and gridlines at fixed proportions
  for (const frac of [0, 0.25, 0.5, 0.75, 1]) {
    const y = sy(frac);
    parts.push(
      `<line x1="${margin.left}" y1="${fmt(y)}" x2="${margin.left + plotW}" ` +
        `y2="${fmt(y)}" stroke="#dddddd" stroke-width="1"/>`,
      `<text x="${margin.left - 8}" y="${fmt(y + 4)}" text-anchor="end">${frac}</text>`,
    );
  }
  parts.push(
    `<line x1="${margin.left}" y1="${margin.top}" x2="${margin.left}" ` +
      `y2="${margin.top + plotH}" stroke="black" stroke-width="1"/>`,
    `<line x1="${margin.left}" y1="${margin.top + plotH}" x2="${margin.left + plotW}" ` +
      `y2="${margin.top + plotH}" stroke="black" stroke-width="1"/>`,
    `<text x="${margin.left + plotW / 2}" y="${height - 10}" text-anchor="middle">time</text>`,
    `<text x="16" y="${margin.top + plotH / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 16 ${margin.top + plotH / 2})">global a-proportion</text>`,
    `<text x="${margin.left}" y="${height - 10}" text-anchor="middle">0</text>`,
    `<text x="${margin.left + plotW}" y="${height - 10}" text-anchor="middle">${fmt(tMax)}</text>`,
  );
  series.forEach((s, i) => {
    const colour = SERIES_COLOURS[s.label] ?? FALLBACK_COLOURS[i % FALLBACK_COLOURS.length];
    const points = s.times.map((t, k) => `${fmt(sx(t))},${fmt(sy(s.values[k]))}`).join(" ");
    parts.push(
      `<polyline fill="none" stroke="${colour}" stroke-width="1.5" points="${points}"/>`,
    );
    const ly = margin.top + 16 + i * 20;
    parts.push(
      `<line x1="${margin.left + plotW + 12}" y1="${ly - 4}" ` +
        `x2="${margin.left + plotW + 36}" y2="${ly - 4}" stroke="${colour}" stroke-width="2"/>`,
      `<text x="${margin.left + plotW + 42}" y="${ly}">${s.label}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n");
}

export function labelForInput(path: string): string {
  const parts = path.split(/[\\/]/);
  const dir = parts.length >= 2 ? parts[parts.length - 2] : basename(path);
  return dir;
}

export function writeFigure(path: string, content: Buffer | string): void {
  writeFileSync(path, content);
}
