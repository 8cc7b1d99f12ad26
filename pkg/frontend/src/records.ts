/**
 * Parsers for the simulation record formats:
 *
 * - proportions.txt: space-separated rows `time global deme_0 ... deme_{B-1}`
 * - origin_<g>.txt:  space-separated rows `time deme_0 ... deme_{B-1}`
 * - field CSV:       comma-separated with header `t,cell_0,...,cell_{K-1}`
 */

import { readFileSync } from "node:fs";

export interface RecordSeries {
  /** record times, one per row */
  times: number[];
  /** per-deme (or per-cell) values, values[row][deme], all in [0, 1] */
  values: number[][];
  /** global proportion column when the format carries one */
  global?: number[];
}

function splitRows(text: string): string[] {
  return text
    .split(/\r?\n/)
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
}

function parseNumbers(fields: string[], file: string, row: number): number[] {
  return fields.map((field) => {
    const value = Number(field);
    if (!Number.isFinite(value)) {
      throw new Error(`${file}: row ${row + 1}: non-numeric field '${field}'`);
    }
    return value;
  });
}

/** Proportion file: time, global proportion, then one column per deme. */
export function readProportions(path: string): RecordSeries {
  const rows = splitRows(readFileSync(path, "utf8"));
  if (rows.length === 0) throw new Error(`${path}: empty record file`);
  const width = rows[0].split(" ").length;
  if (width < 3) {
    throw new Error(
      `${path}: expected at least 3 space-separated columns ` +
        `(time, global proportion, demes); got ${width}`,
    );
  }
  const times: number[] = [];
  const global: number[] = [];
  const values: number[][] = [];
  rows.forEach((row, i) => {
    const fields = row.split(" ");
    if (fields.length !== width) {
      throw new Error(
        `${path}: row ${i + 1} has ${fields.length} columns, expected ${width} ` +
          `(time, global, ${width - 2} demes)`,
      );
    }
    const nums = parseNumbers(fields, path, i);
    times.push(nums[0]);
    global.push(nums[1]);
    values.push(nums.slice(2));
  });
  return { times, values, global };
}

/** Ancestral-origin file: time, then one proportion column per deme. */
export function readOrigin(path: string): RecordSeries {
  const rows = splitRows(readFileSync(path, "utf8"));
  if (rows.length === 0) throw new Error(`${path}: empty record file`);
  const width = rows[0].split(" ").length;
  if (width < 2) {
    throw new Error(
      `${path}: expected at least 2 space-separated columns (time, demes); got ${width}`,
    );
  }
  const times: number[] = [];
  const values: number[][] = [];
  rows.forEach((row, i) => {
    const fields = row.split(" ");
    if (fields.length !== width) {
      throw new Error(
        `${path}: row ${i + 1} has ${fields.length} columns, expected ${width} ` +
          `(time, ${width - 1} demes)`,
      );
    }
    const nums = parseNumbers(fields, path, i);
    times.push(nums[0]);
    values.push(nums.slice(1));
  });
  return { times, values };
}

/** Field snapshot CSV with a `t,cell_0,...` header row. */
export function readFieldCsv(path: string): RecordSeries {
  const rows = splitRows(readFileSync(path, "utf8"));
  if (rows.length < 2) throw new Error(`${path}: field CSV needs a header and data`);
  const header = rows[0].split(",");
  if (header[0] !== "t" || !header[1]?.startsWith("cell_")) {
    throw new Error(`${path}: expected a 't,cell_0,...' header, got '${rows[0]}'`);
  }
  const width = header.length;
  const times: number[] = [];
  const values: number[][] = [];
  rows.slice(1).forEach((row, i) => {
    const fields = row.split(",");
    if (fields.length !== width) {
      throw new Error(
        `${path}: row ${i + 2} has ${fields.length} columns, expected ${width}`,
      );
    }
    const nums = parseNumbers(fields, path, i + 1);
    times.push(nums[0]);
    values.push(nums.slice(1));
  });
  return { times, values };
}
