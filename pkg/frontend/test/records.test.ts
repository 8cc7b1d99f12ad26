import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { readFieldCsv, readOrigin, readProportions } from "../src/records.js";

function tmpFile(name: string, content: string): string {
  const dir = mkdtempSync(join(tmpdir(), "figrender-"));
  const path = join(dir, name);
  writeFileSync(path, content);
  return path;
}

describe("readProportions", () => {
  it("parses time, global, and per-deme columns", () => {
    const path = tmpFile(
      "proportions.txt",
      "0.0 0.5 0.4 0.6\n1.0 0.55 0.5 0.6\n",
    );
    const rec = readProportions(path);
    expect(rec.times).toEqual([0.0, 1.0]);
    expect(rec.global).toEqual([0.5, 0.55]);
    expect(rec.values).toEqual([
      [0.4, 0.6],
      [0.5, 0.6],
    ]);
  });

  it("rejects ragged rows citing the expected layout", () => {
    const path = tmpFile("proportions.txt", "0.0 0.5 0.4 0.6\n1.0 0.55 0.5\n");
    expect(() => readProportions(path)).toThrow(/row 2 has 3 columns, expected 4/);
  });

  it("rejects files with too few columns", () => {
    const path = tmpFile("proportions.txt", "0.0 0.5\n");
    expect(() => readProportions(path)).toThrow(/at least 3/);
  });

  it("rejects non-numeric fields", () => {
    const path = tmpFile("proportions.txt", "0.0 oops 0.4 0.6\n");
    expect(() => readProportions(path)).toThrow(/non-numeric/);
  });
});

describe("readOrigin", () => {
  it("parses time and per-deme columns", () => {
    const path = tmpFile("origin_0.txt", "0.0 1.0 0.0\n2.0 0.75 0.25\n");
    const rec = readOrigin(path);
    expect(rec.times).toEqual([0.0, 2.0]);
    expect(rec.values[0]).toEqual([1.0, 0.0]);
  });

  it("rejects column mismatches", () => {
    const path = tmpFile("origin_0.txt", "0.0 1.0 0.0\n2.0 0.75\n");
    expect(() => readOrigin(path)).toThrow(/expected 3/);
  });
});

describe("readFieldCsv", () => {
  it("parses the t,cell_* header format", () => {
    const path = tmpFile("fields.csv", "t,cell_0,cell_1\n0.0,0.25,0.75\n0.5,0.5,0.5\n");
    const rec = readFieldCsv(path);
    expect(rec.times).toEqual([0.0, 0.5]);
    expect(rec.values[1]).toEqual([0.5, 0.5]);
  });

  it("rejects a missing header", () => {
    const path = tmpFile("fields.csv", "0.0,0.25,0.75\n");
    expect(() => readFieldCsv(path)).toThrow(/header/);
  });
});
