#!/usr/bin/env node
/**
 * render_figs <run-directory> --kind <deme-map|tracer-map|global-overlay>
 *             [--out DIR] [--origin N] [--scale N] [--file PATH]
 *
 * Reads the record files produced by the simulation package:
 *   deme-map        <run>/proportions.txt  -> deme_map.png
 *   tracer-map      <run>/origin_<N>.txt   -> tracer_map_<N>.png
 *   global-overlay  <run>/<scenario>/proportions.txt (every subdirectory)
 *                                          -> global_overlay.svg
 * --file points a map job at an explicit record file instead (field
 * snapshot CSVs with a `t,cell_*` header are accepted too).
 */

import { existsSync, mkdirSync, readdirSync, statSync } from "node:fs";
import { join, resolve } from "node:path";

import { readFieldCsv, readOrigin, readProportions } from "./records.js";
import {
  FigureKind,
  labelForInput,
  renderMap,
  renderOverlay,
  writeFigure,
} from "./render.js";

interface Args {
  runDir: string;
  kind: FigureKind;
  out: string;
  origin: number;
  scale: number;
  file?: string;
}

function parseArgs(argv: string[]): Args {
  const positional: string[] = [];
  const options: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith("--")) {
      const value = argv[i + 1];
      if (value === undefined) throw new Error(`missing value for ${arg}`);
      options[arg.slice(2)] = value;
      i++;
    } else {
      positional.push(arg);
    }
  }
  if (positional.length !== 1) {
    throw new Error(
      "usage: render_figs <run-directory> --kind <deme-map|tracer-map|global-overlay> " +
        "[--out DIR] [--origin N] [--scale N] [--file PATH]",
    );
  }
  const kind = options["kind"] as FigureKind | undefined;
  if (!kind || !["deme-map", "tracer-map", "global-overlay"].includes(kind)) {
    throw new Error("--kind must be one of deme-map, tracer-map, global-overlay");
  }
  return {
    runDir: resolve(positional[0]),
    kind,
    out: resolve(options["out"] ?? positional[0]),
    origin: Number(options["origin"] ?? 0),
    scale: Math.max(1, Math.floor(Number(options["scale"] ?? 4))),
    file: options["file"],
  };
}

function readMapInput(path: string, kind: FigureKind) {
  if (path.endsWith(".csv")) return readFieldCsv(path);
  return kind === "tracer-map" ? readOrigin(path) : readProportions(path);
}

export function run(argv: string[]): string[] {
  const args = parseArgs(argv);
  mkdirSync(args.out, { recursive: true });
  const written: string[] = [];
  if (args.kind === "deme-map") {
    const input = args.file ?? join(args.runDir, "proportions.txt");
    const series = readMapInput(input, args.kind);
    const out = join(args.out, "deme_map.png");
    writeFigure(out, renderMap(series, args.scale));
    written.push(out);
  } else if (args.kind === "tracer-map") {
    const input = args.file ?? join(args.runDir, `origin_${args.origin}.txt`);
    const series = readMapInput(input, args.kind);
    const out = join(args.out, `tracer_map_${args.origin}.png`);
    writeFigure(out, renderMap(series, args.scale));
    written.push(out);
  } else {
    const inputs: string[] = [];
    if (args.file) {
      inputs.push(args.file);
    } else {
      for (const entry of readdirSync(args.runDir).sort()) {
        const candidate = join(args.runDir, entry, "proportions.txt");
        if (statSync(join(args.runDir, entry), { throwIfNoEntry: false })?.isDirectory()
            && existsSync(candidate)) {
          inputs.push(candidate);
        }
      }
      if (inputs.length === 0 && existsSync(join(args.runDir, "proportions.txt"))) {
        inputs.push(join(args.runDir, "proportions.txt"));
      }
    }
    if (inputs.length === 0) {
      throw new Error(`no proportions.txt found under ${args.runDir}`);
    }
    const series = inputs.map((input) => {
      const rec = readProportions(input);
      return { label: labelForInput(input), times: rec.times, values: rec.global! };
    });
    const out = join(args.out, "global_overlay.svg");
    writeFigure(out, renderOverlay(series));
    written.push(out);
  }
  return written;
}

const isMain =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split(/[\\/]/).pop() ?? "");

if (isMain) {
  try {
    for (const path of run(process.argv.slice(2))) {
      console.log(path);
    }
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(2);
  }
}
