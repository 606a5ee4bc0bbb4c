#!/usr/bin/env node
/**
 * plot <csv> [--meta <json>] [--slopes s1,s2] [--out <img>] [--title <str>]
 *
 * Renders the four-panel convergence figure for one ensemble CSV. Reference
 * slopes come from --slopes when given, otherwise from the metadata sidecar
 * (-eta*M/2 and -eta*M), otherwise no envelopes are drawn. Output is SVG;
 * the default path is the CSV path with its extension swapped.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { basename } from "node:path";
import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { parseTable, parseMeta, defaultSlopes, RunMeta } from "./csv.js";
import { renderFigure } from "./figure.js";

const USAGE =
  "usage: plot <csv> [--meta <json>] [--slopes s1,s2] [--out <img>] [--title <str>]";

export function run(argv: string[]): number {
  // parseArgs refuses a separate-token value starting with "-", and slopes
  // are negative almost by definition; fold the value into --slopes= form
  const args: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--slopes" && i + 1 < argv.length) {
      args.push(`--slopes=${argv[++i]}`);
    } else {
      args.push(argv[i]!);
    }
  }
  let parsed;
  try {
    parsed = parseArgs({
      args,
      options: {
        meta: { type: "string" },
        slopes: { type: "string" },
        out: { type: "string" },
        title: { type: "string" },
        help: { type: "boolean", short: "h" },
      },
      allowPositionals: true,
      strict: true,
    });
  } catch (e) {
    process.stderr.write(`plot: ${(e as Error).message}\n${USAGE}\n`);
    return 2;
  }
  if (parsed.values.help) {
    process.stdout.write(`${USAGE}\n`);
    return 0;
  }
  if (parsed.positionals.length !== 1) {
    process.stderr.write(`plot: expected exactly one CSV path\n${USAGE}\n`);
    return 2;
  }
  const csvPath = parsed.positionals[0]!;

  let slopes: number[] | undefined;
  if (parsed.values.slopes !== undefined) {
    slopes = [];
    for (const part of parsed.values.slopes.split(",")) {
      const v = Number(part.trim());
      if (!Number.isFinite(v)) {
        process.stderr.write(`plot: bad slope "${part.trim()}"\n${USAGE}\n`);
        return 2;
      }
      slopes.push(v);
    }
  }

  const outPath = parsed.values.out ?? swapExtension(csvPath);
  if (!outPath.endsWith(".svg")) {
    process.stderr.write(`plot: only .svg output is supported, got ${outPath}\n`);
    return 2;
  }

  try {
    const table = parseTable(readFileSync(csvPath, "utf-8"));

    let meta: RunMeta | undefined;
    if (parsed.values.meta !== undefined) {
      meta = parseMeta(readFileSync(parsed.values.meta, "utf-8"));
    }
    if (slopes === undefined) {
      slopes = meta ? defaultSlopes(meta) : [];
    }

    const svg = renderFigure({
      table,
      slopes,
      title: parsed.values.title ?? basename(csvPath).replace(/\.csv$/, ""),
      subtitle: meta
        ? `law ${meta.lawKind}, ${meta.nTraj} trajectories, eta M = ${meta.eta * meta.strength}`
        : undefined,
    });
    writeFileSync(outPath, svg);
    process.stdout.write(`wrote ${outPath}\n`);
    return 0;
  } catch (e) {
    process.stderr.write(`plot: ${(e as Error).message}\n`);
    return 1;
  }
}

function swapExtension(csvPath: string): string {
  return csvPath.endsWith(".csv")
    ? csvPath.slice(0, -4) + ".svg"
    : csvPath + ".svg";
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(run(process.argv.slice(2)));
}
