/**
 * Reader for the ensemble CSV + metadata sidecar pair.
 *
 * The CSV is a plain header line followed by numeric rows:
 *   t,mean_V,se_V,mean_dB,se_dB,mean_rho00,...,mean_u,se_u
 * The sidecar is JSON carrying the run configuration; the only fields the
 * plotter interprets are the model constants (for default reference slopes)
 * and the law/trajectory-count summary used in the subtitle.
 */

export interface Table {
  columns: string[];
  rows: number[][];
}

export function parseTable(text: string): Table {
  const lines = text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new Error("empty CSV: no header line");
  }
  const columns = lines[0]!.split(",").map((c) => c.trim());
  if (lines.length === 1) {
    throw new Error("empty CSV: header but no data rows");
  }
  const rows: number[][] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i]!.split(",");
    if (cells.length !== columns.length) {
      throw new Error(
        `row ${i} has ${cells.length} cells, header has ${columns.length}`
      );
    }
    const row = cells.map((c, j) => {
      const v = Number(c);
      if (!Number.isFinite(v)) {
        throw new Error(`row ${i}, column "${columns[j]}": not a number: ${c}`);
      }
      return v;
    });
    rows.push(row);
  }
  return { columns, rows };
}

export function column(table: Table, name: string): number[] {
  const k = table.columns.indexOf(name);
  if (k < 0) {
    throw new Error(
      `column "${name}" not in CSV (have: ${table.columns.join(", ")})`
    );
  }
  return table.rows.map((r) => r[k]!);
}

export interface RunMeta {
  eta: number;
  strength: number;
  lawKind: string;
  nTraj: number;
}

/** Pull the fields the plotter uses out of the sidecar JSON. */
export function parseMeta(text: string): RunMeta {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch (e) {
    throw new Error(`metadata is not valid JSON: ${(e as Error).message}`);
  }
  const root = obj as Record<string, unknown>;
  const model = root["model"] as Record<string, unknown> | undefined;
  const law = root["law"] as Record<string, unknown> | undefined;
  const eta = model?.["eta"];
  const strength = model?.["strength"];
  if (typeof eta !== "number" || typeof strength !== "number") {
    throw new Error("metadata missing model.eta / model.strength");
  }
  return {
    eta,
    strength,
    lawKind: typeof law?.["kind"] === "string" ? (law["kind"] as string) : "?",
    nTraj: typeof root["n_traj"] === "number" ? (root["n_traj"] as number) : 0,
  };
}

/** The two reference exponents the figures conventionally quote: -eta*M/2 and -eta*M. */
export function defaultSlopes(meta: RunMeta): number[] {
  const em = meta.eta * meta.strength;
  return [-em / 2, -em];
}
