/**
 * Four-panel convergence figure.
 *
 * Top row: ensemble mean of the Lyapunov distance and of the Bures distance
 * against time, linear ordinate. Bottom row: the same two series on a log
 * ordinate, where exponential decay shows up as a straight line. Every panel
 * overlays one dashed reference curve y(0) * exp(slope * t) per requested
 * slope, anchored at the first recorded mean of that panel's series.
 *
 * Output is a standalone SVG string; rendering is deterministic.
 */

import { Table, column } from "./csv.js";

export interface FigureSpec {
  table: Table;
  slopes: number[];
  title: string;
  subtitle?: string;
}

const W = 780;
const H = 620;
const PANEL_W = 330;
const PANEL_H = 225;
const COL_X = [62, 432];
const ROW_Y = [70, 350];

const MEAN_COLOR = "#4361ee";
const REF_COLORS = ["#e63946", "#2d6a4f", "#b5179e", "#f77f00", "#6a4c93"];

export function renderFigure(spec: FigureSpec): string {
  for (const s of spec.slopes) {
    if (!Number.isFinite(s)) {
      throw new Error(`reference slope is not finite: ${s}`);
    }
  }
  const t = column(spec.table, "t");
  const panels = [
    { name: "mean_V", log: false },
    { name: "mean_dB", log: false },
    { name: "mean_V", log: true },
    { name: "mean_dB", log: true },
  ];

  let s = `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${W} ${H}" font-family="Helvetica, Arial, sans-serif">\n`;
  s += `<rect width="${W}" height="${H}" fill="#fff"/>\n`;
  s += `<text x="${W / 2}" y="24" text-anchor="middle" font-size="15" font-weight="600" fill="#222">${esc(spec.title)}</text>\n`;
  if (spec.subtitle) {
    s += `<text x="${W / 2}" y="41" text-anchor="middle" font-size="10" fill="#777">${esc(spec.subtitle)}</text>\n`;
  }
  s += legend(spec.slopes);

  panels.forEach((p, i) => {
    const y = column(spec.table, p.name);
    s += buildPanel({
      x0: COL_X[i % 2]!,
      y0: ROW_Y[i < 2 ? 0 : 1]!,
      id: `p${i}`,
      title: p.log ? `${p.name} (log)` : p.name,
      t,
      y,
      slopes: spec.slopes,
      log: p.log,
    });
  });

  s += `</svg>\n`;
  return s;
}

function legend(slopes: number[]): string {
  let s = "";
  let x = 62;
  const y = 56;
  s += `<line x1="${x}" y1="${y - 3}" x2="${x + 22}" y2="${y - 3}" stroke="${MEAN_COLOR}" stroke-width="1.6"/>\n`;
  s += `<text x="${x + 27}" y="${y}" font-size="10" fill="#333">ensemble mean</text>\n`;
  x += 125;
  slopes.forEach((sl, k) => {
    const color = REF_COLORS[k % REF_COLORS.length]!;
    const label = `exp(${fmtSlope(sl)} t)`;
    s += `<line x1="${x}" y1="${y - 3}" x2="${x + 22}" y2="${y - 3}" stroke="${color}" stroke-width="1.2" stroke-dasharray="6,3"/>\n`;
    s += `<text x="${x + 27}" y="${y}" font-size="10" fill="#333">${esc(label)}</text>\n`;
    x += 32 + 7 * label.length;
  });
  return s;
}

interface PanelOpts {
  x0: number;
  y0: number;
  id: string;
  title: string;
  t: number[];
  y: number[];
  slopes: number[];
  log: boolean;
}

function buildPanel(o: PanelOpts): string {
  const tMin = Math.min(...o.t);
  const tMax = Math.max(...o.t);
  const xOf = (v: number) =>
    o.x0 + ((v - tMin) / (tMax - tMin || 1)) * PANEL_W;

  // reference series share the panel's data anchor
  const anchor = o.y[0] ?? 0;
  const refs = o.slopes.map((s) =>
    o.t.map((ti) => anchor * Math.exp(s * (ti - tMin)))
  );

  let s = `<g class="panel" data-id="${o.id}">\n`;
  s += `<text x="${o.x0 + PANEL_W / 2}" y="${o.y0 - 8}" text-anchor="middle" font-size="11" font-weight="600" fill="#444">${esc(o.title)}</text>\n`;
  s += `<rect x="${o.x0}" y="${o.y0}" width="${PANEL_W}" height="${PANEL_H}" fill="none" stroke="#999" stroke-width="0.8"/>\n`;
  s += `<defs><clipPath id="clip-${o.id}"><rect x="${o.x0}" y="${o.y0}" width="${PANEL_W}" height="${PANEL_H}"/></clipPath></defs>\n`;

  let yOf: (v: number) => number;
  let keep: (v: number) => boolean;

  if (o.log) {
    // the log ordinate spans the positive data only; anything else is dropped
    const pos = o.y.filter((v) => v > 0);
    if (pos.length === 0) {
      s += `<text x="${o.x0 + PANEL_W / 2}" y="${o.y0 + PANEL_H / 2}" text-anchor="middle" font-size="10" fill="#999">no positive values</text>\n`;
      s += xAxis(o, tMin, tMax, xOf);
      s += `</g>\n`;
      return s;
    }
    let dLo = Math.floor(Math.log10(Math.min(...pos)));
    let dHi = Math.ceil(Math.log10(Math.max(...pos)));
    if (dHi === dLo) dHi += 1;
    yOf = (v: number) =>
      o.y0 + PANEL_H - ((Math.log10(v) - dLo) / (dHi - dLo)) * PANEL_H;
    keep = (v: number) => v > 0;

    const step = Math.max(1, Math.ceil((dHi - dLo) / 8));
    for (let d = dLo; d <= dHi; d += step) {
      const yy = yOf(Math.pow(10, d));
      s += `<line x1="${o.x0}" y1="${yy.toFixed(1)}" x2="${o.x0 + PANEL_W}" y2="${yy.toFixed(1)}" stroke="#eee" stroke-width="0.5"/>\n`;
      s += `<text x="${o.x0 - 6}" y="${(yy + 3).toFixed(1)}" text-anchor="end" font-size="9" fill="#666">${fmtDecade(d)}</text>\n`;
    }
  } else {
    const lo = Math.min(0, ...o.y);
    const hi = Math.max(...o.y) * 1.05 || 1;
    yOf = (v: number) => o.y0 + PANEL_H - ((v - lo) / (hi - lo || 1)) * PANEL_H;
    keep = () => true;
    for (const v of niceTicks(lo, hi, 5)) {
      const yy = yOf(v);
      s += `<line x1="${o.x0}" y1="${yy.toFixed(1)}" x2="${o.x0 + PANEL_W}" y2="${yy.toFixed(1)}" stroke="#eee" stroke-width="0.5"/>\n`;
      s += `<text x="${o.x0 - 6}" y="${(yy + 3).toFixed(1)}" text-anchor="end" font-size="9" fill="#666">${fmtTick(v)}</text>\n`;
    }
  }

  s += xAxis(o, tMin, tMax, xOf);

  refs.forEach((r, k) => {
    const color = REF_COLORS[k % REF_COLORS.length]!;
    for (const seg of segments(o.t, r, keep)) {
      s += `<path class="ref" d="${pathOf(seg, xOf, yOf)}" fill="none" stroke="${color}" stroke-width="1.2" stroke-dasharray="6,3" clip-path="url(#clip-${o.id})"/>\n`;
    }
  });
  for (const seg of segments(o.t, o.y, keep)) {
    s += `<path class="mean" d="${pathOf(seg, xOf, yOf)}" fill="none" stroke="${MEAN_COLOR}" stroke-width="1.6" clip-path="url(#clip-${o.id})"/>\n`;
  }

  s += `</g>\n`;
  return s;
}

function xAxis(
  o: PanelOpts,
  tMin: number,
  tMax: number,
  xOf: (v: number) => number
): string {
  let s = "";
  for (const v of niceTicks(tMin, tMax, 6)) {
    const xx = xOf(v);
    s += `<line x1="${xx.toFixed(1)}" y1="${o.y0 + PANEL_H}" x2="${xx.toFixed(1)}" y2="${o.y0 + PANEL_H + 4}" stroke="#999" stroke-width="0.8"/>\n`;
    s += `<text x="${xx.toFixed(1)}" y="${o.y0 + PANEL_H + 15}" text-anchor="middle" font-size="9" fill="#666">${fmtTick(v)}</text>\n`;
  }
  s += `<text x="${o.x0 + PANEL_W / 2}" y="${o.y0 + PANEL_H + 30}" text-anchor="middle" font-size="10" fill="#555">t</text>\n`;
  return s;
}

/** Runs of consecutive kept samples; a dropped sample breaks the line. */
function segments(
  t: number[],
  y: number[],
  keep: (v: number) => boolean
): Array<Array<[number, number]>> {
  const out: Array<Array<[number, number]>> = [];
  let cur: Array<[number, number]> = [];
  for (let i = 0; i < t.length; i++) {
    if (keep(y[i]!)) {
      cur.push([t[i]!, y[i]!]);
    } else if (cur.length > 0) {
      out.push(cur);
      cur = [];
    }
  }
  if (cur.length > 0) out.push(cur);
  return out;
}

function pathOf(
  seg: Array<[number, number]>,
  xOf: (v: number) => number,
  yOf: (v: number) => number
): string {
  return seg
    .map(
      ([x, y], i) =>
        `${i === 0 ? "M" : "L"}${xOf(x).toFixed(2)},${yOf(y).toFixed(2)}`
    )
    .join("");
}

function niceTicks(min: number, max: number, count: number): number[] {
  const range = max - min || 1;
  const rough = range / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rough)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((n) => n >= rough) ?? rough;
  const start = Math.ceil(min / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= max + step * 0.01; v += step) ticks.push(v);
  return ticks;
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function fmtTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-2) return v.toExponential(0);
  return String(Number(v.toPrecision(3)));
}

function fmtDecade(d: number): string {
  return d >= 0 && d <= 3 ? String(Math.pow(10, d)) : `1e${d}`;
}

function fmtSlope(s: number): string {
  return String(Number(s.toPrecision(3)));
}
