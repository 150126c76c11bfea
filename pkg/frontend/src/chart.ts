// SVG chart geometry for the startup explorer: reference band, normalized
// trace, phase shading and violation highlights. Pure functions produce path
// data; render() assembles the SVG. No detection math here: runs come from
// the server's verdict.
import type { StartupView, ViolationRun } from "./types.js";

export interface ChartBox {
  width: number;
  height: number;
  padLeft: number;
  padBottom: number;
  padTop: number;
}

export const DEFAULT_BOX: ChartBox = {
  width: 860, height: 220, padLeft: 36, padBottom: 18, padTop: 8,
};

export interface Scale {
  x(i: number): number;
  y(v: number): number;
  yMin: number;
  yMax: number;
}

export function makeScale(length: number, yMin: number, yMax: number,
                          box: ChartBox = DEFAULT_BOX): Scale {
  const plotW = box.width - box.padLeft;
  const plotH = box.height - box.padBottom - box.padTop;
  const span = yMax - yMin || 1;
  return {
    x: (i) => box.padLeft + (length <= 1 ? 0 : (i / (length - 1)) * plotW),
    y: (v) => box.padTop + plotH - ((v - yMin) / span) * plotH,
    yMin,
    yMax,
  };
}

/** Value range over trace and band rows with 5% headroom. */
export function valueRange(rows: number[][]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of rows) {
    for (const v of row) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  if (!isFinite(lo)) return [0, 1];
  const pad = (hi - lo || 1) * 0.05;
  return [lo - pad, hi + pad];
}

export function linePath(values: number[], scale: Scale): string {
  return values
    .map((v, i) => `${i === 0 ? "M" : "L"}${scale.x(i).toFixed(1)},${scale.y(v).toFixed(1)}`)
    .join("");
}

/** Closed polygon: hi forward, lo backwards. */
export function bandPath(lo: number[], hi: number[], scale: Scale): string {
  const top = hi.map((v, i) =>
    `${i === 0 ? "M" : "L"}${scale.x(i).toFixed(1)},${scale.y(v).toFixed(1)}`);
  const bottom = [...lo.keys()].reverse().map((i) =>
    `L${scale.x(i).toFixed(1)},${scale.y(lo[i]).toFixed(1)}`);
  return top.join("") + bottom.join("") + "Z";
}

export interface HighlightSegment {
  x0: number;
  x1: number;
  run: ViolationRun;
}

/** x-extents of each violating run for one channel row. */
export function violationSegments(runs: ViolationRun[], channel: string,
                                  scale: Scale): HighlightSegment[] {
  return runs
    .filter((r) => r.channel === channel)
    .map((r) => ({
      x0: scale.x(r.start),
      x1: scale.x(r.start + r.length - 1),
      run: r,
    }));
}

export interface PhaseBand {
  x0: number;
  x1: number;
  phase: number;
}

export function phaseBands(phases: number[][], scale: Scale): PhaseBand[] {
  return phases.map(([s, e], idx) => ({
    x0: scale.x(s),
    x1: scale.x(Math.max(s, e - 1)),
    phase: idx + 1,
  }));
}

const SVG_NS = "http://www.w3.org/2000/svg";

function el(name: string, attrs: Record<string, string>): SVGElement {
  const node = document.createElementNS(SVG_NS, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  return node;
}

/** One channel row of the explorer: band + trace + highlights + phase shading. */
export function renderChannelChart(view: StartupView, channelIndex: number,
                                   box: ChartBox = DEFAULT_BOX): SVGElement {
  const channel = view.channels[channelIndex];
  const trace = view.trace[channelIndex];
  const lo = view.lo[channelIndex];
  const hi = view.hi[channelIndex];
  const [yMin, yMax] = valueRange([trace, lo, hi]);
  const scale = makeScale(trace.length, yMin, yMax, box);
  const svg = el("svg", {
    viewBox: `0 0 ${box.width} ${box.height}`,
    class: "chart",
    role: "img",
    "data-channel": channel,
  });
  for (const band of phaseBands(view.phases, scale)) {
    svg.appendChild(el("rect", {
      x: band.x0.toFixed(1), y: String(box.padTop),
      width: (band.x1 - band.x0).toFixed(1),
      height: String(box.height - box.padTop - box.padBottom),
      class: `phase phase-${band.phase}`,
    }));
  }
  svg.appendChild(el("path", { d: bandPath(lo, hi, scale), class: "band" }));
  svg.appendChild(el("path", { d: linePath(trace, scale), class: "trace" }));
  for (const seg of violationSegments(view.verdict.runs, channel, scale)) {
    svg.appendChild(el("rect", {
      x: seg.x0.toFixed(1), y: String(box.padTop),
      width: Math.max(2, seg.x1 - seg.x0).toFixed(1),
      height: String(box.height - box.padTop - box.padBottom),
      class: "violation",
      "data-phase": String(seg.run.phase),
    }));
  }
  const axis = el("text", {
    x: "4", y: String(box.padTop + 10), class: "axis-label",
  });
  axis.textContent = channel;
  svg.appendChild(axis);
  return svg;
}
