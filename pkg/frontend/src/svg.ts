// SVG renderers that return markup strings, so they work without a DOM.

import type { HistogramBar, ProfileView, Series } from "./views.js";

export interface PlotSize {
  width: number;
  height: number;
}

const PAD = { left: 46, right: 8, top: 8, bottom: 22 };

interface Scale {
  (value: number): number;
}

function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0;
  if (span === 0) {
    const mid = (r0 + r1) / 2;
    return () => mid;
  }
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) {
      lo = v;
    }
    if (v > hi) {
      hi = v;
    }
  }
  if (lo === Infinity) {
    return [0, 1];
  }
  return lo === hi ? [lo - 0.5, hi + 0.5] : [lo, hi];
}

function frame(size: PlotSize, body: string, label: string): string {
  return (
    `<svg viewBox="0 0 ${size.width} ${size.height}" ` +
    `xmlns="http://www.w3.org/2000/svg" role="img" aria-label="${label}">` +
    `<rect class="plot-bg" x="0" y="0" width="${size.width}" height="${size.height}"/>` +
    body +
    "</svg>"
  );
}

function fmt(v: number): string {
  if (v === 0) {
    return "0";
  }
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-2) {
    return v.toExponential(1);
  }
  return String(Number(v.toPrecision(4)));
}

function axes(size: PlotSize, x: [number, number], y: [number, number]): string {
  const innerRight = size.width - PAD.right;
  const innerBottom = size.height - PAD.bottom;
  return (
    `<line class="axis" x1="${PAD.left}" y1="${innerBottom}" x2="${innerRight}" y2="${innerBottom}"/>` +
    `<line class="axis" x1="${PAD.left}" y1="${PAD.top}" x2="${PAD.left}" y2="${innerBottom}"/>` +
    `<text class="tick" x="${PAD.left}" y="${size.height - 6}">${fmt(x[0])}</text>` +
    `<text class="tick" text-anchor="end" x="${innerRight}" y="${size.height - 6}">${fmt(x[1])}</text>` +
    `<text class="tick" text-anchor="end" x="${PAD.left - 4}" y="${innerBottom}">${fmt(y[0])}</text>` +
    `<text class="tick" text-anchor="end" x="${PAD.left - 4}" y="${PAD.top + 10}">${fmt(y[1])}</text>`
  );
}

export function svgHistogram(bars: HistogramBar[], size: PlotSize, label: string): string {
  if (bars.length === 0) {
    return frame(size, `<text class="empty" x="${size.width / 2}" y="${size.height / 2}" text-anchor="middle">no records</text>`, label);
  }
  const t0 = (bars[0] as HistogramBar).t0;
  const t1 = (bars[bars.length - 1] as HistogramBar).t1;
  const maxCount = Math.max(...bars.map((b) => b.count), 1);
  const sx = linearScale(t0, t1, PAD.left, size.width - PAD.right);
  const sy = linearScale(0, maxCount, size.height - PAD.bottom, PAD.top);
  const baseline = size.height - PAD.bottom;
  let body = "";
  for (const bar of bars) {
    if (bar.count === 0) {
      continue;
    }
    const x0 = sx(bar.t0);
    const x1 = bar.t1 === bar.t0 ? x0 + 2 : sx(bar.t1);
    const top = sy(bar.count);
    body +=
      `<rect class="bar" x="${x0.toFixed(1)}" y="${top.toFixed(1)}" ` +
      `width="${Math.max(x1 - x0 - 1, 1).toFixed(1)}" height="${(baseline - top).toFixed(1)}"/>`;
  }
  return frame(size, body + axes(size, [t0, t1], [0, maxCount]), label);
}

function polyline(xs: number[], ys: number[], sx: Scale, sy: Scale, cls: string): string {
  const pts = xs.map((x, i) => `${sx(x).toFixed(1)},${sy(ys[i] as number).toFixed(1)}`).join(" ");
  return `<polyline class="${cls}" fill="none" points="${pts}"/>`;
}

export function svgSeries(series: Series, size: PlotSize, label: string): string {
  if (series.t.length === 0) {
    return frame(size, `<text class="empty" x="${size.width / 2}" y="${size.height / 2}" text-anchor="middle">no records</text>`, label);
  }
  const xr = extent(series.t);
  const yr = extent(series.v);
  const sx = linearScale(xr[0], xr[1], PAD.left, size.width - PAD.right);
  const sy = linearScale(yr[0], yr[1], size.height - PAD.bottom, PAD.top);
  let dots = "";
  if (series.t.length <= 200) {
    for (let i = 0; i < series.t.length; i += 1) {
      dots += `<circle class="dot" cx="${sx(series.t[i] as number).toFixed(1)}" cy="${sy(series.v[i] as number).toFixed(1)}" r="2"/>`;
    }
  }
  const body = polyline(series.t, series.v, sx, sy, "line") + dots;
  return frame(size, body + axes(size, xr, yr), label);
}

export function svgProfile(view: ProfileView, size: PlotSize, label: string): string {
  if (view.q.length === 0) {
    return frame(size, `<text class="empty" x="${size.width / 2}" y="${size.height / 2}" text-anchor="middle">no profile yet</text>`, label);
  }
  const xr = extent(view.q);
  const yr = extent([...view.lo, ...view.hi]);
  const sx = linearScale(xr[0], xr[1], PAD.left, size.width - PAD.right);
  const sy = linearScale(yr[0], yr[1], size.height - PAD.bottom, PAD.top);
  const upper = view.q.map((q, i) => `${sx(q).toFixed(1)},${sy(view.hi[i] as number).toFixed(1)}`);
  const lower = view.q
    .map((q, i) => `${sx(q).toFixed(1)},${sy(view.lo[i] as number).toFixed(1)}`)
    .reverse();
  const band = `<polygon class="band" points="${[...upper, ...lower].join(" ")}"/>`;
  const line = polyline(view.q, view.I, sx, sy, "line");
  return frame(size, band + line + axes(size, xr, yr), label);
}
