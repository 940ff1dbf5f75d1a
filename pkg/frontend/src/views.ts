// Pure view models: everything here maps records to plot-ready numbers and
// is unit-testable without a DOM.

import type { ClassifierRecord, ProfileData } from "./protocol.js";

export interface HistogramBar {
  t0: number;
  t1: number;
  count: number;
}

/** Bucket processed frames by acquisition time to show reduction progress. */
export function progressHistogram(records: ClassifierRecord[], buckets = 24): HistogramBar[] {
  if (records.length === 0 || buckets < 1) {
    return [];
  }
  const times = records.map((r) => r.acquired_at);
  const lo = Math.min(...times);
  const hi = Math.max(...times);
  if (lo === hi) {
    return [{ t0: lo, t1: hi, count: records.length }];
  }
  const width = (hi - lo) / buckets;
  const bars: HistogramBar[] = Array.from({ length: buckets }, (_, i) => ({
    t0: lo + i * width,
    t1: lo + (i + 1) * width,
    count: 0,
  }));
  for (const t of times) {
    const i = Math.min(Math.floor((t - lo) / width), buckets - 1);
    (bars[i] as HistogramBar).count += 1;
  }
  return bars;
}

export interface Series {
  t: number[];
  v: number[];
}

export interface ClassifierPanels {
  total_intensity: Series;
  invariant: Series;
  correlation_length: Series;
}

function byAcquisition(a: ClassifierRecord, b: ClassifierRecord): number {
  if (a.acquired_at !== b.acquired_at) {
    return a.acquired_at - b.acquired_at;
  }
  return a.source_path < b.source_path ? -1 : a.source_path > b.source_path ? 1 : 0;
}

/**
 * One time series per scalar classifier.  Records with no correlation length
 * (flat profiles) are simply absent from that panel; the other panels keep
 * every record.
 */
export function classifierPanels(records: ClassifierRecord[]): ClassifierPanels {
  const ordered = records.slice().sort(byAcquisition);
  const panels: ClassifierPanels = {
    total_intensity: { t: [], v: [] },
    invariant: { t: [], v: [] },
    correlation_length: { t: [], v: [] },
  };
  for (const r of ordered) {
    panels.total_intensity.t.push(r.acquired_at);
    panels.total_intensity.v.push(r.total_intensity);
    panels.invariant.t.push(r.acquired_at);
    panels.invariant.v.push(r.invariant);
    if (r.correlation_length !== null) {
      panels.correlation_length.t.push(r.acquired_at);
      panels.correlation_length.v.push(r.correlation_length);
    }
  }
  return panels;
}

/**
 * Indices to keep when a series is too dense to draw.  Each bucket keeps its
 * minimum and maximum sample so spikes survive; endpoints always survive.
 * Returns indices in ascending order; series at or under budget come back
 * whole.
 */
export function decimateIndices(values: number[], budget = 5000): number[] {
  const n = values.length;
  if (n <= budget || budget < 4) {
    return Array.from({ length: n }, (_, i) => i);
  }
  const buckets = Math.max(Math.floor(budget / 2) - 1, 1);
  const keep = new Set<number>([0, n - 1]);
  const span = (n - 2) / buckets;
  for (let b = 0; b < buckets; b += 1) {
    const start = 1 + Math.floor(b * span);
    const end = Math.min(1 + Math.floor((b + 1) * span), n - 1);
    if (start >= end) {
      continue;
    }
    let iMin = start;
    let iMax = start;
    for (let i = start + 1; i < end; i += 1) {
      const v = values[i] as number;
      if (v < (values[iMin] as number)) {
        iMin = i;
      }
      if (v > (values[iMax] as number)) {
        iMax = i;
      }
    }
    keep.add(iMin);
    keep.add(iMax);
  }
  return [...keep].sort((a, b) => a - b);
}

export interface ProfileView {
  q: number[];
  I: number[];
  lo: number[];
  hi: number[];
}

/**
 * A profile thinned for drawing: intensity picks the kept samples, the
 * uncertainty band follows the same indices so the three stay aligned.
 */
export function profileView(profile: ProfileData, budget = 5000): ProfileView {
  const keep = decimateIndices(profile.I, budget);
  const view: ProfileView = { q: [], I: [], lo: [], hi: [] };
  for (const i of keep) {
    const q = profile.q[i] as number;
    const intensity = profile.I[i] as number;
    const err = profile.E[i] as number;
    view.q.push(q);
    view.I.push(intensity);
    view.lo.push(intensity - err);
    view.hi.push(intensity + err);
  }
  return view;
}

/** Thin a time series with the same min/max rule used for profiles. */
export function seriesView(series: Series, budget = 5000): Series {
  const keep = decimateIndices(series.v, budget);
  return {
    t: keep.map((i) => series.t[i] as number),
    v: keep.map((i) => series.v[i] as number),
  };
}
