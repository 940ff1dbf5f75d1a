import { describe, expect, it } from "vitest";

import type { ClassifierRecord } from "../src/protocol.js";
import {
  classifierPanels,
  decimateIndices,
  profileView,
  progressHistogram,
  seriesView,
} from "../src/views.js";
import { svgHistogram, svgProfile, svgSeries } from "../src/svg.js";

function record(k: number, overrides: Partial<ClassifierRecord> = {}): ClassifierRecord {
  return {
    total_intensity: 100 * k,
    invariant: 2.5 * k,
    correlation_length: 10 + k,
    source_path: `/data/run_${String(k).padStart(4, "0")}.tif`,
    dataset: "run",
    acquired_at: 1700000000 + 3 * k,
    timestamp_source: "tiff_tag",
    ...overrides,
  };
}

describe("progress histogram", () => {
  it("is empty for no records", () => {
    expect(progressHistogram([])).toEqual([]);
  });

  it("a single acquisition instant collapses to one full bar", () => {
    const records = [record(0), record(0), record(0)];
    const bars = progressHistogram(records);
    expect(bars.length).toBe(1);
    expect(bars[0]?.count).toBe(3);
  });

  it("conserves the record count and covers the time span", () => {
    const records = Array.from({ length: 137 }, (_, k) => record(k));
    const bars = progressHistogram(records, 24);
    expect(bars.length).toBe(24);
    expect(bars.reduce((acc, b) => acc + b.count, 0)).toBe(137);
    expect(bars[0]?.t0).toBe(1700000000);
    expect(bars[23]?.t1).toBe(1700000000 + 3 * 136);
    for (let i = 1; i < bars.length; i += 1) {
      expect(bars[i]?.t0).toBeCloseTo(bars[i - 1]?.t1 as number, 6);
    }
  });

  it("counts every record into the bucket holding its time", () => {
    const records = [
      record(0, { acquired_at: 0 }),
      record(1, { acquired_at: 1 }),
      record(2, { acquired_at: 9 }),
      record(3, { acquired_at: 10 }),
    ];
    const bars = progressHistogram(records, 5);
    expect(bars.map((b) => b.count)).toEqual([2, 0, 0, 0, 2]);
  });
});

describe("classifier panels", () => {
  it("emits one point per record per scalar, in acquisition order", () => {
    const shuffled = [record(2), record(0), record(3), record(1)];
    const panels = classifierPanels(shuffled);
    expect(panels.total_intensity.t).toEqual([
      1700000000, 1700000003, 1700000006, 1700000009,
    ]);
    expect(panels.total_intensity.v).toEqual([0, 100, 200, 300]);
    expect(panels.invariant.v).toEqual([0, 2.5, 5, 7.5]);
    expect(panels.correlation_length.v).toEqual([10, 11, 12, 13]);
  });

  it("skips only the correlation panel for records without a length scale", () => {
    const records = [record(0), record(1, { correlation_length: null }), record(2)];
    const panels = classifierPanels(records);
    expect(panels.total_intensity.v.length).toBe(3);
    expect(panels.invariant.v.length).toBe(3);
    expect(panels.correlation_length.t).toEqual([1700000000, 1700000006]);
  });
});

describe("decimation", () => {
  it("keeps a series at or under budget whole", () => {
    const values = Array.from({ length: 5000 }, (_, i) => Math.sin(i));
    expect(decimateIndices(values, 5000).length).toBe(5000);
  });

  it("cuts an oversized series below budget while keeping endpoints", () => {
    const values = Array.from({ length: 60000 }, (_, i) => Math.sin(i / 100));
    const keep = decimateIndices(values, 5000);
    expect(keep.length).toBeLessThanOrEqual(5000);
    expect(keep.length).toBeGreaterThan(2000);
    expect(keep[0]).toBe(0);
    expect(keep[keep.length - 1]).toBe(59999);
    for (let i = 1; i < keep.length; i += 1) {
      expect((keep[i] as number) > (keep[i - 1] as number)).toBe(true);
    }
  });

  it("never loses the global extremes", () => {
    const values = Array.from({ length: 80000 }, (_, i) => Math.sin(i / 7));
    values[31337] = 1000;
    values[64001] = -1000;
    const keep = decimateIndices(values, 5000);
    expect(keep).toContain(31337);
    expect(keep).toContain(64001);
  });

  it("profile views follow the kept intensity samples", () => {
    const n = 20000;
    const profile = {
      q: Array.from({ length: n }, (_, i) => 0.01 + i * 1e-4),
      I: Array.from({ length: n }, (_, i) => 1000 / (1 + i * 1e-3)),
      E: Array.from({ length: n }, () => 1.0),
    };
    const view = profileView(profile, 5000);
    expect(view.q.length).toBeLessThanOrEqual(5000);
    expect(view.q.length).toBe(view.I.length);
    expect(view.q.length).toBe(view.lo.length);
    expect(view.I[0]).toBe(1000);
    for (let i = 0; i < view.I.length; i += 1) {
      expect(view.hi[i]).toBeCloseTo((view.I[i] as number) + 1, 9);
      expect(view.lo[i]).toBeCloseTo((view.I[i] as number) - 1, 9);
    }
  });

  it("series views keep time and value aligned", () => {
    const n = 30000;
    const series = {
      t: Array.from({ length: n }, (_, i) => i * 2),
      v: Array.from({ length: n }, (_, i) => (i % 97) * 1.5),
    };
    const view = seriesView(series, 5000);
    expect(view.t.length).toBe(view.v.length);
    expect(view.t.length).toBeLessThanOrEqual(5000);
    for (let i = 0; i < view.t.length; i += 1) {
      const original = (view.t[i] as number) / 2;
      expect(view.v[i]).toBe((original % 97) * 1.5);
    }
  });
});

describe("svg rendering", () => {
  it("renders an empty-state message without records", () => {
    const svg = svgHistogram([], { width: 400, height: 160 }, "progress");
    expect(svg).toContain("<svg");
    expect(svg).toContain("no records");
  });

  it("renders one rect per non-empty bucket", () => {
    const records = Array.from({ length: 10 }, (_, k) => record(k));
    const bars = progressHistogram(records, 5);
    const svg = svgHistogram(bars, { width: 400, height: 160 }, "progress");
    const rects = svg.match(/<rect class="bar"/g) ?? [];
    expect(rects.length).toBe(bars.filter((b) => b.count > 0).length);
  });

  it("renders series as a polyline with point markers for small sets", () => {
    const panels = classifierPanels([record(0), record(1), record(2)]);
    const svg = svgSeries(panels.invariant, { width: 400, height: 160 }, "invariant");
    expect(svg).toContain("polyline");
    const dots = svg.match(/<circle class="dot"/g) ?? [];
    expect(dots.length).toBe(3);
  });

  it("renders a profile with an uncertainty band", () => {
    const view = profileView({ q: [0.1, 0.2, 0.3], I: [9, 4, 1], E: [1, 0.5, 0.2] }, 100);
    const svg = svgProfile(view, { width: 400, height: 160 }, "profile");
    expect(svg).toContain('class="band"');
    expect(svg).toContain('class="line"');
  });

  it("degenerate extents still produce finite coordinates", () => {
    const svg = svgSeries({ t: [5], v: [7] }, { width: 400, height: 160 }, "single");
    expect(svg).not.toContain("NaN");
    expect(svg).not.toContain("Infinity");
  });
});
