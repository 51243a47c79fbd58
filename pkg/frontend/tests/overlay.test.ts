import { describe, expect, it } from "vitest";

import { labelColor, palette } from "../src/palette.js";
import { markersForFrame, overlayFromDecoded, OCCLUDED_COLOR } from "../src/overlay.js";
import type { ServicePoint, TrackedPoint } from "../src/types.js";

describe("palette", () => {
  it("matches the canonical bit-interleaved label colours", () => {
    expect(labelColor(0)).toEqual([0, 0, 0]);
    expect(labelColor(1)).toEqual([128, 0, 0]);
    expect(labelColor(2)).toEqual([0, 128, 0]);
    expect(labelColor(3)).toEqual([128, 128, 0]);
    expect(labelColor(4)).toEqual([0, 0, 128]);
    expect(labelColor(8)).toEqual([64, 0, 0]);
  });

  it("exports 256 rgb triples", () => {
    const table = palette();
    expect(table.length).toBe(768);
    expect([table[3], table[4], table[5]]).toEqual([128, 0, 0]);
  });
});

describe("overlayFromDecoded", () => {
  it("makes background transparent and objects translucent", () => {
    // two pixels: background (black) and object 1 (dark red)
    const rgba = new Uint8ClampedArray([0, 0, 0, 255, 128, 0, 0, 255]);
    const out = overlayFromDecoded(rgba, 0.5);
    expect(out[3]).toBe(0); // background alpha
    expect(out[4]).toBe(128); // object colour preserved
    expect(out[7]).toBe(128); // 0.5 opacity
  });
});

describe("markersForFrame", () => {
  const tracked: TrackedPoint[] = [
    { point_id: 1, x: 1, y: 2, label: "positive", object: 1, occluded: false },
    { point_id: 2, x: 3, y: 4, label: "negative", object: 1, occluded: false },
    { point_id: 3, x: 5, y: 6, label: "positive", object: 1, occluded: true },
  ];
  const pendingPoint: ServicePoint = {
    point_id: -1, frame: 0, x: 9, y: 9, label: "positive", object: 1, removed_from: null,
  };

  it("renders circles for positives and crosses for negatives", () => {
    const markers = markersForFrame(tracked.slice(0, 2), [], 0);
    expect(markers.map((m) => m.shape)).toEqual(["circle", "cross"]);
  });

  it("shows occluded points in red", () => {
    const markers = markersForFrame(tracked, [], 0);
    expect(markers[2].occluded).toBe(true);
    expect(markers[2].color).toBe(OCCLUDED_COLOR);
    expect(markers[0].color).not.toBe(OCCLUDED_COLOR);
  });

  it("appends optimistic markers for the current frame only", () => {
    const markers = markersForFrame([], [pendingPoint], 0);
    expect(markers).toHaveLength(1);
    expect(markers[0].pending).toBe(true);
    expect(markersForFrame([], [pendingPoint], 3)).toHaveLength(0);
  });
});
