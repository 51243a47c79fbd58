import { describe, expect, it } from "vitest";

import { canvasToFrame, clickToPixel, fitTransform, frameToCanvas } from "../src/coords.js";

/** Small deterministic PRNG so the property sweep is reproducible. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("fitTransform", () => {
  it("letterboxes a wide frame vertically centred", () => {
    const t = fitTransform(100, 50, 200, 200);
    expect(t.scale).toBe(2);
    expect(t.offsetX).toBe(0);
    expect(t.offsetY).toBe(50);
  });

  it("applies zoom around the same centre", () => {
    const t = fitTransform(100, 100, 200, 200, 2);
    expect(t.scale).toBe(4);
    expect(t.offsetX).toBe(-100);
  });

  it("rejects degenerate frames", () => {
    expect(() => fitTransform(0, 10, 100, 100)).toThrow();
  });
});

describe("canvasToFrame", () => {
  it("returns null for clicks in the letterbox", () => {
    const t = fitTransform(100, 50, 200, 200);
    expect(canvasToFrame(t, 100, 10, 100, 50)).toBeNull();
    expect(canvasToFrame(t, 100, 100, 100, 50)).not.toBeNull();
  });

  it("round-trips through frameToCanvas", () => {
    const t = fitTransform(64, 48, 500, 300, 1.7);
    const pos = frameToCanvas(t, 10.25, 20.5);
    const back = canvasToFrame(t, pos.x, pos.y, 64, 48)!;
    expect(back.x).toBeCloseTo(10.25, 9);
    expect(back.y).toBeCloseTo(20.5, 9);
  });
});

describe("coordinate fidelity property", () => {
  it("a click inside a rendered mask pixel maps back to that pixel", () => {
    const rand = mulberry32(42);
    for (let trial = 0; trial < 1000; trial++) {
      const frameW = 2 + Math.floor(rand() * 300);
      const frameH = 2 + Math.floor(rand() * 300);
      const canvasW = 50 + Math.floor(rand() * 900);
      const canvasH = 50 + Math.floor(rand() * 900);
      const zoom = 0.25 + rand() * 7.75;
      const panX = (rand() - 0.5) * 100;
      const panY = (rand() - 0.5) * 100;
      const t = fitTransform(frameW, frameH, canvasW, canvasH, zoom, panX, panY);

      const px = Math.floor(rand() * frameW);
      const py = Math.floor(rand() * frameH);
      // click strictly inside the rendered square of that pixel
      const cx = t.offsetX + (px + 0.02 + rand() * 0.96) * t.scale;
      const cy = t.offsetY + (py + 0.02 + rand() * 0.96) * t.scale;
      const hit = clickToPixel(t, cx, cy, frameW, frameH);
      expect(hit, `trial ${trial}`).not.toBeNull();
      expect(hit!.px).toBe(px);
      expect(hit!.py).toBe(py);
    }
  });
});
