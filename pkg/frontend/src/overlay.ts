/** Mask overlay and point marker geometry, kept DOM-free for testability. */

import type { ServicePoint, TrackedPoint } from "./types.js";

/**
 * Turn decoded label-PNG pixels into a translucent overlay.
 *
 * The service's indexed PNGs decode to RGBA where each label already carries
 * its palette colour and label 0 decodes to black; black therefore becomes
 * transparent and everything else keeps its colour at the given opacity.
 */
export function overlayFromDecoded(
  rgba: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray {
  const out = new Uint8ClampedArray(rgba.length);
  const alpha = Math.round(255 * opacity);
  for (let i = 0; i < rgba.length; i += 4) {
    const r = rgba[i];
    const g = rgba[i + 1];
    const b = rgba[i + 2];
    out[i] = r;
    out[i + 1] = g;
    out[i + 2] = b;
    out[i + 3] = r || g || b ? alpha : 0;
  }
  return out;
}

export type MarkerShape = "circle" | "cross";

export const OCCLUDED_COLOR = "#ff3b3b";
export const PENDING_COLOR = "#ffb13b";
export const POSITIVE_COLOR = "#38d05f";
export const NEGATIVE_COLOR = "#3b9bff";

export interface Marker {
  pointId: number;
  frameX: number;
  frameY: number;
  shape: MarkerShape;
  /** occlusion renders red regardless of label */
  color: string;
  occluded: boolean;
  pending: boolean;
}

/** Positive points render as circles, negative points as crosses; occluded red. */
export function markersForFrame(
  tracked: TrackedPoint[],
  pending: ServicePoint[],
  frame: number,
): Marker[] {
  const markers: Marker[] = tracked.map((p) => ({
    pointId: p.point_id,
    frameX: p.x,
    frameY: p.y,
    shape: p.label === "positive" ? ("circle" as const) : ("cross" as const),
    color: p.occluded ? OCCLUDED_COLOR
      : p.label === "positive" ? POSITIVE_COLOR : NEGATIVE_COLOR,
    occluded: p.occluded,
    pending: false,
  }));
  for (const p of pending) {
    if (p.frame !== frame) continue;
    markers.push({
      pointId: p.point_id,
      frameX: p.x,
      frameY: p.y,
      shape: p.label === "positive" ? "circle" : "cross",
      color: PENDING_COLOR,
      occluded: false,
      pending: true,
    });
  }
  return markers;
}
