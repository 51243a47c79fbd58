/** Timeline scrubbing helpers: clamping and per-frame status badges. */

import type { UiSessionState } from "./types.js";

export function clampFrame(frame: number, numFrames: number): number {
  if (numFrames < 1) return 0;
  return Math.max(0, Math.min(numFrames - 1, Math.round(frame)));
}

export type FrameBadge = "mask" | "no-mask-yet" | "propagating";

export function frameBadge(state: UiSessionState, frame: number): FrameBadge {
  if (state.propagating) return "propagating";
  return state.maskedFrames.has(frame) ? "mask" : "no-mask-yet";
}

/** Per-frame quality dots for the scrubber strip. */
export function timelineTicks(state: UiSessionState): FrameBadge[] {
  return Array.from({ length: state.numFrames }, (_, t) => frameBadge(state, t));
}
