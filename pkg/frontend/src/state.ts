/** Pure state transitions; the DOM layer dispatches and re-renders. */

import type { QueuedClick, ServicePoint, SessionDetail, UiSessionState } from "./types.js";
import { initialState } from "./types.js";

export type Action =
  | { kind: "session-loaded"; detail: SessionDetail }
  | { kind: "scrub"; frame: number }
  | { kind: "select-object"; object: number }
  | { kind: "toggle-label" }
  | { kind: "set-opacity"; opacity: number }
  | { kind: "optimistic-add"; point: ServicePoint }
  | { kind: "point-confirmed"; tempId: number; point: ServicePoint }
  | { kind: "point-rejected"; tempId: number; error: string }
  | { kind: "point-removed"; pointId: number }
  | { kind: "mask-available"; frame: number }
  | { kind: "queue-click"; click: QueuedClick }
  | { kind: "drain-clicks" }
  | { kind: "propagate-started" }
  | { kind: "propagate-progress"; completed: number }
  | { kind: "propagate-finished"; frames: number[] }
  | { kind: "propagate-failed"; error: string }
  | { kind: "error"; error: string };

export function reduce(state: UiSessionState, action: Action): UiSessionState {
  switch (action.kind) {
    case "session-loaded": {
      const masked = new Set<number>();
      for (const frames of Object.values(action.detail.predicted_frames)) {
        for (const f of frames) masked.add(f);
      }
      return {
        ...initialState(),
        sessionId: action.detail.id,
        numFrames: action.detail.frames,
        frameWidth: action.detail.width,
        frameHeight: action.detail.height,
        points: action.detail.points.filter((p) => p.removed_from === null),
        maskedFrames: masked,
        overlayOpacity: state.overlayOpacity,
      };
    }
    case "scrub": {
      const frame = Math.max(0, Math.min(state.numFrames - 1, action.frame));
      return { ...state, currentFrame: frame };
    }
    case "select-object":
      return { ...state, selectedObject: Math.max(1, action.object) };
    case "toggle-label":
      return {
        ...state,
        pendingLabel: state.pendingLabel === "positive" ? "negative" : "positive",
      };
    case "set-opacity":
      return { ...state, overlayOpacity: Math.max(0, Math.min(1, action.opacity)) };
    case "optimistic-add":
      return { ...state, pendingPoints: [...state.pendingPoints, action.point] };
    case "point-confirmed": {
      const masked = new Set(state.maskedFrames);
      masked.add(action.point.frame);
      return {
        ...state,
        pendingPoints: state.pendingPoints.filter((p) => p.point_id !== action.tempId),
        points: [...state.points, action.point],
        maskedFrames: masked,
        lastError: null,
      };
    }
    case "point-rejected":
      return {
        ...state,
        pendingPoints: state.pendingPoints.filter((p) => p.point_id !== action.tempId),
        lastError: action.error,
      };
    case "point-removed":
      return {
        ...state,
        points: state.points.filter((p) => p.point_id !== action.pointId),
      };
    case "mask-available": {
      const masked = new Set(state.maskedFrames);
      masked.add(action.frame);
      return { ...state, maskedFrames: masked };
    }
    case "queue-click":
      return { ...state, queuedClicks: [...state.queuedClicks, action.click] };
    case "drain-clicks":
      return { ...state, queuedClicks: [] };
    case "propagate-started":
      return { ...state, propagating: true, propagationProgress: 0, lastError: null };
    case "propagate-progress":
      return { ...state, propagationProgress: action.completed };
    case "propagate-finished": {
      const masked = new Set(state.maskedFrames);
      for (const f of action.frames) masked.add(f);
      return { ...state, propagating: false, maskedFrames: masked };
    }
    case "propagate-failed":
      return { ...state, propagating: false, lastError: action.error };
    case "error":
      return { ...state, lastError: action.error };
  }
}
