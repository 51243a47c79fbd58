/** Shared wire types mirroring the annotation service API. */

export type PointLabelName = "positive" | "negative";

export interface SessionInfo {
  id: string;
  frames: number;
  width: number;
  height: number;
}

export interface ServicePoint {
  point_id: number;
  frame: number;
  x: number;
  y: number;
  label: PointLabelName;
  object: number;
  removed_from: number | null;
}

/** A point's tracked position at a specific frame, as the service reports it. */
export interface TrackedPoint {
  point_id: number;
  x: number;
  y: number;
  label: PointLabelName;
  object: number;
  occluded: boolean;
}

/** A click captured while a propagation was running, replayed afterwards. */
export interface QueuedClick {
  frame: number;
  px: number;
  py: number;
  label: PointLabelName;
  object: number;
}

export interface SessionDetail extends SessionInfo {
  objects: number[];
  points: ServicePoint[];
  events: unknown[];
  predicted_frames: Record<string, number[]>;
}

export interface AddPointReply {
  point_id: number;
  frame: number;
  object: number;
  /** base64 indexed PNG of the per-frame preview mask */
  preview: string;
}

export interface PropagateProgress {
  frame?: number;
  object?: number;
  status?: string;
  done?: boolean;
  error?: string;
}

/** Everything the view needs; derivable entirely from service responses. */
export interface UiSessionState {
  sessionId: string | null;
  numFrames: number;
  frameWidth: number;
  frameHeight: number;
  currentFrame: number;
  overlayOpacity: number;
  selectedObject: number;
  pendingLabel: PointLabelName;
  propagating: boolean;
  propagationProgress: number;
  /** frames whose masks are known to exist on the service */
  maskedFrames: Set<number>;
  points: ServicePoint[];
  /** optimistic markers not yet confirmed by the service */
  pendingPoints: ServicePoint[];
  /** clicks made during propagation, applied once it finishes */
  queuedClicks: QueuedClick[];
  lastError: string | null;
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    numFrames: 0,
    frameWidth: 0,
    frameHeight: 0,
    currentFrame: 0,
    overlayOpacity: 0.55,
    selectedObject: 1,
    pendingLabel: "positive",
    propagating: false,
    propagationProgress: 0,
    maskedFrames: new Set(),
    points: [],
    pendingPoints: [],
    queuedClicks: [],
    lastError: null,
  };
}
