/** Canvas/frame coordinate mapping under contain-fit letterboxing and zoom. */

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Fit a frame into a canvas, preserving aspect ratio, then apply zoom. */
export function fitTransform(
  frameWidth: number,
  frameHeight: number,
  canvasWidth: number,
  canvasHeight: number,
  zoom = 1,
  panX = 0,
  panY = 0,
): ViewTransform {
  if (frameWidth < 1 || frameHeight < 1) {
    throw new Error("frame must be at least 1x1");
  }
  const base = Math.min(canvasWidth / frameWidth, canvasHeight / frameHeight);
  const scale = base * zoom;
  return {
    scale,
    offsetX: (canvasWidth - frameWidth * scale) / 2 + panX,
    offsetY: (canvasHeight - frameHeight * scale) / 2 + panY,
  };
}

/** Continuous frame coordinates for a canvas position; null outside the frame. */
export function canvasToFrame(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
  frameWidth: number,
  frameHeight: number,
): { x: number; y: number } | null {
  const x = (canvasX - t.offsetX) / t.scale;
  const y = (canvasY - t.offsetY) / t.scale;
  if (x < 0 || y < 0 || x >= frameWidth || y >= frameHeight) {
    return null;
  }
  return { x, y };
}

/** The integer frame pixel under a click, or null when letterboxed space was hit. */
export function clickToPixel(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
  frameWidth: number,
  frameHeight: number,
): { px: number; py: number } | null {
  const pos = canvasToFrame(t, canvasX, canvasY, frameWidth, frameHeight);
  if (pos === null) {
    return null;
  }
  return { px: Math.floor(pos.x), py: Math.floor(pos.y) };
}

/** Canvas position of a frame coordinate (the pixel's top-left corner). */
export function frameToCanvas(
  t: ViewTransform,
  frameX: number,
  frameY: number,
): { x: number; y: number } {
  return { x: t.offsetX + frameX * t.scale, y: t.offsetY + frameY * t.scale };
}
