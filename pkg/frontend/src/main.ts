/** DOM wiring: frame viewer with mask overlay, click-to-point, timeline, export. */

import { AnnotationClient } from "./api.js";
import { clickToPixel, fitTransform, frameToCanvas } from "./coords.js";
import { markersForFrame, overlayFromDecoded } from "./overlay.js";
import { reduce, type Action } from "./state.js";
import { clampFrame, frameBadge, timelineTicks } from "./timeline.js";
import { initialState, type ServicePoint, type UiSessionState } from "./types.js";

const serviceUrl =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8450";
const client = new AnnotationClient(serviceUrl);

let state: UiSessionState = initialState();
let zoom = 1;
let tempId = -1;
const maskCache = new Map<number, ImageBitmap>();

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const scrubber = document.getElementById("scrubber") as HTMLInputElement;
const ticksBox = document.getElementById("ticks") as HTMLDivElement;
const badge = document.getElementById("badge") as HTMLSpanElement;
const status = document.getElementById("status") as HTMLSpanElement;
const opacity = document.getElementById("opacity") as HTMLInputElement;
const labelButton = document.getElementById("label") as HTMLButtonElement;
const objectInput = document.getElementById("object") as HTMLInputElement;

function dispatch(action: Action): void {
  state = reduce(state, action);
  void render();
}

async function loadSession(id: string): Promise<void> {
  const detail = await client.sessionDetail(id);
  maskCache.clear();
  dispatch({ kind: "session-loaded", detail });
  scrubber.max = String(detail.frames - 1);
}

async function maskBitmap(frame: number): Promise<ImageBitmap | null> {
  if (!state.sessionId || !state.maskedFrames.has(frame)) return null;
  const cached = maskCache.get(frame);
  if (cached) return cached;
  const blob = await client.fetchMask(state.sessionId, frame);
  const bitmap = await createImageBitmap(blob);
  maskCache.set(frame, bitmap);
  return bitmap;
}

async function render(): Promise<void> {
  if (!state.sessionId) return;
  const t = fitTransform(state.frameWidth, state.frameHeight, canvas.width,
    canvas.height, zoom);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const frameImage = await createImageBitmap(
    await (await fetch(client.frameUrl(state.sessionId, state.currentFrame))).blob());
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(frameImage, t.offsetX, t.offsetY,
    state.frameWidth * t.scale, state.frameHeight * t.scale);

  const mask = await maskBitmap(state.currentFrame);
  if (mask) {
    const scratch = new OffscreenCanvas(state.frameWidth, state.frameHeight);
    const sctx = scratch.getContext("2d")!;
    sctx.drawImage(mask, 0, 0);
    const decoded = sctx.getImageData(0, 0, state.frameWidth, state.frameHeight);
    const overlay = new Uint8ClampedArray(
      overlayFromDecoded(decoded.data, state.overlayOpacity));
    sctx.putImageData(new ImageData(overlay, state.frameWidth, state.frameHeight), 0, 0);
    ctx.drawImage(scratch, t.offsetX, t.offsetY,
      state.frameWidth * t.scale, state.frameHeight * t.scale);
  }

  let tracked: Awaited<ReturnType<typeof client.pointsAtFrame>> = [];
  try {
    tracked = await client.pointsAtFrame(state.sessionId, state.currentFrame);
  } catch {
    /* markers are cosmetic; keep rendering */
  }
  for (const marker of markersForFrame(tracked, state.pendingPoints,
    state.currentFrame)) {
    const pos = frameToCanvas(t, marker.frameX + 0.5, marker.frameY + 0.5);
    ctx.strokeStyle = marker.color;
    ctx.lineWidth = 2;
    if (marker.shape === "circle") {
      ctx.beginPath();
      ctx.arc(pos.x, pos.y, 6, 0, 2 * Math.PI);
      ctx.stroke();
    } else {
      ctx.beginPath();
      ctx.moveTo(pos.x - 5, pos.y - 5);
      ctx.lineTo(pos.x + 5, pos.y + 5);
      ctx.moveTo(pos.x + 5, pos.y - 5);
      ctx.lineTo(pos.x - 5, pos.y + 5);
      ctx.stroke();
    }
  }

  scrubber.value = String(state.currentFrame);
  badge.textContent = frameBadge(state, state.currentFrame);
  status.textContent = state.propagating
    ? `propagating ${state.propagationProgress}/${state.numFrames}`
    : state.lastError ?? "ready";
  ticksBox.innerHTML = timelineTicks(state)
    .map((b, i) => `<i class="${b}${i === state.currentFrame ? " here" : ""}"></i>`)
    .join("");
  labelButton.textContent = state.pendingLabel;
}

async function submitClick(frame: number, px: number, py: number,
  label: "positive" | "negative", object: number): Promise<void> {
  const optimistic: ServicePoint = {
    point_id: tempId--, frame, x: px, y: py, label, object, removed_from: null,
  };
  dispatch({ kind: "optimistic-add", point: optimistic });
  try {
    const reply = await client.addPoint(state.sessionId!, frame, px, py, label, object);
    maskCache.delete(frame);
    dispatch({
      kind: "point-confirmed",
      tempId: optimistic.point_id,
      point: { ...optimistic, point_id: reply.point_id },
    });
  } catch (err) {
    dispatch({
      kind: "point-rejected",
      tempId: optimistic.point_id,
      error: err instanceof Error ? err.message : String(err),
    });
  }
}

async function drainQueuedClicks(): Promise<void> {
  const queued = state.queuedClicks;
  if (!queued.length) return;
  dispatch({ kind: "drain-clicks" });
  for (const c of queued) {
    await submitClick(c.frame, c.px, c.py, c.label, c.object);
  }
}

canvas.addEventListener("click", (event: MouseEvent) => {
  void (async () => {
    if (!state.sessionId) return;
    const rect = canvas.getBoundingClientRect();
    const t = fitTransform(state.frameWidth, state.frameHeight, canvas.width,
      canvas.height, zoom);
    const pixel = clickToPixel(t, event.clientX - rect.left, event.clientY - rect.top,
      state.frameWidth, state.frameHeight);
    if (!pixel) return;
    const label = event.altKey ? "negative" : state.pendingLabel;
    if (state.propagating) {
      // edits are serialized behind the running propagation, not dropped
      dispatch({ kind: "queue-click", click: { frame: state.currentFrame,
        px: pixel.px, py: pixel.py, label, object: state.selectedObject } });
      return;
    }
    await submitClick(state.currentFrame, pixel.px, pixel.py, label,
      state.selectedObject);
  })();
});

scrubber.addEventListener("input", () => {
  dispatch({ kind: "scrub", frame: clampFrame(Number(scrubber.value), state.numFrames) });
});
opacity.addEventListener("input", () => {
  dispatch({ kind: "set-opacity", opacity: Number(opacity.value) / 100 });
});
labelButton.addEventListener("click", () => dispatch({ kind: "toggle-label" }));
objectInput.addEventListener("change", () => {
  dispatch({ kind: "select-object", object: Number(objectInput.value) });
});

document.getElementById("propagate")!.addEventListener("click", () => {
  void (async () => {
    if (!state.sessionId || state.propagating) return;
    dispatch({ kind: "propagate-started" });
    try {
      let completed = 0;
      await client.propagate(state.sessionId, 0, () => {
        completed += 1;
        dispatch({ kind: "propagate-progress", completed });
      });
      maskCache.clear();
      dispatch({
        kind: "propagate-finished",
        frames: Array.from({ length: state.numFrames }, (_, i) => i),
      });
    } catch (err) {
      dispatch({
        kind: "propagate-failed",
        error: err instanceof Error ? err.message : String(err),
      });
    }
    await drainQueuedClicks();
  })();
});

document.getElementById("undo")!.addEventListener("click", () => {
  void client.undo(state.sessionId!).then(() => loadSession(state.sessionId!));
});
document.getElementById("export")!.addEventListener("click", () => {
  if (state.sessionId) window.open(client.exportUrl(state.sessionId), "_blank");
});
document.getElementById("open")!.addEventListener("click", () => {
  void (async () => {
    const id = (document.getElementById("session-id") as HTMLInputElement).value.trim();
    if (id) await loadSession(id);
  })();
});
