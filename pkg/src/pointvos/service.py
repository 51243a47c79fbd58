"""Session-oriented annotation API: upload frames, edit points, propagate, export.

Point edits follow the same lineage rules as the interaction simulator; the
per-frame preview only calls the segmenter (no tracking), while an explicit
propagate runs the tracker and re-segments every frame from the edited one
onward. Session state persists to disk on every mutation.
"""
from __future__ import annotations

import base64
import copy
import io
import json
import os
import threading
import uuid
import zipfile
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse
from PIL import Image

from .backends import SegmenterBackend, TrackerBackend, track_full
from .core import (BinaryMask, Frame, LabeledPoint, PipelineConfig, PointLabel,
                   VideoSequence)
from .datasets import index_palette, masks_to_labels
from .errors import InvalidInputError, NotFoundError, PointVosError, TransportError
from .interaction import PointMemory
from .pipeline import two_pass_segment
from . import synthetic, wire

DEFAULT_UPLOAD_LIMIT_FRAMES = 256
DEFAULT_UPLOAD_LIMIT_PIXELS = 64_000_000


class SessionBusyError(PointVosError):
    pass


def _png_bytes(arr: np.ndarray, palette: bool = False) -> bytes:
    if palette:
        img = Image.fromarray(arr.astype(np.uint8), mode="P")
        img.putpalette(index_palette())
    else:
        img = Image.fromarray(arr)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class Session:
    def __init__(self, session_id: str, video: VideoSequence, config: PipelineConfig,
                 tracker: TrackerBackend, segmenter: SegmenterBackend,
                 scene_json: Optional[str], root: Optional[str]):
        self.id = session_id
        self.video = video
        self.config = config
        self.tracker = tracker
        self.segmenter = segmenter
        self.scene_json = scene_json
        self.backend_address = None
        self.root = root
        self.memory = PointMemory()
        self.events: list[dict] = []
        self.predictions: dict = {}  # object -> {frame -> BinaryMask}
        self._trajectories: dict = {}  # point id -> TrajectoryBundle
        self._undo: list[dict] = []
        self._redo: list[dict] = []
        self._mutex = threading.Lock()
        self._propagating = False

    # -- state snapshots ------------------------------------------------------

    def _snapshot(self) -> dict:
        return {
            "records": copy.deepcopy(self.memory.records),
            "next_id": self.memory._next_id,
            "events": copy.deepcopy(self.events),
            "predictions": {o: dict(per) for o, per in self.predictions.items()},
        }

    def _restore(self, snap: dict) -> None:
        self.memory.records = copy.deepcopy(snap["records"])
        self.memory._next_id = snap["next_id"]
        self.events = copy.deepcopy(snap["events"])
        self.predictions = {o: dict(per) for o, per in snap["predictions"].items()}
        self._trajectories.clear()

    def state_dict(self) -> dict:
        """Canonical JSON-ready state, used for persistence and undo equality checks."""
        return {
            "id": self.id,
            "config": json.loads(self.config.to_json()),
            "records": [
                {"point_id": r.point_id, "frame": r.frame_added, "x": r.x, "y": r.y,
                 "label": int(r.label), "object": r.object_id,
                 "removed_from": r.removed_from}
                for r in self.memory.records
            ],
            "events": self.events,
            "predictions": {
                str(o): {str(t): base64.b64encode(np.packbits(m.data).tobytes()).decode()
                         for t, m in sorted(per.items())}
                for o, per in sorted(self.predictions.items())
            },
        }

    def persist(self) -> None:
        if self.root is None:
            return
        session_dir = os.path.join(self.root, self.id)
        os.makedirs(session_dir, exist_ok=True)
        with open(os.path.join(self.root, self.id, "state.json"), "w") as fh:
            json.dump(self.state_dict(), fh)
        meta_path = os.path.join(session_dir, "meta.json")
        if not os.path.exists(meta_path):
            frames_dir = os.path.join(session_dir, "frames")
            os.makedirs(frames_dir, exist_ok=True)
            for frame in self.video.frames:
                with open(os.path.join(frames_dir, f"{frame.index:05d}.png"), "wb") as fh:
                    fh.write(_png_bytes(np.asarray(frame.pixels)))
            with open(meta_path, "w") as fh:
                json.dump({"name": self.video.name, "scene": self.scene_json,
                           "backend_address": self.backend_address}, fh)

    @classmethod
    def load_from_disk(cls, root: str, session_id: str) -> "Session":
        """Rebuild a persisted session: frames, backends, memory, and predictions."""
        session_dir = os.path.join(root, session_id)
        state_path = os.path.join(session_dir, "state.json")
        meta_path = os.path.join(session_dir, "meta.json")
        if not (os.path.isfile(state_path) and os.path.isfile(meta_path)):
            raise NotFoundError(f"session {session_id} not found")
        with open(state_path) as fh:
            state = json.load(fh)
        with open(meta_path) as fh:
            meta = json.load(fh)
        frames_dir = os.path.join(session_dir, "frames")
        frames = []
        for fname in sorted(os.listdir(frames_dir)):
            arr = np.asarray(Image.open(os.path.join(frames_dir, fname)).convert("RGB"))
            frames.append(Frame(index=int(os.path.splitext(fname)[0]), pixels=arr))
        video = VideoSequence(name=meta.get("name", "restored"), frames=tuple(frames))
        config = PipelineConfig(**state["config"])
        tracker, segmenter, scene_json = _build_backends(
            {"scene": meta.get("scene"),
             "backend": {"address": meta.get("backend_address")}})
        session = cls(session_id, video, config, tracker, segmenter, scene_json, root)
        session.backend_address = meta.get("backend_address")
        for r in state["records"]:
            record = session.memory.add(r["frame"], r["x"], r["y"],
                                        PointLabel(r["label"]), r["object"])
            record.removed_from = r["removed_from"]
        session.events = state["events"]
        h, w = video.height, video.width
        for obj, per in state["predictions"].items():
            for t, packed in per.items():
                bits = np.unpackbits(
                    np.frombuffer(base64.b64decode(packed), dtype=np.uint8),
                    count=h * w).astype(bool).reshape(h, w)
                session.predictions.setdefault(int(obj), {})[int(t)] = BinaryMask(bits)
        return session

    # -- point positions -------------------------------------------------------

    def _position_at(self, record, t: int):
        if t == record.frame_added:
            return record.x, record.y, False
        bundle = self._trajectories.get(record.point_id)
        if bundle is None:
            return None
        ti = t - bundle.start_frame
        if ti < 0 or ti >= bundle.num_frames:
            return None
        occluded = bundle.occlusion[ti, 0] >= self.config.occlusion_threshold
        return float(bundle.positions[ti, 0, 0]), float(bundle.positions[ti, 0, 1]), occluded

    def _prompt_points(self, object_id: int, t: int) -> tuple[list, list]:
        positives, negatives = [], []
        for record in self.memory.active_at(t):
            pos = self._position_at(record, t)
            if pos is None or pos[2]:
                continue
            point = LabeledPoint(pos[0], pos[1], record.label, object_id)
            if record.object_id == object_id:
                (positives if record.label == PointLabel.POSITIVE else negatives).append(point)
            elif self.config.cross_object_negatives and record.label == PointLabel.POSITIVE:
                negatives.append(LabeledPoint(pos[0], pos[1], PointLabel.NEGATIVE, object_id))
        return positives, negatives

    def preview(self, object_id: int, t: int) -> BinaryMask:
        positives, negatives = self._prompt_points(object_id, t)
        pred, _ = two_pass_segment(self.segmenter, self.video.frames[t], positives,
                                   negatives, self.config.refinement_iterations, object_id)
        return pred.mask

    # -- mutations ---------------------------------------------------------------

    def add_point(self, frame: int, x: float, y: float, label: PointLabel,
                  object_id: int) -> tuple[int, BinaryMask]:
        if not (0 <= frame < self.video.num_frames):
            raise NotFoundError(f"frame {frame} does not exist")
        if not (0 <= x < self.video.width and 0 <= y < self.video.height):
            raise InvalidInputError("point is outside the frame")
        with self._mutex:
            self._undo.append(self._snapshot())
            self._redo.clear()
            record = self.memory.add(frame, x, y, label, object_id)
            self.events.append({"kind": "add", "point_id": record.point_id, "frame": frame,
                                "x": x, "y": y, "label": int(label), "object": object_id})
            mask = self.preview(object_id, frame)
            self.predictions.setdefault(object_id, {})[frame] = mask
            self.persist()
        return record.point_id, mask

    def remove_point(self, point_id: int) -> dict:
        with self._mutex:
            record = next((r for r in self.memory.records
                           if r.point_id == point_id and r.removed_from is None), None)
            if record is None:
                raise NotFoundError(f"point {point_id} not found")
            self._undo.append(self._snapshot())
            self._redo.clear()
            self.memory.remove_from(record, record.frame_added)
            self.events.append({"kind": "remove", "point_id": point_id,
                                "frame": record.frame_added, "object": record.object_id})
            mask = self.preview(record.object_id, record.frame_added)
            self.predictions.setdefault(record.object_id, {})[record.frame_added] = mask
            self.persist()
            return {"object": record.object_id, "frame": record.frame_added, "mask": mask}

    def undo(self) -> None:
        with self._mutex:
            if not self._undo:
                raise InvalidInputError("nothing to undo")
            self._redo.append(self._snapshot())
            self._restore(self._undo.pop())
            self.persist()

    def redo(self) -> None:
        with self._mutex:
            if not self._redo:
                raise InvalidInputError("nothing to redo")
            self._undo.append(self._snapshot())
            self._restore(self._redo.pop())
            self.persist()

    # -- propagation ---------------------------------------------------------------

    def propagate(self, from_frame: int):
        """Validate, then return a progress iterator over (frame, object) pairs.

        Predictions commit per frame, so concurrent readers always see a
        consistent prefix. One propagation may run at a time.
        """
        if not (0 <= from_frame < self.video.num_frames):
            raise NotFoundError(f"frame {from_frame} does not exist")
        with self._mutex:
            if self._propagating:
                raise SessionBusyError("a propagation is already running")
            objects = sorted({r.object_id for r in self.memory.active_at(from_frame)
                              if r.label == PointLabel.POSITIVE})
            if not objects:
                raise InvalidInputError(f"no positive point is active at frame {from_frame}")
            self._undo.append(self._snapshot())
            self._redo.clear()
            self._propagating = True
        return self._propagate_iter(from_frame, objects)

    def _propagate_iter(self, from_frame: int, objects: list):
        try:
            for record in self.memory.records:
                if record.removed_from is not None and record.removed_from <= record.frame_added:
                    continue
                if record.point_id in self._trajectories:
                    continue
                frames = self.video.frames[record.frame_added:]
                query = LabeledPoint(record.x, record.y, record.label, record.object_id)
                self._trajectories[record.point_id] = track_full(self.tracker, frames, [query])
            for t in range(from_frame, self.video.num_frames):
                for obj in objects:
                    positives, negatives = self._prompt_points(obj, t)
                    pred, _ = two_pass_segment(self.segmenter, self.video.frames[t],
                                               positives, negatives,
                                               self.config.refinement_iterations, obj)
                    self.predictions.setdefault(obj, {})[t] = pred.mask
                    yield t, obj
            self.events.append({"kind": "propagate", "from": from_frame,
                                "objects": objects})
            self.persist()
        finally:
            self._propagating = False

    # -- export ---------------------------------------------------------------------

    def export_zip(self) -> bytes:
        if not any(self.predictions.values()):
            raise InvalidInputError("nothing to export; propagate or add points first")
        name = f"session-{self.id[:8]}"
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for frame in self.video.frames:
                zf.writestr(f"JPEGImages/{name}/{frame.index:05d}.png",
                            _png_bytes(np.asarray(frame.pixels)))
            by_frame: dict[int, dict] = {}
            for obj, per in self.predictions.items():
                for t, mask in per.items():
                    by_frame.setdefault(t, {})[obj] = mask
            for t, masks in sorted(by_frame.items()):
                labels = masks_to_labels(masks, self.video.width, self.video.height)
                zf.writestr(f"Annotations/{name}/{t:05d}.png", _png_bytes(labels, palette=True))
            zf.writestr("points.json", json.dumps(self.events, indent=2))
        return buf.getvalue()


def _build_backends(payload: dict) -> tuple[TrackerBackend, SegmenterBackend, Optional[str]]:
    if "scene" in payload and payload["scene"] is not None:
        scene_json = json.dumps(payload["scene"]) if isinstance(payload["scene"], dict) \
            else str(payload["scene"])
        spec = synthetic.scene_from_json(scene_json)
        tracker, segmenter = synthetic.make_backends(spec)
        return tracker, segmenter, scene_json
    backend = payload.get("backend") or {}
    address = backend.get("address")
    if not address:
        raise InvalidInputError("session needs either a scene or a backend address")
    host, _, port = address.rpartition(":")
    conn = wire.connect_tcp(host or "127.0.0.1", int(port))
    return wire.RemoteTracker(conn), wire.RemoteSegmenter(conn), None


def _decode_frames(payload: dict, limit_frames: int, limit_pixels: int) -> VideoSequence:
    if payload.get("scene") is not None:
        scene_json = json.dumps(payload["scene"]) if isinstance(payload["scene"], dict) \
            else str(payload["scene"])
        return synthetic.render(synthetic.scene_from_json(scene_json))
    if payload.get("dataset") is not None:
        from .datasets import load_davis_dir
        ref = payload["dataset"]
        wanted = ref.get("sequence")
        for dp in load_davis_dir(ref["root"]):
            if wanted is None or dp.sequence_id == wanted:
                if dp.scene_json is not None and payload.get("backend") is None:
                    payload["scene"] = dp.scene_json  # builtin oracle backends
                return dp.video
        raise NotFoundError(f"sequence {wanted!r} not found in {ref['root']}")
    frames_b64 = payload.get("frames")
    if not frames_b64:
        raise InvalidInputError("session needs at least one frame")
    if len(frames_b64) > limit_frames:
        raise InvalidInputError(f"upload exceeds the {limit_frames}-frame limit")
    frames = []
    total = 0
    for i, b64 in enumerate(frames_b64):
        img = Image.open(io.BytesIO(base64.b64decode(b64))).convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
        total += arr.shape[0] * arr.shape[1]
        if total > limit_pixels:
            raise InvalidInputError(f"upload exceeds the {limit_pixels}-pixel limit")
        frames.append(Frame(index=i, pixels=arr))
    return VideoSequence(name=payload.get("name", "upload"), frames=tuple(frames))


def create_app(sessions_root: Optional[str] = None,
               upload_limit_frames: int = DEFAULT_UPLOAD_LIMIT_FRAMES,
               upload_limit_pixels: int = DEFAULT_UPLOAD_LIMIT_PIXELS) -> FastAPI:
    app = FastAPI(title="pointvos annotation service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions

    def get_session(sid: str) -> Session:
        if sid not in sessions:
            if sessions_root is not None:
                sessions[sid] = Session.load_from_disk(sessions_root, sid)
                return sessions[sid]
            raise NotFoundError(f"session {sid} not found")
        return sessions[sid]

    @app.exception_handler(PointVosError)
    async def _domain_error(request: Request, exc: PointVosError):
        status = 404 if isinstance(exc, NotFoundError) else \
            409 if isinstance(exc, SessionBusyError) else \
            502 if isinstance(exc, TransportError) else \
            413 if "limit" in str(exc) else 400
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.post("/sessions")
    async def create_session(request: Request):
        payload = await request.json()
        video = _decode_frames(payload, upload_limit_frames, upload_limit_pixels)
        config = PipelineConfig(**payload.get("config", {}))
        tracker, segmenter, scene_json = _build_backends(payload)
        sid = uuid.uuid4().hex
        session = Session(sid, video, config, tracker, segmenter, scene_json, sessions_root)
        session.backend_address = (payload.get("backend") or {}).get("address")
        sessions[sid] = session
        session.persist()
        return {"id": sid, "frames": video.num_frames,
                "width": video.width, "height": video.height}

    @app.get("/sessions/{sid}")
    async def session_info(sid: str):
        s = get_session(sid)
        return {
            "id": s.id, "frames": s.video.num_frames, "width": s.video.width,
            "height": s.video.height,
            "objects": sorted({r.object_id for r in s.memory.records}),
            "points": [
                {"point_id": r.point_id, "frame": r.frame_added, "x": r.x, "y": r.y,
                 "label": "positive" if r.label == PointLabel.POSITIVE else "negative",
                 "object": r.object_id, "removed_from": r.removed_from}
                for r in s.memory.records
            ],
            "events": s.events,
            "predicted_frames": {str(o): sorted(per) for o, per in s.predictions.items()},
        }

    @app.get("/sessions/{sid}/frames/{frame}")
    async def get_frame(sid: str, frame: int):
        s = get_session(sid)
        if not (0 <= frame < s.video.num_frames):
            raise NotFoundError(f"frame {frame} does not exist")
        return Response(content=_png_bytes(np.asarray(s.video.frames[frame].pixels)),
                        media_type="image/png")

    @app.get("/sessions/{sid}/points/{frame}")
    async def points_at_frame(sid: str, frame: int):
        """Tracked point positions at one frame, with occlusion flags for the viewer."""
        s = get_session(sid)
        if not (0 <= frame < s.video.num_frames):
            raise NotFoundError(f"frame {frame} does not exist")
        out = []
        for record in s.memory.active_at(frame):
            pos = s._position_at(record, frame)
            if pos is None:
                continue
            out.append({
                "point_id": record.point_id, "x": pos[0], "y": pos[1],
                "label": "positive" if record.label == PointLabel.POSITIVE else "negative",
                "object": record.object_id, "occluded": bool(pos[2]),
            })
        return {"frame": frame, "points": out}

    @app.post("/sessions/{sid}/points")
    async def add_point(sid: str, request: Request):
        s = get_session(sid)
        p = await request.json()
        label = PointLabel.POSITIVE if p.get("label", "positive") == "positive" \
            else PointLabel.NEGATIVE
        pid, mask = s.add_point(int(p["frame"]), float(p["x"]), float(p["y"]),
                                label, int(p.get("object", 1)))
        return {"point_id": pid, "frame": int(p["frame"]), "object": int(p.get("object", 1)),
                "preview": base64.b64encode(
                    _png_bytes(mask.data.astype(np.uint8), palette=True)).decode()}

    @app.delete("/sessions/{sid}/points/{pid}")
    async def remove_point(sid: str, pid: int):
        s = get_session(sid)
        out = s.remove_point(pid)
        return {"object": out["object"], "frame": out["frame"],
                "preview": base64.b64encode(
                    _png_bytes(out["mask"].data.astype(np.uint8), palette=True)).decode()}

    @app.post("/sessions/{sid}/undo")
    async def undo(sid: str):
        get_session(sid).undo()
        return {"ok": True}

    @app.post("/sessions/{sid}/redo")
    async def redo(sid: str):
        get_session(sid).redo()
        return {"ok": True}

    @app.post("/sessions/{sid}/propagate")
    async def propagate(sid: str, request: Request):
        s = get_session(sid)
        payload = await request.json() if await request.body() else {}
        from_frame = int(payload.get("from", 0))
        progress = s.propagate(from_frame)  # validates before streaming

        def stream():
            try:
                for t, obj in progress:
                    yield json.dumps({"frame": t, "object": obj, "status": "done"}) + "\n"
                yield json.dumps({"done": True}) + "\n"
            except PointVosError as exc:
                yield json.dumps({"done": False, "error": str(exc)}) + "\n"

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.get("/sessions/{sid}/masks/{frame}")
    async def get_mask(sid: str, frame: int):
        s = get_session(sid)
        if not (0 <= frame < s.video.num_frames):
            raise NotFoundError(f"frame {frame} does not exist")
        masks = {o: per[frame] for o, per in s.predictions.items() if frame in per}
        labels = masks_to_labels(masks, s.video.width, s.video.height)
        return Response(content=_png_bytes(labels, palette=True), media_type="image/png")

    @app.get("/sessions/{sid}/export")
    async def export(sid: str):
        s = get_session(sid)
        data = s.export_zip()
        return Response(content=data, media_type="application/zip",
                        headers={"Content-Disposition":
                                 f'attachment; filename="{s.id[:8]}.zip"'})

    return app
