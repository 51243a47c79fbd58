"""Length-prefixed JSON wire protocol between the engine and backend sidecars.

Every message is a 4-byte big-endian length followed by a UTF-8 JSON object.
Tensors travel as base64 payloads with explicit dtype and shape. One
connection is one session: request ids are echoed, requests alternate with
responses, and dense-prior handles never outlive the connection.
"""
from __future__ import annotations

import base64
import json
import socket
import struct
import threading
from typing import BinaryIO, Optional, Sequence

import numpy as np

from .backends import (SegmenterBackend, SegmenterCapabilities, TrackerBackend,
                       TrackerCapabilities, check_track_inputs)
from .core import (BinaryMask, Frame, LabeledPoint, MaskPrediction, PointLabel,
                   TrajectoryBundle)
from .errors import (InvalidInputError, ProtocolError, TransportError,
                     UnsupportedCapabilityError)

PROTOCOL_VERSION = 1
MAX_BODY_BYTES = 512 * 1024 * 1024

_ERROR_CODES = {
    "transport": TransportError,
    "protocol": ProtocolError,
    "invalid-input": InvalidInputError,
    "unsupported-capability": UnsupportedCapabilityError,
}


def tensor_to_wire(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    return {
        "__tensor__": True,
        "dtype": arr.dtype.str,
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def tensor_from_wire(obj: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"], validate=True)
        dtype = np.dtype(obj["dtype"])
        shape = tuple(int(s) for s in obj["shape"])
        arr = np.frombuffer(raw, dtype=dtype)
        return arr.reshape(shape).copy()
    except (KeyError, ValueError, TypeError) as exc:
        raise ProtocolError(f"malformed tensor field: {exc}") from exc


def write_message(stream: BinaryIO, message: dict) -> None:
    body = json.dumps(message).encode("utf-8")
    try:
        stream.write(struct.pack(">I", len(body)))
        stream.write(body)
        stream.flush()
    except (OSError, ValueError) as exc:
        raise TransportError(f"connection write failed: {exc}") from exc


def read_message(stream: BinaryIO) -> dict:
    header = _read_exact(stream, 4, allow_eof=True)
    if header is None:
        raise TransportError("connection closed")
    (length,) = struct.unpack(">I", header)
    if length > MAX_BODY_BYTES:
        raise TransportError(f"frame of {length} bytes exceeds the {MAX_BODY_BYTES} limit")
    body = _read_exact(stream, length)
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TransportError(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(message, dict) or "kind" not in message:
        raise TransportError("frame body is not a message object")
    return message


def _read_exact(stream: BinaryIO, n: int, allow_eof: bool = False) -> Optional[bytes]:
    chunks = []
    got = 0
    while got < n:
        try:
            chunk = stream.read(n - got)
        except OSError as exc:
            raise TransportError(f"connection read failed: {exc}") from exc
        if not chunk:
            if allow_eof and got == 0:
                return None
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# ---- request payload helpers --------------------------------------------------


def _points_to_wire(points: Sequence[LabeledPoint]) -> dict:
    return {
        "xy": tensor_to_wire(np.array([[p.x, p.y] for p in points], dtype=np.float64)),
        "labels": tensor_to_wire(np.array([int(p.label) for p in points], dtype=np.int8)),
        "objects": tensor_to_wire(np.array([p.object_id for p in points], dtype=np.int64)),
    }


def _points_from_wire(obj: dict) -> list[LabeledPoint]:
    xy = tensor_from_wire(obj["xy"])
    labels = tensor_from_wire(obj["labels"])
    objects = tensor_from_wire(obj["objects"])
    if xy.ndim != 2 or xy.shape[1] != 2 or len(labels) != len(xy) or len(objects) != len(xy):
        raise ProtocolError("inconsistent point arrays")
    return [LabeledPoint(float(x), float(y), PointLabel(int(l)), int(o))
            for (x, y), l, o in zip(xy, labels, objects)]


def _frames_to_wire(frames: Sequence[Frame]) -> dict:
    stack = np.stack([f.pixels for f in frames])
    return {"first_index": frames[0].index, "pixels": tensor_to_wire(stack)}


def _frames_from_wire(obj: dict) -> list[Frame]:
    stack = tensor_from_wire(obj["pixels"])
    if stack.ndim != 4 or stack.shape[3] != 3:
        raise ProtocolError("frame stack must have shape (T, H, W, 3)")
    first = int(obj["first_index"])
    return [Frame(index=first + i, pixels=stack[i]) for i in range(stack.shape[0])]


# ---- server -------------------------------------------------------------------


class BackendServer:
    """Serves one tracker and/or segmenter over any byte stream.

    Each connection owns its dense-prior handles; they are invalidated when
    the connection closes. Unknown message kinds get an error response.
    """

    def __init__(self, tracker: Optional[TrackerBackend] = None,
                 segmenter: Optional[SegmenterBackend] = None):
        self.tracker = tracker
        self.segmenter = segmenter

    def capabilities(self) -> dict:
        caps: dict = {"tracker": None, "segmenter": None}
        if self.tracker is not None:
            caps["tracker"] = {
                "predicts_occlusion": self.tracker.capabilities.predicts_occlusion,
                "window_size": self.tracker.capabilities.window_size,
            }
        if self.segmenter is not None:
            caps["segmenter"] = {
                "accepts_dense_prior": self.segmenter.capabilities.accepts_dense_prior,
                "proposes_masks": self.segmenter.capabilities.proposes_masks,
            }
        return caps

    def serve_stream(self, rfile: BinaryIO, wfile: BinaryIO) -> None:
        """Handle one connection until it closes; never raises on bad input."""
        priors: dict[str, object] = {}
        counter = [0]
        while True:
            try:
                message = read_message(rfile)
            except TransportError as exc:
                if str(exc) != "connection closed":
                    try:
                        write_message(wfile, _error(None, "transport", str(exc)))
                    except TransportError:
                        pass
                return
            try:
                response = self._handle(message, priors, counter)
            except TransportError:
                return
            except ProtocolError as exc:
                response = _error(message.get("id"), "protocol", str(exc))
            except InvalidInputError as exc:
                response = _error(message.get("id"), "invalid-input", str(exc))
            except Exception as exc:  # noqa: BLE001 - the wire must answer, not die
                response = _error(message.get("id"), "internal", f"{type(exc).__name__}: {exc}")
            try:
                write_message(wfile, response)
            except TransportError:
                return

    def serve_socket(self, conn: socket.socket) -> None:
        with conn:
            rfile = conn.makefile("rb")
            wfile = conn.makefile("wb")
            self.serve_stream(rfile, wfile)

    def serve_forever(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Listen and serve each connection on its own thread; returns the bound address."""
        listener = socket.create_server((host, port))
        bound = listener.getsockname()

        def loop():
            while True:
                try:
                    conn, _ = listener.accept()
                except OSError:
                    return
                threading.Thread(target=self.serve_socket, args=(conn,), daemon=True).start()

        threading.Thread(target=loop, daemon=True).start()
        self._listener = listener
        return bound

    # -- handlers --

    def _handle(self, message: dict, priors: dict, counter: list) -> dict:
        kind = message.get("kind")
        mid = message.get("id")
        if kind == "hello":
            if message.get("protocol") != PROTOCOL_VERSION:
                return _error(mid, "protocol",
                              f"unsupported protocol version {message.get('protocol')}")
            return {"kind": "hello", "id": mid, "protocol": PROTOCOL_VERSION,
                    "capabilities": self.capabilities()}
        if kind == "track_request":
            if self.tracker is None:
                return _error(mid, "unsupported-capability", "no tracker behind this endpoint")
            frames = _frames_from_wire(message["frames"])
            queries = _points_from_wire(message["queries"])
            check_track_inputs(frames, queries)
            bundle = self.tracker.track(frames, queries)
            return {
                "kind": "track_response", "id": mid,
                "positions": tensor_to_wire(bundle.positions),
                "occlusion": tensor_to_wire(bundle.occlusion),
            }
        if kind == "segment_request":
            if self.segmenter is None:
                return _error(mid, "unsupported-capability", "no segmenter behind this endpoint")
            frames = _frames_from_wire(message["frame"])
            points = _points_from_wire(message["points"])
            token = message.get("prior")
            prior = None
            if token is not None:
                if token not in priors:
                    raise ProtocolError(f"unknown or stale dense-prior handle {token!r}")
                prior = priors[token]
            pred = self.segmenter.segment(frames[0], points, prior=prior)
            counter[0] += 1
            new_token = f"prior-{counter[0]}"
            priors[new_token] = pred.dense_prior
            return {
                "kind": "segment_response", "id": mid,
                "mask": tensor_to_wire(pred.mask.data.astype(np.uint8)),
                "prior": new_token,
                "object_id": pred.object_id,
                "frame_index": pred.frame_index,
            }
        if kind == "propose_request":
            if self.segmenter is None or not self.segmenter.capabilities.proposes_masks:
                return _error(mid, "unsupported-capability",
                              "this endpoint cannot propose masks")
            frames = _frames_from_wire(message["frame"])
            masks = self.segmenter.propose_masks(frames[0], int(message["max_proposals"]))
            return {
                "kind": "propose_response", "id": mid,
                "masks": [tensor_to_wire(m.data.astype(np.uint8)) for m in masks],
            }
        return _error(mid, "protocol", f"unknown message kind {kind!r}")


def _error(mid, code: str, text: str) -> dict:
    return {"kind": "error", "id": mid, "code": code, "message": text}


# ---- client -------------------------------------------------------------------


class WireConnection:
    """Client side of one session: strict request/response alternation."""

    def __init__(self, rfile: BinaryIO, wfile: BinaryIO):
        self.rfile = rfile
        self.wfile = wfile
        self._lock = threading.Lock()
        self._next_id = 0
        self.capabilities = self._hello()

    def _hello(self) -> dict:
        reply = self.request({"kind": "hello", "protocol": PROTOCOL_VERSION})
        if reply.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"server speaks protocol {reply.get('protocol')}, "
                                f"expected {PROTOCOL_VERSION}")
        return reply.get("capabilities") or {}

    def request(self, message: dict) -> dict:
        with self._lock:
            mid = self._next_id
            self._next_id += 1
            message = dict(message, id=mid)
            write_message(self.wfile, message)
            reply = read_message(self.rfile)
        if reply.get("kind") == "error":
            code = reply.get("code", "protocol")
            raise _ERROR_CODES.get(code, ProtocolError)(reply.get("message", "backend error"))
        if reply.get("id") != mid:
            raise ProtocolError(f"response id {reply.get('id')} does not echo request id {mid}")
        return reply

    def close(self) -> None:
        for stream in (self.wfile, self.rfile):
            try:
                stream.close()
            except OSError:
                pass


class RemoteTracker(TrackerBackend):
    def __init__(self, conn: WireConnection):
        caps = conn.capabilities.get("tracker")
        if caps is None:
            raise UnsupportedCapabilityError("endpoint advertises no tracker")
        self.conn = conn
        self.capabilities = TrackerCapabilities(
            predicts_occlusion=bool(caps.get("predicts_occlusion", True)),
            window_size=caps.get("window_size"))

    def track(self, frames: Sequence[Frame], queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
        check_track_inputs(frames, queries)
        reply = self.conn.request({
            "kind": "track_request",
            "frames": _frames_to_wire(frames),
            "queries": _points_to_wire(queries),
        })
        positions = tensor_from_wire(reply["positions"])
        occlusion = tensor_from_wire(reply["occlusion"])
        if positions.shape[:2] != (len(frames), len(queries)):
            raise ProtocolError(f"trajectory shape {positions.shape} does not match request")
        return TrajectoryBundle.from_queries(frames[0].index, list(queries),
                                             positions, occlusion)


class RemoteSegmenter(SegmenterBackend):
    def __init__(self, conn: WireConnection):
        caps = conn.capabilities.get("segmenter")
        if caps is None:
            raise UnsupportedCapabilityError("endpoint advertises no segmenter")
        self.conn = conn
        self.capabilities = SegmenterCapabilities(
            accepts_dense_prior=bool(caps.get("accepts_dense_prior", True)),
            proposes_masks=bool(caps.get("proposes_masks", False)))

    def segment(self, frame: Frame, points: Sequence[LabeledPoint],
                prior: object = None) -> MaskPrediction:
        if not points:
            raise InvalidInputError("segmentation needs at least one prompt point")
        if prior is not None and not isinstance(prior, str):
            raise ProtocolError("remote dense priors are opaque string handles")
        reply = self.conn.request({
            "kind": "segment_request",
            "frame": _frames_to_wire([frame]),
            "points": _points_to_wire(points),
            "prior": prior,
        })
        mask = tensor_from_wire(reply["mask"])
        if mask.shape != (frame.height, frame.width):
            raise ProtocolError("mask dimensions do not match the frame")
        return MaskPrediction(mask=BinaryMask(mask.astype(bool)),
                              object_id=int(reply.get("object_id", points[0].object_id)),
                              frame_index=frame.index,
                              dense_prior=reply["prior"])

    def propose_masks(self, frame: Frame, max_proposals: int) -> list[BinaryMask]:
        if not self.capabilities.proposes_masks:
            raise UnsupportedCapabilityError("this segmenter does not propose masks")
        reply = self.conn.request({
            "kind": "propose_request",
            "frame": _frames_to_wire([frame]),
            "max_proposals": int(max_proposals),
        })
        return [BinaryMask(tensor_from_wire(m).astype(bool)) for m in reply["masks"]]


def connect_tcp(host: str, port: int, timeout: float = 10.0) -> WireConnection:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    return WireConnection(sock.makefile("rb"), sock.makefile("wb"))
