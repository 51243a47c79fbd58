"""Parametric synthetic videos with exact ground truth, plus oracle backends.

Scenes are closed-form: every shape's position is an analytic function of the
frame index, so ground-truth masks, point trajectories, and occlusion
intervals are all computable exactly. The oracle tracker and segmenter built
from a scene serve as desk-scale stand-ins for real model backends and can
inject calibrated noise.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .backends import (SegmenterBackend, SegmenterCapabilities, TrackerBackend,
                       TrackerCapabilities, check_track_inputs)
from .core import (BinaryMask, Frame, LabeledPoint, MaskPrediction,
                   TrajectoryBundle, VideoSequence)
from .errors import InvalidInputError, ProtocolError


@dataclass(frozen=True)
class Motion:
    """Closed-form centre position over time."""

    kind: str  # constant | linear | sinusoidal
    origin: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 24.0
    phase: float = 0.0

    def center(self, t: float) -> tuple[float, float]:
        x0, y0 = self.origin
        if self.kind == "constant":
            return (x0, y0)
        if self.kind == "linear":
            return (x0 + self.velocity[0] * t, y0 + self.velocity[1] * t)
        if self.kind == "sinusoidal":
            s = math.sin(2.0 * math.pi * t / self.period + self.phase)
            return (x0 + self.amplitude[0] * s, y0 + self.amplitude[1] * s)
        raise InvalidInputError(f"unknown motion kind {self.kind!r}")


@dataclass(frozen=True)
class Shape:
    """A rigid coloured shape: disk, axis-aligned rectangle, or polygon."""

    kind: str  # disk | rect | polygon
    motion: Motion
    radius: float = 0.0
    half_size: tuple[float, float] = (0.0, 0.0)
    vertices: tuple = ()  # polygon vertices relative to the centre
    color: tuple[int, int, int] = (200, 200, 200)
    depth: int = 0

    def contains(self, x, y, t: float):
        """Membership test; x and y may be scalars or arrays."""
        cx, cy = self.motion.center(t)
        if self.kind == "disk":
            return (x - cx) ** 2 + (y - cy) ** 2 <= self.radius ** 2
        if self.kind == "rect":
            hw, hh = self.half_size
            return (np.abs(x - cx) <= hw) & (np.abs(y - cy) <= hh)
        if self.kind == "polygon":
            return _point_in_polygon(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                                     np.asarray(self.vertices, dtype=float) + [cx, cy])
        raise InvalidInputError(f"unknown shape kind {self.kind!r}")

    def raster(self, t: float, width: int, height: int) -> np.ndarray:
        ys, xs = np.mgrid[0:height, 0:width]
        return np.asarray(self.contains(xs, ys, t), dtype=bool)


def _point_in_polygon(x, y, verts: np.ndarray):
    """Even-odd rule crossing test, vectorised over x/y."""
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    n = len(verts)
    j = n - 1
    for i in range(n):
        xi, yi = verts[i]
        xj, yj = verts[j]
        straddles = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= straddles & (x < x_cross)
        j = i
    return inside if inside.shape else bool(inside)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise injected by the oracle backends; all-zero means exact oracles."""

    boundary_dilation_px: int = 0
    point_jitter_sigma: float = 0.0
    drift_sigma_per_frame: float = 0.0  # random-walk tracking error
    occlusion_flip_prob: float = 0.0
    mask_flip_prob: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    name: str
    width: int
    height: int
    num_frames: int
    shapes: tuple = ()  # tracked objects, object ids 1..n in order
    occluders: tuple = ()  # drawn but never tracked or segmented
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    background: tuple[int, int, int] = (16, 16, 16)
    seed: int = 0

    def with_noise(self, **kwargs) -> "SceneSpec":
        return replace(self, noise=replace(self.noise, **kwargs))

    def with_seed(self, seed: int) -> "SceneSpec":
        return replace(self, seed=seed)


def scene_to_json(spec: SceneSpec) -> str:
    return json.dumps(asdict(spec), indent=2, sort_keys=True)


def scene_from_json(text: str) -> SceneSpec:
    raw = json.loads(text)

    def shape(d):
        d = dict(d)
        d["motion"] = Motion(**{k: tuple(v) if isinstance(v, list) else v
                                for k, v in d["motion"].items()})
        for key in ("half_size", "color"):
            d[key] = tuple(d[key])
        d["vertices"] = tuple(tuple(v) for v in d["vertices"])
        return Shape(**d)

    raw["shapes"] = tuple(shape(s) for s in raw["shapes"])
    raw["occluders"] = tuple(shape(s) for s in raw["occluders"])
    raw["noise"] = NoiseSpec(**raw["noise"])
    raw["background"] = tuple(raw["background"])
    return SceneSpec(**raw)


class SceneWorld:
    """Precomputed rasters and lookups shared by the renderer and the oracles."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        # stacking order: by depth, then objects before occluders, then list order
        entries = [(s.depth, 0, i, s) for i, s in enumerate(spec.shapes)]
        entries += [(s.depth, 1, i, s) for i, s in enumerate(spec.occluders)]
        entries.sort(key=lambda e: e[:3])
        self.stack = entries  # bottom to top
        self.object_shapes = list(spec.shapes)
        t_probe = 0
        for shape in list(spec.shapes) + list(spec.occluders):
            if not shape.raster(t_probe, spec.width, spec.height).any():
                raise InvalidInputError(f"shape {shape.kind} has zero visible area at t=0")
        self._full = {}  # (stack position, t) -> raster
        self._visible = {}  # (object id, t) -> raster

    def _full_raster(self, pos: int, t: int) -> np.ndarray:
        key = (pos, t)
        if key not in self._full:
            shape = self.stack[pos][3]
            self._full[key] = shape.raster(t, self.spec.width, self.spec.height)
        return self._full[key]

    def visible_mask(self, object_id: int, t: int) -> np.ndarray:
        """Object raster minus everything stacked strictly above it."""
        key = (object_id, t)
        if key not in self._visible:
            pos = next(i for i, e in enumerate(self.stack)
                       if e[1] == 0 and e[2] == object_id - 1)
            vis = self._full_raster(pos, t).copy()
            for above in range(pos + 1, len(self.stack)):
                vis &= ~self._full_raster(above, t)
            self._visible[key] = vis
        return self._visible[key]

    def owner_at(self, x: float, y: float, t: float):
        """Topmost shape containing the continuous point, or None for background."""
        for depth, group, idx, shape in reversed(self.stack):
            if shape.contains(x, y, t):
                return (group, idx, shape)
        return None

    def object_under(self, x: float, y: float, t: int) -> Optional[int]:
        """Object id visibly under the continuous point: topmost shape wins, occluders hide."""
        if not (0 <= x < self.spec.width and 0 <= y < self.spec.height):
            return None
        owner = self.owner_at(x, y, t)
        if owner is None or owner[0] != 0:
            return None
        return owner[1] + 1

    def render_frame(self, t: int) -> Frame:
        px = np.empty((self.spec.height, self.spec.width, 3), dtype=np.uint8)
        px[:] = self.spec.background
        for pos in range(len(self.stack)):
            shape = self.stack[pos][3]
            px[self._full_raster(pos, t)] = shape.color
        return Frame(index=t, pixels=px)


def render(spec: SceneSpec) -> VideoSequence:
    """Render all frames and exact per-object visibility masks."""
    world = SceneWorld(spec)
    frames = tuple(world.render_frame(t) for t in range(spec.num_frames))
    gt = {}
    for oid in range(1, len(spec.shapes) + 1):
        gt[oid] = tuple(BinaryMask(world.visible_mask(oid, t)) for t in range(spec.num_frames))
    return VideoSequence(name=spec.name, frames=frames, gt_masks=gt)


def _derived_rng(spec: SceneSpec, op: str, *parts: bytes) -> np.random.Generator:
    h = hashlib.blake2b(digest_size=16)
    h.update(f"{spec.seed}|{op}".encode())
    for p in parts:
        h.update(p)
    return np.random.default_rng(int.from_bytes(h.digest(), "big"))


class OracleTracker(TrackerBackend):
    """Tracks points by riding the closed-form motion of the shape under each query.

    Background queries stay put. Occlusion scores are exact geometry unless
    flipped by noise; jitter and random-walk drift corrupt reported positions
    for every frame after the query frame.
    """

    def __init__(self, spec: SceneSpec):
        self.world = SceneWorld(spec)
        self.spec = spec
        self.capabilities = TrackerCapabilities(predicts_occlusion=True, window_size=None)

    def track(self, frames: Sequence[Frame], queries: Sequence[LabeledPoint]) -> TrajectoryBundle:
        check_track_inputs(frames, queries)
        t0 = frames[0].index
        n = len(queries)
        T = len(frames)
        positions = np.zeros((T, n, 2), dtype=np.float64)
        occlusion = np.zeros((T, n), dtype=np.float64)
        noise = self.spec.noise
        qbytes = np.array([[q.x, q.y, float(q.label)] for q in queries]).tobytes()
        rng = _derived_rng(self.spec, "track", t0.to_bytes(4, "big"), qbytes)

        owners = [self.world.owner_at(q.x, q.y, t0) for q in queries]
        drift = np.zeros((n, 2))
        for ti in range(T):
            t = t0 + ti
            jitter = rng.normal(0.0, noise.point_jitter_sigma or 0.0, size=(n, 2)) \
                if noise.point_jitter_sigma > 0 else np.zeros((n, 2))
            if noise.drift_sigma_per_frame > 0 and ti > 0:
                drift = drift + rng.normal(0.0, noise.drift_sigma_per_frame, size=(n, 2))
            flips = rng.random(n) < noise.occlusion_flip_prob \
                if noise.occlusion_flip_prob > 0 else np.zeros(n, dtype=bool)
            for i, q in enumerate(queries):
                owner = owners[i]
                if owner is None:
                    true_pos = (q.x, q.y)
                else:
                    shape = owner[2]
                    c0 = shape.motion.center(t0)
                    ct = shape.motion.center(t)
                    true_pos = (q.x + ct[0] - c0[0], q.y + ct[1] - c0[1])
                occluded = self._is_occluded(owner, true_pos, t)
                if ti == 0:
                    positions[ti, i] = (q.x, q.y)
                    occlusion[ti, i] = 0.0
                else:
                    positions[ti, i] = (true_pos[0] + jitter[i, 0] + drift[i, 0],
                                        true_pos[1] + jitter[i, 1] + drift[i, 1])
                    occ = occluded
                    if flips[i]:
                        occ = not occ
                    occlusion[ti, i] = 1.0 if occ else 0.0
        return TrajectoryBundle.from_queries(t0, list(queries), positions, occlusion)

    def _is_occluded(self, owner, pos, t: float) -> bool:
        x, y = pos
        if not (0 <= x < self.spec.width and 0 <= y < self.spec.height):
            return True
        top = self.world.owner_at(x, y, t)
        if owner is None:
            return top is not None  # a shape slid over this background point
        return top is not None and top[:2] != owner[:2] and self._above(top, owner)

    def _above(self, a, b) -> bool:
        ka = (a[2].depth, a[0], a[1])
        kb = (b[2].depth, b[0], b[1])
        return ka > kb


class _Prior:
    """Opaque dense-prior handle: replays the producing call's answer."""

    __slots__ = ("owner", "signature", "mask")

    def __init__(self, owner: int, signature: bytes, mask: BinaryMask):
        self.owner = owner
        self.signature = signature
        self.mask = mask


def _points_signature(frame_index: int, points: Sequence[LabeledPoint]) -> bytes:
    arr = np.array(sorted((p.x, p.y, float(p.label)) for p in points))
    return frame_index.to_bytes(4, "big") + arr.tobytes()


class OracleSegmenter(SegmenterBackend):
    """Returns the exact visible mask of the object most voted by positive points.

    Points vote for the object whose visible region contains them; background
    votes count against. Negative points subtract the visible mask of whatever
    non-winning object they sit on. A dense prior replays the previous answer
    for an identical prompt, making refinement passes idempotent.
    """

    def __init__(self, spec: SceneSpec):
        self.world = SceneWorld(spec)
        self.spec = spec
        self.capabilities = SegmenterCapabilities(accepts_dense_prior=True, proposes_masks=True)
        self._token = id(self)

    def segment(self, frame: Frame, points: Sequence[LabeledPoint],
                prior: object = None) -> MaskPrediction:
        if not points:
            raise InvalidInputError("segmentation needs at least one prompt point")
        t = frame.index
        if prior is not None:
            if not isinstance(prior, _Prior) or prior.owner != self._token:
                raise ProtocolError("dense prior was not produced by this backend session")
        signature = _points_signature(t, points)
        object_id = points[0].object_id
        if prior is not None and prior.signature == signature:
            mask = prior.mask
        else:
            mask = self._predict(t, points)
        handle = _Prior(self._token, signature, mask)
        return MaskPrediction(mask=mask, object_id=object_id, frame_index=t, dense_prior=handle)

    def _predict(self, t: int, points: Sequence[LabeledPoint]) -> BinaryMask:
        votes: dict[int, int] = {}
        background_votes = 0
        for p in points:
            if not p.is_positive():
                continue
            oid = self.world.object_under(p.x, p.y, t)
            if oid is None:
                background_votes += 1
            else:
                votes[oid] = votes.get(oid, 0) + 1
        if not votes:
            return BinaryMask.zeros(self.spec.width, self.spec.height)
        winner = min(votes, key=lambda o: (-votes[o], o))
        if background_votes > votes[winner]:
            return BinaryMask.zeros(self.spec.width, self.spec.height)
        mask = self.world.visible_mask(winner, t).copy()
        for p in points:
            if p.is_positive():
                continue
            oid = self.world.object_under(p.x, p.y, t)
            if oid is not None and oid != winner:
                mask &= ~self.world.visible_mask(oid, t)
        return BinaryMask(self._apply_noise(mask, t, points))

    def _apply_noise(self, mask: np.ndarray, t: int, points: Sequence[LabeledPoint]) -> np.ndarray:
        noise = self.spec.noise
        if noise.boundary_dilation_px > 0 and mask.any():
            dist = ndimage.distance_transform_edt(~mask)
            mask = dist <= noise.boundary_dilation_px
        if noise.mask_flip_prob > 0:
            rng = _derived_rng(self.spec, "segment", _points_signature(t, points))
            flips = rng.random(mask.shape) < noise.mask_flip_prob
            mask = mask ^ flips
        return mask

    def propose_masks(self, frame: Frame, max_proposals: int) -> list[BinaryMask]:
        if max_proposals < 1:
            raise InvalidInputError("max_proposals must be >= 1")
        t = frame.index
        candidates = []
        for oid in range(1, len(self.spec.shapes) + 1):
            vis = self.world.visible_mask(oid, t)
            if vis.any():
                candidates.append((int(vis.sum()), oid, BinaryMask(vis)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        kept: list[BinaryMask] = []
        for _, _, mask in candidates:
            if len(kept) == max_proposals:
                break
            if all(_iou(mask, other) <= 0.9 for other in kept):
                kept.append(mask)
        return kept


def _iou(a: BinaryMask, b: BinaryMask) -> float:
    union = np.logical_or(a.data, b.data).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a.data, b.data).sum() / union)


def make_backends(spec: SceneSpec) -> tuple[OracleTracker, OracleSegmenter]:
    return OracleTracker(spec), OracleSegmenter(spec)


def _poly(*xy: tuple[float, float]) -> tuple:
    return tuple((float(x), float(y)) for x, y in xy)


def acceptance_suite() -> list[SceneSpec]:
    """Ten deterministic 24-frame 128x128 scenes with exact ground truth."""
    W = H = 128
    T = 24
    scenes = [
        SceneSpec("static-disk", W, H, T, shapes=(
            Shape("disk", Motion("constant", (64, 64)), radius=16, color=(220, 60, 60), depth=1),
        )),
        SceneSpec("gliding-disk", W, H, T, shapes=(
            Shape("disk", Motion("linear", (30, 40), velocity=(2.5, 1.2)), radius=13,
                  color=(70, 190, 90), depth=1),
        )),
        SceneSpec("swaying-rect", W, H, T, shapes=(
            Shape("rect", Motion("sinusoidal", (64, 80), amplitude=(18, 6), period=24),
                  half_size=(12, 9), color=(80, 110, 230), depth=1),
        )),
        SceneSpec("crossing-disks", W, H, T, shapes=(
            Shape("disk", Motion("linear", (30, 50), velocity=(2.8, 0)), radius=12,
                  color=(230, 160, 40), depth=1),
            Shape("disk", Motion("linear", (98, 70), velocity=(-2.8, 0)), radius=10,
                  color=(170, 60, 200), depth=2),
        )),
        SceneSpec("l-shape", W, H, T, shapes=(
            Shape("polygon", Motion("linear", (50, 60), velocity=(1.4, 0.6)),
                  vertices=_poly((-16, -16), (-10, -16), (-10, 8), (12, 8), (12, 14), (-16, 14)),
                  color=(240, 220, 70), depth=1),
        )),
        SceneSpec("trio", W, H, T, shapes=(
            Shape("disk", Motion("linear", (28, 30), velocity=(1.6, 1.1)), radius=9,
                  color=(220, 70, 70), depth=1),
            Shape("rect", Motion("sinusoidal", (92, 40), amplitude=(10, 4), period=24, phase=1.0),
                  half_size=(10, 7), color=(70, 200, 120), depth=2),
            Shape("polygon", Motion("linear", (60, 96), velocity=(0.9, -0.8)),
                  vertices=_poly((0, -12), (12, 10), (-12, 10)), color=(90, 120, 230), depth=3),
        )),
        SceneSpec("blink-occluder", W, H, T, shapes=(
            Shape("disk", Motion("constant", (100, 64)), radius=10, color=(230, 120, 50), depth=1),
        ), occluders=(
            Shape("rect", Motion("linear", (10, 64), velocity=(45, 0)), half_size=(30, 64),
                  color=(120, 120, 120), depth=10),
        )),
        SceneSpec("thin-bars", W, H, T, shapes=(
            Shape("rect", Motion("linear", (40, 64), velocity=(1.5, 0)), half_size=(1.5, 18),
                  color=(240, 90, 170), depth=1),
            Shape("rect", Motion("sinusoidal", (90, 30), amplitude=(0, 9), period=24),
                  half_size=(16, 1.5), color=(100, 220, 220), depth=2),
        )),
        SceneSpec("c-shape", W, H, T, shapes=(
            Shape("polygon", Motion("sinusoidal", (70, 70), amplitude=(12, 0), period=24, phase=0.5),
                  vertices=_poly((-14, -14), (12, -14), (12, -9), (-9, -9), (-9, 9),
                                 (12, 9), (12, 14), (-14, 14)),
                  color=(150, 230, 80), depth=1),
        )),
        SceneSpec("triangle-bar", W, H, T, shapes=(
            Shape("polygon", Motion("linear", (40, 44), velocity=(1.2, 0.9)),
                  vertices=_poly((0, -14), (14, 12), (-14, 12)), color=(230, 200, 60), depth=1),
            Shape("rect", Motion("constant", (96, 90)), half_size=(18, 2), color=(90, 90, 240),
                  depth=2),
        )),
    ]
    return scenes


def disappearance_scene() -> SceneSpec:
    """An occluder parks over the object long enough to empty a whole horizon window."""
    return SceneSpec("parked-occluder", 128, 128, 24, shapes=(
        Shape("disk", Motion("constant", (40, 64)), radius=12, color=(220, 80, 80), depth=1),
    ), occluders=(
        Shape("rect", Motion("linear", (120, 64), velocity=(-8, 0)), half_size=(60, 64),
              color=(130, 130, 130), depth=10),
    ))


def reveal_scene() -> SceneSpec:
    """Half the object starts hidden; the cover slides away, fully gone by frame 10."""
    return SceneSpec("sliding-reveal", 128, 128, 24, shapes=(
        Shape("disk", Motion("constant", (46, 64)), radius=12, color=(80, 170, 240), depth=1),
    ), occluders=(
        Shape("rect", Motion("linear", (58, 64), velocity=(1.2, 0)), half_size=(12, 64),
              color=(140, 140, 140), depth=10),
    ))
