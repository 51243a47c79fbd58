"""Query point selection from masks: random, k-medoids, corner-based, and mixed.

Positive points are drawn from the target mask, negative points from its
complement. Every sampler is deterministic given (mask, frame, count, seed).
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import BinaryMask, Frame, LabeledPoint, ObjectId, PointLabel
from .errors import EmptyMaskError, InvalidInputError

# Cap for the PAM working set. Above this, mask pixels are subsampled
# (seeded) before clustering; medoids are still actual mask pixels.
_PAM_MAX_POINTS = 1500

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def _mask_pixels(mask: BinaryMask) -> np.ndarray:
    """(n, 2) array of (x, y) coordinates of set pixels, row-major order."""
    ys, xs = np.nonzero(mask.data)
    return np.stack([xs, ys], axis=1).astype(np.float64)


def _rng(seed: int, *salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, *salt]))


def _as_points(coords: np.ndarray, label: PointLabel, object_id: ObjectId) -> list[LabeledPoint]:
    return [LabeledPoint(x=float(x), y=float(y), label=label, object_id=object_id)
            for x, y in coords]


def sample_random(mask: BinaryMask, count: int, seed: int,
                  label: PointLabel = PointLabel.POSITIVE,
                  object_id: ObjectId = 1,
                  exclude: Optional[set] = None) -> list[LabeledPoint]:
    """Uniformly sample mask pixels; without replacement unless count exceeds the mask area."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    pixels = _mask_pixels(mask)
    if exclude:
        keep = [i for i, p in enumerate(pixels) if (p[0], p[1]) not in exclude]
        if len(keep) >= count:
            pixels = pixels[keep]
    if len(pixels) == 0:
        raise EmptyMaskError("cannot sample points from an empty mask")
    rng = _rng(seed, 0)
    replace = count > len(pixels)
    idx = rng.choice(len(pixels), size=count, replace=replace)
    return _as_points(pixels[idx], label, object_id)


def _pam_medoids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded farthest-point init followed by best-improvement swaps until convergence.

    Returns indices into ``points``. The result is locally optimal: no single
    medoid/non-medoid swap lowers the total Euclidean assignment cost.
    """
    n = len(points)
    if k >= n:
        return np.arange(n)
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))

    first = int(rng.integers(n))
    medoids = [first]
    nearest = dist[first].copy()
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        medoids.append(nxt)
        np.minimum(nearest, dist[nxt], out=nearest)

    medoids = np.array(medoids, dtype=np.int64)
    while True:
        dmat = dist[:, medoids]  # (n, k)
        order = np.argsort(dmat, axis=1, kind="stable")
        d1 = dmat[np.arange(n), order[:, 0]]
        d2 = dmat[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
        current_cost = d1.sum()
        best_cost = current_cost - 1e-9
        best_swap = None
        for mi in range(k):
            owns = order[:, 0] == mi
            base = np.where(owns, d2, d1)  # cost if medoid mi is dropped
            candidate_costs = np.minimum(dist, base[:, None]).sum(axis=0)
            candidate_costs[medoids] = np.inf
            h = int(np.argmin(candidate_costs))
            if candidate_costs[h] < best_cost:
                best_cost = candidate_costs[h]
                best_swap = (mi, h)
        if best_swap is None:
            return medoids
        medoids = medoids.copy()
        medoids[best_swap[0]] = best_swap[1]


def sample_kmedoids(mask: BinaryMask, count: int, seed: int,
                    label: PointLabel = PointLabel.POSITIVE,
                    object_id: ObjectId = 1) -> list[LabeledPoint]:
    """Pick ``count`` spread-out mask pixels as k-medoids cluster centres."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    pixels = _mask_pixels(mask)
    if len(pixels) == 0:
        raise EmptyMaskError("cannot sample points from an empty mask")
    rng = _rng(seed, 1)
    if len(pixels) > _PAM_MAX_POINTS:
        sub = rng.choice(len(pixels), size=_PAM_MAX_POINTS, replace=False)
        sub.sort()
        pixels = pixels[sub]
    if count >= len(pixels):
        # every pixel is its own medoid; wrap around only if count exceeds area
        idx = np.arange(count) % len(pixels)
        return _as_points(pixels[idx], label, object_id)
    medoids = _pam_medoids(pixels, count, rng)
    return _as_points(pixels[medoids], label, object_id)


def corner_response(frame: Frame) -> np.ndarray:
    """Minimum eigenvalue of the smoothed image structure tensor, per pixel.

    Grayscale via 0.299 R + 0.587 G + 0.114 B, 3x3 Sobel gradients, Gaussian
    window sigma=1 truncated at radius 2, replicated borders.
    """
    gray = np.asarray(frame.pixels, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])
    ix = ndimage.convolve(gray, _SOBEL_X, mode="nearest")
    iy = ndimage.convolve(gray, _SOBEL_Y, mode="nearest")
    offsets = np.arange(-2, 3, dtype=np.float64)
    g = np.exp(-0.5 * offsets ** 2)
    g /= g.sum()
    kernel = np.outer(g, g)
    sxx = ndimage.convolve(ix * ix, kernel, mode="nearest")
    syy = ndimage.convolve(iy * iy, kernel, mode="nearest")
    sxy = ndimage.convolve(ix * iy, kernel, mode="nearest")
    half_trace = (sxx + syy) / 2.0
    root = np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy ** 2)
    return half_trace - root


def sample_shi_tomasi(mask: BinaryMask, frame: Optional[Frame], count: int, seed: int,
                      label: PointLabel = PointLabel.POSITIVE,
                      object_id: ObjectId = 1) -> list[LabeledPoint]:
    """Corner points inside the mask, padded with random mask pixels when scarce.

    Corners are local maxima of the minimum structure-tensor eigenvalue with a
    3 px suppression radius and a quality floor at 1% of the best in-mask score.
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    if frame is None:
        raise InvalidInputError("corner sampling needs the frame image")
    if mask.is_empty():
        raise EmptyMaskError("cannot sample points from an empty mask")
    if (frame.height, frame.width) != mask.data.shape:
        raise InvalidInputError("frame and mask dimensions differ")
    response = corner_response(frame)
    scores = np.where(mask.data, response, -np.inf)
    best = scores.max()
    chosen: list[tuple[float, float]] = []
    if best > 0:
        floor = 0.01 * best
        ys, xs = np.nonzero(mask.data & (response >= floor) & (response > 0))
        cand = sorted(zip(xs, ys), key=lambda p: (-response[p[1], p[0]], p[1], p[0]))
        for x, y in cand:
            if len(chosen) == count:
                break
            if all((x - cx) ** 2 + (y - cy) ** 2 >= 9.0 for cx, cy in chosen):
                chosen.append((float(x), float(y)))
    points = _as_points(np.array(chosen).reshape(-1, 2), label, object_id)
    if len(points) < count:
        pad = sample_random(mask, count - len(points), seed + 7,
                            label=label, object_id=object_id,
                            exclude={(p.x, p.y) for p in points})
        points.extend(pad)
    return points


def mixed_split(count: int) -> tuple[int, int, int]:
    """Split a point budget across (kmedoids, shi_tomasi, random); remainders favour the front."""
    base, rem = divmod(count, 3)
    return base + (rem >= 1), base + (rem >= 2), base


def sample_mixed(mask: BinaryMask, frame: Optional[Frame], count: int, seed: int,
                 label: PointLabel = PointLabel.POSITIVE,
                 object_id: ObjectId = 1) -> list[LabeledPoint]:
    """Concatenate k-medoids, corner, and random samples, deduplicated across stages."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    n_kmed, n_corner, n_rand = mixed_split(count)
    points: list[LabeledPoint] = []
    taken: set = set()
    if n_kmed:
        for p in sample_kmedoids(mask, n_kmed, seed, label, object_id):
            points.append(p)
            taken.add((p.x, p.y))
    if n_corner:
        got = 0
        for p in sample_shi_tomasi(mask, frame, n_corner + len(taken), seed, label, object_id):
            if (p.x, p.y) in taken or got == n_corner:
                continue
            points.append(p)
            taken.add((p.x, p.y))
            got += 1
        while got < n_corner:  # mask smaller than requested spread
            p = sample_random(mask, 1, seed + 11 + got, label, object_id)[0]
            points.append(p)
            got += 1
    if n_rand:
        points.extend(sample_random(mask, n_rand, seed + 3, label, object_id, exclude=taken))
    return points


def sample_points(method: str, mask: BinaryMask, frame: Optional[Frame], count: int, seed: int,
                  label: PointLabel = PointLabel.POSITIVE,
                  object_id: ObjectId = 1) -> list[LabeledPoint]:
    """Dispatch to one of the point selection methods by name."""
    if method == "random":
        return sample_random(mask, count, seed, label, object_id)
    if method == "kmedoids":
        return sample_kmedoids(mask, count, seed, label, object_id)
    if method == "shi_tomasi":
        return sample_shi_tomasi(mask, frame, count, seed, label, object_id)
    if method == "mixed":
        return sample_mixed(mask, frame, count, seed, label, object_id)
    raise InvalidInputError(f"unknown point selection method {method!r}")


def sample_negative(target: ObjectId, masks: dict, frame: Frame, count: int, seed: int,
                    other_positives: Optional[Sequence[LabeledPoint]] = None) -> list[LabeledPoint]:
    """Mixed-sample ``count`` background points for one object, labelled negative.

    The background is the complement of the target's own mask; other objects'
    regions stay eligible. When ``other_positives`` is given (multi-object
    mode), those points are appended as extra negatives for the target.
    """
    if target not in masks:
        raise InvalidInputError(f"no mask for target object {target}")
    background = BinaryMask(~masks[target].data)
    if background.is_empty():
        raise EmptyMaskError("target mask covers the whole frame; no background to sample")
    points = sample_mixed(background, frame, count, seed,
                          label=PointLabel.NEGATIVE, object_id=target) if count else []
    if other_positives:
        for p in other_positives:
            if p.object_id != target:
                points.append(LabeledPoint(x=p.x, y=p.y, label=PointLabel.NEGATIVE,
                                           object_id=target))
    return points
