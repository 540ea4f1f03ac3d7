"""Geometric preprocessing: plane removal, FPS grouping, interpolation,
projection to the image plane, and 3x3 smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, EmptyForegroundError, FitFailureError
from .types import FeatureMap, PointFeatureSet, PointSet

ZERO_DIST_EPS = 1e-12


@dataclass(frozen=True)
class PlaneModel:
    """Plane {x : normal . x + offset = 0} with a unit normal."""

    normal: np.ndarray
    offset: float
    inlier_count: int


@dataclass(frozen=True)
class Grouping:
    """G group centers, each with the indices of its n member points."""

    center_indices: np.ndarray  # G
    members: np.ndarray  # G x n point indices


def _plane_from_triple(p0, p1, p2):
    normal = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normal)
    if norm < 1e-12:
        return None
    normal = normal / norm
    return normal, -float(normal @ p0)


def point_plane_distance(coords: np.ndarray, plane: PlaneModel) -> np.ndarray:
    return np.abs(coords @ plane.normal + plane.offset)


def fit_plane_ransac(
    points: PointSet, threshold: float, iterations: int = 1000, seed: int = 0
) -> PlaneModel:
    """Best plane over random 3-point minimal samples, refit on its inliers.

    Deterministic for a fixed seed. Raises DegenerateInputError for N < 3 and
    FitFailureError if every sampled triple is collinear.
    """
    coords = points.coords
    n = coords.shape[0]
    if n < 3:
        raise DegenerateInputError(f"plane fit needs >= 3 points, got {n}")
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    rng = np.random.default_rng(seed)
    best = None
    best_count = -1
    for _ in range(iterations):
        i, j, k = rng.choice(n, size=3, replace=False)
        model = _plane_from_triple(coords[i], coords[j], coords[k])
        if model is None:
            continue
        normal, offset = model
        count = int(np.count_nonzero(np.abs(coords @ normal + offset) <= threshold))
        if count > best_count:
            best_count = count
            best = (normal, offset)
    if best is None:
        raise FitFailureError("all sampled triples were collinear")

    # Least-squares refit on the consensus set, keeping the inlier count
    # consistent with the refit plane.
    normal, offset = best
    inliers = coords[np.abs(coords @ normal + offset) <= threshold]
    if inliers.shape[0] >= 3:
        centroid = inliers.mean(axis=0)
        _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
        refit_normal = vt[-1]
        if refit_normal @ normal < 0:
            refit_normal = -refit_normal
        refit_normal = refit_normal / np.linalg.norm(refit_normal)
        refit_offset = -float(refit_normal @ centroid)
        refit_count = int(
            np.count_nonzero(np.abs(coords @ refit_normal + refit_offset) <= threshold)
        )
        if refit_count >= best_count:
            normal, offset, best_count = refit_normal, refit_offset, refit_count

    return PlaneModel(normal=normal, offset=float(offset), inlier_count=best_count)


def remove_background(points: PointSet, plane: PlaneModel, threshold: float) -> PointSet:
    """Drop points within `threshold` of the plane, keeping pixel indices."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    keep = point_plane_distance(points.coords, plane) >= threshold
    if not np.any(keep):
        raise EmptyForegroundError("background removal left no foreground points")
    return PointSet(coords=points.coords[keep], pixel_index=points.pixel_index[keep])


def farthest_point_sampling(points: PointSet, g: int, start: int = 0) -> np.ndarray:
    """Greedy FPS center indices; ties broken by lowest index."""
    coords = points.coords
    n = coords.shape[0]
    if not 1 <= g <= n:
        raise ValueError(f"need 1 <= G <= N, got G={g}, N={n}")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    centers = np.empty(g, dtype=np.int64)
    centers[0] = start
    min_d2 = np.sum((coords - coords[start]) ** 2, axis=1)
    for i in range(1, g):
        nxt = int(np.argmax(min_d2))  # argmax returns the lowest tied index
        centers[i] = nxt
        np.minimum(min_d2, np.sum((coords - coords[nxt]) ** 2, axis=1), out=min_d2)
    return centers


def group_points(points: PointSet, centers: np.ndarray, n: int) -> Grouping:
    """Each group = the n nearest points to its center, ties by lowest index."""
    total = points.coords.shape[0]
    if n > total:
        raise ValueError(f"group size {n} exceeds point count {total}")
    members = np.empty((len(centers), n), dtype=np.int64)
    for gi, ci in enumerate(centers):
        d2 = np.sum((points.coords - points.coords[ci]) ** 2, axis=1)
        # stable sort keeps the lowest index first among ties
        members[gi] = np.argsort(d2, kind="stable")[:n]
    return Grouping(center_indices=np.asarray(centers, dtype=np.int64), members=members)


def interpolate_features(centers: PointFeatureSet, queries: PointSet) -> np.ndarray:
    """Inverse-distance interpolation from the 3 nearest centers per query.

    Queries coincident with a center (distance < 1e-12) copy that center's
    feature exactly.
    """
    nf = len(centers)
    if nf < 3:
        raise DegenerateInputError(f"interpolation needs >= 3 centers, got {nf}")
    q = queries.coords
    diff = q[:, None, :] - centers.centers[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))  # N x N_f
    idx3 = np.argsort(d, kind="stable", axis=1)[:, :3]
    d3 = np.take_along_axis(d, idx3, axis=1)
    f3 = centers.feats[idx3]  # N x 3 x D

    out = np.empty((q.shape[0], centers.feats.shape[1]), dtype=np.float64)
    coincident = d3[:, 0] < ZERO_DIST_EPS
    if np.any(coincident):
        out[coincident] = f3[coincident, 0]
    rest = ~coincident
    if np.any(rest):
        w = 1.0 / d3[rest]
        w = w / w.sum(axis=1, keepdims=True)
        out[rest] = np.einsum("nk,nkd->nd", w, f3[rest])
    return out


def project_to_image(
    feats: np.ndarray, pixel_index: np.ndarray, h: int, w: int
) -> FeatureMap:
    """Place per-point features at their registered pixels, zeros elsewhere."""
    if len(feats) and (
        pixel_index.min() < 0
        or pixel_index[:, 0].max() >= h
        or pixel_index[:, 1].max() >= w
    ):
        raise ValueError("pixel index out of range")
    d = feats.shape[1] if len(feats) else 0
    data = np.zeros((h, w, d), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    if len(feats):
        data[pixel_index[:, 0], pixel_index[:, 1]] = feats
        valid[pixel_index[:, 0], pixel_index[:, 1]] = True
    return FeatureMap(data=data, valid=valid)


def smooth3x3(fmap: FeatureMap, valid_only: bool = False) -> FeatureMap:
    """Uniform 3x3 box filter per channel, zero-padded borders.

    With valid_only=True the average is taken over valid pixels in the
    window instead of all nine taps.
    """
    padded = np.pad(fmap.data, ((1, 1), (1, 1), (0, 0)))
    acc = np.zeros_like(fmap.data)
    h, w = fmap.hw
    if valid_only:
        vpad = np.pad(fmap.valid.astype(np.float64), 1)
        cnt = np.zeros((h, w), dtype=np.float64)
        for dy in range(3):
            for dx in range(3):
                acc += padded[dy : dy + h, dx : dx + w] * vpad[dy : dy + h, dx : dx + w, None]
                cnt += vpad[dy : dy + h, dx : dx + w]
        out = np.divide(acc, cnt[:, :, None], out=np.zeros_like(acc), where=cnt[:, :, None] > 0)
    else:
        for dy in range(3):
            for dx in range(3):
                acc += padded[dy : dy + h, dx : dx + w]
        out = acc / 9.0
    return FeatureMap(data=out, valid=fmap.valid.copy())
