"""Feature extraction front-end.

Two backends share one interface: `external` reads per-sample CFMF/CFMP
files produced offline, `toy` computes deterministic context descriptors
good enough for desk-scale experiments. Both end in pixel-aligned 2D and
3D feature maps of identical H x W.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import formats, preprocess
from .errors import DataError, FormatError
from .types import FeatureMap, MultimodalSample, PointFeatureSet, PointSet, sample_to_pointset


@dataclass(frozen=True)
class ExtractorConfig:
    """Extraction + alignment settings for one run."""

    kind: str = "toy"  # "toy" | "external"
    layer: int = 2
    m: int = 12  # total encoder layers
    d2d: int = 768
    d3d: int = 1152
    grid: tuple[int, int] = (28, 28)  # H_f, W_f of the 2D feature grid
    # geometry settings used by align()
    groups: int = 1024
    group_size: int = 32
    ransac_threshold: float = 0.005
    ransac_iterations: int = 1000
    seed: int = 0
    features_dir: Optional[str] = None  # required for kind="external"
    smooth_valid_only: bool = False

    def __post_init__(self):
        if not 1 <= self.layer <= self.m:
            raise ValueError(f"layer {self.layer} outside [1, {self.m}]")
        if self.d2d <= 0 or self.d3d <= 0:
            raise ValueError("feature dims must be positive")


@dataclass(frozen=True)
class ExtractedFeatures:
    e2d_raw: np.ndarray  # H_f x W_f x D_2D
    e3d_points: PointFeatureSet


def external_feature_paths(cfg: ExtractorConfig, sample: MultimodalSample) -> tuple[Path, Path]:
    base = Path(cfg.features_dir) / sample.category / sample.split
    stem = f"{sample.id}.l{cfg.layer}"
    return base / f"{stem}.cfmf", base / f"{stem}.cfmp"


# ---------------------------------------------------------------------------
# toy extractors


def _projection_matrix(seed: int, modality: str, layer: int, d_in: int, d_out: int) -> np.ndarray:
    """Seeded near-orthogonal projection, unique per (seed, modality, layer)."""
    code = {"2d": 1, "3d": 2}[modality]
    rng = np.random.default_rng([seed, code, layer, d_in, d_out])
    g = rng.standard_normal((max(d_in, d_out), max(d_in, d_out)))
    q, _ = np.linalg.qr(g)
    return q[:d_in, :d_out]


def _patch_stats(rgb: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Per-cell 8-dim stats: mean rgb, std rgb, mean |dy|, mean |dx|."""
    hf, wf = grid
    h, w = rgb.shape[:2]
    ph, pw = h // hf, w // wf
    cells = rgb[: hf * ph, : wf * pw].reshape(hf, ph, wf, pw, 3)
    mean = cells.mean(axis=(1, 3))
    std = cells.std(axis=(1, 3))
    gy = np.abs(np.diff(rgb, axis=0)).mean(axis=2)
    gx = np.abs(np.diff(rgb, axis=1)).mean(axis=2)
    gy = np.pad(gy, ((0, 1), (0, 0)))[: hf * ph, : wf * pw].reshape(hf, ph, wf, pw).mean(axis=(1, 3))
    gx = np.pad(gx, ((0, 0), (0, 1)))[: hf * ph, : wf * pw].reshape(hf, ph, wf, pw).mean(axis=(1, 3))
    return np.concatenate([mean, std, gy[:, :, None], gx[:, :, None]], axis=2)


def toy_extract_2d(sample: MultimodalSample, cfg: ExtractorConfig) -> np.ndarray:
    """Context descriptor per grid cell, projected to D_2D.

    The context window spans 1 + 2*layer cells per side (clamped at the
    border), so deeper layers see more context and cost more.
    """
    hf, wf = cfg.grid
    stats = _patch_stats(sample.rgb, cfg.grid)  # hf x wf x 8
    s = stats.shape[2]
    rng = np.random.default_rng([cfg.seed, 1, cfg.layer, 7])
    ctx = np.zeros_like(stats)
    rows = np.arange(hf)
    cols = np.arange(wf)
    for dy in range(-cfg.layer, cfg.layer + 1):
        ry = np.clip(rows + dy, 0, hf - 1)
        for dx in range(-cfg.layer, cfg.layer + 1):
            rx = np.clip(cols + dx, 0, wf - 1)
            w_off = rng.standard_normal(s) / (1.0 + abs(dy) + abs(dx))
            ctx += stats[np.ix_(ry, rx)] * w_off
    desc = np.concatenate([stats, np.tanh(ctx)], axis=2)  # hf x wf x 16
    proj = _projection_matrix(cfg.seed, "2d", cfg.layer, desc.shape[2], cfg.d2d)
    return desc @ proj


def _group_descriptor(pts: np.ndarray) -> np.ndarray:
    """Translation-invariant 8-dim shape descriptor of one group.

    Entries are normalized by the group's own spatial scale so the
    descriptor direction encodes shape, not extent: covariance eigenvalue
    ratios, best-fit-plane tilt and residual, and height-deviation stats.
    """
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / max(len(pts) - 1, 1)
    eigs, vecs = np.linalg.eigh(cov)
    eigs = np.maximum(eigs, 0.0)
    scale = max(np.linalg.norm(centered, axis=1).mean(), 1e-12)
    normal = vecs[:, 0]  # eigenvector of smallest eigenvalue
    tilt = float(np.hypot(normal[0], normal[1]))  # sin of plane-vs-xy angle
    zdev = centered[:, 2]
    e_small, _, e_big = np.sqrt(eigs)
    # a constant anchor keeps the direction stable for featureless (flat)
    # groups; shape terms are weighted up so they dominate the angle
    # height-derived entries are clipped so extreme surface noise
    # saturates at a bounded direction offset instead of drowning the
    # planarity/tilt signal
    return np.array(
        [
            0.5,
            3.0 * tilt,
            min(3.0 * zdev.std() / scale, 1.3),
            min(3.0 * np.abs(zdev).mean() / scale, 1.3),
            min(1.5 * np.ptp(zdev) / scale, 1.3),
            min(3.0 * e_small / scale, 0.8),
            e_small / max(e_big, 1e-12),
            scale * 10.0,
        ]
    )


def toy_extract_3d(
    points: PointSet, grouping: preprocess.Grouping, cfg: ExtractorConfig
) -> PointFeatureSet:
    """Per-group shape descriptor plus neighbor-center context, to D_3D."""
    coords = points.coords
    centers = coords[grouping.center_indices]
    g = len(grouping.center_indices)
    base = np.stack([_group_descriptor(coords[m]) for m in grouping.members])

    # context: stats of the k nearest other centers, k grows with layer depth
    k = min(g - 1, 1 + 2 * cfg.layer)
    ctx = np.zeros((g, base.shape[1] + 3))
    if k > 0:
        d2 = np.sum((centers[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        nn = np.argsort(d2, kind="stable", axis=1)[:, :k]
        rng = np.random.default_rng([cfg.seed, 2, cfg.layer, 7])
        for j in range(k):
            w_off = rng.standard_normal(ctx.shape[1]) / (1.0 + j)
            rel = centers[nn[:, j]] - centers
            ctx += np.concatenate([base[nn[:, j]], rel], axis=1) * w_off
    desc = np.concatenate([base, np.tanh(ctx)], axis=1)
    proj = _projection_matrix(cfg.seed, "3d", cfg.layer, desc.shape[1], cfg.d3d)
    return PointFeatureSet(centers=centers, feats=desc @ proj)


# ---------------------------------------------------------------------------
# bilinear upsampling


def upsample_bilinear(grid: np.ndarray, h: int, w: int) -> FeatureMap:
    """Per-channel bilinear upsampling with half-pixel centers, edge-clamped."""
    hf, wf = grid.shape[:2]
    ys = np.clip((np.arange(h) + 0.5) * hf / h - 0.5, 0, hf - 1)
    xs = np.clip((np.arange(w) + 0.5) * wf / w - 0.5, 0, wf - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, hf - 1)
    x1 = np.minimum(x0 + 1, wf - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    data = top * (1 - fy) + bot * fy
    return FeatureMap(data=data, valid=np.ones((h, w), dtype=bool))


# ---------------------------------------------------------------------------
# dispatch + alignment


def extract_2d(sample: MultimodalSample, cfg: ExtractorConfig) -> np.ndarray:
    """Raw 2D feature grid (H_f x W_f x D_2D) from the configured backend."""
    if cfg.kind == "toy":
        return toy_extract_2d(sample, cfg)
    fpath, _ = external_feature_paths(cfg, sample)
    if not fpath.exists():
        raise DataError(f"missing 2D feature file for sample {sample.id}: {fpath}")
    fmap = formats.read_feature_file(fpath)
    hf, wf = cfg.grid
    if fmap.data.shape != (hf, wf, cfg.d2d):
        raise FormatError(
            f"2D feature dims {fmap.data.shape} mismatch config {(hf, wf, cfg.d2d)}"
        )
    return fmap.data.astype(np.float64)


def extract_3d(
    points: PointSet,
    grouping: Optional[preprocess.Grouping],
    cfg: ExtractorConfig,
    sample: Optional[MultimodalSample] = None,
) -> PointFeatureSet:
    """Per-group 3D features from the configured backend.

    For kind="external" the CFMP file carries the exporter's own group
    centers; `grouping` is ignored in that case.
    """
    if cfg.kind == "toy":
        if grouping is None:
            raise ValueError("toy 3D extraction needs a grouping")
        return toy_extract_3d(points, grouping, cfg)
    if sample is None:
        raise ValueError("external 3D extraction needs the sample for file lookup")
    _, ppath = external_feature_paths(cfg, sample)
    if not ppath.exists():
        raise DataError(f"missing 3D feature file for sample {sample.id}: {ppath}")
    pfs = formats.read_point_feature_file(ppath)
    if pfs.feats.shape[1] != cfg.d3d:
        raise FormatError(f"3D feature dim {pfs.feats.shape[1]} != {cfg.d3d}")
    if grouping is not None and len(pfs) != len(grouping.center_indices):
        raise FormatError(
            f"3D feature count {len(pfs)} != requested group count "
            f"{len(grouping.center_indices)}"
        )
    return pfs


def align(sample: MultimodalSample, cfg: ExtractorConfig) -> tuple[FeatureMap, FeatureMap]:
    """Produce the pixel-aligned (E_2D, E_3D) pair for one sample.

    3D path: plane removal -> FPS grouping -> extraction -> inverse-distance
    interpolation -> projection -> 3x3 smoothing. 2D path: extraction ->
    bilinear upsampling.
    """
    h, w = sample.hw

    points = sample_to_pointset(sample)
    plane = preprocess.fit_plane_ransac(
        points, cfg.ransac_threshold, cfg.ransac_iterations, cfg.seed
    )
    fg = preprocess.remove_background(points, plane, cfg.ransac_threshold)

    if cfg.kind == "toy":
        g = min(cfg.groups, len(fg))
        n = min(cfg.group_size, len(fg))
        centers = preprocess.farthest_point_sampling(fg, g)
        grouping = preprocess.group_points(fg, centers, n)
        pfs = extract_3d(fg, grouping, cfg)
    else:
        pfs = extract_3d(fg, None, cfg, sample=sample)

    interp = preprocess.interpolate_features(pfs, fg)
    e3d = preprocess.project_to_image(interp, fg.pixel_index, h, w)
    e3d = preprocess.smooth3x3(e3d, valid_only=cfg.smooth_valid_only)

    grid2d = extract_2d(sample, cfg)
    e2d = upsample_bilinear(grid2d, h, w)
    return e2d, e3d
