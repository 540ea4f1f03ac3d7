"""Inference-time scoring: normalization, per-pixel discrepancy, modality
aggregation, Gaussian smoothing, and the global anomaly score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import ExtractorConfig, align
from .mapping import MappingNetwork, map_features
from .types import FeatureMap, MultimodalSample

NORM_EPS = 1e-12

AGGREGATION_KINDS = ("product", "sum", "max", "only2d", "only3d")


@dataclass(frozen=True)
class AnomalyMap:
    """H x W nonnegative score grid; global score = max over the grid."""

    scores: np.ndarray

    @property
    def global_score(self) -> float:
        return float(self.scores.max())


def l2_normalize(fmap: FeatureMap) -> FeatureMap:
    """Scale each pixel vector to unit norm; near-zero vectors stay zero."""
    norms = np.linalg.norm(fmap.data, axis=2)
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    data = np.where((norms >= NORM_EPS)[:, :, None], fmap.data / safe[:, :, None], 0.0)
    return FeatureMap(data=data, valid=fmap.valid.copy())


def discrepancy(e: FeatureMap, ehat: FeatureMap) -> AnomalyMap:
    """Per-pixel Euclidean distance; pixels outside the validity mask score 0."""
    if e.data.shape != ehat.data.shape:
        raise ValueError(f"shape mismatch {e.data.shape} vs {ehat.data.shape}")
    dist = np.linalg.norm(e.data - ehat.data, axis=2)
    support = e.valid & ehat.valid
    return AnomalyMap(scores=np.where(support, dist, 0.0))


def aggregate(p2d: AnomalyMap, p3d: AnomalyMap, kind: str) -> AnomalyMap:
    """Pixel-wise combination of the two modality maps."""
    if p2d.scores.shape != p3d.scores.shape:
        raise ValueError("anomaly map shape mismatch")
    if kind == "product":
        scores = p2d.scores * p3d.scores
    elif kind == "sum":
        scores = p2d.scores + p3d.scores
    elif kind == "max":
        scores = np.maximum(p2d.scores, p3d.scores)
    elif kind == "only2d":
        scores = p2d.scores.copy()
    elif kind == "only3d":
        scores = p3d.scores.copy()
    else:
        raise ValueError(f"unknown aggregation kind {kind!r}")
    return AnomalyMap(scores=scores)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian, truncated at radius ceil(4*sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(np.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(amap: AnomalyMap, sigma: float) -> AnomalyMap:
    """Separable Gaussian convolution with reflect padding."""
    k = gaussian_kernel_1d(sigma)
    r = len(k) // 2
    s = amap.scores
    h, w = s.shape
    # np.pad "reflect" caps the pad width at dim-1; "symmetric" tiles further
    pad_mode = "reflect" if (r < h and r < w) else "symmetric"
    padded = np.pad(s, r, mode=pad_mode)
    hconv = np.zeros((h + 2 * r, w))
    for t in range(2 * r + 1):
        hconv += k[t] * padded[:, t : t + w]
    out = np.zeros((h, w))
    for t in range(2 * r + 1):
        out += k[t] * hconv[t : t + h]
    return AnomalyMap(scores=out)


def score_sample(
    sample: MultimodalSample,
    cfg: ExtractorConfig,
    nets: tuple[MappingNetwork, MappingNetwork],
    kind: str = "product",
    sigma: float = 4.0,
    mode: str = "cross",
) -> AnomalyMap:
    """Full scoring path for one sample."""
    e2d, e3d = align(sample, cfg)
    ehat3d, ehat2d = map_features(nets, e2d, e3d, mode=mode)
    e2d_n = l2_normalize(e2d)
    e3d_n = l2_normalize(e3d)
    ehat2d_n = l2_normalize(ehat2d)
    ehat3d_n = l2_normalize(ehat3d)
    p2d = discrepancy(e2d_n, ehat2d_n)
    p3d = discrepancy(e3d_n, ehat3d_n)
    agg = aggregate(p2d, p3d, kind)
    return gaussian_smooth(agg, sigma)
