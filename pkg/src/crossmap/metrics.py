"""Threshold-free evaluation: ROC AUC, connected components, the PRO
curve, and AUPRO at configurable FPR integration limits."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .anomaly import AnomalyMap
from .errors import UndefinedMetricError

AUPRO_LIMITS = (0.30, 0.10, 0.05, 0.01)

_EIGHT_CONN = np.ones((3, 3), dtype=int)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = int(np.count_nonzero(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    r_pos = ranks[labels == 1].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """8-connected regions of a binary mask, as boolean maps.

    Regions are ordered by the row-major position of their first pixel.
    """
    labeled, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT_CONN)
    if n == 0:
        return []
    flat = labeled.ravel()
    first = {}
    for pos in np.flatnonzero(flat):
        lab = flat[pos]
        if lab not in first:
            first[lab] = pos
            if len(first) == n:
                break
    order = sorted(first, key=first.get)
    return [labeled == lab for lab in order]


@dataclass(frozen=True)
class ProCurve:
    """Step curve of (fpr, pro) points, fpr non-decreasing in [0, 1]."""

    points: tuple[tuple[float, float], ...]


def pro_curve(maps: Sequence[AnomalyMap], gts: Sequence[np.ndarray]) -> ProCurve:
    """Per-region-overlap curve over a pooled set of samples.

    At each threshold t (descending over the distinct scores) the
    prediction is {score >= t}; PRO(t) is the mean per-GT-region recall
    and FPR(t) pools negatives over all samples.
    """
    region_scores = []
    neg_scores = []
    for amap, gt in zip(maps, gts):
        gt = np.asarray(gt, dtype=bool)
        for region in connected_components(gt):
            region_scores.append(np.sort(amap.scores[region]))
        neg_scores.append(amap.scores[~gt])
    if not region_scores:
        raise UndefinedMetricError("PRO curve needs at least one GT region")
    neg = np.sort(np.concatenate(neg_scores))
    if neg.size == 0:
        raise UndefinedMetricError("PRO curve needs at least one negative pixel")

    thresholds = np.unique(np.concatenate([amap.scores.ravel() for amap in maps]))[::-1]
    n_neg = neg.size
    fpr = (n_neg - np.searchsorted(neg, thresholds, side="left")) / n_neg
    pro = np.zeros_like(thresholds)
    for rs in region_scores:
        pro += (rs.size - np.searchsorted(rs, thresholds, side="left")) / rs.size
    pro /= len(region_scores)

    points = list(zip(fpr.tolist(), pro.tolist()))
    if points[0][0] > 0.0:
        points.insert(0, (0.0, 0.0))
    return ProCurve(points=tuple(points))


def aupro_at(curve: ProCurve, limit: float) -> float:
    """Area under the step-interpolated PRO curve over [0, limit] / limit."""
    if not 0.0 < limit <= 1.0:
        raise ValueError(f"limit {limit} outside (0, 1]")
    area = 0.0
    run_max = 0.0
    prev_f = 0.0
    for f, p in curve.points:
        f = min(f, limit)
        if f > prev_f:
            area += run_max * (f - prev_f)
            prev_f = f
        run_max = max(run_max, p)
        if prev_f >= limit:
            break
    if prev_f < limit:
        area += run_max * (limit - prev_f)
    return area / limit


@dataclass
class CategoryMetrics:
    i_auroc: float
    p_auroc: float
    aupro: dict[float, float]
    n_samples: int
    fps: Optional[float] = None


@dataclass
class EvalReport:
    """Per-category and mean detection / segmentation metrics."""

    per_category: dict[str, CategoryMetrics]
    mean: CategoryMetrics

    def to_json(self) -> str:
        def enc(m: CategoryMetrics):
            d = {
                "I-AUROC": m.i_auroc,
                "P-AUROC": m.p_auroc,
                "n_samples": m.n_samples,
            }
            for lim in AUPRO_LIMITS:
                d[f"AUPRO@{int(lim * 100)}"] = m.aupro[lim]
            if m.fps is not None:
                d["fps"] = m.fps
            return d

        payload = {
            "categories": {k: enc(v) for k, v in sorted(self.per_category.items())},
            "mean": enc(self.mean),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["category", "I-AUROC", "P-AUROC", "AUPRO@30", "AUPRO@10", "AUPRO@5", "AUPRO@1"]
        )
        rows = list(sorted(self.per_category.items())) + [("mean", self.mean)]
        for name, m in rows:
            writer.writerow(
                [name, m.i_auroc, m.p_auroc] + [m.aupro[lim] for lim in AUPRO_LIMITS]
            )
        return buf.getvalue()


def _category_metrics(
    records: Sequence[tuple[AnomalyMap, Optional[np.ndarray], str]],
    fps: Optional[float] = None,
) -> CategoryMetrics:
    globals_ = [amap.global_score for amap, _, _ in records]
    labels = [1 if label == "anomalous" else 0 for _, _, label in records]
    i_auroc = roc_auc(globals_, labels)

    pix_scores = []
    pix_labels = []
    maps, gts = [], []
    for amap, gt, _ in records:
        mask = (
            np.zeros(amap.scores.shape, dtype=bool)
            if gt is None
            else np.asarray(gt, dtype=bool)
        )
        pix_scores.append(amap.scores.ravel())
        pix_labels.append(mask.ravel())
        maps.append(amap)
        gts.append(mask)
    p_auroc = roc_auc(
        np.concatenate(pix_scores), np.concatenate(pix_labels).astype(int)
    )
    curve = pro_curve(maps, gts)
    aupro = {lim: aupro_at(curve, lim) for lim in AUPRO_LIMITS}
    return CategoryMetrics(
        i_auroc=i_auroc,
        p_auroc=p_auroc,
        aupro=aupro,
        n_samples=len(records),
        fps=fps,
    )


def evaluate(
    results: dict[str, Sequence[tuple[AnomalyMap, Optional[np.ndarray], str]]],
    fps: Optional[dict[str, float]] = None,
) -> EvalReport:
    """Compute the full report from per-category (map, gt, label) records."""
    per_cat = {
        name: _category_metrics(records, None if fps is None else fps.get(name))
        for name, records in results.items()
    }
    cats = list(per_cat.values())
    mean = CategoryMetrics(
        i_auroc=float(np.mean([c.i_auroc for c in cats])),
        p_auroc=float(np.mean([c.p_auroc for c in cats])),
        aupro={
            lim: float(np.mean([c.aupro[lim] for c in cats])) for lim in AUPRO_LIMITS
        },
        n_samples=sum(c.n_samples for c in cats),
        fps=None
        if fps is None
        else float(np.mean([c.fps for c in cats if c.fps is not None] or [0.0])),
    )
    return EvalReport(per_category=per_cat, mean=mean)
