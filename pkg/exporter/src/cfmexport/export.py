"""Offline export pipeline.

Scans an MVTec-style dataset layout
(`<root>/<category>/<split>/<defect>/rgb/<id>.png` with sibling
`xyz/<id>.tiff` and optional `gt/<id>.png`), runs the frozen extractors,
and writes:

  <out>/dataset/...                      mirrored layout with xyz
                                         transcoded to CFMX (rgb/gt copied),
                                         directly consumable by the engine's
                                         `convert`
  <out>/features/<cat>/<split>/<sample_id>.l<layer>.cfmf / .cfmp
  <out>/manifest.json                    same schema as the engine's convert

`sample_id` is `<defect>_<stem>`, matching the engine's naming.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image

from . import formats, models

log = logging.getLogger("cfmexport")

DEFAULT_MODEL_2D = "vit-b8-frozen"
DEFAULT_MODEL_3D = "pointmae-frozen"
DEFAULT_PLANE_THRESHOLD = 0.005
RANSAC_TRIALS = 128


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportJob:
    dataset: str
    out: str
    layers: tuple[int, ...] = (1, 4, 8, 12)
    model_2d: str = DEFAULT_MODEL_2D
    model_3d: str = DEFAULT_MODEL_3D
    categories: tuple[str, ...] = ()
    seed: int = 0
    plane_threshold: float = DEFAULT_PLANE_THRESHOLD

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layers must be non-empty")
        if any(l < 1 for l in self.layers):
            raise ValueError("layers must be >= 1")


def scan_dataset(root: str | Path, categories: tuple[str, ...] = ()) -> list[dict]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    entries = []
    for rgb_file in sorted(root.glob("*/*/*/rgb/*.png")):
        defect_dir = rgb_file.parent.parent
        split_dir = defect_dir.parent
        category = split_dir.parent.name
        if categories and category not in categories:
            continue
        stem = rgb_file.stem
        tiff_file = defect_dir / "xyz" / f"{stem}.tiff"
        if not tiff_file.exists():
            raise DatasetError(f"missing xyz tiff for {rgb_file}")
        gt_file = defect_dir / "gt" / f"{stem}.png"
        entries.append(
            {
                "category": category,
                "split": split_dir.name,
                "defect": defect_dir.name,
                "id": f"{defect_dir.name}_{stem}",
                "stem": stem,
                "rgb": rgb_file,
                "tiff": tiff_file,
                "gt": gt_file if gt_file.exists() else None,
            }
        )
    if not entries:
        raise DatasetError(f"no samples found under {root}")
    return entries


def read_xyz_tiff(path: str | Path) -> np.ndarray:
    arr = np.asarray(tifffile.imread(str(path)))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DatasetError(f"xyz tiff must be HxWx3, got {arr.shape} in {path}")
    return arr.astype(np.float32)


def remove_background(points: np.ndarray, threshold: float, rng: np.random.Generator) -> np.ndarray:
    """Drop the dominant RANSAC plane (and exact-zero invalid points)."""
    nonzero = points[np.any(points != 0.0, axis=1)]
    n = nonzero.shape[0]
    if n < 3:
        return nonzero
    best_mask = None
    best_count = -1
    for _ in range(RANSAC_TRIALS):
        i, j, k = rng.choice(n, size=3, replace=False)
        normal = np.cross(nonzero[j] - nonzero[i], nonzero[k] - nonzero[i])
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        dist = np.abs((nonzero - nonzero[i]) @ normal)
        mask = dist <= threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None:
        return nonzero
    return nonzero[~best_mask]


def farthest_point_sampling(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of k FPS centers (k capped at the point count)."""
    n = points.shape[0]
    k = min(k, n)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = int(rng.integers(0, n))
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)
    for t in range(1, k):
        chosen[t] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(points - points[chosen[t]], axis=1))
    return chosen


def group_nearest(points: np.ndarray, centers: np.ndarray, size: int) -> np.ndarray:
    """For each center, its `size` nearest points (N x k x 3)."""
    size = min(size, points.shape[0])
    groups = np.empty((centers.shape[0], size, 3), dtype=points.dtype)
    chunk = 256
    for start in range(0, centers.shape[0], chunk):
        c = centers[start : start + chunk]
        d = np.linalg.norm(points[None, :, :] - c[:, None, :], axis=2)
        idx = np.argpartition(d, size - 1, axis=1)[:, :size]
        groups[start : start + chunk] = points[idx]
    return groups


def run_export(job: ExportJob) -> Path:
    """Run the full job; returns the manifest path."""
    ext2d = models.load_2d(job.model_2d)
    ext3d = models.load_3d(job.model_3d)
    depth = min(ext2d.depth, ext3d.depth)
    if any(l > depth for l in job.layers):
        raise ValueError(f"layers {job.layers} exceed model depth {depth}")

    entries = scan_dataset(job.dataset, job.categories)
    out = Path(job.out)
    manifest_samples = []
    for e in entries:
        try:
            rec = _export_sample(job, e, ext2d, ext3d, out)
        except Exception as exc:  # noqa: BLE001 — job continues past bad samples
            log.error("skipping %s/%s: %s", e["category"], e["id"], exc)
            continue
        manifest_samples.append(rec)
    if not manifest_samples:
        raise DatasetError("every sample failed to export")

    manifest_path = out / "manifest.json"
    payload = {
        "version": 1,
        "samples": sorted(manifest_samples, key=lambda s: (s["category"], s["split"], s["id"])),
        "models": {
            "2d": {"id": job.model_2d, "revision": models.MODEL_REGISTRY_2D[job.model_2d][0]},
            "3d": {"id": job.model_3d, "revision": models.MODEL_REGISTRY_3D[job.model_3d][0]},
        },
        "layers": sorted(job.layers),
        "seed": job.seed,
    }
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return manifest_path


def _export_sample(job, e, ext2d, ext3d, out: Path) -> dict:
    rgb = np.asarray(Image.open(e["rgb"]).convert("RGB"))
    xyz = read_xyz_tiff(e["tiff"])

    ddir = out / "dataset" / e["category"] / e["split"] / e["defect"]
    for sub in ("rgb", "xyz") + (("gt",) if e["gt"] else ()):
        (ddir / sub).mkdir(parents=True, exist_ok=True)
    rgb_out = ddir / "rgb" / e["rgb"].name
    shutil.copyfile(e["rgb"], rgb_out)
    xyz_out = ddir / "xyz" / f"{e['stem']}.cfmx"
    formats.write_xyz_file(xyz, xyz_out)
    gt_out = None
    if e["gt"]:
        gt_out = ddir / "gt" / e["gt"].name
        shutil.copyfile(e["gt"], gt_out)

    fdir = out / "features" / e["category"] / e["split"]
    fdir.mkdir(parents=True, exist_ok=True)

    points = remove_background(
        xyz.reshape(-1, 3).astype(np.float64),
        job.plane_threshold,
        np.random.default_rng([job.seed, 1]),
    )
    if points.shape[0] == 0:
        raise DatasetError("no foreground points after background removal")
    if points.shape[0] < models.N_GROUPS:
        log.warning(
            "%s: only %d foreground points (< %d groups)",
            e["id"],
            points.shape[0],
            models.N_GROUPS,
        )
    center_idx = farthest_point_sampling(points, models.N_GROUPS, np.random.default_rng([job.seed, 2]))
    centers = points[center_idx]
    groups = group_nearest(points, centers, models.GROUP_SIZE)

    for layer in sorted(job.layers):
        fmap = ext2d.features(rgb, layer)
        valid = np.ones(fmap.shape[:2], dtype=bool)
        formats.write_feature_file(fmap, valid, fdir / f"{e['id']}.l{layer}.cfmf")
        feats = ext3d.features(groups, centers, layer)
        formats.write_point_feature_file(centers, feats, fdir / f"{e['id']}.l{layer}.cfmp")

    return {
        "category": e["category"],
        "split": e["split"],
        "id": e["id"],
        "rgb": str(rgb_out),
        "xyz": str(xyz_out),
        "gt": None if gt_out is None else str(gt_out),
        "label": "nominal" if e["defect"] == "good" else "anomalous",
    }
