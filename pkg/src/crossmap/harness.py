"""Run orchestration: configs, manifests, dataset generation, training,
evaluation, and benchmarking."""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import anomaly, formats, mapping, metrics, synth
from .dataio import load_sample
from .errors import ConfigError, DataError
from .features import ExtractorConfig, align
from .mapping import TrainConfig
from .types import MultimodalSample


@dataclass(frozen=True)
class RunConfig:
    """Everything one train/eval/bench run needs."""

    manifest: str = ""
    out_dir: str = "out"
    categories: tuple[str, ...] = ()  # empty = all in manifest
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    aggregation: str = "product"
    sigma: float = 4.0
    few_shot: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.few_shot is not None and self.few_shot < 1:
            raise ConfigError("few-shot k must be >= 1")
        if self.aggregation not in anomaly.AGGREGATION_KINDS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")


# ---------------------------------------------------------------------------
# manifest


def write_manifest(entries: list[dict], path: str | Path) -> None:
    payload = {"version": 1, "samples": sorted(entries, key=lambda e: (e["category"], e["split"], e["id"]))}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def read_manifest(path: str | Path) -> list[dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {path}: {exc}")
    return payload["samples"]


def convert(dataset_dir: str | Path, out_path: str | Path) -> list[dict]:
    """Scan an MVTec-style layout into a manifest.

    Expected layout: <root>/<category>/<split>/<defect>/rgb/<id>.png with
    sibling xyz/<id>.cfmx and (for defects) gt/<id>.png. Defect directory
    `good` maps to the nominal label.
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    entries = []
    for rgb_file in sorted(root.glob("*/*/*/rgb/*.png")):
        defect_dir = rgb_file.parent.parent
        split_dir = defect_dir.parent
        category = split_dir.parent.name
        stem = rgb_file.stem
        xyz_file = defect_dir / "xyz" / f"{stem}.cfmx"
        gt_file = defect_dir / "gt" / f"{stem}.png"
        if not xyz_file.exists():
            raise DataError(f"missing xyz raster for {rgb_file}")
        entries.append(
            {
                "category": category,
                "split": split_dir.name,
                "id": f"{defect_dir.name}_{stem}",
                "rgb": str(rgb_file),
                "xyz": str(xyz_file),
                "gt": str(gt_file) if gt_file.exists() else None,
                "label": "nominal" if defect_dir.name == "good" else "anomalous",
            }
        )
    if not entries:
        raise DataError(f"no samples found under {root}")
    write_manifest(entries, out_path)
    return entries


def load_manifest_samples(
    entries: list[dict],
    categories: tuple[str, ...] = (),
    split: Optional[str] = None,
    label: Optional[str] = None,
) -> list[MultimodalSample]:
    out = []
    for e in entries:
        if categories and e["category"] not in categories:
            continue
        if split is not None and e["split"] != split:
            continue
        if label is not None and e["label"] != label:
            continue
        out.append(
            load_sample(
                e["rgb"],
                e["xyz"],
                e.get("gt"),
                label=e["label"],
                category=e["category"],
                sample_id=e["id"],
                split=e["split"],
            )
        )
    return out


# ---------------------------------------------------------------------------
# synthetic dataset on disk


def generate_synthetic_dataset(
    out_dir: str | Path,
    n_train: int = 40,
    n_test_nominal: int = 20,
    n_test_per_anomaly: int = 20,
    seed: int = 0,
    category: str = "synthetic",
    **scene_kwargs,
) -> Path:
    """Write a full synthetic dataset (PNG + CFMX) and its manifest."""
    out = Path(out_dir)
    entries = []

    def emit(spec: synth.SyntheticSceneSpec, split: str, idx: int):
        sample = synth.generate_scene(spec)
        sub = out / category / split
        sub.mkdir(parents=True, exist_ok=True)
        stem = f"{spec.anomaly}_{idx:03d}"
        rgb_path = sub / f"{stem}_rgb.png"
        xyz_path = sub / f"{stem}.cfmx"
        Image.fromarray((sample.rgb * 255).round().astype(np.uint8)).save(rgb_path)
        formats.write_xyz_file(sample.xyz.astype(np.float32), xyz_path)
        gt_path = None
        if sample.gt_mask is not None:
            gt_path = sub / f"{stem}_gt.png"
            Image.fromarray(sample.gt_mask.astype(np.uint8) * 255).save(gt_path)
        entries.append(
            {
                "category": category,
                "split": split,
                "id": stem,
                "rgb": str(rgb_path),
                "xyz": str(xyz_path),
                "gt": None if gt_path is None else str(gt_path),
                "label": sample.label,
            }
        )

    base = synth.SyntheticSceneSpec(seed=0, **scene_kwargs)
    k = 0
    for i in range(n_train):
        emit(replace(base, seed=seed * 1_000_003 + k, anomaly="none"), "train", i)
        k += 1
    for i in range(n_test_nominal):
        emit(replace(base, seed=seed * 1_000_003 + k, anomaly="none"), "test", i)
        k += 1
    for kind in ("2d_only", "3d_only", "multimodal_only"):
        for i in range(n_test_per_anomaly):
            emit(replace(base, seed=seed * 1_000_003 + k, anomaly=kind), "test", i)
            k += 1

    manifest_path = out / "manifest.json"
    write_manifest(entries, manifest_path)
    return manifest_path


# ---------------------------------------------------------------------------
# pipelines


def category_seed(seed: int, category: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(category.encode())]).entropy % (2**31))


def run_train(cfg: RunConfig) -> Path:
    """End-to-end training; writes checkpoint + loss CSV, returns checkpoint path."""
    entries = read_manifest(cfg.manifest)
    cats = cfg.categories or tuple(sorted({e["category"] for e in entries}))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # one checkpoint per category
    paths = []
    for cat in cats:
        train_entries = [
            e
            for e in entries
            if e["category"] == cat and e["split"] == "train" and e["label"] == "nominal"
        ]
        if cfg.few_shot is not None:
            ids = [e["id"] for e in train_entries]
            keep = set(
                synth.few_shot_subset(sorted(ids), cfg.few_shot, category_seed(cfg.seed, cat))
            )
            train_entries = [e for e in train_entries if e["id"] in keep]
        samples = load_manifest_samples(train_entries)
        if not samples:
            raise DataError(f"no nominal training samples for category {cat}")
        pairs = [align(s, cfg.extractor) for s in samples]
        m23, m32, trace = mapping.train(pairs, cfg.train)
        ckpt = out / f"{cat}.cfmm"
        mapping.save_checkpoint(m23, m32, cfg.train.mode, ckpt)
        loss_csv = out / f"{cat}_loss.csv"
        with open(loss_csv, "w") as f:
            f.write("epoch,mean_loss\n")
            for i, loss in enumerate(trace, start=1):
                f.write(f"{i},{loss!r}\n")
        paths.append(ckpt)
    return paths[0] if len(paths) == 1 else out


def _score_category(
    cfg: RunConfig, ckpt_path: Path, samples: list[MultimodalSample]
) -> list[tuple[anomaly.AnomalyMap, Optional[np.ndarray], str]]:
    m23, m32, mode = mapping.load_checkpoint(ckpt_path)
    records = []
    for s in samples:
        amap = anomaly.score_sample(
            s, cfg.extractor, (m23, m32), kind=cfg.aggregation, sigma=cfg.sigma, mode=mode
        )
        records.append((amap, s.gt_mask, s.label))
    return records


def _checkpoint_for(cfg: RunConfig, checkpoint_dir: Path, cat: str) -> Path:
    cand = checkpoint_dir / f"{cat}.cfmm"
    if cand.exists():
        return cand
    if checkpoint_dir.suffix == ".cfmm" and checkpoint_dir.exists():
        return checkpoint_dir
    raise DataError(f"no checkpoint for category {cat} under {checkpoint_dir}")


def run_eval(cfg: RunConfig, checkpoint: str | Path) -> metrics.EvalReport:
    """Score the test split and compute the metrics report (written to out_dir)."""
    entries = read_manifest(cfg.manifest)
    cats = cfg.categories or tuple(sorted({e["category"] for e in entries}))
    ckpt_dir = Path(checkpoint)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    results = {}
    score_lines = ["sample_id,label,score"]
    for cat in cats:
        samples = load_manifest_samples(entries, categories=(cat,), split="test")
        if not samples:
            raise DataError(f"no test samples for category {cat}")
        records = _score_category(cfg, _checkpoint_for(cfg, ckpt_dir, cat), samples)
        results[cat] = records
        for s, (amap, _, _) in zip(samples, records):
            score_lines.append(f"{s.id},{s.label},{amap.global_score!r}")

    report = metrics.evaluate(results)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "scores.csv").write_text("\n".join(score_lines) + "\n")
    return report


def run_infer(cfg: RunConfig, checkpoint: str | Path, heatmaps: bool = False) -> Path:
    """Score the test split; write scores.csv and optional heatmap exports."""
    entries = read_manifest(cfg.manifest)
    cats = cfg.categories or tuple(sorted({e["category"] for e in entries}))
    ckpt_dir = Path(checkpoint)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["sample_id,label,score"]
    for cat in cats:
        samples = load_manifest_samples(entries, categories=(cat,), split="test")
        records = _score_category(cfg, _checkpoint_for(cfg, ckpt_dir, cat), samples)
        for s, (amap, _, _) in zip(samples, records):
            lines.append(f"{s.id},{s.label},{amap.global_score!r}")
            if heatmaps:
                hdir = out / "heatmaps" / cat
                hdir.mkdir(parents=True, exist_ok=True)
                export_anomaly_map(amap, hdir / f"{s.id}.cfmf")
                export_heatmap_png(amap, hdir / f"{s.id}.png")
    path = out / "scores.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def export_anomaly_map(amap: anomaly.AnomalyMap, path: str | Path) -> None:
    """Anomaly map as a D=1 CFMF file."""
    from .types import FeatureMap

    fmap = FeatureMap(
        data=amap.scores[:, :, None].astype(np.float64),
        valid=np.ones(amap.scores.shape, dtype=bool),
    )
    formats.write_feature_file(fmap, path)


def export_heatmap_png(amap: anomaly.AnomalyMap, path: str | Path) -> None:
    """16-bit grayscale heatmap, max-normalized."""
    s = amap.scores
    peak = s.max()
    norm = s / peak if peak > 0 else s
    img = (norm * 65535.0).round().astype(np.uint16)
    Image.fromarray(img).save(path)


def run_bench(cfg: RunConfig, checkpoint: str | Path) -> dict:
    """Mean wall-clock per sample for the complete inference pipeline,
    plus peak resident memory."""
    import resource

    entries = read_manifest(cfg.manifest)
    cats = cfg.categories or tuple(sorted({e["category"] for e in entries}))
    ckpt_dir = Path(checkpoint)
    n = 0
    elapsed = 0.0
    for cat in cats:
        samples = load_manifest_samples(entries, categories=(cat,), split="test")
        m23, m32, mode = mapping.load_checkpoint(_checkpoint_for(cfg, ckpt_dir, cat))
        for s in samples:
            t0 = time.perf_counter()
            anomaly.score_sample(
                s, cfg.extractor, (m23, m32), kind=cfg.aggregation, sigma=cfg.sigma, mode=mode
            )
            elapsed += time.perf_counter() - t0
            n += 1
    peak_rss_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    record = {
        "samples": n,
        "mean_seconds": elapsed / max(n, 1),
        "fps": n / elapsed if elapsed > 0 else float("inf"),
        "peak_rss_mb": peak_rss_mb,
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    return record
