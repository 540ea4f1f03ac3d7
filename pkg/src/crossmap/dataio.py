"""Sample ingestion: PNG rgb / gt rasters plus CFMX coordinate rasters."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DataError, RegistrationError
from .formats import read_xyz_file
from .types import MultimodalSample, make_sample


def _load_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def load_sample(
    rgb_path: str | Path,
    xyz_path: str | Path,
    gt_path: Optional[str | Path] = None,
    label: str = "nominal",
    category: str = "default",
    sample_id: str = "0",
    split: str = "train",
) -> MultimodalSample:
    """Load a pixel-registered sample from disk.

    rgb is rescaled to [0, 1]; the validity mask marks pixels whose xyz is
    finite and not the zero vector. Raises RegistrationError on any
    dimension mismatch between the rasters.
    """
    rgb = _load_png(Path(rgb_path))
    if rgb.ndim == 2:
        rgb = np.stack([rgb] * 3, axis=2)
    rgb = rgb[:, :, :3].astype(np.float64)
    if rgb.max() > 1.0:
        rgb = rgb / 255.0

    xyz = read_xyz_file(xyz_path).astype(np.float64)
    if rgb.shape[:2] != xyz.shape[:2]:
        raise RegistrationError(
            f"rgb {rgb.shape[:2]} vs xyz {xyz.shape[:2]} for sample {sample_id}"
        )

    gt = None
    if gt_path is not None:
        gt_raw = _load_png(Path(gt_path))
        if gt_raw.ndim == 3:
            gt_raw = gt_raw[:, :, 0]
        if gt_raw.shape != rgb.shape[:2]:
            raise RegistrationError(
                f"gt {gt_raw.shape} vs rgb {rgb.shape[:2]} for sample {sample_id}"
            )
        gt = gt_raw > 0

    return make_sample(rgb, xyz, gt, label=label, category=category,
                       sample_id=sample_id, split=split)
