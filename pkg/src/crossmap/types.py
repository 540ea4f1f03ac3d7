"""Core sample and feature container types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyCloudError, RegistrationError


@dataclass(frozen=True)
class MultimodalSample:
    """A pixel-registered RGB image + organized coordinate map.

    rgb:   H x W x 3, values in [0, 1]
    xyz:   H x W x 3 coordinate map; pixels without a 3D point are invalid
    valid: H x W bool mask of pixels carrying a 3D point
    gt_mask: optional H x W binary anomaly mask
    """

    rgb: np.ndarray
    xyz: np.ndarray
    valid: np.ndarray
    gt_mask: Optional[np.ndarray]
    label: str  # "nominal" | "anomalous"
    category: str
    id: str
    split: str = "train"

    def __post_init__(self):
        h, w = self.rgb.shape[:2]
        for name, arr in (("xyz", self.xyz), ("valid", self.valid)):
            if arr.shape[:2] != (h, w):
                raise RegistrationError(f"{name} shape {arr.shape[:2]} != rgb {h}x{w}")
        if self.gt_mask is not None and self.gt_mask.shape != (h, w):
            raise RegistrationError(f"gt_mask shape {self.gt_mask.shape} != rgb {h}x{w}")

    @property
    def hw(self) -> tuple[int, int]:
        return self.rgb.shape[0], self.rgb.shape[1]


@dataclass(frozen=True)
class PointSet:
    """An unorganized point cloud that remembers its source pixels.

    coords:      N x 3
    pixel_index: N x 2 (row, col) of the registered pixel per point
    """

    coords: np.ndarray
    pixel_index: np.ndarray

    def __len__(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class FeatureMap:
    """Dense H x W x D feature grid; invalid pixels hold zero vectors."""

    data: np.ndarray
    valid: np.ndarray

    @property
    def hw(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PointFeatureSet:
    """Features attached to a subset of cloud points (group centers)."""

    centers: np.ndarray  # N_f x 3
    feats: np.ndarray  # N_f x D

    def __len__(self) -> int:
        return self.centers.shape[0]


def compute_validity(xyz: np.ndarray) -> np.ndarray:
    """A pixel is invalid if any channel is non-finite or the vector is (0,0,0)."""
    finite = np.all(np.isfinite(xyz), axis=2)
    nonzero = np.any(xyz != 0.0, axis=2)
    return finite & nonzero


def make_sample(
    rgb: np.ndarray,
    xyz: np.ndarray,
    gt_mask: Optional[np.ndarray] = None,
    label: str = "nominal",
    category: str = "default",
    sample_id: str = "0",
    split: str = "train",
) -> MultimodalSample:
    """Build a sample from raw rasters, deriving the validity mask."""
    if rgb.shape[:2] != xyz.shape[:2]:
        raise RegistrationError(f"rgb {rgb.shape[:2]} and xyz {xyz.shape[:2]} differ")
    return MultimodalSample(
        rgb=np.asarray(rgb, dtype=np.float64),
        xyz=np.asarray(xyz, dtype=np.float64),
        valid=compute_validity(np.asarray(xyz)),
        gt_mask=None if gt_mask is None else np.asarray(gt_mask).astype(bool),
        label=label,
        category=category,
        id=sample_id,
        split=split,
    )


def sample_to_pointset(sample: MultimodalSample) -> PointSet:
    """One point per valid pixel, row-major, with its (row, col) recorded."""
    rows, cols = np.nonzero(sample.valid)
    if rows.size == 0:
        raise EmptyCloudError(f"sample {sample.id} has no valid 3D points")
    coords = sample.xyz[rows, cols].astype(np.float64)
    return PointSet(coords=coords, pixel_index=np.stack([rows, cols], axis=1))
