"""Writers for the binary interchange formats consumed by the engine.

All three are little-endian with a 4-byte magic and a u32 version:

  CFMF  dense feature map   magic, u32 version, u32 H, u32 W, u32 D,
                            H*W validity bytes (0/1, row-major),
                            H*W*D f32 payload (row-major, channel-last)
  CFMP  point features      magic, u32 version, u32 N, u32 D,
                            N*3 f32 coords, N*D f32 feats
  CFMX  xyz raster          magic, u32 version, u32 H, u32 W, H*W*3 f32

Writes are atomic: the payload goes to a temp file in the target directory
and is renamed into place.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC_DENSE = b"CFMF"
MAGIC_POINT = b"CFMP"
MAGIC_XYZ = b"CFMX"
VERSION = 1


class ExportFormatError(ValueError):
    """Payload cannot be represented in the target format."""


def _atomic_write(path: str | Path, chunks: list[bytes]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        for chunk in chunks:
            f.write(chunk)
    os.replace(tmp, path)


def write_feature_file(data: np.ndarray, valid: np.ndarray, path: str | Path) -> None:
    """Write an H x W x D dense feature map as CFMF."""
    if data.ndim != 3:
        raise ExportFormatError(f"feature map must be HxWxD, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ExportFormatError("refusing to write non-finite feature data")
    h, w, d = data.shape
    if valid.shape != (h, w):
        raise ExportFormatError(f"validity mask {valid.shape} does not match {h}x{w}")
    _atomic_write(
        path,
        [
            MAGIC_DENSE,
            struct.pack("<IIII", VERSION, h, w, d),
            valid.astype(np.uint8).tobytes(),
            data.astype("<f4").tobytes(),
        ],
    )


def write_point_feature_file(centers: np.ndarray, feats: np.ndarray, path: str | Path) -> None:
    """Write N group centers plus N x D features as CFMP."""
    if centers.ndim != 2 or centers.shape[1] != 3:
        raise ExportFormatError(f"centers must be Nx3, got {centers.shape}")
    if feats.ndim != 2 or feats.shape[0] != centers.shape[0]:
        raise ExportFormatError(
            f"feats {feats.shape} do not pair with {centers.shape[0]} centers"
        )
    n, d = feats.shape
    _atomic_write(
        path,
        [
            MAGIC_POINT,
            struct.pack("<III", VERSION, n, d),
            centers.astype("<f4").tobytes(),
            feats.astype("<f4").tobytes(),
        ],
    )


def write_xyz_file(xyz: np.ndarray, path: str | Path) -> None:
    """Write an H x W x 3 coordinate raster as CFMX (f32, lossless)."""
    if xyz.ndim != 3 or xyz.shape[2] != 3:
        raise ExportFormatError(f"xyz raster must be HxWx3, got {xyz.shape}")
    h, w, _ = xyz.shape
    _atomic_write(
        path,
        [
            MAGIC_XYZ,
            struct.pack("<III", VERSION, h, w),
            xyz.astype("<f4").tobytes(),
        ],
    )
