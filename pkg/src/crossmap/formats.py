"""Binary interchange formats.

Three little-endian raster/point formats plus the model checkpoint:

  CFMF  dense feature map   magic, u32 version, u32 H, u32 W, u32 D,
                            H*W validity bytes (0/1, row-major),
                            H*W*D f32 payload (row-major, channel-last)
  CFMP  point features      magic, u32 version, u32 N, u32 D,
                            N*3 f32 coords, N*D f32 feats
  CFMX  xyz raster          magic, u32 version, u32 H, u32 W, H*W*3 f32
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .types import FeatureMap, PointFeatureSet

MAGIC_DENSE = b"CFMF"
MAGIC_POINT = b"CFMP"
MAGIC_XYZ = b"CFMX"
VERSION = 1


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _read_header(f, magic: bytes, n_dims: int) -> tuple[int, ...]:
    got = _read_exact(f, 4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return struct.unpack(f"<{n_dims}I", _read_exact(f, 4 * n_dims, "dimensions"))


def write_feature_file(fmap: FeatureMap, path: str | Path) -> None:
    """Write a dense feature map as CFMF (32-bit floats)."""
    if not np.all(np.isfinite(fmap.data)):
        raise FormatError("refusing to write non-finite feature data")
    h, w, d = fmap.data.shape
    with open(path, "wb") as f:
        f.write(MAGIC_DENSE)
        f.write(struct.pack("<IIII", VERSION, h, w, d))
        f.write(fmap.valid.astype(np.uint8).tobytes())
        f.write(fmap.data.astype("<f4").tobytes())


def read_feature_file(path: str | Path) -> FeatureMap:
    """Read a CFMF file back into a FeatureMap (float32 payload)."""
    with open(path, "rb") as f:
        h, w, d = _read_header(f, MAGIC_DENSE, 3)
        valid = np.frombuffer(_read_exact(f, h * w, "validity mask"), dtype=np.uint8)
        data = np.frombuffer(_read_exact(f, h * w * d * 4, "payload"), dtype="<f4")
    return FeatureMap(
        data=data.reshape(h, w, d).copy(),
        valid=valid.reshape(h, w).astype(bool),
    )


def write_point_feature_file(pfs: PointFeatureSet, path: str | Path) -> None:
    """Write group centers + features as CFMP."""
    n, d = pfs.feats.shape
    with open(path, "wb") as f:
        f.write(MAGIC_POINT)
        f.write(struct.pack("<III", VERSION, n, d))
        f.write(pfs.centers.astype("<f4").tobytes())
        f.write(pfs.feats.astype("<f4").tobytes())


def read_point_feature_file(path: str | Path) -> PointFeatureSet:
    """Read a CFMP file."""
    with open(path, "rb") as f:
        n, d = _read_header(f, MAGIC_POINT, 2)
        coords = np.frombuffer(_read_exact(f, n * 3 * 4, "coords"), dtype="<f4")
        feats = np.frombuffer(_read_exact(f, n * d * 4, "feats"), dtype="<f4")
    return PointFeatureSet(
        centers=coords.reshape(n, 3).astype(np.float64),
        feats=feats.reshape(n, d).astype(np.float64),
    )


def write_xyz_file(xyz: np.ndarray, path: str | Path) -> None:
    """Write an H x W x 3 coordinate raster as CFMX."""
    if xyz.ndim != 3 or xyz.shape[2] != 3:
        raise FormatError(f"xyz raster must be HxWx3, got {xyz.shape}")
    h, w, _ = xyz.shape
    with open(path, "wb") as f:
        f.write(MAGIC_XYZ)
        f.write(struct.pack("<III", VERSION, h, w))
        f.write(xyz.astype("<f4").tobytes())


def read_xyz_file(path: str | Path) -> np.ndarray:
    """Read a CFMX raster, returned as float32 H x W x 3."""
    with open(path, "rb") as f:
        h, w = _read_header(f, MAGIC_XYZ, 2)
        data = np.frombuffer(_read_exact(f, h * w * 3 * 4, "payload"), dtype="<f4")
    return data.reshape(h, w, 3).copy()
