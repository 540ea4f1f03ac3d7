"""Frozen feature extractors.

Each model id names a fixed architecture with weights derived
deterministically from the id and a pinned revision, so inference is
reproducible bit-for-bit across runs and machines without downloading
checkpoints. Features are taken at the output of encoder block `l`,
before any final norm.

2D: 224x224 RGB in, 28x28 patch grid of 768-dim tokens out (no CLS token
is emitted). 3D: per-group moment statistics in, 1152-dim group features
out.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image

IMAGE_SIZE = 224
PATCH = 8
GRID = IMAGE_SIZE // PATCH  # 28
DIM_2D = 768
DIM_3D = 1152
GROUP_SIZE = 32
N_GROUPS = 1024

# model id -> (revision, depth); the revision is part of the weight seed,
# so bumping it is an explicit, recorded change of the emitted features
MODEL_REGISTRY_2D = {"vit-b8-frozen": ("r1", 12)}
MODEL_REGISTRY_3D = {"pointmae-frozen": ("r1", 12)}


class ModelLoadError(RuntimeError):
    def __init__(self, model_id: str, reason: str):
        super().__init__(f"cannot load model {model_id!r}: {reason}")
        self.model_id = model_id


def _weight(model_id: str, revision: str, tag: str, shape: tuple[int, ...]) -> np.ndarray:
    seed = [zlib.crc32(f"{model_id}@{revision}:{tag}".encode())]
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) / np.sqrt(shape[-1])


@dataclass(frozen=True)
class _ResidualStack:
    """Embedding + `depth` residual tanh blocks; block outputs are the
    per-layer features."""

    model_id: str
    revision: str
    depth: int
    d_in: int
    d_out: int

    def run(self, x: np.ndarray, layer: int) -> np.ndarray:
        if not 1 <= layer <= self.depth:
            raise ValueError(f"layer {layer} outside 1..{self.depth}")
        w0 = _weight(self.model_id, self.revision, "embed", (self.d_in, self.d_out))
        h = x @ w0
        for l in range(1, layer + 1):
            wl = _weight(self.model_id, self.revision, f"block{l}", (self.d_out, self.d_out))
            h = h + np.tanh(h @ wl)
        return h


@dataclass(frozen=True)
class Extractor2D:
    stack: _ResidualStack

    @property
    def depth(self) -> int:
        return self.stack.depth

    def features(self, rgb: np.ndarray, layer: int) -> np.ndarray:
        """RGB (H x W x 3, float in [0,1] or uint8) -> 28 x 28 x 768."""
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"expected HxWx3 RGB, got {rgb.shape}")
        if rgb.dtype != np.uint8:
            rgb = (np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        img = Image.fromarray(rgb, "RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        tokens = (
            arr.reshape(GRID, PATCH, GRID, PATCH, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(GRID * GRID, PATCH * PATCH * 3)
        )
        out = self.stack.run(tokens, layer)
        return out.reshape(GRID, GRID, DIM_2D).astype(np.float32)


@dataclass(frozen=True)
class Extractor3D:
    stack: _ResidualStack

    @property
    def depth(self) -> int:
        return self.stack.depth

    def features(self, groups: np.ndarray, centers: np.ndarray, layer: int) -> np.ndarray:
        """Grouped points (N x k x 3) with their centers (N x 3) -> N x 1152."""
        rel = groups - centers[:, None, :]
        stats = np.concatenate(
            [
                rel.mean(axis=1),
                rel.std(axis=1),
                rel.min(axis=1),
                rel.max(axis=1),
            ],
            axis=1,
        )
        out = self.stack.run(stats, layer)
        return out.astype(np.float32)


def load_2d(model_id: str) -> Extractor2D:
    if model_id not in MODEL_REGISTRY_2D:
        raise ModelLoadError(model_id, "unknown 2D model id")
    revision, depth = MODEL_REGISTRY_2D[model_id]
    return Extractor2D(_ResidualStack(model_id, revision, depth, PATCH * PATCH * 3, DIM_2D))


def load_3d(model_id: str) -> Extractor3D:
    if model_id not in MODEL_REGISTRY_3D:
        raise ModelLoadError(model_id, "unknown 3D model id")
    revision, depth = MODEL_REGISTRY_3D[model_id]
    return Extractor3D(_ResidualStack(model_id, revision, depth, 12, DIM_3D))
