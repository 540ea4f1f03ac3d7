"""Synthetic multimodal benchmark: tiled scenes of (color, shape) patches
on a flat background plane, with 2D-only, 3D-only, and correlation-only
defects."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .types import MultimodalSample, make_sample

DEFAULT_PALETTE = (
    ((0.78, 0.20, 0.32), "flat"),
    ((0.47, 0.20, 0.63), "tilt"),
)

ANOMALY_KINDS = ("none", "2d_only", "3d_only", "multimodal_only")

OUT_OF_PALETTE_COLOR = (0.05, 0.05, 0.05)
OUT_OF_PALETTE_SHAPE = "ridge"

OBJECT_BASE_HEIGHT = 0.05
BUMP_HEIGHT = 0.03
RIDGE_HEIGHT = 0.08


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """One procedurally generated scene.

    The object is a k x k tiling of patches, centered on a flat
    background plane; each patch takes a (color, shape) pairing from the
    palette. defect_patches controls the anomaly extent in patches.
    """

    patch_px: int = 8
    patches: int = 4  # object is patches x patches tiles
    gap_px: int = 4  # background-height spacing between tiles
    border_px: int = 8
    palette: tuple = DEFAULT_PALETTE
    anomaly: str = "none"
    defect_patches: int = 1
    seed: int = 0
    color_noise: float = 0.02
    z_noise: float = 0.0005
    # per-tile nuisance variation, each perturbing one modality only:
    # color casts orthogonal to the palette's color axis (so they never
    # mimic a pairing swap) and surface roughness (orthogonal to the
    # shape-class signature)
    tint_noise: float = 0.15
    height_noise: float = 0.08
    roughness_noise: float = 0.009
    warp_noise: float = 0.0

    def __post_init__(self):
        if self.anomaly not in ANOMALY_KINDS:
            raise ValueError(f"unknown anomaly kind {self.anomaly!r}")
        if self.anomaly == "multimodal_only" and len(self.palette) < 2:
            raise ValueError("multimodal_only needs >= 2 nominal pairings")
        if self.defect_patches < 1 or self.defect_patches > self.patches**2:
            raise ValueError("defect extent out of range")

    @property
    def image_px(self) -> int:
        extent = self.patches * self.patch_px + (self.patches - 1) * self.gap_px
        return extent + 2 * self.border_px


def _shape_height(shape: str, ps: int) -> np.ndarray:
    """Patch heightfield offsets for one shape kind."""
    u = (np.arange(ps) + 0.5) / ps - 0.5
    uu, vv = np.meshgrid(u, u, indexing="ij")
    if shape == "flat":
        return np.zeros((ps, ps))
    if shape == "bump":
        return BUMP_HEIGHT * np.exp(-(uu**2 + vv**2) / (2 * 0.18**2))
    if shape == "tilt":
        # constant-gradient ramp: every interior neighborhood shares the
        # same local geometry, unlike the bump whose curvature varies
        return BUMP_HEIGHT * (uu + 0.5)
    if shape == "ridge":
        return RIDGE_HEIGHT * 0.5 * (1.0 + np.sin(2 * np.pi * (uu + vv) * 2.5))
    raise ValueError(f"unknown shape {shape!r}")


def generate_scene(spec: SyntheticSceneSpec) -> MultimodalSample:
    """Render one deterministic scene from its spec."""
    rng = np.random.default_rng([spec.seed, ANOMALY_KINDS.index(spec.anomaly)])
    k, ps, b = spec.patches, spec.patch_px, spec.border_px
    n = spec.image_px

    assignment = rng.integers(0, len(spec.palette), size=(k, k))

    rgb = np.full((n, n, 3), 0.35)
    z = np.zeros((n, n))
    gt = np.zeros((n, n), dtype=bool)

    # choose defect patches: a run of defect_patches tiles starting at a
    # random tile, row-major
    defect_tiles: set[tuple[int, int]] = set()
    if spec.anomaly != "none":
        start = int(rng.integers(0, k * k))
        for t in range(spec.defect_patches):
            pos = (start + t) % (k * k)
            defect_tiles.add((pos // k, pos % k))

    swap_offset = int(rng.integers(1, len(spec.palette))) if len(spec.palette) > 1 else 0

    # basis of the palette's color subspace; tints are projected out of it
    # so no color cast can drift one nominal color toward another
    colors = np.array([c for c, _ in spec.palette], dtype=np.float64)
    diffs = (colors - colors.mean(axis=0)).T  # 3 x P
    if np.linalg.matrix_rank(diffs) > 0:
        q, r = np.linalg.qr(diffs)
        axis_basis = q[:, np.abs(np.diag(r)) > 1e-12]
    else:
        axis_basis = np.zeros((3, 0))

    for i in range(k):
        for j in range(k):
            color, shape = spec.palette[assignment[i, j]]
            anomalous = (i, j) in defect_tiles
            if anomalous:
                if spec.anomaly == "2d_only":
                    color = OUT_OF_PALETTE_COLOR
                elif spec.anomaly == "3d_only":
                    shape = OUT_OF_PALETTE_SHAPE
                elif spec.anomaly == "multimodal_only":
                    # keep this patch's color, take another pairing's shape
                    other = (assignment[i, j] + swap_offset) % len(spec.palette)
                    shape = spec.palette[other][1]
                    if shape == spec.palette[assignment[i, j]][1]:
                        # identical shapes cannot express a correlation defect
                        other = (other + 1) % len(spec.palette)
                        shape = spec.palette[other][1]
            pitch = ps + spec.gap_px
            y0, x0 = b + i * pitch, b + j * pitch
            # at most one cosmetic quirk per tile — a color cast, a rough
            # surface, or a gentle warp — so quirks stay unilateral per
            # modality and rarely coincide spatially
            quirk = int(rng.integers(0, 6))
            tint = rng.normal(0, spec.tint_noise, size=3)
            if axis_basis.shape[1]:
                tint -= axis_basis @ (axis_basis.T @ tint)
            if quirk not in (2, 3):
                tint = np.zeros(3)
            amp = max(1.0 + rng.normal(0, spec.height_noise), 0.3)
            rough = rng.uniform(0, spec.roughness_noise) if quirk == 4 else 0.0
            warp_amp = rng.uniform(0, spec.warp_noise)
            warp_dir = rng.uniform(0, 2 * np.pi)
            warp_phase = rng.uniform(0, 2 * np.pi)
            u = (np.arange(ps) + 0.5) / ps - 0.5
            uu, vv = np.meshgrid(u, u, indexing="ij")
            warp = warp_amp * np.sin(
                2 * np.pi * (np.cos(warp_dir) * uu + np.sin(warp_dir) * vv) + warp_phase
            )
            if quirk != 5:
                warp = 0.0
            tile_color = np.asarray(color) + tint + rng.normal(0, spec.color_noise, size=3)
            rgb[y0 : y0 + ps, x0 : x0 + ps] = np.clip(
                tile_color + rng.normal(0, spec.color_noise / 2, size=(ps, ps, 3)), 0, 1
            )
            z[y0 : y0 + ps, x0 : x0 + ps] = (
                OBJECT_BASE_HEIGHT
                + amp * _shape_height(shape, ps)
                + rng.normal(0, 1.0, size=(ps, ps)) * rough
                + warp
            )
            if anomalous:
                gt[y0 : y0 + ps, x0 : x0 + ps] = True

    z += rng.normal(0, spec.z_noise, size=z.shape)

    ys = (np.arange(n) + 0.5) / n
    xs = (np.arange(n) + 0.5) / n
    xyz = np.stack([np.broadcast_to(xs, (n, n)), np.broadcast_to(ys[:, None], (n, n)), z], axis=2)
    # background plane pixels sit at z ~ 0 but must stay valid: nudge exact
    # zero vectors (none occur since x, y > 0)

    return make_sample(
        rgb,
        xyz,
        gt_mask=gt if spec.anomaly != "none" else None,
        label="nominal" if spec.anomaly == "none" else "anomalous",
        sample_id=f"{spec.anomaly}_{spec.seed}",
    )


def few_shot_subset(train_ids: Sequence[str], k: int, seed: int) -> list[str]:
    """Uniform sample of min(k, n) ids without replacement, deterministic."""
    if not train_ids:
        raise ValueError("empty train set")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    ids = list(train_ids)
    take = min(k, len(ids))
    picked = rng.choice(len(ids), size=take, replace=False)
    return [ids[i] for i in picked]
