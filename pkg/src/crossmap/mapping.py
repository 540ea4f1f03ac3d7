"""Crossmodal mapping networks: MLP forward/backward, cosine loss, Adam,
and the joint training loop. Everything is float64 numpy for exact,
finite-difference-checkable gradients."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import FormatError, TrainingError
from .types import FeatureMap

NORM_EPS = 1e-12
CHECKPOINT_MAGIC = b"CFMM"
CHECKPOINT_VERSION = 1

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact GeLU: x * Phi(x) with Phi the standard normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    """d/dx GeLU = Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first) with GeLU on all but the last layer."""

    layer_dims: tuple[int, ...]
    arch: str = "projection"  # "projection" | "encoder_decoder"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError("layer dims must be positive")
        if self.arch not in ("projection", "encoder_decoder"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.arch == "encoder_decoder":
            dims = self.layer_dims
            mid = (len(dims) - 2) // 2  # index of the bottleneck width
            for i in range(1, mid + 1):
                if dims[i] * 2 != dims[i - 1]:
                    raise ValueError("encoder stage must halve the width per layer")
            if dims[mid + 1] != dims[mid]:
                raise ValueError("bottleneck widths must match")
            for i in range(mid + 2, len(dims) - 1):
                if dims[i] != dims[i - 1] * 2:
                    raise ValueError("decoder stage must double the width per layer")

    @staticmethod
    def projection(d_in: int, d_out: int, hidden: int = 960) -> "MlpSpec":
        return MlpSpec(layer_dims=(d_in, hidden, d_out))

    @staticmethod
    def encoder_decoder(d_in: int, d_out: int) -> "MlpSpec":
        dims = (d_in, d_in // 2, d_in // 4, d_in // 4, d_in // 2, d_out)
        return MlpSpec(layer_dims=dims, arch="encoder_decoder")


class MappingNetwork:
    """Small MLP with explicit weight/bias arrays."""

    def __init__(self, spec: MlpSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        dims = spec.layer_dims
        assert len(weights) == len(biases) == len(dims) - 1
        for i, (wm, b) in enumerate(zip(weights, biases)):
            assert wm.shape == (dims[i], dims[i + 1]), (wm.shape, dims)
            assert b.shape == (dims[i + 1],)
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @staticmethod
    def init(spec: MlpSpec, rng: np.random.Generator) -> "MappingNetwork":
        """Kaiming-uniform weights scaled for GeLU fan-in; zero biases."""
        weights, biases = [], []
        dims = spec.layer_dims
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / d_in)
            weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return MappingNetwork(spec, weights, biases)

    @property
    def d_in(self) -> int:
        return self.spec.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.spec.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for wm, b in zip(self.weights, self.biases):
            out.extend([wm, b])
        return out

    def forward(self, x: np.ndarray, with_cache: bool = False):
        """Batched forward pass; x is (..., d_in)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_in:
            raise ValueError(f"input dim {x.shape[-1]} != {self.d_in}")
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (wm, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ wm + b
            if i < last:
                cache.append((h, z))
                h = gelu(z)
            else:
                cache.append((h, z))
                h = z
        if with_cache:
            return h, cache
        return h

    def backward(self, cache, upstream: np.ndarray):
        """Gradients of sum(upstream * output) w.r.t. parameters and input.

        Returns (param_grads, input_grad); param_grads interleaves
        [dW0, db0, dW1, db1, ...] matching parameters().
        """
        grads = [None] * (2 * len(self.weights))
        g = np.asarray(upstream, dtype=np.float64)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            h, z = cache[i]
            if i < last:
                g = g * gelu_grad(z)
            hm = h.reshape(-1, h.shape[-1])
            gm = g.reshape(-1, g.shape[-1])
            grads[2 * i] = hm.T @ gm
            grads[2 * i + 1] = gm.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def forward(net: MappingNetwork, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def backward(net: MappingNetwork, x: np.ndarray, upstream: np.ndarray):
    _, cache = net.forward(x, with_cache=True)
    return net.backward(cache, upstream)


# ---------------------------------------------------------------------------
# loss


def cosine_loss(e: np.ndarray, ehat: np.ndarray) -> float:
    """1 - cos(e, ehat), in [0, 2]. Raises on near-zero norms."""
    ne = np.linalg.norm(e)
    nh = np.linalg.norm(ehat)
    if ne < NORM_EPS or nh < NORM_EPS:
        raise ValueError("near-zero vector in cosine loss; skip this pixel")
    return float(1.0 - (e @ ehat) / (ne * nh))


def loss_at_pixel(e2d, ehat2d, e3d, ehat3d) -> float:
    """Per-pixel training loss: sum of the two modality cosine terms."""
    return cosine_loss(e2d, ehat2d) + cosine_loss(e3d, ehat3d)


def _batch_cosine_loss_and_grad(e: np.ndarray, ehat: np.ndarray):
    """Summed 1 - cos over rows and its gradient w.r.t. ehat.

    Rows where either vector has near-zero norm contribute zero loss and
    zero gradient (the skip-pixel rule).
    """
    ne = np.linalg.norm(e, axis=1)
    nh = np.linalg.norm(ehat, axis=1)
    ok = (ne >= NORM_EPS) & (nh >= NORM_EPS)
    ne_s = np.where(ok, ne, 1.0)
    nh_s = np.where(ok, nh, 1.0)
    dot = np.sum(e * ehat, axis=1)
    cos = np.where(ok, dot / (ne_s * nh_s), 1.0)
    loss = float(np.sum(np.where(ok, 1.0 - cos, 0.0)))
    grad = -(e / (ne_s * nh_s)[:, None] - (cos / (nh_s**2))[:, None] * ehat)
    grad[~ok] = 0.0
    return loss, grad, int(np.count_nonzero(ok))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Standard Adam accumulators over a flat list of parameter arrays."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @staticmethod
    def for_params(params: Sequence[np.ndarray], lr: float = 0.001) -> "AdamState":
        return AdamState(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """In-place bias-corrected Adam update; increments state.step."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    lr: float = 0.001
    mode: str = "cross"  # "cross" | "intra"
    seed: int = 0
    batch: int = 4096
    hidden: int = 960
    arch: str = "projection"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.mode not in ("cross", "intra"):
            raise ValueError(f"unknown mode {self.mode!r}")


def _make_spec(d_in: int, d_out: int, cfg: TrainConfig) -> MlpSpec:
    if cfg.arch == "encoder_decoder":
        return MlpSpec.encoder_decoder(d_in, d_out)
    hidden = min(cfg.hidden, max(d_in, d_out) * 2) if max(d_in, d_out) < 64 else cfg.hidden
    return MlpSpec.projection(d_in, d_out, hidden)


def train(
    pairs: Sequence[tuple[FeatureMap, FeatureMap]], cfg: TrainConfig
) -> tuple[MappingNetwork, MappingNetwork, list[float]]:
    """Jointly train the two mapping networks on nominal feature pairs.

    Returns (net_2d_to_3d, net_3d_to_2d, mean loss per epoch). In "intra"
    mode the networks instead reconstruct their own modality. Only pixels
    valid in the 3D map are used.
    """
    if not pairs:
        raise TrainingError("no training samples")
    d2d = pairs[0][0].dim
    d3d = pairs[0][1].dim

    x2, x3 = [], []
    for e2d, e3d in pairs:
        mask = e3d.valid
        x2.append(e2d.data[mask])
        x3.append(e3d.data[mask])
    x2 = np.concatenate(x2, axis=0)
    x3 = np.concatenate(x3, axis=0)
    if x2.shape[0] == 0:
        raise TrainingError("no valid 3D pixels across the dataset")

    rng = np.random.default_rng(cfg.seed)
    if cfg.mode == "cross":
        m23 = MappingNetwork.init(_make_spec(d2d, d3d, cfg), rng)
        m32 = MappingNetwork.init(_make_spec(d3d, d2d, cfg), rng)
    else:
        m23 = MappingNetwork.init(_make_spec(d2d, d2d, cfg), rng)
        m32 = MappingNetwork.init(_make_spec(d3d, d3d, cfg), rng)

    st23 = AdamState.for_params(m23.parameters(), lr=cfg.lr)
    st32 = AdamState.for_params(m32.parameters(), lr=cfg.lr)

    n = x2.shape[0]
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        counted = 0
        for lo in range(0, n, cfg.batch):
            idx = order[lo : lo + cfg.batch]
            b2, b3 = x2[idx], x3[idx]
            in23 = b2 if cfg.mode == "cross" else b2
            tgt23 = b3 if cfg.mode == "cross" else b2
            in32 = b3 if cfg.mode == "cross" else b3
            tgt32 = b2 if cfg.mode == "cross" else b3

            out23, cache23 = m23.forward(in23, with_cache=True)
            loss3, g23, n23 = _batch_cosine_loss_and_grad(tgt23, out23)
            grads23, _ = m23.backward(cache23, g23)
            adam_step(m23.parameters(), grads23, st23)

            out32, cache32 = m32.forward(in32, with_cache=True)
            loss2, g32, n32 = _batch_cosine_loss_and_grad(tgt32, out32)
            grads32, _ = m32.backward(cache32, g32)
            adam_step(m32.parameters(), grads32, st32)

            total += loss2 + loss3
            counted += max(n23, n32)
        trace.append(total / max(counted, 1))
    return m23, m32, trace


def map_features(
    net_pair: tuple[MappingNetwork, MappingNetwork],
    e2d: FeatureMap,
    e3d: FeatureMap,
    mode: str = "cross",
) -> tuple[FeatureMap, FeatureMap]:
    """Predict (E_hat_3D, E_hat_2D); invalid-3D pixels get zero vectors.

    In "intra" mode each network reconstructs its own modality, so
    E_hat_2D = m23(E_2D) and E_hat_3D = m32(E_3D); the return ordering is
    unchanged and each prediction is still compared with its observed map.
    """
    m23, m32 = net_pair
    h, w = e2d.hw
    mask = e3d.valid
    in2, in3 = e2d.data[mask], e3d.data[mask]
    if mode == "cross":
        out3 = m23.forward(in2) if in2.size else np.zeros((0, m23.d_out))
        out2 = m32.forward(in3) if in3.size else np.zeros((0, m32.d_out))
    else:
        out2 = m23.forward(in2) if in2.size else np.zeros((0, m23.d_out))
        out3 = m32.forward(in3) if in3.size else np.zeros((0, m32.d_out))

    pred3 = np.zeros((h, w, out3.shape[1]))
    pred2 = np.zeros((h, w, out2.shape[1]))
    pred3[mask] = out3
    pred2[mask] = out2
    return (
        FeatureMap(data=pred3, valid=mask.copy()),
        FeatureMap(data=pred2, valid=mask.copy()),
    )


# ---------------------------------------------------------------------------
# checkpoint IO


def _write_spec(f, spec: MlpSpec) -> None:
    f.write(struct.pack("<II", 0 if spec.arch == "projection" else 1, len(spec.layer_dims)))
    f.write(struct.pack(f"<{len(spec.layer_dims)}I", *spec.layer_dims))


def _read_spec(f) -> MlpSpec:
    arch_flag, n = struct.unpack("<II", f.read(8))
    dims = struct.unpack(f"<{n}I", f.read(4 * n))
    return MlpSpec(layer_dims=dims, arch="projection" if arch_flag == 0 else "encoder_decoder")


def save_checkpoint(
    m23: MappingNetwork, m32: MappingNetwork, mode: str, path: str | Path
) -> None:
    """Write both networks as a CFMM file (float64 parameters)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, 0 if mode == "cross" else 1))
        for net in (m23, m32):
            _write_spec(f, net.spec)
        for net in (m23, m32):
            for wm, b in zip(net.weights, net.biases):
                f.write(wm.astype("<f8").tobytes())
                f.write(b.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[MappingNetwork, MappingNetwork, str]:
    """Read a CFMM checkpoint back into (m23, m32, mode)."""
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        version, mode_flag = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        specs = [_read_spec(f), _read_spec(f)]
        nets = []
        for spec in specs:
            weights, biases = [], []
            dims = spec.layer_dims
            for d_in, d_out in zip(dims[:-1], dims[1:]):
                wbuf = f.read(d_in * d_out * 8)
                bbuf = f.read(d_out * 8)
                if len(wbuf) < d_in * d_out * 8 or len(bbuf) < d_out * 8:
                    raise FormatError("truncated checkpoint payload")
                weights.append(np.frombuffer(wbuf, dtype="<f8").reshape(d_in, d_out).copy())
                biases.append(np.frombuffer(bbuf, dtype="<f8").copy())
            nets.append(MappingNetwork(spec, weights, biases))
    return nets[0], nets[1], "cross" if mode_flag == 0 else "intra"
