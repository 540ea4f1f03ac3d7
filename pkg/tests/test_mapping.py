import math

import numpy as np
import pytest

from crossmap.errors import TrainingError
from crossmap.mapping import (
    AdamState,
    MappingNetwork,
    MlpSpec,
    TrainConfig,
    adam_step,
    backward,
    cosine_loss,
    forward,
    gelu,
    load_checkpoint,
    loss_at_pixel,
    map_features,
    save_checkpoint,
    train,
)
from crossmap.types import FeatureMap


def erf_gelu_reference(x):
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_symmetry_identity(self):
        for x in (-2.0, -0.3, 0.7, 1.9):
            assert gelu(x) - gelu(-x) == pytest.approx(x, abs=1e-12)

    def test_reference_value(self):
        assert float(gelu(1.0)) == pytest.approx(erf_gelu_reference(1.0), abs=1e-12)
        assert float(gelu(1.0)) == pytest.approx(0.8413447460685429, abs=1e-9)


def make_net(dims, seed=0, arch="projection"):
    return MappingNetwork.init(MlpSpec(tuple(dims), arch=arch), np.random.default_rng(seed))


class TestForward:
    def test_zero_params_zero_output(self):
        net = make_net([3, 4, 2])
        for wm in net.weights:
            wm[:] = 0.0
        out = forward(net, np.array([1.0, -2.0, 3.0]))
        assert np.allclose(out, 0.0)

    def test_identity_single_layer(self):
        net = MappingNetwork(
            MlpSpec((3, 3)), [np.eye(3)], [np.zeros(3)]
        )
        x = np.array([0.5, -1.0, 2.0])
        assert np.allclose(forward(net, x), x)

    def test_hand_computed_two_layer(self):
        w0 = np.array([[1.0, 0.0], [0.0, 2.0]])
        b0 = np.array([0.5, -0.5])
        w1 = np.array([[1.0], [1.0]])
        b1 = np.array([0.25])
        net = MappingNetwork(MlpSpec((2, 2, 1)), [w0, w1], [b0, b1])
        x = np.array([1.0, 1.0])
        z0 = x @ w0 + b0  # [1.5, 1.5]
        expected = erf_gelu_reference(1.5) * 2 + 0.25
        assert forward(net, x)[0] == pytest.approx(expected, abs=1e-12)

    def test_dim_mismatch(self):
        net = make_net([3, 2])
        with pytest.raises(ValueError):
            forward(net, np.zeros(4))


class TestCosineLoss:
    def test_identical(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cosine_loss(v, v) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_loss(np.array([1.0, 0.0]), np.array([0.0, 5.0])) == pytest.approx(1.0)

    def test_antiparallel(self):
        v = np.array([1.0, -2.0])
        assert cosine_loss(v, -v) == pytest.approx(2.0)

    def test_near_zero_raises(self):
        with pytest.raises(ValueError):
            cosine_loss(np.zeros(3), np.ones(3))

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            e = rng.standard_normal(5)
            ehat = rng.standard_normal(5)
            a, b = rng.uniform(0.1, 10, size=2)
            assert cosine_loss(a * e, b * ehat) == pytest.approx(
                cosine_loss(e, ehat), abs=1e-9
            )

    def test_loss_at_pixel(self):
        e = np.array([1.0, 0.0])
        assert loss_at_pixel(e, e, e, e) == pytest.approx(0.0)
        assert loss_at_pixel(e, np.array([0.0, 1.0]), e, np.array([0.0, 1.0])) == pytest.approx(2.0)
        assert loss_at_pixel(e, e, e, -e) == pytest.approx(2.0)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            vals = [rng.standard_normal(4) for _ in range(4)]
            loss = loss_at_pixel(*vals)
            assert 0.0 <= loss <= 4.0


class TestBackward:
    def test_zero_upstream(self):
        net = make_net([3, 4, 2], seed=1)
        grads, gx = backward(net, np.ones(3), np.zeros(2))
        assert all(np.all(g == 0) for g in grads)
        assert np.all(gx == 0)

    def test_linear_row_grad(self):
        net = MappingNetwork(MlpSpec((3, 2)), [np.zeros((3, 2))], [np.zeros(2)])
        x = np.array([1.0, 2.0, 3.0])
        grads, _ = backward(net, x, np.array([1.0, 0.0]))
        # d(out[0])/dW[:,0] = x
        assert np.allclose(grads[0][:, 0], x)
        assert np.allclose(grads[0][:, 1], 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        net = make_net([4, 6, 3], seed=seed)
        x = rng.standard_normal(4)
        upstream = rng.standard_normal(3)

        grads, gx = backward(net, x, upstream)

        def scalar_loss():
            return float(forward(net, x) @ upstream)

        h = 1e-5
        params = net.parameters()
        for p, g in zip(params, grads):
            flat_p = p.ravel()
            flat_g = g.ravel()
            for i in range(0, flat_p.size, max(1, flat_p.size // 5)):
                orig = flat_p[i]
                flat_p[i] = orig + h
                up = scalar_loss()
                flat_p[i] = orig - h
                down = scalar_loss()
                flat_p[i] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(flat_g[i]), 1e-8)
                assert abs(fd - flat_g[i]) / denom <= 1e-4


class TestAdam:
    def test_zero_grad_no_move(self):
        p = np.ones((2, 2))
        st = AdamState.for_params([p])
        adam_step([p], [np.zeros((2, 2))], st)
        assert np.allclose(p, 1.0)
        assert st.step == 1
        adam_step([p], [np.zeros((2, 2))], st)
        assert np.allclose(p, 1.0)

    def test_first_step_hand_value(self):
        p = np.array([1.0])
        st = AdamState.for_params([p], lr=0.001)
        adam_step([p], [np.array([1.0])], st)
        # bias-corrected first step: delta = -lr * 1 / (1 + eps)
        assert p[0] == pytest.approx(1.0 - 0.001 / (1.0 + 1e-8), abs=1e-15)


def toy_pairs(n_samples=3, hw=6, d2d=4, d3d=4, seed=0):
    """Deterministic learnable mapping: e3d is a fixed linear map of e2d."""
    rng = np.random.default_rng(seed)
    mat = np.random.default_rng(99).standard_normal((d2d, d3d))
    pairs = []
    for _ in range(n_samples):
        e2 = rng.standard_normal((hw, hw, d2d))
        e3 = e2 @ mat
        valid = np.ones((hw, hw), bool)
        valid[0, 0] = False
        e3[~valid] = 0
        pairs.append(
            (FeatureMap(data=e2, valid=np.ones((hw, hw), bool)), FeatureMap(data=e3, valid=valid))
        )
    return pairs


class TestTrain:
    def test_loss_descends(self):
        pairs = toy_pairs()
        _, _, trace = train(pairs, TrainConfig(epochs=50, seed=0, batch=64, hidden=16, lr=0.01))
        assert trace[-1] < 0.5 * trace[0]

    def test_epochs_zero_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_deterministic(self):
        pairs = toy_pairs()
        cfg = TrainConfig(epochs=5, seed=3, batch=32, hidden=8)
        a23, a32, tra = train(pairs, cfg)
        b23, b32, trb = train(pairs, cfg)
        assert tra == trb
        for wa, wb in zip(a23.weights, b23.weights):
            assert np.array_equal(wa, wb)
        for wa, wb in zip(a32.weights, b32.weights):
            assert np.array_equal(wa, wb)

    def test_no_valid_pixels(self):
        e2 = FeatureMap(data=np.zeros((2, 2, 3)), valid=np.ones((2, 2), bool))
        e3 = FeatureMap(data=np.zeros((2, 2, 3)), valid=np.zeros((2, 2), bool))
        with pytest.raises(TrainingError):
            train([(e2, e3)], TrainConfig(epochs=1))

    def test_intra_mode_dims(self):
        pairs = toy_pairs(d2d=4, d3d=6)
        m23, m32, _ = train(pairs, TrainConfig(epochs=1, mode="intra", hidden=8))
        assert m23.d_in == 4 and m23.d_out == 4
        assert m32.d_in == 6 and m32.d_out == 6


class TestMapFeatures:
    def nets(self, d2d=4, d3d=6):
        m23 = make_net([d2d, 8, d3d], seed=0)
        m32 = make_net([d3d, 8, d2d], seed=1)
        return m23, m32

    def test_all_invalid(self):
        m23, m32 = self.nets()
        e2 = FeatureMap(data=np.ones((3, 3, 4)), valid=np.ones((3, 3), bool))
        e3 = FeatureMap(data=np.zeros((3, 3, 6)), valid=np.zeros((3, 3), bool))
        p3, p2 = map_features((m23, m32), e2, e3)
        assert np.all(p3.data == 0) and np.all(p2.data == 0)

    def test_single_valid_pixel(self):
        m23, m32 = self.nets()
        e2 = FeatureMap(data=np.random.default_rng(0).random((3, 3, 4)), valid=np.ones((3, 3), bool))
        valid = np.zeros((3, 3), bool)
        valid[1, 2] = True
        e3d_data = np.zeros((3, 3, 6))
        e3d_data[1, 2] = np.arange(6)
        e3 = FeatureMap(data=e3d_data, valid=valid)
        p3, p2 = map_features((m23, m32), e2, e3)
        assert np.allclose(p3.data[1, 2], forward(m23, e2.data[1, 2]))
        assert np.allclose(p2.data[1, 2], forward(m32, e3d_data[1, 2]))
        mask = np.ones((3, 3), bool)
        mask[1, 2] = False
        assert np.all(p3.data[mask] == 0) and np.all(p2.data[mask] == 0)

    def test_shapes_full_valid(self):
        m23, m32 = self.nets()
        e2 = FeatureMap(data=np.ones((4, 4, 4)), valid=np.ones((4, 4), bool))
        e3 = FeatureMap(data=np.ones((4, 4, 6)), valid=np.ones((4, 4), bool))
        p3, p2 = map_features((m23, m32), e2, e3)
        assert p3.data.shape == (4, 4, 6)
        assert p2.data.shape == (4, 4, 4)


class TestSpecsAndCheckpoint:
    def test_encoder_decoder_default_dims(self):
        spec = MlpSpec.encoder_decoder(768, 1152)
        assert spec.layer_dims == (768, 384, 192, 192, 384, 1152)
        spec = MlpSpec.encoder_decoder(1152, 768)
        assert spec.layer_dims == (1152, 576, 288, 288, 576, 768)

    def test_encoder_decoder_invalid(self):
        with pytest.raises(ValueError):
            MlpSpec((8, 5, 2, 2, 5, 16), arch="encoder_decoder")

    def test_checkpoint_round_trip(self, tmp_path):
        m23 = make_net([4, 8, 6], seed=5)
        m32 = make_net([6, 8, 4], seed=6)
        path = tmp_path / "m.cfmm"
        save_checkpoint(m23, m32, "cross", path)
        b23, b32, mode = load_checkpoint(path)
        assert mode == "cross"
        for wa, wb in zip(m23.weights + m23.biases, b23.weights + b23.biases):
            assert np.array_equal(wa, wb)
        for wa, wb in zip(m32.weights + m32.biases, b32.weights + b32.biases):
            assert np.array_equal(wa, wb)
