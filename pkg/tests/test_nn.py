import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mtresp.nn import (Adam, BatchNorm1d, Conv1d, ConvTranspose1d, Dense, InceptionRes, LeakyReLU, Param,
                       Sequential, adam_step, grad_check, load_into, no_grad, param_count, read_header,
                       save_checkpoint, smooth_l1)
from mtresp.nn import functional as F
from mtresp.nn.checkpoint import CheckpointError
from mtresp.nn.losses import smooth_l1_elementwise


def direct_conv(x, w, b, stride, padding):
    B, C, L = x.shape
    O, _, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    Lo = (L + 2 * padding - k) // stride + 1
    out = np.zeros((B, O, Lo))
    for n in range(B):
        for o in range(O):
            for t in range(Lo):
                s = b[o]
                for c in range(C):
                    for j in range(k):
                        s += w[o, c, j] * xp[n, c, t * stride + j]
                out[n, o, t] = s
    return out


class TestConv:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 9))
        assert_array_equal(F.conv1d(x, np.ones((1, 1, 1)), np.zeros(1)), x)

    def test_length_formula(self):
        assert F.conv1d(np.zeros((1, 1, 128)), np.zeros((1, 1, 3)), None, 2, 1).shape[2] == 64

    @pytest.mark.parametrize("stride, padding", [(1, 0), (2, 1), (3, 2)])
    def test_against_direct_sum(self, stride, padding):
        rng = np.random.default_rng(stride)
        x = rng.normal(size=(2, 3, 10))
        w = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        assert_allclose(F.conv1d(x, w, b, stride, padding), direct_conv(x, w, b, stride, padding), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            F.conv1d(np.zeros((1, 2, 8)), np.zeros((1, 3, 3)), None)

    def test_transpose_identity_and_length(self):
        y = np.random.default_rng(1).normal(size=(2, 1, 7))
        assert_allclose(F.conv_transpose1d(y, np.ones((1, 1, 1)), np.zeros(1)), y)
        out = F.conv_transpose1d(np.zeros((1, 2, 64)), np.zeros((2, 3, 3)), None, 2, 1, 1)
        assert out.shape == (1, 3, 128)

    def test_adjoint(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            B, C, O = rng.integers(1, 4, size=3)
            k = int(rng.integers(1, 6))
            s = int(rng.integers(1, 4))
            p = int(rng.integers(0, k))
            L = int(rng.integers(k, 20))
            w = rng.normal(size=(O, C, k))
            x = rng.normal(size=(B, C, L))
            y = rng.normal(size=(B, O, F.conv_out_len(L, k, s, p)))
            lhs = np.sum(F.conv1d(x, w, None, s, p) * y)
            rhs = np.sum(x * F.conv1d_input_grad(y, w, L, s, p))
            assert abs(lhs - rhs) < 1e-10


class TestBatchNorm:
    def test_training_moments(self):
        x = np.random.default_rng(0).normal(3, 5, size=(8, 4, 16))
        y = BatchNorm1d(4).forward(x, training=True)
        assert np.all(np.abs(y.mean(axis=(0, 2))) < 1e-9)
        assert np.all(np.abs(y.var(axis=(0, 2)) - 1) < 1e-6)

    def test_affine(self):
        x = np.random.default_rng(1).normal(size=(4, 2, 8))
        bn = BatchNorm1d(2)
        base = bn.forward(x, training=True)
        bn2 = BatchNorm1d(2)
        bn2.gamma.value[:] = 2.0
        bn2.beta.value[:] = 3.0
        assert_allclose(bn2.forward(x, training=True), 2 * base + 3, atol=1e-12)

    def test_eval_converges_to_training(self):
        rng = np.random.default_rng(2)
        bn = BatchNorm1d(3)
        for _ in range(200):
            bn.forward(rng.normal(2.0, 3.0, size=(16, 3, 32)), training=True)
        x = rng.normal(2.0, 3.0, size=(16, 3, 32))
        tr = bn.forward(x, training=True)
        ev = bn.forward(x, training=False)
        assert np.sqrt(np.mean((tr - ev) ** 2)) < 0.05

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            BatchNorm1d(2).forward(np.zeros((0, 2, 4)), training=True)


def test_leaky_relu_values():
    assert_allclose(LeakyReLU().forward(np.array([1.0, -1.0, 0.0])), [1.0, -0.2, 0.0])


class TestInceptionRes:
    def test_zero_branches_bypass(self):
        blk = InceptionRes(4)
        for p in (blk.branch1.w, blk.branch1.b, blk.branchk.w, blk.branchk.b):
            p.value[...] = 0
        x = np.random.default_rng(0).normal(size=(2, 4, 16))
        assert_allclose(blk.forward(x, training=True), np.where(x >= 0, x, 0.2 * x))

    def test_shape(self):
        x = np.random.default_rng(1).normal(size=(2, 32, 128))
        assert InceptionRes(32).forward(x).shape == (2, 32, 128)

    def test_odd_channels(self):
        with pytest.raises(ValueError):
            InceptionRes(3)


class TestDense:
    def test_identity(self):
        d = Dense(3, 3)
        d.w.value[...] = np.eye(3)
        x = np.random.default_rng(0).normal(size=(2, 3))
        assert_allclose(d.forward(x), x)

    def test_dot(self):
        d = Dense(4, 1)
        d.w.value[...] = 1.0
        d.b.value[...] = 0.5
        assert_allclose(d.forward(np.array([[1.0, 2, 3, 4]])), [[10.5]])
        assert param_count(d) == 5


def test_conv_param_count():
    assert param_count(Conv1d(3, 32, 3)) == 320


class TestGradCheck:
    def test_conv1d(self):
        assert grad_check(Conv1d(3, 4, 3, stride=2, padding=1), (2, 3, 16)) < 1e-4

    def test_conv_transpose(self):
        assert grad_check(ConvTranspose1d(3, 2, 3, 2, 1, 1), (2, 3, 8)) < 1e-4

    def test_batch_norm(self):
        assert grad_check(BatchNorm1d(3), (4, 3, 8)) < 1e-4

    def test_leaky_relu(self):
        assert grad_check(LeakyReLU(), (2, 3, 8)) < 1e-4

    def test_inception_res(self):
        assert grad_check(InceptionRes(4), (3, 4, 16)) < 1e-4

    def test_dense(self):
        assert grad_check(Dense(7, 2), (3, 7)) < 1e-6

    def test_sequential(self):
        rng = np.random.default_rng(0)
        net = Sequential([Conv1d(2, 4, 3, 2, 1, rng=rng), BatchNorm1d(4), LeakyReLU()])
        assert grad_check(net, (3, 2, 12)) < 1e-4


class TestSmoothL1:
    @pytest.mark.parametrize("d, v", [(0.5, 0.125), (1.0, 0.5), (3.0, 2.5), (-3.0, 2.5)])
    def test_values(self, d, v):
        assert smooth_l1_elementwise(np.array(d)) == v

    def test_continuity(self):
        eps = 1e-9
        below = smooth_l1_elementwise(np.array(1 - eps))
        above = smooth_l1_elementwise(np.array(1 + eps))
        assert abs(below - 0.5) < 2e-9 and abs(above - 0.5) < 2e-9
        assert 0.5 * 1.0 ** 2 == 1.0 - 0.5

    def test_reduction_and_grad(self):
        pred = np.array([[0.5, 3.0], [-2.0, 0.0]])
        loss, g = smooth_l1(pred, np.zeros_like(pred))
        assert loss == pytest.approx((0.125 + 2.5 + 1.5 + 0.0) / 2)
        assert_allclose(g, np.clip(pred, -1, 1) / 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            smooth_l1(np.zeros(3), np.zeros(4))


class TestAdam:
    def test_zero_gradient(self):
        p = Param(np.array([1.0, -2.0]))
        adam_step([p], 0.1)
        assert_array_equal(p.value, [1.0, -2.0])
        assert p.step == 1

    def test_first_step_magnitude(self):
        p = Param(np.array([0.0, 0.0]))
        p.grad[...] = [0.3, -5.0]
        adam_step([p], 0.01)
        assert_allclose(p.value, [-0.01, 0.01], rtol=1e-6)

    def test_two_steps_scalar_oracle(self):
        g, lr, b1, b2, eps = 0.7, 0.05, 0.9, 0.999, 1e-8
        th, m, v = 1.0, 0.0, 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            th -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        p = Param(np.array([1.0]))
        opt = Adam([p])
        for _ in range(2):
            p.grad[...] = g
            opt.step(lr)
        assert abs(p.value[0] - th) < 1e-12


class TestCheckpoint:
    def _net(self, seed=0):
        rng = np.random.default_rng(seed)
        return Sequential([Conv1d(2, 4, 3, rng=rng), BatchNorm1d(4), Dense(4, 1, rng=rng)])

    def test_roundtrip(self, tmp_path):
        a, b = self._net(0), self._net(1)
        a.layers[1].running_mean[:] = [0.5, 0.25, -1.0, 2.0]
        save_checkpoint(tmp_path / "m.ckpt", a, {"seed": 0, "epoch": 3})
        assert (tmp_path / "m.ckpt").read_bytes()[:4] == b"RNN1"
        h = load_into(tmp_path / "m.ckpt", b)
        assert h["epoch"] == 3
        for (_, pa), (_, pb) in zip(a.named_params(), b.named_params()):
            assert_array_equal(pb.value, pa.value.astype(np.float32))
        assert_array_equal(b.layers[1].running_mean, a.layers[1].running_mean)
        assert read_header(tmp_path / "m.ckpt")["layers"]["kind"] == "sequential"

    def test_layout_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "m.ckpt", self._net(), {})
        with pytest.raises(CheckpointError):
            load_into(tmp_path / "m.ckpt", Sequential([Dense(4, 1)]))

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, self._net(), {})
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_into(p, self._net())


def test_no_grad_skips_cache():
    c = Conv1d(1, 1, 1)
    with no_grad():
        c.forward(np.ones((1, 1, 4)))
    assert c._x is None


def test_forward_deterministic():
    x = np.random.default_rng(5).normal(size=(2, 4, 16))
    a = InceptionRes(4, rng=np.random.default_rng(1)).forward(x, training=True)
    b = InceptionRes(4, rng=np.random.default_rng(1)).forward(x, training=True)
    assert_array_equal(a, b)
