import numpy as np
import pytest

from amtk import autodiff as ad
from amtk.autodiff import Var


def _finite_diff(fn, arrays, idx_array, idx, eps=1e-6):
    """Central finite difference of the scalar fn w.r.t. arrays[idx_array][idx]."""
    arrays[idx_array][idx] += eps
    plus = fn(*arrays)
    arrays[idx_array][idx] -= 2 * eps
    minus = fn(*arrays)
    arrays[idx_array][idx] += eps
    return (plus - minus) / (2 * eps)


def _check_grads(build, *shapes, seed=0):
    """build(*Vars) -> scalar Var; checks every input gradient element."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]

    def value(*arrs):
        return float(build(*[Var(a) for a in arrs]).data)

    out_vars = [Var(a) for a in arrays]
    build(*out_vars).backward()
    for ai, v in enumerate(out_vars):
        grad = v.grad if v.grad is not None else np.zeros_like(v.data)
        for idx in np.ndindex(*v.data.shape):
            fd = _finite_diff(value, arrays, ai, idx)
            assert grad[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8), (ai, idx)


class TestElementwise:
    def test_add_mul(self):
        _check_grads(lambda a, b: ((a + b) * a).sum(), (3, 4), (3, 4))

    def test_broadcast_add(self):
        _check_grads(lambda a, b: (a + b).sum(), (3, 4), (4,))

    def test_matmul(self):
        _check_grads(lambda a, b: (a @ b).sum(), (3, 4), (4, 2))

    def test_nonlinearities(self):
        _check_grads(lambda a: a.relu().sum(), (5,), seed=3)
        _check_grads(lambda a: a.sigmoid().sum(), (5,))
        _check_grads(lambda a: a.tanh().sum(), (5,))

    def test_mean_and_neg(self):
        _check_grads(lambda a: (-a).mean(), (4, 3))


class TestShapeOps:
    def test_reshape_transpose(self):
        _check_grads(lambda a: (a.reshape(2, 6).transpose((1, 0)) @ np.ones((2, 1))).sum(),
                     (3, 4))

    def test_narrow(self):
        _check_grads(lambda a: (a.narrow(1, 1, 2) * a.narrow(1, 0, 2)).sum(), (3, 4))

    def test_concat_stack(self):
        _check_grads(lambda a, b: ad.concat([a, b], axis=1).sum(), (2, 3), (2, 2))
        _check_grads(lambda a, b: (ad.stack([a, b], axis=0) * ad.stack([b, a], axis=0)).sum(),
                     (2, 3), (2, 3))

    def test_pad_crop(self):
        _check_grads(lambda a: ad.crop2d(ad.pad2d(a, 1, 2), 2, 2).sum(), (1, 2, 2, 2))


class TestConvPool:
    def test_conv2d(self):
        _check_grads(lambda x, w, b: (ad.conv2d(x, w, b) * ad.conv2d(x, w, b)).sum(),
                     (2, 2, 4, 5), (3, 2, 3, 3), (3,))

    def test_maxpool(self):
        _check_grads(lambda x: maxpool_sq(x), (1, 2, 4, 4), seed=11)

    def test_upsample(self):
        _check_grads(lambda x: (ad.upsample_nearest2d(x) * np.arange(16.0).reshape(1, 1, 4, 4)).sum(),
                     (1, 1, 2, 2))

    def test_maxpool_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            ad.maxpool2d(Var(np.zeros((1, 1, 3, 4))))


def maxpool_sq(x):
    pooled = ad.maxpool2d(x)
    return (pooled * pooled).sum()


class TestBce:
    def test_zero_logits(self):
        loss = ad.sigmoid_bce_with_logits(Var(np.zeros((4, 5))), np.ones((4, 5)))
        assert float(loss.data) == pytest.approx(np.log(2))

    def test_saturated_positive(self):
        loss = ad.sigmoid_bce_with_logits(Var(np.full((2, 2), 50.0)), np.ones((2, 2)))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-20)

    def test_gradient_single_cell(self):
        logits = Var(np.zeros((1, 1)))
        ad.sigmoid_bce_with_logits(logits, np.ones((1, 1))).backward()
        assert logits.grad[0, 0] == pytest.approx(-0.5)

    def test_gradient_matches_finite_diff(self):
        y = (np.random.default_rng(5).random((3, 4)) > 0.5).astype(float)
        _check_grads(lambda z: ad.sigmoid_bce_with_logits(z, y), (3, 4), seed=6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.sigmoid_bce_with_logits(Var(np.zeros((2, 2))), np.zeros((2, 3)))
