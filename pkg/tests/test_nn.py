import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maskfuse.errors import DimensionError, NumericError
from maskfuse.nn import (
    affine,
    affine_backward,
    concat_channels,
    grad_check,
    numeric_gradient,
    relative_error,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    softmax,
    softmax_backward,
    spatial_pool,
    spatial_pool_backward,
    split_channels,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def _matvec_oracle(W, x, b):
    return [sum(W[i][j] * x[j] for j in range(len(x))) + b[i] for i in range(len(W))]


class TestAffine:
    def test_identity(self):
        np.testing.assert_array_equal(affine([1, -2, 3], np.eye(3), np.zeros(3)), [1, -2, 3])

    def test_zero_weights(self, rs):
        np.testing.assert_array_equal(affine(rs.normal(size=3), np.zeros((2, 3)), [5, 7]), [5, 7])

    def test_matches_loop_oracle(self):
        W, x, b = [[1, 2], [3, 4]], [1, 1], [0, 0]
        assert _matvec_oracle(W, x, b) == [3, 7]
        np.testing.assert_array_equal(affine(x, W, b), [3, 7])

    def test_batched_rows_match_single(self, rs):
        W, b = rs.normal(size=(4, 3)), rs.normal(size=4)
        X = rs.normal(size=(5, 3))
        for row, out in zip(X, affine(X, W, b)):
            np.testing.assert_allclose(out, _matvec_oracle(W.tolist(), row.tolist(), b.tolist()), rtol=1e-14)

    @pytest.mark.parametrize("xs,ws,bs", [((3,), (2, 4), (2,)), ((4,), (2, 4), (3,)), ((4,), (4,), (4,))])
    def test_shape_mismatch(self, xs, ws, bs):
        with pytest.raises(DimensionError):
            affine(np.zeros(xs), np.zeros(ws), np.zeros(bs))


class TestActivations:
    def test_sigmoid_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_sigmoid_two(self):
        # 1 / (1 + e^-2), 20-digit reference from mpmath
        assert sigmoid(2.0) == pytest.approx(0.88079707797788244406, rel=1e-15)

    @given(finite)
    def test_sigmoid_symmetry(self, x):
        assert sigmoid(x) + sigmoid(-x) == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(-36, 36))
    def test_sigmoid_open_interval(self, x):
        assert 0.0 < sigmoid(x) < 1.0

    def test_sigmoid_no_overflow(self):
        with np.errstate(over="raise"):
            out = sigmoid(np.array([-1000.0, 1000.0]))
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_relu(self):
        np.testing.assert_array_equal(relu([-1.0, 0.0, 2.5]), [0.0, 0.0, 2.5])


class TestPooling:
    def test_example(self):
        F = np.array([[1.0, 3.0], [2.0, 2.0]])
        np.testing.assert_array_equal(spatial_pool(F, "avg"), [2, 2])
        np.testing.assert_array_equal(spatial_pool(F, "max"), [3, 2])

    def test_single_position_is_identity(self, rs):
        F = rs.normal(size=(5, 1))
        np.testing.assert_array_equal(spatial_pool(F, "avg"), F[:, 0])
        np.testing.assert_array_equal(spatial_pool(F, "max"), F[:, 0])

    def test_constant_map(self):
        F = np.full((4, 3), -1.25)
        np.testing.assert_array_equal(spatial_pool(F, "avg"), [-1.25] * 4)
        np.testing.assert_array_equal(spatial_pool(F, "max"), [-1.25] * 4)

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=finite))
    def test_avg_le_max_equality_iff_constant(self, F):
        avg, mx = spatial_pool(F, "avg"), spatial_pool(F, "max")
        assert np.all(avg <= mx + 1e-12 * (1 + np.abs(mx)))
        constant = np.all(F == F[:, :1], axis=1)
        # a non-constant channel has its mean strictly below its max
        assert np.all(mx[~constant] - avg[~constant] > 0)


class TestConcat:
    def test_order_preserved(self):
        maps = [np.array([[float(k)]]) for k in range(1, 7)]
        np.testing.assert_array_equal(concat_channels(maps)[:, 0], [1, 2, 3, 4, 5, 6])

    def test_zero_maps(self):
        out = concat_channels([np.zeros((3, 2))] * 6)
        assert out.shape == (18, 2) and not out.any()

    def test_blocks_equal_inputs(self, rs):
        maps = [rs.normal(size=(2, 2)) for _ in range(6)]
        out = concat_channels(maps)
        for k, m in enumerate(maps):
            np.testing.assert_array_equal(out[2 * k:2 * k + 2], m)

    @given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_concat_then_split_identity(self, d, S, seed):
        maps = np.random.default_rng(seed).normal(size=(6, d, S))
        np.testing.assert_array_equal(split_channels(concat_channels(maps)), maps)

    def test_shape_disagreement(self):
        with pytest.raises(DimensionError):
            concat_channels([np.zeros((2, 1))] * 5 + [np.zeros((3, 1))])

    def test_wrong_count(self):
        with pytest.raises(DimensionError):
            concat_channels([np.zeros((2, 1))] * 5)


class TestSoftmax:
    def test_equal_logits(self):
        np.testing.assert_allclose(softmax([0.3, 0.3, 0.3]), [1 / 3] * 3, rtol=1e-15)

    def test_exponent_ratios(self):
        np.testing.assert_allclose(softmax([0.0, math.log(2), math.log(4)]), [1 / 7, 2 / 7, 4 / 7], rtol=1e-15)

    @given(arrays(np.float64, st.integers(2, 6), elements=finite), st.floats(-100, 100))
    def test_sum_and_shift_invariance(self, z, c):
        p = softmax(z)
        assert abs(p.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(softmax(z + c), p, atol=1e-12)

    def test_large_logits_no_overflow(self):
        with np.errstate(over="raise"):
            p = softmax([1000.0, 0.0, -1000.0])
        assert p[0] == 1.0 and np.isfinite(p).all()


def _scalarized_check(fwd, bwd, x, rs, h=1e-5):
    """Check ``bwd`` against central differences of ``sum(R * fwd(x))``."""
    R = rs.normal(size=np.shape(fwd(x)))
    analytic = bwd(R, x)
    numeric = numeric_gradient(lambda v: float(np.sum(R * fwd(v))), x.copy(), h)
    return relative_error(analytic, numeric).max()


class TestBackwardOps:
    """Every op's backward against finite differences on 20 random shapes."""

    @pytest.mark.parametrize("seed", range(20))
    def test_all_ops(self, seed):
        rs = np.random.default_rng(seed)
        n, m, C, S, B = (int(v) for v in rs.integers(1, 6, size=5))
        W, b = rs.normal(size=(m, n)), rs.normal(size=m)
        x = rs.normal(size=(B, n))
        assert _scalarized_check(lambda v: affine(v, W, b), lambda R, v: affine_backward(R, v, W)[0], x, rs) < 1e-4
        assert _scalarized_check(lambda w: affine(x, w, b), lambda R, w: affine_backward(R, x, w)[1], W.copy(), rs) < 1e-4
        assert _scalarized_check(lambda c: affine(x, W, c), lambda R, c: affine_backward(R, x, W)[2], b.copy(), rs) < 1e-4

        z = rs.normal(size=(B, C)) + np.sign(rs.normal(size=(B, C))) * 0.01  # away from the kink
        assert _scalarized_check(relu, lambda R, v: relu_backward(R, v), z, rs) < 1e-4
        assert _scalarized_check(sigmoid, lambda R, v: sigmoid_backward(R, sigmoid(v)), z, rs) < 1e-4
        assert _scalarized_check(softmax, lambda R, v: softmax_backward(R, softmax(v)), z, rs) < 1e-4

        F = rs.normal(size=(B, C, S))
        for mode in ("avg", "max"):
            assert _scalarized_check(
                lambda v: spatial_pool(v, mode), lambda R, v: spatial_pool_backward(R, v, mode), F, rs
            ) < 1e-4


class TestGradCheck:
    def test_quadratic(self):
        report = grad_check(lambda t: (0.5 * float(t @ t), t.copy()), np.array([1.0, 2.0]), tolerance=1e-8)
        assert report.passed
        assert report.max_rel_error < 1e-8

    def test_stationary_point(self):
        # f(t) = cos(t0) + t1^2 at (0, 0)
        def fn(t):
            return math.cos(t[0]) + t[1] ** 2, np.array([-math.sin(t[0]), 2 * t[1]])

        report = grad_check(fn, np.zeros(2))
        assert report.passed

    def test_detects_wrong_gradient(self):
        report = grad_check(lambda t: (float(t @ t), t.copy()), np.array([1.0, -3.0]))
        assert not report.passed

    def test_dict_params(self):
        params = {"a": np.array([[1.0, 2.0]]), "b": np.array([0.5])}

        def fn(p):
            val = float(np.sum(p["a"] ** 3) + np.sin(p["b"][0]))
            return val, {"a": 3 * p["a"] ** 2, "b": np.cos(p["b"])}

        report = grad_check(fn, params)
        assert report.passed and set(report.per_param) == {"a", "b"}

    def test_non_finite_probe(self):
        def fn(t):
            return (float(np.log(t[0])) if t[0] > 0 else float("nan")), np.array([1 / t[0]])

        with pytest.raises(NumericError):
            grad_check(fn, np.array([1e-6]), h=1e-5)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            grad_check(lambda t: (0.0, t), np.zeros(1), h=0)
