import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamgcn.linalg import (AdamState, CsrMatrix, DimensionError,
                              InvalidLabelError, ParameterSet,
                              finite_diff_check, softmax_cross_entropy, spmm)


def _random_sparse(rng, rows, cols, density=0.4):
    dense = rng.normal(size=(rows, cols)) * (rng.random((rows, cols)) < density)
    return CsrMatrix.from_dense(dense), dense


class TestSpmm:
    def test_identity(self):
        eye = CsrMatrix.from_dense(np.eye(3))
        b = np.arange(12, dtype=float).reshape(3, 4)
        np.testing.assert_array_equal(spmm(eye, b), b)

    def test_all_zeros(self):
        z = CsrMatrix(3, 3, np.zeros(4, int), np.zeros(0, int), np.zeros(0))
        b = np.ones((3, 2))
        np.testing.assert_array_equal(spmm(z, b), np.zeros((3, 2)))

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        a, dense = _random_sparse(rng, 5, 5)
        b = rng.normal(size=(5, 5))
        np.testing.assert_allclose(spmm(a, b), dense @ b, rtol=0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_densify_roundtrip_product(self, seed):
        rng = np.random.default_rng(seed)
        a, dense = _random_sparse(rng, 5, 5)
        b = rng.normal(size=(5, 3))
        np.testing.assert_allclose(spmm(a, b), dense @ b, atol=1e-12)

    def test_shape_mismatch(self):
        a = CsrMatrix.from_dense(np.eye(3))
        with pytest.raises(DimensionError):
            spmm(a, np.ones((4, 2)))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        a, _ = _random_sparse(rng, 20, 20, density=0.5)
        b = rng.normal(size=(20, 8))
        first = spmm(a, b)
        for _ in range(3):
            assert np.array_equal(spmm(a, b), first)

    def test_invariant_checks(self):
        with pytest.raises(DimensionError):
            CsrMatrix(2, 2, np.array([0, 1, 2]), np.array([1, 1]),
                      np.array([1.0, 1.0]))  # fine
            CsrMatrix(1, 2, np.array([0, 2]), np.array([1, 0]),
                      np.array([1.0, 1.0]))  # decreasing columns


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_loss_is_log_k(self):
        for k in (2, 3, 5):
            logits = np.zeros((1, k))
            loss, _ = softmax_cross_entropy(logits, np.array([0]), np.arange(k))
            assert loss == pytest.approx(np.log(k), rel=1e-12)

    def test_huge_margin_loss_vanishes(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 1e3
        loss, _ = softmax_cross_entropy(logits, np.array([2]), np.arange(4))
        assert loss < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(4, 6))
        labels = np.array([0, 2, 5, 2])
        active = np.arange(6)
        _, grad = softmax_cross_entropy(logits, labels, active)
        h = 1e-6
        for i in range(4):
            for j in range(6):
                up = logits.copy()
                up[i, j] += h
                dn = logits.copy()
                dn[i, j] -= h
                lu, _ = softmax_cross_entropy(up, labels, active)
                ld, _ = softmax_cross_entropy(dn, labels, active)
                num = (lu - ld) / (2 * h)
                assert abs(grad[i, j] - num) / max(1.0, abs(num)) < 1e-6

    def test_grad_rows_sum_to_zero_over_active(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(5, 8))
        active = np.array([0, 3, 4, 7])
        labels = np.array([0, 3, 4, 7, 3])
        _, grad = softmax_cross_entropy(logits, labels, active)
        np.testing.assert_allclose(grad[:, active].sum(axis=1),
                                   np.zeros(5), atol=1e-14)

    def test_inactive_columns_zero_grad(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(3, 6))
        active = np.array([1, 2])
        _, grad = softmax_cross_entropy(logits, np.array([1, 2, 1]), active)
        inactive = [0, 3, 4, 5]
        assert np.all(grad[:, inactive] == 0.0)

    def test_label_outside_active_set(self):
        logits = np.zeros((1, 4))
        with pytest.raises(InvalidLabelError):
            softmax_cross_entropy(logits, np.array([3]), np.array([0, 1]))


def _single_param(value):
    p = ParameterSet()
    p.add("w", np.array(value, dtype=float))
    return p


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = _single_param([[1.0, -2.0], [0.5, 3.0]])
        before = p.values["w"].copy()
        opt = AdamState(p, lr=0.1)
        for _ in range(5):
            opt.step(p)
        np.testing.assert_array_equal(p.values["w"], before)

    def test_constant_gradient_step_size_approaches_lr(self):
        # with a constant gradient g, bias-corrected Adam moves by
        # lr * g / (|g| + eps) -> lr * sign(g)
        p = _single_param([[0.0]])
        opt = AdamState(p, lr=0.05)
        prev = p.values["w"].copy()
        for i in range(200):
            p.grads["w"][...] = 2.5
            opt.step(p)
            delta = abs(float(prev[0, 0] - p.values["w"][0, 0]))
            prev = p.values["w"].copy()
        assert delta == pytest.approx(0.05, rel=1e-6)

    def test_closed_form_first_step(self):
        # first step: m_hat = g, v_hat = g^2 -> delta = lr * g/(|g|+eps)
        p = _single_param([[1.0]])
        opt = AdamState(p, lr=0.01)
        p.grads["w"][...] = -3.0
        opt.step(p)
        expect = 1.0 + 0.01 * 3.0 / (3.0 + 1e-8)
        assert p.values["w"][0, 0] == pytest.approx(expect, abs=1e-14)

    def test_two_runs_bit_identical(self):
        def run():
            rng = np.random.default_rng(42)
            p = _single_param(rng.normal(size=(3, 3)))
            opt = AdamState(p, lr=1e-2)
            for _ in range(50):
                p.grads["w"][...] = rng.normal(size=(3, 3))
                opt.step(p)
            return p.values["w"].copy()

        a, b = run(), run()
        assert np.array_equal(a, b)

    def test_gradients_left_intact(self):
        p = _single_param([[1.0]])
        opt = AdamState(p)
        p.grads["w"][...] = 7.0
        opt.step(p)
        assert p.grads["w"][0, 0] == 7.0


class TestFiniteDiffCheck:
    def test_quadratic(self):
        p = _single_param([[1.0, -2.0], [0.3, 0.7]])

        def f(ps):
            return float(np.sum(ps.values["w"] ** 2))

        p.grads["w"][...] = 2.0 * p.values["w"]
        assert finite_diff_check(f, p, h=1e-5) < 1e-8

    def test_constant_function(self):
        p = _single_param([[1.0, 2.0]])
        p.zero_grads()
        assert finite_diff_check(lambda ps: 3.25, p) == 0.0

    def test_detects_wrong_gradient(self):
        p = _single_param([[1.0]])
        p.grads["w"][...] = 5.0  # truth is 2*theta = 2
        err = finite_diff_check(lambda ps: float(np.sum(ps.values["w"] ** 2)), p)
        assert err > 1.0

    def test_restores_values_and_grads(self):
        p = _single_param([[1.0, 2.0]])
        p.grads["w"][...] = 2.0 * p.values["w"]
        v0 = p.values["w"].copy()
        g0 = p.grads["w"].copy()
        finite_diff_check(lambda ps: float(np.sum(ps.values["w"] ** 2)), p)
        assert np.array_equal(p.values["w"], v0)
        assert np.array_equal(p.grads["w"], g0)
