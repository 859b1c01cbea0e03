"""Tests for the optimization core: loss, gradients, steppers, target reduction."""

import numpy as np
import pytest

from factorlab.dynamics import (
    DynConfig,
    LayerStack,
    TargetSpec,
    balance_deltas,
    flow_step_rk4,
    gd_step,
    gradient,
    loss,
    product,
    reduce_target,
)
from factorlab.ensembles import InitScheme, balanced_init, gaussian_matrix, make_rng
from factorlab.errors import DimMismatchError
from factorlab.linalg import FieldTag, adjoint
from factorlab.monitors import balance_errors

FIELDS = (FieldTag.REAL, FieldTag.COMPLEX)


def rand_stack(d, n, field, rng, scale=0.6):
    return LayerStack(tuple(scale * gaussian_matrix(d, field, rng) for _ in range(n)))


def scalar_stack(*values):
    return LayerStack(tuple(np.array([[float(v)]]) for v in values))


class TestProduct:
    def test_identity_layers(self):
        st = LayerStack(tuple(np.eye(3) for _ in range(4)))
        np.testing.assert_allclose(product(st), np.eye(3))

    def test_scalar_product(self):
        assert product(scalar_stack(2, 3, 4, 5))[0, 0] == 120.0

    def test_fold_order_oracle(self):
        st = rand_stack(4, 4, FieldTag.COMPLEX, make_rng(1))
        w_left = st.layers[3] @ (st.layers[2] @ (st.layers[1] @ st.layers[0]))
        w_right = ((st.layers[3] @ st.layers[2]) @ st.layers[1]) @ st.layers[0]
        w = product(st)
        assert np.linalg.norm(w - w_left) < 1e-12 * (1 + np.linalg.norm(w))
        assert np.linalg.norm(w - w_right) < 1e-12 * (1 + np.linalg.norm(w))

    def test_order_is_descending_index(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        b = np.array([[0.0, 0.0], [1.0, 0.0]])
        st = LayerStack((a, b))
        np.testing.assert_allclose(product(st), b @ a)


class TestLoss:
    def test_zero_stack_identity_target(self):
        st = LayerStack(tuple(np.zeros((5, 5)) for _ in range(4)))
        l_ori, l_reg, total = loss(st, TargetSpec.identity(5), DynConfig(reg_a=0.0))
        assert abs(l_ori - 2.5) < 1e-14 and l_reg == 0.0 and abs(total - 2.5) < 1e-14

    def test_global_minimum(self):
        st = balanced_init(5, 4, InitScheme(kind="balanced", epsilon=0.3), FieldTag.REAL, make_rng(2))
        target = TargetSpec(product(st), reduced=False)
        l_ori, l_reg, total = loss(st, target, DynConfig(reg_a=3.0))
        assert l_ori < 1e-24 and l_reg < 1e-24 and total < 1e-24

    def test_appendix_diag_target_oracle(self):
        # independent oracle: direct Frobenius summation of the diagonal
        values = (2.00, 1.55, 1.10, 0.65, 0.20)
        st = LayerStack(tuple(np.zeros((5, 5)) for _ in range(4)))
        expected = 0.5 * sum(v**2 for v in values)
        l_ori, _, _ = loss(st, TargetSpec.diagonal(values), DynConfig())
        assert abs(l_ori - expected) < 1e-14
        assert abs(l_ori - 4.0375) < 1e-14

    def test_omit_l_ori(self):
        st = rand_stack(3, 4, FieldTag.REAL, make_rng(3))
        cfg = DynConfig(reg_a=2.0, omit_l_ori=True)
        l_ori, l_reg, total = loss(st, TargetSpec.identity(3), cfg)
        assert l_ori > 0 and total == l_reg

    def test_dim_mismatch(self):
        st = rand_stack(3, 2, FieldTag.REAL, make_rng(4))
        with pytest.raises(DimMismatchError):
            loss(st, TargetSpec.identity(4), DynConfig())


class TestGradient:
    def test_zero_stack(self):
        st = LayerStack(tuple(np.zeros((4, 4)) for _ in range(4)))
        for g in gradient(st, TargetSpec.identity(4), DynConfig(reg_a=1.0)):
            np.testing.assert_allclose(g, 0.0)

    def test_scalar_oracle(self):
        # d=1, a=0: grad w_j = -(prod_{k != j} w_k)(sigma - prod w)
        st = scalar_stack(1, 1, 1, 1)
        target = TargetSpec(np.array([[2.0]]), reduced=True)
        grads = gradient(st, target, DynConfig(reg_a=0.0))
        for g in grads:
            assert abs(g[0, 0] - (-1.0)) < 1e-14

    def test_finite_difference_oracle(self):
        # trimmed version of the acceptance gradcheck: d=4, N=4, a=0.7
        h = 1e-6
        for field in FIELDS:
            rng = make_rng(5)
            st = rand_stack(4, 4, field, rng)
            target = TargetSpec(gaussian_matrix(4, field, rng), reduced=False)
            cfg = DynConfig(reg_a=0.7)
            grads = gradient(st, target, cfg)
            parts = (1.0, 1j) if field is FieldTag.COMPLEX else (1.0,)
            rng_idx = np.random.default_rng(0)
            for _ in range(24):
                j = int(rng_idx.integers(0, 4))
                k = int(rng_idx.integers(0, 4))
                l = int(rng_idx.integers(0, 4))
                for unit in parts:
                    layers = [w.copy() for w in st.layers]
                    layers[j][k, l] += unit * h
                    fp = loss(LayerStack(tuple(layers)), target, cfg)[2]
                    layers[j][k, l] -= 2 * unit * h
                    fm = loss(LayerStack(tuple(layers)), target, cfg)[2]
                    fd = (fp - fm) / (2 * h)
                    g = grads[j][k, l]
                    ana = g.real if unit == 1.0 else g.imag
                    assert abs(ana - fd) / (1 + abs(ana)) < 1e-6

    def test_product_derivative_free_of_regularizer(self):
        # chain-rule dW/dt equals the regularizer-free expression exactly,
        # because the boundary balance defects vanish identically
        for field in FIELDS:
            rng = make_rng(6)
            st = rand_stack(4, 4, field, rng, scale=0.8)
            target = TargetSpec(gaussian_matrix(4, field, rng), reduced=False)
            cfg = DynConfig(reg_a=0.7)
            grads = gradient(st, target, cfg)
            n = st.depth
            eye = np.eye(4, dtype=st.layers[0].dtype)
            suffix = [eye]
            for w in st.layers:
                suffix.append(w @ suffix[-1])
            prefix = [eye]
            for w in reversed(st.layers):
                prefix.append(prefix[-1] @ w)
            prefix = prefix[::-1]
            dw_chain = sum(
                prefix[j] @ (-grads[j - 1]) @ suffix[j - 1] for j in range(1, n + 1)
            )
            misfit = target.matrix - suffix[-1]
            dw_free = sum(
                prefix[j] @ adjoint(prefix[j]) @ misfit @ adjoint(suffix[j - 1]) @ suffix[j - 1]
                for j in range(1, n + 1)
            )
            scale = 1 + np.linalg.norm(dw_free)
            assert np.linalg.norm(dw_chain - dw_free) < 1e-10 * scale


class TestGdStep:
    def test_fixed_point(self):
        st = LayerStack(tuple(np.zeros((3, 3)) for _ in range(4)))
        new = gd_step(st, TargetSpec.identity(3), DynConfig(reg_a=1.0, eta=0.1))
        for w in new.layers:
            np.testing.assert_allclose(w, 0.0)

    def test_scalar_step(self):
        st = scalar_stack(1, 1, 1, 1)
        target = TargetSpec(np.array([[2.0]]), reduced=True)
        new = gd_step(st, target, DynConfig(reg_a=0.0, eta=0.1))
        for w in new.layers:
            assert abs(w[0, 0] - 1.1) < 1e-14

    def test_descent_direction(self):
        st = balanced_init(5, 4, InitScheme(kind="balanced", epsilon=0.05), FieldTag.REAL, make_rng(7))
        target = TargetSpec.identity(5)
        cfg = DynConfig(reg_a=0.0, eta=1e-4)
        before = loss(st, target, cfg)[2]
        after = loss(gd_step(st, target, cfg), target, cfg)[2]
        assert after < before


class TestFlowRk4:
    def test_equilibrium(self):
        st = LayerStack(tuple(np.zeros((3, 3)) for _ in range(4)))
        new = flow_step_rk4(st, TargetSpec.identity(3), DynConfig(reg_a=1.0, step_h=1e-2, integrator="flow_rk4"))
        for w in new.layers:
            np.testing.assert_allclose(w, 0.0)

    def test_richardson_order(self):
        # d=1, N=2, Sigma=0, symmetric start w1=w2=c: dw/dt = -w^3, so
        # w(t) = c / sqrt(1 + 2 c^2 t); global convergence order must be ~4
        c, t_final = 1.0, 0.5
        target = TargetSpec(np.array([[0.0]]), reduced=True)
        exact = c / np.sqrt(1 + 2 * c * c * t_final)

        def integrate(h):
            st = scalar_stack(c, c)
            cfg = DynConfig(reg_a=0.0, step_h=h, integrator="flow_rk4")
            for _ in range(round(t_final / h)):
                st = flow_step_rk4(st, target, cfg)
            return st.layers[0][0, 0]

        err_h = abs(integrate(0.02) - exact)
        err_h2 = abs(integrate(0.01) - exact)
        order = np.log2(err_h / err_h2)
        assert 3.5 < order < 4.5

    def test_balance_preserved_along_flow(self):
        st = balanced_init(5, 4, InitScheme(kind="balanced", epsilon=0.05), FieldTag.COMPLEX, make_rng(8))
        target = TargetSpec.identity(5)
        cfg = DynConfig(reg_a=0.0, step_h=1e-3, integrator="flow_rk4")
        for _ in range(500):
            st = flow_step_rk4(st, target, cfg)
        _, e = balance_errors(st)
        assert e < 1e-8

    def test_regularizer_dissipation_closed_form(self):
        # per-step decrease of a * sum ||Delta||^2 matches the closed form
        # -4 sum_j ||a Delta_{j,j+1} W_j - a W_j Delta_{j-1,j}||^2 * h, with
        # first-order (in h) relative accuracy
        a = 1.0
        rng = make_rng(9)
        st = rand_stack(4, 4, FieldTag.REAL, rng, scale=0.8)
        target = TargetSpec.identity(4)

        def dissipation_rate(stack):
            deltas = [None] + balance_deltas(stack) + [None]
            total = 0.0
            for j in range(1, stack.depth + 1):
                term = np.zeros_like(stack.layers[0])
                if deltas[j] is not None:
                    term = term + a * deltas[j] @ stack.layers[j - 1]
                if deltas[j - 1] is not None:
                    term = term - a * stack.layers[j - 1] @ deltas[j - 1]
                total += np.linalg.norm(term) ** 2
            return -4.0 * total

        def reg_sum(stack):
            return a * sum(np.linalg.norm(dl) ** 2 for dl in balance_deltas(stack))

        errs = []
        for h in (1e-4, 5e-5):
            cfg = DynConfig(reg_a=a, step_h=h, integrator="flow_rk4", omit_l_ori=True)
            new = flow_step_rk4(st, target, cfg)
            measured = reg_sum(new) - reg_sum(st)
            predicted = dissipation_rate(st) * h
            errs.append(abs(measured - predicted) / abs(predicted))
        assert errs[0] < 5e-3
        assert errs[1] < 0.65 * errs[0]  # shrinks at least linearly with h


class TestReduceTarget:
    def test_identity_noop(self):
        st = rand_stack(3, 4, FieldTag.REAL, make_rng(10))
        target, new = reduce_target(np.eye(3), st)
        assert target.reduced
        np.testing.assert_allclose(target.matrix, np.eye(3))
        l0 = loss(st, TargetSpec.identity(3), DynConfig())[2]
        l1 = loss(new, target, DynConfig())[2]
        assert abs(l0 - l1) < 1e-12 * (1 + l0)

    def test_unsorted_diagonal_reordered(self):
        st = rand_stack(2, 4, FieldTag.REAL, make_rng(11))
        sigma = np.diag([0.2, 2.0])
        target, new = reduce_target(sigma, st)
        np.testing.assert_allclose(np.diagonal(target.matrix), [2.0, 0.2])
        cfg = DynConfig(reg_a=0.5)
        before = loss(st, TargetSpec(sigma, reduced=False), cfg)
        after = loss(new, target, cfg)
        assert abs(before[2] - after[2]) < 1e-10 * (1 + before[2])

    def test_loss_and_balance_invariance_random(self):
        for field in FIELDS:
            rng = make_rng(12)
            st = rand_stack(5, 4, field, rng)
            sigma = gaussian_matrix(5, field, rng)
            cfg = DynConfig(reg_a=1.3)
            before = loss(st, TargetSpec(sigma, reduced=False), cfg)
            _, e_before = balance_errors(st)
            target, new = reduce_target(sigma, st)
            after = loss(new, target, cfg)
            _, e_after = balance_errors(new)
            assert abs(before[2] - after[2]) < 1e-10 * (1 + before[2])
            assert abs(e_before - e_after) < 1e-12 * (1 + e_before)
            # interior layers untouched
            for j in (1, 2):
                assert np.array_equal(st.layers[j], new.layers[j])

    def test_idempotent_up_to_permutation(self):
        st = rand_stack(3, 4, FieldTag.REAL, make_rng(13))
        sigma = np.diag([3.0, 2.0, 1.0])
        target, new = reduce_target(sigma, st)
        np.testing.assert_allclose(target.matrix, sigma, atol=1e-12)
        target2, new2 = reduce_target(target.matrix, new)
        np.testing.assert_allclose(target2.matrix, sigma, atol=1e-12)
        l1 = loss(new, target, DynConfig())[2]
        l2 = loss(new2, target2, DynConfig())[2]
        assert abs(l1 - l2) < 1e-10 * (1 + l1)


class TestConfigs:
    def test_dynconfig_validation(self):
        with pytest.raises(ValueError):
            DynConfig(reg_a=-1.0)
        with pytest.raises(ValueError):
            DynConfig(eta=0.0)
        with pytest.raises(ValueError):
            DynConfig(integrator="euler")

    def test_targetspec_reduced_validation(self):
        with pytest.raises(ValueError):
            TargetSpec(np.array([[1.0, 0.5], [0.0, 1.0]]), reduced=True)
        with pytest.raises(ValueError):
            TargetSpec(np.diag([1.0, -2.0]), reduced=True)

    def test_layerstack_validation(self):
        with pytest.raises(ValueError):
            LayerStack((np.eye(2),))
        with pytest.raises(DimMismatchError):
            LayerStack((np.eye(2), np.eye(3)))
