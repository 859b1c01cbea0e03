"""Tests for sampling, initialization schemes and circular-ensemble statistics."""

import numpy as np
import pytest
from scipy.integrate import quad

from factorlab.dynamics import product
from factorlab.ensembles import (
    InitScheme,
    balanced_init,
    cre_density_det1,
    cue_density,
    eigenangles,
    gaussian_matrix,
    haar_unitary,
    main_term_seed_stat,
    make_rng,
    random_init,
    validate_haar_invariance,
)
from factorlab.errors import NotUnitaryError
from factorlab.linalg import FieldTag, adjoint
from factorlab.monitors import balance_errors

FIELDS = (FieldTag.REAL, FieldTag.COMPLEX)


class TestGaussian:
    def test_complex_entry_second_moment(self):
        # E|entry|^2 = 1 with Re, Im each N(0, 1/2); 1e5 pooled entries
        rng = make_rng(1)
        samples = np.concatenate(
            [gaussian_matrix(5, FieldTag.COMPLEX, rng).ravel() for _ in range(4000)]
        )
        assert abs(np.mean(np.abs(samples) ** 2) - 1.0) < 0.02
        # the parts are balanced
        assert abs(np.var(samples.real) - 0.5) < 0.01
        assert abs(np.var(samples.imag) - 0.5) < 0.01

    def test_real_scalar_variance(self):
        rng = make_rng(2)
        draws = np.array([gaussian_matrix(1, FieldTag.REAL, rng)[0, 0] for _ in range(100_000)])
        assert abs(np.var(draws) - 1.0) < 0.02

    def test_determinism(self):
        a = gaussian_matrix(5, FieldTag.COMPLEX, make_rng(77))
        b = gaussian_matrix(5, FieldTag.COMPLEX, make_rng(77))
        assert np.array_equal(a, b)


class TestHaar:
    def test_unitarity(self):
        for field in FIELDS:
            q = haar_unitary(6, field, make_rng(3))
            assert np.linalg.norm(adjoint(q) @ q - np.eye(6)) < 1e-12

    def test_real_det_is_sign(self):
        rng = make_rng(4)
        dets = [np.linalg.det(haar_unitary(5, FieldTag.REAL, rng)) for _ in range(2000)]
        assert np.allclose(np.abs(dets), 1.0, atol=1e-10)

    def test_real_det_balance(self):
        # fraction of det = +1 over 1e4 samples: 0.5 within binomial 3 sigma
        rng = make_rng(5)
        pos = sum(
            np.linalg.det(haar_unitary(5, FieldTag.REAL, rng)) > 0 for _ in range(10_000)
        )
        assert abs(pos / 10_000 - 0.5) <= 0.015

    def test_left_invariance(self):
        res = validate_haar_invariance(5, 2000, make_rng(6))
        assert res.passed


class TestBalancedInit:
    def test_exact_balance(self):
        for field in FIELDS:
            scheme = InitScheme(kind="balanced", epsilon=0.05)
            stack = balanced_init(5, 4, scheme, field, make_rng(8))
            deltas, e = balance_errors(stack)
            assert e < 1e-12 * 5 * 0.05**2
            for dl in deltas:
                assert np.linalg.norm(dl) < 1e-14

    def test_closed_form_product_even_depth(self):
        # White-box oracle: replicate the documented substream layout and
        # check W_4 W_3 W_2 W_1 = s * eps^4 * Q_4 (G^H G)^2 Q_0^H.
        d, n, eps, seed = 5, 4, 0.05, 21
        for field in FIELDS:
            scheme = InitScheme(kind="balanced", epsilon=eps)
            stack = balanced_init(d, n, scheme, field, make_rng(seed))
            streams = make_rng(seed).spawn(n + 4)
            g = gaussian_matrix(d, field, streams[0])
            qs = [haar_unitary(d, field, streams[3 + k]) for k in range(n + 1)]
            gram = adjoint(g) @ g
            expected = eps**4 * qs[4] @ gram @ gram @ adjoint(qs[0])
            w = product(stack)
            assert np.linalg.norm(w - expected) < 1e-12 * (1 + np.linalg.norm(expected))

    def test_pinned_product_singular_values(self):
        # Black-box oracle: pinning G's singular values pins sigma(W) = (eps * pin)^N
        pins = (1.0, 0.8, 0.6, 0.5, 0.9)
        scheme = InitScheme(kind="balanced", epsilon=0.05, g_singular_values=pins)
        stack = balanced_init(5, 4, scheme, FieldTag.REAL, make_rng(9))
        sv = np.linalg.svd(product(stack), compute_uv=False)
        expected = np.sort((0.05 * np.asarray(pins)) ** 4)[::-1]
        np.testing.assert_allclose(sv, expected, rtol=1e-10)

    def test_marginal_second_moment(self):
        # each layer is marginally an eps-scaled Gaussian ensemble
        eps = 0.05
        scheme = InitScheme(kind="balanced", epsilon=eps)
        rng = make_rng(10)
        acc = 0.0
        n_seeds = 10_000
        for _ in range(n_seeds):
            st = balanced_init(5, 4, scheme, FieldTag.COMPLEX, rng)
            acc += np.mean(np.abs(st.layers[0]) ** 2)
        mean = acc / n_seeds
        assert abs(mean / eps**2 - 1.0) < 0.03

    def test_s_phases_applied(self):
        scheme = InitScheme(kind="balanced", epsilon=0.1, s_phases=(1, 1, 1, -1))
        base = InitScheme(kind="balanced", epsilon=0.1)
        a = balanced_init(5, 4, scheme, FieldTag.REAL, make_rng(11))
        b = balanced_init(5, 4, base, FieldTag.REAL, make_rng(11))
        np.testing.assert_allclose(a.layers[3], -b.layers[3])
        np.testing.assert_allclose(a.layers[0], b.layers[0])

    def test_scheme_validation(self):
        with pytest.raises(ValueError):
            InitScheme(kind="balanced", epsilon=-1.0)
        with pytest.raises(ValueError):
            InitScheme(kind="balanced", s_phases=(0.5, 1, 1, 1))
        with pytest.raises(ValueError):
            InitScheme(kind="nope")


class TestRandomInit:
    def test_determinism(self):
        scheme = InitScheme(kind="random", epsilon=0.3)
        a = random_init(4, 4, scheme, FieldTag.COMPLEX, make_rng(12))
        b = random_init(4, 4, scheme, FieldTag.COMPLEX, make_rng(12))
        for wa, wb in zip(a.layers, b.layers):
            assert np.array_equal(wa, wb)

    def test_product_det_sign_fraction(self):
        scheme = InitScheme(kind="random", epsilon=1.0)
        rng = make_rng(13)
        pos = 0
        n = 10_000
        for _ in range(n):
            st = random_init(5, 4, scheme, FieldTag.REAL, rng)
            if np.linalg.det(product(st)) > 0:
                pos += 1
        assert abs(pos / n - 0.5) <= 0.015

    def test_layer_independence(self):
        scheme = InitScheme(kind="random", epsilon=1.0)
        rng = make_rng(14)
        x, y = [], []
        for _ in range(10_000):
            st = random_init(5, 4, scheme, FieldTag.REAL, rng)
            x.append(st.layers[0][0, 0])
            y.append(st.layers[1][0, 0])
        corr = np.corrcoef(x, y)[0, 1]
        assert abs(corr) < 0.03


class TestMainTermSeedStat:
    def test_identity(self):
        assert abs(main_term_seed_stat(np.eye(5)) - 2.0) < 1e-12

    def test_reflection_haar_zero(self):
        rng = make_rng(15)
        found = 0
        for _ in range(50):
            q = haar_unitary(5, FieldTag.REAL, rng)
            if np.linalg.det(q) < 0:
                found += 1
                assert main_term_seed_stat(q) <= 1e-10
        assert found > 0

    def test_sign_cancellation(self):
        # w = diag(2, -3): w + sqrt(w w^T) = diag(4, 0)
        assert main_term_seed_stat(np.diag([2.0, -3.0])) < 1e-12


class TestDensities:
    def test_cue_flat(self):
        for theta in (-3.0, 0.0, 1.7):
            assert cue_density(theta, 5) == 5 / (2 * np.pi)

    def test_cre_limit_at_zero_odd(self):
        assert cre_density_det1(0.0, 5) == 0.0
        assert abs(cre_density_det1(1e-12, 7)) < 1e-9

    def test_cre_limit_at_zero_even(self):
        assert abs(cre_density_det1(0.0, 6) - 10 / (2 * np.pi)) < 1e-12

    def test_cre_quadrature_total_mass(self):
        # Independent quadrature oracle: the density integrates to the number
        # of non-deterministic eigenangles: d for even d, d-1 for odd d.
        val6, _ = quad(lambda t: cre_density_det1(t, 6), -np.pi, np.pi, limit=200)
        assert abs(val6 - 6.0) < 1e-6
        val5, _ = quad(lambda t: cre_density_det1(t, 5), -np.pi, np.pi, limit=200)
        assert abs(val5 - 4.0) < 1e-6

    def test_cre_continuity_near_pi(self):
        d = 6
        assert abs(cre_density_det1(np.pi, d) - cre_density_det1(np.pi - 1e-7, d)) < 1e-5


class TestEigenangles:
    def test_identity(self):
        np.testing.assert_allclose(eigenangles(np.eye(3)), np.zeros(3))

    def test_constructed(self):
        q = np.diag([1j, -1j])
        angles = np.sort(eigenangles(q))
        np.testing.assert_allclose(angles, [-np.pi / 2, np.pi / 2], atol=1e-12)

    def test_matches_eigendecomposition(self):
        q = haar_unitary(5, FieldTag.COMPLEX, make_rng(16))
        angles = np.sort(eigenangles(q))
        lam = np.sort(np.angle(np.linalg.eigvals(q)))
        np.testing.assert_allclose(angles, lam, atol=1e-10)

    def test_range(self):
        q = haar_unitary(6, FieldTag.REAL, make_rng(17))
        a = eigenangles(q)
        assert np.all(a > -np.pi - 1e-12) and np.all(a <= np.pi + 1e-12)

    def test_not_unitary_rejected(self):
        with pytest.raises(NotUnitaryError):
            eigenangles(np.diag([2.0, 1.0]))
