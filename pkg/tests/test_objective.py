import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkld.objective import (
    LOGISTIC,
    SAVAGE,
    SQUARED,
    Dataset,
    ObjectiveSpec,
    loss_family,
)
from rkld.spectral import KernelSpec, SpectralVector


def two_point_objective(loss, gamma=1.5, n_modes=8, lambda0=0.0):
    ds = Dataset(np.array([0.2, 0.8]), np.array([1.0, -1.0]))
    return ObjectiveSpec(ds, loss, KernelSpec(gamma=gamma), n_modes, lambda0=lambda0)


class TestDataset:
    def test_rejects_out_of_domain(self):
        with pytest.raises(ValueError):
            Dataset(np.array([0.5, 1.2]), np.array([1.0, -1.0]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.array([0.5]), np.array([1.0, -1.0]))

    def test_csv_roundtrip(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("z,y\n0.25,1.0\n0.75,-2.5\n")
        ds = Dataset.from_csv(p)
        assert np.array_equal(ds.z, [0.25, 0.75])
        assert np.array_equal(ds.y, [1.0, -2.5])

    def test_csv_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,y\n0.25,1.0\n")
        with pytest.raises(ValueError):
            Dataset.from_csv(p)

    def test_synthesize_deterministic(self):
        a = Dataset.synthesize(10, seed=3)
        b = Dataset.synthesize(10, seed=3)
        assert np.array_equal(a.z, b.z) and np.array_equal(a.y, b.y)

    def test_synthesize_classification_labels(self):
        ds = Dataset.synthesize(50, seed=1, kind="classification")
        assert set(np.unique(ds.y)) <= {-1.0, 1.0}


class TestLossFamilies:
    def test_registry(self):
        assert loss_family("squared") is SQUARED
        with pytest.raises(ValueError):
            loss_family("hinge")

    def test_squared_values(self):
        assert SQUARED.value(np.array([2.0]), np.array([1.0]))[0] == 0.5
        assert SQUARED.d1(np.array([2.0]), np.array([1.0]))[0] == 1.0
        assert SQUARED.d2(np.array([2.0]), np.array([1.0]))[0] == 1.0

    def test_logistic_at_zero(self):
        assert LOGISTIC.value(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(math.log(2.0))
        assert LOGISTIC.d1(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(-0.5)
        assert LOGISTIC.d2(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(0.25)

    def test_savage_at_zero(self):
        assert SAVAGE.value(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(0.25)

    def test_savage_bounds_are_suprema(self):
        u = np.linspace(-30.0, 30.0, 200001)
        y = np.ones_like(u)
        assert np.max(np.abs(SAVAGE.d1(u, y))) <= SAVAGE.first_derivative_bound + 1e-12
        assert np.max(np.abs(SAVAGE.d2(u, y))) <= SAVAGE.second_derivative_bound + 1e-12
        assert np.max(np.abs(SAVAGE.d1(u, y))) > SAVAGE.first_derivative_bound - 1e-6
        assert np.max(np.abs(SAVAGE.d2(u, y))) > SAVAGE.second_derivative_bound - 1e-6

    def test_logistic_bounds_are_suprema(self):
        u = np.linspace(-30.0, 30.0, 200001)
        y = np.ones_like(u)
        assert np.max(np.abs(LOGISTIC.d1(u, y))) <= 1.0
        assert np.max(np.abs(LOGISTIC.d2(u, y))) <= 0.25 + 1e-12

    @given(
        st.floats(min_value=-20, max_value=20),
        st.sampled_from([-1.0, 1.0]),
        st.sampled_from(["squared", "logistic", "savage"]),
    )
    @settings(max_examples=60)
    def test_d1_matches_finite_difference(self, u, y, tag):
        fam = loss_family(tag)
        h = 1e-6 * max(1.0, abs(u))
        ua, ya = np.array([u]), np.array([y])
        fd = (fam.value(ua + h, ya) - fam.value(ua - h, ya))[0] / (2.0 * h)
        assert fam.d1(ua, ya)[0] == pytest.approx(fd, rel=1e-4, abs=1e-7)


class TestRiskAndGradient:
    def test_risk_at_origin_squared(self):
        obj = two_point_objective(SQUARED)
        assert obj.risk(SpectralVector.zeros(8)) == pytest.approx(0.5, abs=1e-15)

    def test_risk_at_origin_logistic(self):
        obj = two_point_objective(LOGISTIC)
        assert obj.risk(SpectralVector.zeros(8)) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_ridge_term(self):
        obj = two_point_objective(SQUARED, lambda0=0.4)
        x = SpectralVector(np.zeros(8))
        assert obj.risk(x) == pytest.approx(0.5)
        x2 = SpectralVector(np.r_[2.0, np.zeros(7)])
        plain = two_point_objective(SQUARED).risk(x2)
        assert obj.risk(x2) == pytest.approx(plain + 0.5 * 0.4 * 4.0, rel=1e-12)

    def test_gradient_finite_difference_all_losses(self):
        rng = np.random.default_rng(17)
        for loss in (SQUARED, LOGISTIC, SAVAGE):
            obj = two_point_objective(loss, lambda0=0.1)
            for _ in range(10):
                x = rng.standard_normal(8)
                v = rng.standard_normal(8)
                v /= np.linalg.norm(v)
                h = 1e-6
                fd = (obj.risk_array(x + h * v) - obj.risk_array(x - h * v)) / (2.0 * h)
                assert abs(obj.grad_array(x) @ v - fd) < 1e-5

    def test_mode_count_mismatch(self):
        obj = two_point_objective(SQUARED)
        with pytest.raises(ValueError):
            obj.risk(SpectralVector.zeros(5))

    def test_regularized_risk_uses_rkhs_norm(self):
        obj = two_point_objective(SQUARED)
        x = SpectralVector.unit(2, 8)
        assert obj.regularized_risk(x, 2.0) == pytest.approx(obj.risk(x) + 0.5 * 2.0 * 9.0)


class TestMinibatch:
    def _objective(self):
        ds = Dataset.synthesize(6, seed=9)
        return ObjectiveSpec(ds, SQUARED, KernelSpec(), 6)

    def test_exhaustive_mean_identity(self):
        obj = self._objective()
        x = SpectralVector(np.random.default_rng(2).standard_normal(6))
        batches = list(itertools.combinations(range(6), 2))
        assert len(batches) == 15
        grads = np.stack([obj.stochastic_grad(x, np.array(b)).coeffs for b in batches])
        assert np.max(np.abs(grads.mean(axis=0) - obj.grad(x).coeffs)) < 1e-12

    def test_full_batch_equals_gradient(self):
        obj = self._objective()
        x = SpectralVector(np.random.default_rng(3).standard_normal(6))
        g = obj.stochastic_grad(x, np.arange(6))
        assert np.max(np.abs(g.coeffs - obj.grad(x).coeffs)) < 1e-14

    def test_rejects_bad_batches(self):
        obj = self._objective()
        x = SpectralVector.zeros(6)
        with pytest.raises(ValueError):
            obj.stochastic_grad(x, np.array([], dtype=int))
        with pytest.raises(ValueError):
            obj.stochastic_grad(x, np.array([0, 0]))
        with pytest.raises(ValueError):
            obj.stochastic_grad(x, np.array([0, 6]))


class TestConstants:
    def test_smoothness_is_g_times_sup_diag(self):
        obj = two_point_objective(LOGISTIC, gamma=2.0, n_modes=16)
        r = max(obj.kernel.kernel_gamma(z, z, 16) for z in obj.dataset.z)
        assert obj.smoothness_constant() == pytest.approx(0.25 * r, rel=1e-14)

    def test_gradient_bound_squared_is_none(self):
        assert two_point_objective(SQUARED).gradient_bound() is None

    def test_gradient_bound_logistic(self):
        obj = two_point_objective(LOGISTIC, gamma=2.0, n_modes=16)
        r = obj.kernel_diag_sup()
        assert obj.gradient_bound() == pytest.approx(math.sqrt(r), rel=1e-14)

    def test_dissipativity_strict_at_twice_threshold(self):
        obj = two_point_objective(SQUARED, gamma=1.5, n_modes=8)
        M = obj.smoothness_constant()
        regime, m, c = obj.dissipativity_constants(2.0 * M * obj.kernel.mu0)
        assert regime == "strict"
        assert m == pytest.approx(M / 2.0, rel=1e-12)
        x_star = obj.find_minimizers(2.0 * M).x_star.norm()
        assert c == pytest.approx(M**2 * x_star**2 / (2.0 * M), rel=1e-10)

    def test_dissipativity_bounded(self):
        obj = two_point_objective(SAVAGE, n_modes=8)
        M = obj.smoothness_constant()
        lam = 0.25 * M * obj.kernel.mu0
        regime, m, c = obj.dissipativity_constants(lam)
        assert regime == "bounded"
        assert m == pytest.approx(lam / (2.0 * obj.kernel.mu0), rel=1e-14)
        B = obj.gradient_bound()
        assert c == pytest.approx(B**2 * obj.kernel.mu0 / (2.0 * lam), rel=1e-14)

    def test_no_regime_raises(self):
        obj = two_point_objective(SQUARED)
        lam = 0.1 * obj.smoothness_constant() * obj.kernel.mu0
        with pytest.raises(ValueError):
            obj.dissipativity_constants(lam)


class TestMinimizers:
    def test_squared_stationarity(self):
        ds = Dataset.synthesize(12, seed=4)
        obj = ObjectiveSpec(ds, SQUARED, KernelSpec(), 10)
        pair = obj.find_minimizers(1.5)
        assert np.max(np.abs(obj.grad_array(pair.x_star.coeffs))) < 1e-9
        mu = obj.kernel.eigenvalues(10)
        res = obj.grad_array(pair.x_tilde.coeffs) + 1.5 * pair.x_tilde.coeffs / mu
        assert np.max(np.abs(res)) < 1e-9
        assert pair.l_tilde >= pair.l_star - 1e-12
        assert not pair.local

    def test_logistic_regularized_stationarity(self):
        ds = Dataset.synthesize(10, seed=6, kind="classification")
        obj = ObjectiveSpec(ds, LOGISTIC, KernelSpec(), 8)
        x_tilde, l_tilde = obj.regularized_minimizer(1.0)
        mu = obj.kernel.eigenvalues(8)
        res = obj.grad_array(x_tilde.coeffs) + x_tilde.coeffs / mu
        assert np.max(np.abs(res)) < 1e-7
        assert l_tilde == pytest.approx(obj.risk(x_tilde), abs=1e-15)

    def test_huge_lambda_shrinks_x_tilde(self):
        ds = Dataset.synthesize(12, seed=4)
        obj = ObjectiveSpec(ds, SQUARED, KernelSpec(), 10)
        x_tilde, _ = obj.regularized_minimizer(1e6)
        assert x_tilde.norm() < 1e-3

    def test_minimizer_matches_regularized_minimizer(self):
        base = Dataset.synthesize(10, seed=6, kind="classification")
        y = base.y.copy()
        y[::3] = -y[::3]  # flipped labels keep the unregularized risk coercive
        obj = ObjectiveSpec(Dataset(base.z, y), LOGISTIC, KernelSpec(), 4)
        pair = obj.find_minimizers(1.0, tol=1e-7)
        x_tilde, _ = obj.regularized_minimizer(1.0, tol=1e-7)
        assert np.max(np.abs(pair.x_tilde.coeffs - x_tilde.coeffs)) < 1e-6
