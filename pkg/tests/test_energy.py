import math

import numpy as np
import pytest

from phdiffusion import (
    DimensionMismatch,
    EnergyModel,
    HessianUnavailable,
    NotPD,
    QuadraticEnergy,
    QuarticWellEnergy,
    finite_diff_gradient,
    finite_diff_hessian,
    gaussian_log_density,
    hessian_trace_term,
    make_energy,
    score,
    validate_structure,
)


@pytest.fixture
def quad1d():
    return QuadraticEnergy([[1.0]])


@pytest.fixture
def quartic():
    return QuarticWellEnergy()


class TestScore:
    def test_quadratic_1d(self, quad1d):
        np.testing.assert_allclose(score(quad1d, [2.0], 0.0), [-2.0])

    def test_quartic_minimum(self, quartic):
        np.testing.assert_allclose(score(quartic, [1.0, 1.0], 0.0), [0.0, 0.0], atol=1e-15)

    def test_quartic_off_minimum(self, quartic):
        # -4*0.5*(0.25-1) = 1.5 by direct evaluation of the gradient formula
        np.testing.assert_allclose(score(quartic, [0.5, 0.0], 0.0), [1.5, 0.0])

    def test_score_is_exact_negation(self, quad1d, quartic):
        rng = np.random.default_rng(7)
        for model in (quad1d, quartic):
            for _ in range(50):
                x = rng.uniform(-3, 3, model.dim)
                np.testing.assert_array_equal(
                    score(model, x, 0.0), -model.gradient(x, 0.0)
                )

    def test_dimension_mismatch(self, quad1d):
        with pytest.raises(DimensionMismatch):
            score(quad1d, [1.0, 2.0], 0.0)


class TestFiniteDifferences:
    def test_linear_gradient_exact(self, quad1d):
        fd = finite_diff_gradient(quad1d, np.array([3.0]), 0.0, h=1e-5)
        np.testing.assert_allclose(fd, [3.0], atol=1e-8)

    def test_quartic_matches_analytic_formula(self, quartic):
        fd = finite_diff_gradient(quartic, np.array([0.5, 0.0]), 0.0)
        np.testing.assert_allclose(fd, [-1.5, 0.0], atol=1e-6)

    def test_zero_at_minima(self, quad1d, quartic):
        np.testing.assert_allclose(
            finite_diff_gradient(quad1d, np.array([0.0]), 0.0), [0.0], atol=1e-6
        )
        for minimum in quartic.minima:
            np.testing.assert_allclose(
                finite_diff_gradient(quartic, minimum, 0.0), [0.0, 0.0], atol=1e-6
            )

    @pytest.mark.parametrize("model_name", ["quad", "quartic"])
    def test_gradient_agreement_100_points(self, model_name, quad1d, quartic):
        model = quad1d if model_name == "quad" else quartic
        rng = np.random.default_rng(42)
        for _ in range(100):
            x = rng.uniform(-2, 2, model.dim)
            g = model.gradient(x, 0.0)
            fd = finite_diff_gradient(model, x, 0.0)
            assert np.linalg.norm(fd - g) <= 1e-5 * (1.0 + np.linalg.norm(g))

    @pytest.mark.parametrize("model_name", ["quad", "quartic"])
    def test_hessian_agreement(self, model_name, quad1d, quartic):
        model = quad1d if model_name == "quad" else quartic
        rng = np.random.default_rng(43)
        for _ in range(100):
            x = rng.uniform(-2, 2, model.dim)
            h = model.hessian(x, 0.0)
            fd = finite_diff_hessian(model, x, 0.0)
            assert np.max(np.abs(fd - h)) <= 1e-4 * (1.0 + np.max(np.abs(h)))


class TestHessianTraceTerm:
    def test_quadratic_constant(self, quad1d):
        s = validate_structure([[0.0]], [[0.5]], [[1.0]])
        for x in ([0.0], [3.0], [-7.0]):
            assert hessian_trace_term(quad1d, np.array(x), 0.0, s) == pytest.approx(0.5)

    def test_quartic_at_origin(self, quartic):
        s = validate_structure(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2))
        # Hessian diag(12*0-4) = diag(-4,-4); half trace = -4
        assert hessian_trace_term(quartic, np.array([0.0, 0.0]), 0.0, s) == pytest.approx(-4.0)

    def test_zero_coupling(self, quartic):
        s = validate_structure(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
        assert hessian_trace_term(quartic, np.array([0.7, -1.3]), 0.0, s) == pytest.approx(0.0)

    def test_finite_difference_fallback(self):
        class GradientOnly(EnergyModel):
            @property
            def dim(self):
                return 1

            @property
            def params(self):
                return np.empty(0)

            def value(self, x, t):
                x = self._check_dim(x)
                return 0.5 * np.sum(x**2, axis=-1)

            def gradient(self, x, t):
                return self._check_dim(x).copy()

        model = GradientOnly()
        s = validate_structure([[0.0]], [[0.0]], [[1.0]])
        assert hessian_trace_term(model, np.array([2.0]), 0.0, s) == pytest.approx(0.5, rel=1e-6)
        with pytest.raises(HessianUnavailable):
            hessian_trace_term(model, np.array([2.0]), 0.0, s, fd_fallback=False)


class TestGaussianLogDensity:
    def test_standard_normal_at_origin(self):
        assert gaussian_log_density([[1.0]], [0.0]) == pytest.approx(-0.9189385332046727, abs=1e-15)

    def test_standard_normal_at_one(self):
        assert gaussian_log_density([[1.0]], [1.0]) == pytest.approx(-1.4189385332046727, abs=1e-15)

    def test_bivariate_at_origin(self):
        assert gaussian_log_density(np.eye(2), [0.0, 0.0]) == pytest.approx(
            -math.log(2.0 * math.pi), abs=1e-15
        )

    def test_integrates_to_one_1d(self):
        # Quadrature oracle: the density must be normalized.
        from scipy.integrate import quad

        p = [[2.5]]
        total, _ = quad(lambda x: math.exp(gaussian_log_density(p, [x])), -10, 10)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_not_pd_rejected(self):
        with pytest.raises(NotPD):
            gaussian_log_density([[-1.0]], [0.0])
        with pytest.raises(NotPD):
            gaussian_log_density([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])


class TestBuiltinModels:
    def test_quadratic_requires_pd(self):
        with pytest.raises(NotPD):
            QuadraticEnergy([[0.0]])

    def test_quadratic_homogeneity(self, quad1d):
        rng = np.random.default_rng(11)
        p = QuadraticEnergy([[2.0, 0.3], [0.3, 1.0]])
        for _ in range(50):
            x = rng.standard_normal(2)
            a = rng.uniform(-3, 3)
            assert p.value(a * x, 0.0) == pytest.approx(a**2 * p.value(x, 0.0), rel=1e-12)

    def test_quartic_nonnegative_and_sign_symmetric(self, quartic):
        rng = np.random.default_rng(12)
        for _ in range(100):
            x = rng.uniform(-2.5, 2.5, 2)
            h = quartic.value(x, 0.0)
            assert h >= 0.0
            for flip in ([-1, 1], [1, -1], [-1, -1]):
                assert quartic.value(x * flip, 0.0) == pytest.approx(h, rel=1e-13)

    def test_quartic_minima_exact(self, quartic):
        for minimum in quartic.minima:
            assert quartic.value(minimum, 0.0) == 0.0
            np.testing.assert_array_equal(quartic.gradient(minimum, 0.0), [0.0, 0.0])

    def test_autonomous_time_derivative(self, quad1d, quartic):
        for model in (quad1d, quartic):
            assert model.time_derivative(np.ones(model.dim), 3.7) == 0.0

    def test_batched_evaluation(self, quartic):
        xs = np.array([[0.5, 0.0], [1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(quartic.value(xs, 0.0), [0.5625 + 1.0, 0.0, 2.0])
        grads = quartic.gradient(xs, 0.0)
        assert grads.shape == (3, 2)
        np.testing.assert_allclose(grads[0], [-1.5, 0.0])

    def test_registry(self):
        model = make_energy("quadratic", {"p": [[2.0]]})
        assert isinstance(model, QuadraticEnergy)
        assert isinstance(make_energy("quartic_well", {}), QuarticWellEnergy)
        with pytest.raises(KeyError):
            make_energy("unknown_model", {})

    def test_params_flat(self, quartic):
        p = QuadraticEnergy([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_array_equal(p.params, [2.0, 0.3, 0.3, 1.0])
        assert quartic.params.size == 0
