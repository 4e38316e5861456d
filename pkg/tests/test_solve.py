import numpy as np
import pytest
from scipy.special import expit

from nsc_aipw.errors import ConvergenceError, NumericalError, SeparationError
from nsc_aipw.solve import logistic_irls, newton_solve, numeric_jacobian, weighted_lstsq


class TestNewton:
    def test_scalar_root(self):
        fit = newton_solve(lambda x: np.array([x[0] ** 3 - 8.0]), [1.0])
        assert fit.converged
        assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-10)
        assert fit.final_residual_norm <= 1e-8

    def test_system(self):
        def f(x):
            return np.array([x[0] + x[1] - 3.0, x[0] * x[1] - 2.0])
        fit = newton_solve(f, [3.0, 0.5])
        np.testing.assert_allclose(sorted(fit.coefficients), [1.0, 2.0], atol=1e-10)

    def test_no_root_raises(self):
        with pytest.raises(ConvergenceError):
            newton_solve(lambda x: np.array([x[0] ** 2 + 1.0]), [0.5], bound=None)

    def test_bound(self):
        with pytest.raises(SeparationError):
            newton_solve(lambda x: np.array([np.exp(-x[0])]), [0.0], bound=5.0)

    def test_empty(self):
        assert newton_solve(lambda x: x, np.zeros(0)).converged


def test_numeric_jacobian():
    A = np.array([[2.0, 1.0], [0.5, -3.0]])
    np.testing.assert_allclose(numeric_jacobian(lambda x: A @ x, np.array([0.3, 4.0])), A, atol=1e-8)


class TestLogistic:
    def test_recovers_coefficients(self):
        rng = np.random.default_rng(0)
        n = 20000
        Z = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = (rng.random(n) < expit(Z @ [-0.4, 1.3])).astype(float)
        fit = logistic_irls(Z, y)
        np.testing.assert_allclose(fit.coefficients, [-0.4, 1.3], atol=0.06)

    def test_score_zero_at_solution(self):
        rng = np.random.default_rng(1)
        Z = np.column_stack([np.ones(500), rng.normal(size=500), rng.normal(5, 0.01, 500)])
        y = (rng.random(500) < 0.4).astype(float)
        fit = logistic_irls(Z, y)
        score = Z.T @ (y - expit(Z @ fit.coefficients)) / 500
        assert np.max(np.abs(score)) < 1e-6

    def test_steep_slope_on_narrow_column_not_separation(self):
        rng = np.random.default_rng(0)
        x = rng.normal(10, 0.1, 4000)
        Z = np.column_stack([np.ones(4000), x])
        y = (rng.random(4000) < expit(-300 + 30 * x)).astype(float)
        fit = logistic_irls(Z, y)
        assert fit.coefficients[1] == pytest.approx(30, rel=0.15)

    def test_constant_response(self):
        with pytest.raises(SeparationError):
            logistic_irls(np.ones((10, 1)), np.ones(10))

    def test_separated_data(self):
        x = np.linspace(-1, 1, 50)
        with pytest.raises(SeparationError):
            logistic_irls(np.column_stack([np.ones(50), x]), (x > 0).astype(float))

    def test_offset_and_weights(self):
        rng = np.random.default_rng(2)
        n = 4000
        Z = np.ones((n, 1))
        off = rng.normal(size=n)
        y = (rng.random(n) < expit(off + 0.5)).astype(float)
        fit_w = logistic_irls(np.vstack([Z, Z]), np.concatenate([y, y]), offset=np.concatenate([off, off]))
        fit_2 = logistic_irls(Z, y, 2 * np.ones(n), offset=off)
        assert fit_w.coefficients[0] == pytest.approx(fit_2.coefficients[0], abs=1e-10)


def test_weighted_lstsq():
    Z = np.column_stack([np.ones(4), [0.0, 1.0, 2.0, 3.0]])
    y = np.array([1.0, 3.0, 5.0, 7.0])
    np.testing.assert_allclose(weighted_lstsq(Z, y, np.ones(4)), [1.0, 2.0])
    with pytest.raises(NumericalError):
        weighted_lstsq(np.column_stack([np.ones(4), np.ones(4)]), y, np.ones(4))
