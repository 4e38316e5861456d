import numpy as np
import pytest

from nsc_aipw.aipw import TargetFunctional
from nsc_aipw.errors import DataError, SeparationError, SupportError
from nsc_aipw.nuisance import (build_design, fit_feature_means, fit_interactions,
                               fit_or_doubly_robust, fit_pattern_mixture, fit_theta_ipw,
                               fit_univariate_selection)
from nsc_aipw.oddsratio import OddsRatioSpec, SelectionModel, make_basis
from nsc_aipw.oracle import mcar_law, pattern_mixture_means
from nsc_aipw.patterns import Dataset, PatternId, all_patterns
from nsc_aipw.simgen import sample_gaussian_cg, setting1


def exact_bases(K, p, i):
    rest = [j for j in range(K) if j != i]
    return (make_basis("saturated", rest, K, p, anchored=True),
            make_basis("saturated", (), K, p), make_basis("saturated", (), K, p))


def mcar_data(n, seed, K=3, q=0.5):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(n, K))
    R = (rng.random((n, K)) < q).astype(int)
    return Dataset.from_full(L, R)


class TestUnivariateSelection:
    def test_null_model(self):
        d = mcar_data(40000, 0)
        D = make_basis("linear", [1, 2], 3, 0, anchored=True)
        H = make_basis("linear", (), 3, 0)
        fit = fit_univariate_selection(d, 1, D, H)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=0.08)

    def test_gaussian_slopes(self):
        prm = setting1()
        _, d = sample_gaussian_cg(prm, 5000, 11)
        for i in (1, 2, 3):
            rest = [j for j in range(3) if j != i - 1]
            D = make_basis("linear", rest, 3, 0, anchored=True)
            H = make_basis("linear", (), 3, 0)
            fit = fit_univariate_selection(d, i, D, H)
            # information-based SE of the logistic slopes
            sel = d.R[:, rest].all(axis=1)
            Z = np.column_stack([-d.L[sel][:, rest], np.ones(sel.sum())])
            eta = Z @ fit.coefficients
            mu = 1 / (1 + np.exp(-eta))
            cov = np.linalg.inv((Z * (mu * (1 - mu))[:, None]).T @ Z)
            se = np.sqrt(np.diag(cov))[:2]
            slope_true = prm.loo_logit(i)[1][rest]
            assert np.all(np.abs(-fit.coefficients[:2] - slope_true) <= 3 * se)

    def test_separation(self):
        L = np.random.default_rng(0).normal(size=(30, 3))
        R = np.ones((30, 3), int)
        R[:10, 1] = 0
        d = Dataset.from_full(L, R)
        D = make_basis("linear", [1, 2], 3, 0, anchored=True)
        with pytest.raises(SeparationError):
            fit_univariate_selection(d, 1, D, make_basis("linear", (), 3, 0))

    def test_no_records(self):
        d = Dataset.from_full(np.ones((4, 3)), np.zeros((4, 3), int))
        with pytest.raises(SupportError):
            fit_univariate_selection(d, 1, make_basis("linear", [1, 2], 3, 0, anchored=True),
                                     make_basis("linear", (), 3, 0))


class TestDoublyRobustOR:
    def test_mcar_near_zero(self):
        d = mcar_data(20000, 3, q=0.7)
        D = make_basis("linear", [1, 2], 3, 0, anchored=True)
        H = make_basis("linear", (), 3, 0)
        a = fit_univariate_selection(d, 1, D, H).coefficients[2:]
        B = fit_feature_means(d, 1, D, H)
        fit = fit_or_doubly_robust(d, 1, D, H, a, H, B)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=0.1)
        assert fit.final_residual_norm <= 1e-8

    def test_population_exact(self, nsc_law):
        d = nsc_law.observed_dataset()
        true = nsc_law.to_selection_model()
        grid = nsc_law.grid()
        L, X = grid[:, :3], grid[:, 3:]
        for i in (1, 2, 3):
            D, H, M = exact_bases(3, nsc_law.p, i - 1)
            ml = fit_univariate_selection(d, i, D, H)
            a = ml.coefficients[D.size:]
            B = fit_feature_means(d, i, D, M)
            fit = fit_or_doubly_robust(d, i, D, H, a, M, B, tol=1e-13)
            np.testing.assert_allclose(D.evaluate(L, X) @ fit.coefficients,
                                       true.or_spec.delta_h(i - 1, L, X), atol=1e-9)

    def test_loo_support(self):
        d = Dataset.from_full(np.ones((4, 3)), np.ones((4, 3), int))
        D = make_basis("linear", [1, 2], 3, 0, anchored=True)
        H = make_basis("linear", (), 3, 0)
        with pytest.raises(SupportError):
            fit_or_doubly_robust(d, 1, D, H, [0.0], H, np.zeros((1, 2)))


def population_main_model(law):
    """Selection model with exact main terms and no interactions."""
    true = law.to_selection_model()
    return SelectionModel(true.or_spec, true.baselines), true


class TestTheta:
    def test_independence_law(self):
        law = mcar_law(3, 0, 0.6)
        d = law.observed_dataset()
        model, _ = population_main_model(law)
        fit, fitted = fit_theta_ipw(d, model)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-10)

    def test_population_exact(self, nsc_law):
        d = nsc_law.observed_dataset()
        model, true = population_main_model(nsc_law)
        p = nsc_law.p
        grid = nsc_law.grid()
        L, X = grid[:, :3], grid[:, 3:]
        # theta_k may depend on L_k and X only
        bases = {k: make_basis("saturated", [k - 1] if k < 4 else (), 3, p) for k in (1, 2, 3, 4)}
        fit, fitted = fit_theta_ipw(d, model, bases, tol=1e-13)
        for k in (1, 2, 3, 4):
            np.testing.assert_allclose(fitted.theta(k, L, X), true.theta(k, L, X), atol=1e-9)

    def test_needs_k3(self):
        law = mcar_law(2, 0)
        model, _ = population_main_model(law)
        with pytest.raises(DataError):
            fit_theta_ipw(law.observed_dataset(), model)

    def test_missing_pattern_support(self):
        rng = np.random.default_rng(0)
        R = np.array([[1, 1, 1], [0, 1, 1], [1, 0, 1], [1, 1, 0]] * 5)
        d = Dataset.from_full(rng.integers(0, 2, (20, 3)).astype(float), R)
        model, _ = population_main_model(mcar_law(3, 0))
        with pytest.raises(SupportError):
            fit_theta_ipw(d, model)


class TestInteractions:
    def test_unsupported_pattern_excluded(self):
        law = mcar_law(3, 0, 0.6)
        d = law.observed_dataset()
        keep = d.pattern_index != 0
        d = d.take(np.flatnonzero(keep))
        model, _ = population_main_model(law)
        bases = build_design(3, 0, interaction="const").interactions
        with pytest.warns(RuntimeWarning):
            fitted, fits = fit_interactions(d, model, bases)
        assert 0 in fitted.excluded
        assert frozenset({0, 1, 2}) not in fits


class TestPatternMixture:
    def test_mar_reduces_to_ols(self):
        d = mcar_data(300, 4)
        law = mcar_law(3, 0)
        model, _ = population_main_model(law)
        no_or = OddsRatioSpec(3, 0, tuple((b, np.zeros_like(c)) for b, c in model.or_spec.delta))
        zero = SelectionModel(no_or, model.baselines)
        basis = make_basis("linear", [0], 3, 0)
        b = np.nan_to_num(d.L[:, 2])
        g = fit_pattern_mixture(d, PatternId((1, 0, 0)), zero, b, basis)
        cc = d.R.all(axis=1)
        ols, *_ = np.linalg.lstsq(basis.evaluate(d.L[cc]), d.L[cc, 2], rcond=None)
        np.testing.assert_allclose(g, ols, atol=1e-12)

    def test_population_exact(self, nsc_law):
        d = nsc_law.observed_dataset()
        true = nsc_law.to_selection_model()
        f = TargetFunctional.product((1, 2, 3))
        b_table = nsc_law.functional_table(f)
        means = pattern_mixture_means(nsc_law, b_table)
        b = f.values(np.nan_to_num(d.L))
        grid = nsc_law.grid()
        for pat in all_patterns(3):
            if pat.is_complete:
                continue
            basis = make_basis("saturated", pat.observed, 3, nsc_law.p)
            g = fit_pattern_mixture(d, pat, true, b, basis)
            pred = basis.evaluate(grid[:, :3], grid[:, 3:]) @ g
            expected = np.broadcast_to(means[pat.bits], nsc_law.lx_shape).ravel()
            np.testing.assert_allclose(pred, expected, atol=1e-10)
