import math

import numpy as np
import pytest

from nsc_aipw.aipw import (EstimatorConfig, Pipeline, TargetFunctional, bootstrap_ci,
                           cell_odds_ratio, estimate_aipw, estimate_complete_case, estimate_ipw,
                           format_reports, joint_distribution_binary, replicate_rng,
                           sandwich_variance)
from nsc_aipw.errors import ConvergenceError, DataError
from nsc_aipw.oracle import mcar_law, true_functional
from nsc_aipw.patterns import Dataset
from nsc_aipw.simgen import GAUSS_CONFIG, get_setting

FUNCTIONALS = [TargetFunctional.mean(3), TargetFunctional.mean(1),
               TargetFunctional.product((1, 2, 3)), TargetFunctional.product((2, 3)),
               TargetFunctional.cell_indicator((1, 0, 1))]


@pytest.fixture(scope="module")
def binary_sample():
    return get_setting("binary2").sampler(3000, replicate_rng(5, 0))


class TestFunctional:
    @pytest.mark.parametrize("text,name", [("mean:L3", "mean:L3"), ("product:L2,L1", "product:L1,L2"),
                                           ("cell:101", "cell:101"), ("cell:1,0,1", "cell:101")])
    def test_parse(self, text, name):
        assert TargetFunctional.parse(text).name == name

    @pytest.mark.parametrize("text", ["median:L1", "mean:X1", "cell:12", "product:"])
    def test_parse_errors(self, text):
        with pytest.raises(DataError):
            TargetFunctional.parse(text)

    def test_values(self):
        L = np.array([[1.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
        np.testing.assert_array_equal(TargetFunctional.cell_indicator((1, 0, 1)).values(L), [1, 0])
        np.testing.assert_array_equal(TargetFunctional.product((1, 2)).values(L), [0, 1])
        with pytest.raises(DataError):
            TargetFunctional.mean(4).values(L)


class TestNoMissingness:
    @pytest.mark.parametrize("estimator", [estimate_aipw, estimate_ipw])
    def test_sample_mean(self, estimator):
        rng = np.random.default_rng(0)
        L = rng.normal(size=(200, 3))
        d = Dataset.from_full(L, np.ones((200, 3), int))
        rep = estimator(d, TargetFunctional.mean(2))
        assert rep.beta_hat == pytest.approx(L[:, 1].mean(), abs=1e-12)
        assert rep.sandwich_se ** 2 == pytest.approx(L[:, 1].var() / 200, rel=1e-9)


class TestPopulation:
    @pytest.mark.parametrize("f", FUNCTIONALS, ids=lambda f: f.name)
    @pytest.mark.parametrize("method", ["aipw", "ipw"])
    def test_recovers_truth(self, nsc_law, exact_config, f, method):
        pipe = Pipeline(nsc_law.observed_dataset(), exact_config)
        fit = pipe.fit_functional(f, method)
        assert fit.beta == pytest.approx(true_functional(nsc_law, f), abs=1e-10)

    def test_separate_pm_mode(self, nsc_law, exact_config):
        f = TargetFunctional.product((1, 2, 3))
        pipe = Pipeline(nsc_law.observed_dataset(), exact_config.with_(pm_mode="separate"))
        assert pipe.fit_functional(f).beta == pytest.approx(true_functional(nsc_law, f), abs=1e-10)

    def test_ml_odds_ratio(self, nsc_law, exact_config):
        f = TargetFunctional.mean(2)
        pipe = Pipeline(nsc_law.observed_dataset(), exact_config.with_(or_method="ml"))
        assert pipe.fit_functional(f).beta == pytest.approx(true_functional(nsc_law, f), abs=1e-10)

    def test_selection_model(self, nsc_law, exact_config):
        model = Pipeline(nsc_law.observed_dataset(), exact_config).selection_model()
        grid = nsc_law.grid()
        P = model.pattern_prob_all(grid[:, :3], grid[:, 3:])
        for j in range(8):
            bits = tuple((j >> i) & 1 for i in range(3))
            np.testing.assert_allclose(P[:, j], nsc_law.pi(bits).ravel(), atol=1e-10)

    def test_joint_table(self, nsc_law, exact_config):
        table, factor = joint_distribution_binary(nsc_law.observed_dataset(), exact_config)
        truth = nsc_law.p_lx.sum(axis=tuple(range(3, 3 + nsc_law.p)))
        np.testing.assert_allclose(table, truth, atol=1e-10)
        assert factor == pytest.approx(1.0, abs=1e-10)


class TestSampleProperties:
    def test_linearity(self, binary_sample):
        cfg = get_setting("binary2").config
        pipe = Pipeline(binary_sample, cfg)
        f = TargetFunctional.product((1, 3))
        scaled = TargetFunctional.custom(lambda L: 2.5 * L[:, 0] * L[:, 2], (1, 3), "2.5*L1*L3")
        assert pipe.fit_functional(scaled).beta == pytest.approx(2.5 * pipe.fit_functional(f).beta, rel=1e-12)

    def test_doubled_dataset(self, binary_sample):
        cfg = get_setting("binary2").config.with_(variance=True)
        f = TargetFunctional.product((1, 2, 3))
        one = estimate_aipw(binary_sample, f, cfg)
        two = estimate_aipw(binary_sample.concat(binary_sample), f, cfg)
        assert two.beta_hat == pytest.approx(one.beta_hat, abs=1e-9)
        assert one.sandwich_se / two.sandwich_se == pytest.approx(math.sqrt(2), rel=1e-5)

    def test_ipw_differs_from_aipw(self, binary_sample):
        cfg = get_setting("binary2").config
        f = TargetFunctional.mean(3)
        assert abs(estimate_ipw(binary_sample, f, cfg).beta_hat
                   - estimate_aipw(binary_sample, f, cfg).beta_hat) > 1e-6

    def test_clipping_reported(self, binary_sample):
        cfg = get_setting("binary2").config.with_(clip_eps=0.2, variance=False)
        rep = estimate_aipw(binary_sample, TargetFunctional.mean(3), cfg)
        assert rep.n_clipped_weights > 0

    def test_sandwich_matches_report(self, binary_sample):
        cfg = get_setting("binary2").config.with_(variance=True)
        f = TargetFunctional.mean(1)
        omega, cov = sandwich_variance(binary_sample, f, cfg)
        assert math.sqrt(cov[-1, -1]) == pytest.approx(estimate_aipw(binary_sample, f, cfg).sandwich_se)
        assert omega.size == cov.shape[0]

    def test_complete_case(self, binary_sample):
        rep = estimate_complete_case(binary_sample, TargetFunctional.mean(3))
        cc = binary_sample.R.all(axis=1)
        assert rep.beta_hat == pytest.approx(binary_sample.L[cc, 2].mean())
        assert rep.n_complete == cc.sum()


@pytest.fixture(scope="module")
def rootless():
    # sample where the doubly robust equation for L1 has no root
    return get_setting("gauss1").sampler(5000, replicate_rng(1, 2))


class TestOddsRatioFallback:
    def test_fallback_reported(self, rootless):
        pipe = Pipeline(rootless, GAUSS_CONFIG)
        rep = pipe.report(pipe.fit_functional(TargetFunctional.mean(3)), variance=True)
        assert rep.diagnostics["or_fallback"] == [1]
        assert math.isfinite(rep.sandwich_se)

    def test_strict_mode_raises(self, rootless):
        with pytest.raises(ConvergenceError):
            Pipeline(rootless, GAUSS_CONFIG.with_(or_fallback=False))


class TestBootstrap:
    def test_deterministic(self, binary_sample):
        cfg = get_setting("binary2").config
        f = TargetFunctional.mean(3)
        a = bootstrap_ci(binary_sample, f, cfg, B=20, seed=9)
        b = bootstrap_ci(binary_sample, f, cfg, B=20, seed=9)
        assert a == b
        assert a[0] < estimate_aipw(binary_sample, f, cfg).beta_hat < a[1]

    def test_threads_do_not_matter(self, binary_sample):
        cfg = get_setting("binary2").config
        f = TargetFunctional.mean(3)
        assert bootstrap_ci(binary_sample, f, cfg, B=8, seed=1, threads=2) == \
            bootstrap_ci(binary_sample, f, cfg, B=8, seed=1, threads=1)

    def test_constant_functional(self):
        law = mcar_law(3, 0, 0.6)
        _, d = law.sample(400, np.random.default_rng(0))
        const = TargetFunctional.custom(lambda L: np.full(L.shape[0], 3.0), (1,), "three")
        cfg = EstimatorConfig(interaction="const", variance=False)
        assert bootstrap_ci(d, const, cfg, B=10, seed=2) == pytest.approx((3.0, 3.0))

    def test_percentiles(self, binary_sample, monkeypatch):
        import nsc_aipw.aipw as mod
        reps = iter(np.arange(1000.0))
        monkeypatch.setattr(mod, "_bootstrap_one", lambda job: next(reps))
        lo, hi = bootstrap_ci(binary_sample, TargetFunctional.mean(3), B=1000, seed=0)
        assert (lo, hi) == pytest.approx(tuple(np.percentile(np.arange(1000.0), [2.5, 97.5])))

    def test_needs_two(self, binary_sample):
        with pytest.raises(DataError):
            bootstrap_ci(binary_sample, TargetFunctional.mean(3), B=1)


class TestReports:
    def test_format(self, binary_sample):
        rep = estimate_complete_case(binary_sample, TargetFunctional.mean(3))
        csv = format_reports([rep], "csv").splitlines()
        assert csv[0] == "functional,estimate,se,ci_lo,ci_hi,n,n_complete,n_clipped"
        assert csv[1].startswith("mean:L3,") and ",NA,NA," in csv[1]
        text = format_reports([rep], "text").splitlines()
        assert len(text) == 2 and text[0].startswith("functional")
        with pytest.raises(DataError):
            format_reports([rep], "xml")

    def test_cell_odds_ratio_independent(self):
        t = np.einsum("i,j,k->ijk", [0.3, 0.7], [0.6, 0.4], [0.5, 0.5])
        assert cell_odds_ratio(t, 1, 2) == pytest.approx(1.0)
        assert cell_odds_ratio(t, 3, 1) == pytest.approx(1.0)
