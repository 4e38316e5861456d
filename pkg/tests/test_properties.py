import io
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nsc_aipw.aipw import Pipeline, TargetFunctional
from nsc_aipw.oddsratio import BasisSpec, OddsRatioSpec, SelectionModel, Term, pattern_prob_all
from nsc_aipw.oracle import random_nsc_law, true_functional, verify_nsc
from nsc_aipw.patterns import Dataset, PatternId, decode_pattern, encode_pattern, ingest_csv, write_csv
from nsc_aipw.simgen import BINARY_PRESETS, get_setting, sample_binary_or

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def bits(draw, max_k=6):
    K = draw(st.integers(2, max_k))
    return tuple(draw(st.lists(st.integers(0, 1), min_size=K, max_size=K)))


@st.composite
def datasets(draw):
    K = draw(st.integers(2, 4))
    p = draw(st.integers(0, 2))
    n = draw(st.integers(1, 15))
    R = draw(hnp.arrays(np.int8, (n, K), elements=st.integers(0, 1)))
    L = draw(hnp.arrays(np.float64, (n, K), elements=finite))
    X = draw(hnp.arrays(np.float64, (n, p), elements=finite)) if p else None
    return Dataset.from_full(L, R, X)


@st.composite
def selection_models(draw):
    K = draw(st.integers(2, 3))
    coef = st.floats(-2, 2, allow_nan=False)
    delta = []
    for i in range(K):
        terms = tuple(Term.parse(f"L{j + 1}") for j in range(K) if j != i)
        delta.append((BasisSpec(terms, K, 0), np.array([draw(coef) for _ in terms])))
    base = tuple((BasisSpec((Term(()),), K, 0), np.array([draw(coef)])) for _ in range(K))
    return SelectionModel(OddsRatioSpec(K, 0, tuple(delta)), base)


class TestPatternProperties:
    @given(bits())
    def test_encode_round_trip(self, b):
        r = encode_pattern(b)
        assert decode_pattern(r.index, len(b)) == b
        assert PatternId.from_index(r.index, len(b)) == r

    @given(st.integers(2, 8).flatmap(lambda K: st.tuples(st.just(K), st.integers(0, 2 ** K - 1))))
    def test_index_round_trip(self, ki):
        K, j = ki
        assert encode_pattern(decode_pattern(j, K)).index == j


class TestCsvProperties:
    @settings(max_examples=60, suppress_health_check=[HealthCheck.too_slow])
    @given(datasets())
    def test_round_trip(self, data):
        buf = io.StringIO()
        write_csv(data, buf)
        back = ingest_csv(io.StringIO(buf.getvalue()))
        np.testing.assert_array_equal(back.R, data.R)
        obs = data.R == 1
        np.testing.assert_array_equal(back.L[obs], data.L[obs])
        assert np.isnan(back.L[~obs]).all()
        if data.p:
            np.testing.assert_array_equal(back.X, data.X)


class TestSelectionProperties:
    @settings(max_examples=60)
    @given(selection_models(), st.data())
    def test_pattern_probs_normalised(self, model, data):
        l = data.draw(hnp.arrays(np.float64, (model.K,), elements=st.floats(-3, 3)))
        P = pattern_prob_all(model, l)
        assert P.shape == (2 ** model.K,)
        assert np.all(P >= 0)
        assert math.fsum(P) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0, 1, 2]))
    def test_random_laws_satisfy_nsc(self, seed, p):
        law = random_nsc_law(np.random.default_rng(seed), 3, p)
        assert verify_nsc(law).passed
        assert math.fsum(law.P.ravel()) == pytest.approx(1.0, abs=1e-12)


@pytest.fixture(scope="module")
def binary_pipe():
    _, data = sample_binary_or(BINARY_PRESETS["binary2"], 2000, 11)
    return Pipeline(data, get_setting("binary2").config)


class TestEstimatorProperties:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(-10, 10, allow_nan=False), st.floats(-10, 10, allow_nan=False))
    def test_affine_in_functional(self, binary_pipe, a, b):
        f = TargetFunctional.product((1, 2))
        g = TargetFunctional.custom(lambda L: a * L[:, 0] * L[:, 1] + b, (1, 2), "affine")
        base = binary_pipe.fit_functional(f).beta
        assert binary_pipe.fit_functional(g).beta == pytest.approx(a * base + b, abs=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_functional_truth_in_unit_interval(self, seed):
        law = random_nsc_law(np.random.default_rng(seed), 3, 0)
        v = true_functional(law, TargetFunctional.product((1, 2, 3)))
        assert 0.0 <= v <= 1.0
