import io

import numpy as np
import pytest

from nsc_aipw.errors import DataError
from nsc_aipw.patterns import (Dataset, PatternId, Record, all_patterns, decode_pattern,
                               encode_pattern, ingest_csv, leave_one_out, pattern_support,
                               write_csv)


class TestPatternId:
    @pytest.mark.parametrize("bits,index", [((1, 1, 1), 7), ((0, 0, 0), 0), ((1, 0, 1), 5),
                                            ((1, 0, 0), 1), ((0, 1, 1), 6)])
    def test_encode(self, bits, index):
        assert encode_pattern(bits).index == index
        assert decode_pattern(index, 3) == bits

    def test_round_trip_all(self):
        for K in (2, 3, 5):
            assert [p.index for p in all_patterns(K)] == list(range(2 ** K))

    def test_observed_missing(self):
        r = PatternId((1, 0, 1))
        assert r.observed == (0, 2)
        assert r.missing == (1,)
        assert str(r) == "101"
        assert not r.is_complete
        assert PatternId.complete(3).is_complete

    def test_leave_one_out(self):
        assert leave_one_out(3, 1).bits == (1, 0, 1)

    @pytest.mark.parametrize("bits", [(1,), (1, 2, 0), ()])
    def test_invalid(self, bits):
        with pytest.raises(DataError):
            PatternId(bits)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            encode_pattern((1, 0), K=3)
        with pytest.raises(DataError):
            PatternId.from_index(8, 3)


class TestIngest:
    def test_masking(self):
        d = ingest_csv("L1,L2,L3\n1.2,NA,0.3\nNA,NA,NA\n")
        recs = list(d.records())
        assert recs[0].pattern.bits == (1, 0, 1)
        assert dict(recs[0].l_obs) == {1: 1.2, 3: 0.3}
        assert recs[1].pattern.bits == (0, 0, 0)
        assert dict(recs[1].l_obs) == {}

    def test_x_columns(self):
        d = ingest_csv("L1,L2,X1\n1,2,3\nNA,5,6\n")
        assert d.p == 1 and d.K == 2
        np.testing.assert_array_equal(d.X[:, 0], [3, 6])

    @pytest.mark.parametrize("text", [
        "L1,L2,X1\n1,2,NA\n",          # missing covariate
        "L1,L2\n1,abc\n",              # non-numeric
        "L1,L2\n1\n",                  # ragged
        "",                            # empty
        "L1,L2\n",                     # no rows
        "L1,L2\n1,inf\n",              # non-finite
    ])
    def test_errors(self, text):
        with pytest.raises(DataError):
            ingest_csv(text)

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        L = rng.normal(size=(40, 3))
        R = rng.integers(0, 2, size=(40, 3))
        d = Dataset.from_full(L, R, rng.normal(size=(40, 2)))
        buf = io.StringIO()
        write_csv(d, buf)
        back = ingest_csv(buf.getvalue())
        assert list(back.records()) == list(d.records())


class TestDataset:
    def test_from_full_masks(self):
        d = Dataset.from_full([[1.0, 2.0], [3.0, 4.0]], [[1, 0], [1, 1]])
        assert np.isnan(d.L[0, 1]) and d.L[1, 1] == 4.0

    def test_from_records(self):
        recs = [Record(PatternId((1, 0)), {1: 2.5}, ()), Record(PatternId((1, 1)), {1: 1.0, 2: 0.0}, ())]
        d = Dataset.from_records(recs, K=2)
        assert d.n == 2
        assert list(d.records()) == recs

    def test_shape_errors(self):
        with pytest.raises(DataError):
            Dataset(np.ones((3, 2)), np.ones((3, 3)))
        with pytest.raises(DataError):
            Dataset(np.ones((3, 2)), np.ones((3, 2)), X=np.ones((2, 1)))

    def test_take_and_concat(self):
        d = Dataset.from_full(np.arange(6.0).reshape(3, 2), [[1, 1], [0, 1], [1, 0]])
        assert d.take([0, 0]).n == 2
        assert d.concat(d).n == 6


class TestSupport:
    def test_complete_only(self):
        d = Dataset.from_full(np.ones((5, 3)), np.ones((5, 3), int))
        sup = pattern_support(d)
        assert sup.n_complete == 5
        assert not any(sup.leave_one_out_ok.values())

    def test_all_loo(self):
        R = [[1, 1, 1], [0, 1, 1], [1, 0, 1], [1, 1, 0]]
        sup = pattern_support(Dataset.from_full(np.ones((4, 3)), R))
        assert all(sup.leave_one_out_ok.values())
        assert sup.count(PatternId((0, 1, 1))) == 1
