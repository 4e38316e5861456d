"""Missingness patterns, the ``Dataset`` container and CSV I/O.

Variable indices are 1-based wherever they cross the public boundary
(``l_obs`` keys, column names ``L1..LK``); arrays are 0-based internally.
A pattern's integer index is ``sum(bits[i] * 2**i)`` over 0-based ``i``, so
``(1, 0, 1)`` is 5 and the complete-case pattern is ``2**K - 1``.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .errors import DataError

_L_COL = re.compile(r"^L(\d+)$")
_X_COL = re.compile(r"^X(\d+)$")


@dataclass(frozen=True, order=True)
class PatternId:
    """A missingness pattern: ``bits[i] == 1`` when ``L_{i+1}`` is observed."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 2:
            raise DataError(f"patterns need K >= 2 variables, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise DataError(f"pattern bits must be 0/1, got {self.bits}")

    @property
    def K(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        return sum(b << i for i, b in enumerate(self.bits))

    @classmethod
    def from_index(cls, index: int, K: int) -> "PatternId":
        if not 0 <= index < (1 << K):
            raise DataError(f"pattern index {index} out of range for K={K}")
        return cls(tuple((index >> i) & 1 for i in range(K)))

    @classmethod
    def complete(cls, K: int) -> "PatternId":
        return cls((1,) * K)

    @property
    def is_complete(self) -> bool:
        return all(self.bits)

    @property
    def observed(self) -> tuple[int, ...]:
        """0-based indices of observed variables."""
        return tuple(i for i, b in enumerate(self.bits) if b)

    @property
    def missing(self) -> tuple[int, ...]:
        """0-based indices of missing variables."""
        return tuple(i for i, b in enumerate(self.bits) if not b)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def encode_pattern(bits: Sequence[int], K: int | None = None) -> PatternId:
    """Build a ``PatternId`` from a 0/1 sequence, checking its length against ``K``."""
    bits = tuple(int(b) for b in bits)
    if K is not None and len(bits) != K:
        raise DataError(f"expected {K} pattern bits, got {len(bits)}")
    return PatternId(bits)


def decode_pattern(index: int, K: int) -> tuple[int, ...]:
    return PatternId.from_index(index, K).bits


def leave_one_out(K: int, i: int) -> PatternId:
    """Pattern with only the 0-based variable ``i`` missing."""
    bits = [1] * K
    bits[i] = 0
    return PatternId(tuple(bits))


def all_patterns(K: int) -> list[PatternId]:
    return [PatternId.from_index(j, K) for j in range(1 << K)]


@dataclass(frozen=True)
class Record:
    pattern: PatternId
    l_obs: Mapping[int, float]
    x: tuple[float, ...]


class Dataset:
    """Immutable sample of ``(R, L_(R), X)``.

    ``L`` holds NaN exactly where ``R`` is 0. ``weights`` are optional
    frequency weights (used to run the estimators on an enumerated observed
    law, where each cell carries its probability).
    """

    def __init__(self, R, L, X=None, weights=None):
        R = np.asarray(R, dtype=np.int8)
        L = np.array(L, dtype=float)
        if R.ndim != 2 or L.shape != R.shape:
            raise DataError(f"R and L must be (n, K) arrays of equal shape, got {R.shape} and {L.shape}")
        n, K = R.shape
        if K < 2:
            raise DataError("need at least K=2 partially observed variables")
        if not np.isin(R, (0, 1)).all():
            raise DataError("R must be 0/1")
        if X is None:
            X = np.empty((n, 0))
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != n:
            raise DataError(f"X has {X.shape[0]} rows, expected {n}")
        if not np.isfinite(X).all():
            raise DataError("X must be fully observed and finite")
        obs = R == 1
        if not np.isfinite(L[obs]).all():
            raise DataError("observed L entries must be finite")
        L[~obs] = np.nan
        if weights is not None:
            weights = np.array(weights, dtype=float)
            if weights.shape != (n,) or (weights < 0).any():
                raise DataError("weights must be a nonnegative vector of length n")
            weights.flags.writeable = False
        for a in (R, L, X):
            a.flags.writeable = False
        self._R, self._L, self._X, self._w = R, L, X, weights
        self._index = (R.astype(np.int64) << np.arange(K)).sum(axis=1)
        self._index.flags.writeable = False

    @classmethod
    def from_full(cls, L_full, R, X=None, weights=None) -> "Dataset":
        """Mask a fully observed ``L`` by ``R``."""
        return cls(R, L_full, X, weights)

    @classmethod
    def from_records(cls, records: Iterable[Record], K: int, p: int = 0) -> "Dataset":
        records = list(records)
        n = len(records)
        R = np.zeros((n, K), dtype=np.int8)
        L = np.full((n, K), np.nan)
        X = np.zeros((n, p))
        for k, rec in enumerate(records):
            if rec.pattern.K != K:
                raise DataError(f"record {k}: pattern has K={rec.pattern.K}, expected {K}")
            keys = {j - 1 for j in rec.l_obs}
            if keys != set(rec.pattern.observed):
                raise DataError(f"record {k}: l_obs keys do not match pattern {rec.pattern}")
            R[k] = rec.pattern.bits
            for j, v in rec.l_obs.items():
                L[k, j - 1] = v
            if len(rec.x) != p:
                raise DataError(f"record {k}: x has length {len(rec.x)}, expected {p}")
            X[k] = rec.x
        return cls(R, L, X)

    # -- accessors -----------------------------------------------------------
    @property
    def R(self) -> np.ndarray:
        return self._R

    @property
    def L(self) -> np.ndarray:
        return self._L

    @property
    def X(self) -> np.ndarray:
        return self._X

    @property
    def weights(self) -> np.ndarray | None:
        return self._w

    @property
    def pattern_index(self) -> np.ndarray:
        return self._index

    @property
    def n(self) -> int:
        return self._R.shape[0]

    @property
    def K(self) -> int:
        return self._R.shape[1]

    @property
    def p(self) -> int:
        return self._X.shape[1]

    def __len__(self) -> int:
        return self.n

    def records(self) -> Iterator[Record]:
        for k in range(self.n):
            bits = tuple(int(b) for b in self._R[k])
            l_obs = {j + 1: float(self._L[k, j]) for j in range(self.K) if bits[j]}
            yield Record(PatternId(bits), l_obs, tuple(float(v) for v in self._X[k]))

    def take(self, idx) -> "Dataset":
        """Row subset (used for bootstrap resampling)."""
        idx = np.asarray(idx)
        w = None if self._w is None else self._w[idx]
        return Dataset(self._R[idx], self._L[idx], self._X[idx], w)

    def concat(self, other: "Dataset") -> "Dataset":
        if (other.K, other.p) != (self.K, self.p):
            raise DataError("cannot concatenate datasets of different shapes")
        if (self._w is None) != (other._w is None):
            raise DataError("cannot concatenate weighted and unweighted datasets")
        w = None if self._w is None else np.concatenate([self._w, other._w])
        return Dataset(np.vstack([self._R, other._R]), np.vstack([self._L, other._L]),
                       np.vstack([self._X, other._X]), w)

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, K={self.K}, p={self.p})"


@dataclass(frozen=True)
class SupportTable:
    """Pattern counts plus the leave-one-out support flags (keys 1-based)."""

    K: int
    counts: Mapping[PatternId, int]
    leave_one_out_ok: Mapping[int, bool] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return sum(self.counts.values())

    @property
    def n_complete(self) -> int:
        return self.counts.get(PatternId.complete(self.K), 0)

    def count(self, pattern: PatternId) -> int:
        return self.counts.get(pattern, 0)

    def supported(self) -> list[PatternId]:
        return sorted((p for p, c in self.counts.items() if c > 0), key=lambda p: p.index)

    @property
    def all_leave_one_out_ok(self) -> bool:
        return all(self.leave_one_out_ok.values())


def pattern_support(dataset: Dataset) -> SupportTable:
    K = dataset.K
    counts_arr = np.bincount(dataset.pattern_index, minlength=1 << K)
    counts = {PatternId.from_index(j, K): int(c) for j, c in enumerate(counts_arr)}
    n_cc = counts_arr[(1 << K) - 1]
    loo = {i + 1: bool(n_cc > 0 and counts_arr[leave_one_out(K, i).index] > 0) for i in range(K)}
    return SupportTable(K, counts, loo)


# -- CSV ---------------------------------------------------------------------

def _parse_header(header, l_columns, x_columns):
    header = [h.strip() for h in header]
    if l_columns is None:
        l_columns = sorted((h for h in header if _L_COL.match(h)), key=lambda h: int(h[1:]))
    if x_columns is None:
        x_columns = sorted((h for h in header if _X_COL.match(h)), key=lambda h: int(h[1:]))
    pos = {h: k for k, h in enumerate(header)}
    for col in list(l_columns) + list(x_columns):
        if col not in pos:
            raise DataError(f"column {col!r} not in header {header}")
    if len(l_columns) < 2:
        raise DataError("need at least two L columns")
    return [pos[c] for c in l_columns], [pos[c] for c in x_columns]


def ingest_csv(stream: TextIO | str, l_columns: Sequence[str] | None = None,
               x_columns: Sequence[str] | None = None, missing_token: str = "NA",
               empty_is_missing: bool = True) -> Dataset:
    """Read a CSV with header ``L1..LK,X1..Xp`` into a ``Dataset``.

    Column roles are inferred from the header names unless given explicitly.
    A cell equal to ``missing_token`` (or empty, if ``empty_is_missing``) marks
    the L value as missing. Missing values in X columns are an error: dropping
    those rows would silently change the estimand.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV file") from None
    l_pos, x_pos = _parse_header(header, l_columns, x_columns)
    missing = {missing_token} | ({""} if empty_is_missing else set())
    R, L, X = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        r_row, l_row = [], []
        for k in l_pos:
            cell = row[k].strip()
            if cell in missing:
                r_row.append(0)
                l_row.append(math.nan)
            else:
                r_row.append(1)
                l_row.append(_to_float(cell, lineno, header[k]))
        x_row = []
        for k in x_pos:
            cell = row[k].strip()
            if cell in missing:
                raise DataError(f"line {lineno}: missing value in always-observed column {header[k]!r}")
            x_row.append(_to_float(cell, lineno, header[k]))
        R.append(r_row)
        L.append(l_row)
        X.append(x_row)
    if not R:
        raise DataError("CSV file has a header but no data rows")
    return Dataset(np.array(R), np.array(L), np.array(X).reshape(len(R), len(x_pos)))


def _to_float(cell: str, lineno: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric value {cell!r} in column {col!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite value {cell!r} in column {col!r}")
    return v


def write_csv(dataset: Dataset, stream: TextIO, missing_token: str = "NA") -> None:
    """Inverse of ``ingest_csv``; floats are written with ``repr`` so reading back is exact."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow([f"L{j + 1}" for j in range(dataset.K)] + [f"X{k + 1}" for k in range(dataset.p)])
    for k in range(dataset.n):
        lrow = [repr(float(v)) if r else missing_token for v, r in zip(dataset.L[k], dataset.R[k])]
        w.writerow(lrow + [repr(float(v)) for v in dataset.X[k]])
