"""Odds-ratio parameterization of the missingness mechanism.

Conventions used throughout the package:

* ``delta_h[i](l_{-i}, x)`` is the log odds of ``R_i = 0`` (versus 1) given
  ``R_{-i} = 1``, relative to its value at the reference point ``l0``. The
  joint odds ratio against ``(R = 1, L = l0)`` is
  ``exp(sum_i (1 - r_i) * delta_h[i])``.
* ``baseline[i](x)`` is ``logit p(R_i = 1 | R_{-i} = 1, L_{-i} = l0, X = x)``,
  so ``logit p(R_i = 1 | R_{-i} = 1, l_{-i}, x) = baseline[i] - delta_h[i]``.
* Higher-order terms ``lambda_S(l_{-S}, x)`` for ``|S| >= 2`` are interaction
  log odds ratios among missingness indicators in the ``(1 - r)`` coding. For
  K=3, ``lambda_{2,3}`` is theta_1(L_1), ``lambda_{1,3}`` is theta_2(L_2),
  ``lambda_{1,2}`` is theta_3(L_3) and ``lambda_{1,2,3}`` is theta_4.

Pattern probabilities are

    p(r | l, x) = prod_i p(r_i | R_{-i}=1, l_{-i}, x)
                  * prod_S exp(prod_{i in S}(1 - r_i) * lambda_S) / C(l, x)

evaluated in log space with a log-sum-exp normalizer.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import log_expit, logsumexp

from .errors import DataError, PositivityError
from .patterns import PatternId, all_patterns

_FACTOR = re.compile(r"^(1-)?([LX])(\d+)$")


def _identity(X):
    return X


def _misspec(X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != 2:
        raise DataError("the misspecification transform needs exactly two covariates")
    x1, x2 = X[..., 0], X[..., 1]
    if (x1 <= 0).any() or (x2 <= 0).any():
        raise DataError("the misspecification transform needs positive covariates")
    return np.stack([np.log(1.0 / x1 + 1.0 / x2), np.sqrt(x1 * x2)], axis=-1)


#: Named covariate transforms a basis may apply to X before evaluating terms.
X_TRANSFORMS = {"identity": _identity, "misspec": _misspec}


@dataclass(frozen=True)
class Term:
    """Product of factors ``L<j>``, ``X<k>``, ``1-L<j>`` or ``1-X<k>`` (1-based)."""

    factors: tuple[str, ...] = ()

    def __post_init__(self):
        for f in self.factors:
            if not _FACTOR.match(f):
                raise DataError(f"bad basis factor {f!r}")

    @classmethod
    def parse(cls, text: str) -> "Term":
        text = text.replace(" ", "")
        if text in ("", "1"):
            return cls(())
        return cls(tuple(text.split("*")))

    def __str__(self) -> str:
        return "*".join(self.factors) if self.factors else "1"

    @property
    def l_vars(self) -> frozenset[int]:
        """0-based L indices referenced."""
        return frozenset(int(_FACTOR.match(f).group(3)) - 1 for f in self.factors
                         if _FACTOR.match(f).group(2) == "L")

    @property
    def x_vars(self) -> frozenset[int]:
        return frozenset(int(_FACTOR.match(f).group(3)) - 1 for f in self.factors
                         if _FACTOR.match(f).group(2) == "X")

    def evaluate(self, L: np.ndarray, Xt: np.ndarray) -> np.ndarray:
        out = np.ones(L.shape[0])
        for f in self.factors:
            comp, kind, j = _FACTOR.match(f).groups()
            col = (L if kind == "L" else Xt)[:, int(j) - 1]
            out = out * ((1.0 - col) if comp else col)
        return out


@dataclass(frozen=True)
class BasisSpec:
    """Feature map over ``(L, X)``.

    With ``anchored=True`` each column is evaluated as ``f(l, x) - f(l0, x)``,
    so the span vanishes at the reference point and pure-X terms are
    identically zero. ``x_transform`` names an entry of ``X_TRANSFORMS``.
    """

    terms: tuple[Term, ...]
    K: int
    p: int = 0
    reference: tuple[float, ...] | None = None
    anchored: bool = False
    x_transform: str = "identity"

    def __post_init__(self):
        if self.x_transform not in X_TRANSFORMS:
            raise DataError(f"unknown covariate transform {self.x_transform!r}")
        if self.reference is not None and len(self.reference) != self.K:
            raise DataError(f"reference point needs length {self.K}")
        for t in self.terms:
            if any(j >= self.K for j in t.l_vars) or any(k >= self.p for k in t.x_vars):
                raise DataError(f"term {t} out of range for K={self.K}, p={self.p}")

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def l0(self) -> np.ndarray:
        return np.zeros(self.K) if self.reference is None else np.asarray(self.reference, float)

    @property
    def l_vars(self) -> frozenset[int]:
        return frozenset().union(*(t.l_vars for t in self.terms)) if self.terms else frozenset()

    def _raw(self, L, Xt):
        if not self.terms:
            return np.empty((L.shape[0], 0))
        return np.column_stack([t.evaluate(L, Xt) for t in self.terms])

    def evaluate(self, L, X=None) -> np.ndarray:
        L = np.atleast_2d(np.asarray(L, dtype=float))
        n = L.shape[0]
        X = np.empty((n, 0)) if X is None or self.p == 0 else np.atleast_2d(np.asarray(X, float))
        Xt = X_TRANSFORMS[self.x_transform](X) if self.p else X
        out = self._raw(L, Xt)
        if self.anchored:
            out = out - self._raw(np.broadcast_to(self.l0, L.shape), Xt)
        return out

    def with_(self, **changes) -> "BasisSpec":
        d = dict(terms=self.terms, K=self.K, p=self.p, reference=self.reference,
                 anchored=self.anchored, x_transform=self.x_transform)
        d.update(changes)
        return BasisSpec(**d)

    def to_dict(self) -> dict:
        return {"terms": [str(t) for t in self.terms], "anchored": self.anchored,
                "x_transform": self.x_transform}

    @classmethod
    def from_dict(cls, d: Mapping, K: int, p: int, reference=None) -> "BasisSpec":
        return cls(tuple(Term.parse(t) for t in d["terms"]), K, p,
                   None if reference is None else tuple(reference),
                   bool(d.get("anchored", False)), d.get("x_transform", "identity"))


def make_basis(kind: str, l_vars: Sequence[int], K: int, p: int, *, intercept: bool = True,
               include_x: bool = True, x_products: bool = True, anchored: bool = False,
               reference=None, x_transform: str = "identity") -> BasisSpec:
    """Standard feature maps.

    ``kind="linear"``: 1, each L_j in ``l_vars``, each X_k (plus the X products
    when ``x_products`` and kind is saturated). ``kind="saturated"``: every
    product of a subset of the binary factors, the complete-table basis for
    binary variables. ``kind="main"`` is ``linear`` without X products.
    """
    lf = [f"L{j + 1}" for j in sorted(l_vars)]
    xf = [f"X{k + 1}" for k in range(p)] if include_x else []
    if kind in ("linear", "main"):
        terms = [Term(())] if intercept else []
        terms += [Term((f,)) for f in lf + xf]
    elif kind == "saturated":
        factors = lf + xf
        terms = []
        for size in range(len(factors) + 1):
            for combo in itertools.combinations(factors, size):
                if not x_products and sum(c.startswith("X") for c in combo) > 1:
                    continue
                terms.append(Term(tuple(combo)))
        if not intercept:
            terms = [t for t in terms if t.factors]
    else:
        raise DataError(f"unknown basis kind {kind!r}")
    if anchored:
        terms = [t for t in terms if t.l_vars]
    ref = None if reference is None else tuple(float(v) for v in reference)
    return BasisSpec(tuple(terms), K, p, ref, anchored, x_transform)


# -- odds ratio ----------------------------------------------------------------

@dataclass(frozen=True)
class OddsRatioSpec:
    """Per-variable log odds-ratio functions ``delta_h[i]`` (0-based ``i``)."""

    K: int
    p: int
    delta: tuple[tuple[BasisSpec, np.ndarray], ...]

    def __post_init__(self):
        if len(self.delta) != self.K:
            raise DataError(f"need {self.K} delta_h components, got {len(self.delta)}")
        for i, (basis, coef) in enumerate(self.delta):
            if i in basis.l_vars:
                raise DataError(f"delta_h_{i + 1} may not depend on L_{i + 1} (self-censoring)")
            if len(coef) != basis.size:
                raise DataError(f"delta_h_{i + 1}: {basis.size} terms but {len(coef)} coefficients")

    def delta_h(self, i: int, L, X=None) -> np.ndarray:
        basis, coef = self.delta[i]
        return basis.evaluate(L, X) @ np.asarray(coef, float)

    def log_odds_ratio(self, bits: Sequence[int], L, X=None) -> np.ndarray:
        L = np.atleast_2d(L)
        out = np.zeros(L.shape[0])
        for i, b in enumerate(bits):
            if not b:
                out = out + self.delta_h(i, L, X)
        return out

    @property
    def anchored(self) -> bool:
        return all(b.anchored for b, _ in self.delta)

    def to_dict(self) -> dict:
        ref = self.delta[0][0].reference
        return {"K": self.K, "p": self.p, "reference": None if ref is None else list(ref),
                "delta_h": {str(i + 1): {**b.to_dict(), "coef": [float(c) for c in coef]}
                            for i, (b, coef) in enumerate(self.delta)}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "OddsRatioSpec":
        K, p, ref = d["K"], d["p"], d.get("reference")
        delta = tuple((BasisSpec.from_dict(d["delta_h"][str(i + 1)], K, p, ref),
                       np.asarray(d["delta_h"][str(i + 1)]["coef"], float)) for i in range(K))
        return cls(K, p, delta)


def _point(l, x, K, p):
    l = np.asarray(l, dtype=float).reshape(1, -1)
    if l.shape[1] != K:
        raise DataError(f"expected an L vector of length {K}, got {l.shape[1]}")
    x = np.zeros((1, 0)) if x is None else np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != p:
        raise DataError(f"expected an X vector of length {p}, got {x.shape[1]}")
    return l, x


def delta_h_eval(spec: OddsRatioSpec, i: int, l_minus_i, x=None) -> float:
    """Evaluate ``delta_h_i`` (``i`` is 1-based) at one point."""
    if not 1 <= i <= spec.K:
        raise DataError(f"variable index {i} out of range 1..{spec.K}")
    l_minus_i = np.asarray(l_minus_i, dtype=float).ravel()
    if l_minus_i.size != spec.K - 1:
        raise DataError(f"l_minus_i must have length {spec.K - 1}, got {l_minus_i.size}")
    l = np.insert(l_minus_i, i - 1, 0.0)
    l, x = _point(l, x, spec.K, spec.p)
    return float(spec.delta_h(i - 1, l, x)[0])


def odds_ratio_eval(spec: OddsRatioSpec, r: PatternId | Sequence[int], l, x=None) -> float:
    """``exp(sum_i (1 - r_i) delta_h_i(l_{-i}, x))``."""
    bits = r.bits if isinstance(r, PatternId) else tuple(r)
    if len(bits) != spec.K:
        raise DataError(f"pattern has length {len(bits)}, expected {spec.K}")
    l, x = _point(l, x, spec.K, spec.p)
    return float(np.exp(spec.log_odds_ratio(bits, l, x)[0]))


# -- selection model -------------------------------------------------------------

def _subsets(s: Sequence[int], min_size: int = 1):
    for k in range(min_size, len(s) + 1):
        yield from itertools.combinations(s, k)


@dataclass(frozen=True)
class SelectionModel:
    """Parametric model for ``p(R | L, X)`` under no self-censoring."""

    or_spec: OddsRatioSpec
    baselines: tuple[tuple[BasisSpec, np.ndarray], ...]
    interactions: Mapping[frozenset, tuple[BasisSpec, np.ndarray]] = field(default_factory=dict)
    excluded: frozenset = frozenset()

    def __post_init__(self):
        K = self.or_spec.K
        if len(self.baselines) != K:
            raise DataError(f"need {K} baseline components")
        for i, (b, c) in enumerate(self.baselines):
            if b.l_vars:
                raise DataError(f"baseline h_{i + 1},X must depend on X only")
            if len(c) != b.size:
                raise DataError(f"baseline {i + 1}: coefficient length mismatch")
        for S, (b, c) in self.interactions.items():
            if len(S) < 2 or not set(S) <= set(range(K)):
                raise DataError(f"bad interaction index set {sorted(S)}")
            if b.l_vars & set(S):
                raise DataError(f"interaction {sorted(S)} may not depend on its own L's")
            if len(c) != b.size:
                raise DataError(f"interaction {sorted(S)}: coefficient length mismatch")
        if (1 << K) - 1 in self.excluded:
            raise DataError("the complete-case pattern cannot be excluded")

    @property
    def K(self) -> int:
        return self.or_spec.K

    @property
    def p(self) -> int:
        return self.or_spec.p

    @property
    def reference(self) -> np.ndarray:
        return self.or_spec.delta[0][0].l0

    def baseline(self, i: int, L, X=None) -> np.ndarray:
        b, c = self.baselines[i]
        return b.evaluate(L, X) @ np.asarray(c, float)

    def main_term(self, i: int, L, X=None) -> np.ndarray:
        """Log odds of ``R_i = 0`` given ``R_{-i} = 1`` (``lambda_{i}``)."""
        return self.or_spec.delta_h(i, L, X) - self.baseline(i, L, X)

    def interaction(self, S, L, X=None) -> np.ndarray:
        S = frozenset(S)
        L = np.atleast_2d(L)
        if S not in self.interactions:
            return np.zeros(L.shape[0])
        b, c = self.interactions[S]
        return b.evaluate(L, X) @ np.asarray(c, float)

    def _terms(self, L, X):
        lam = {frozenset((i,)): self.main_term(i, L, X) for i in range(self.K)}
        for S in self.interactions:
            lam[S] = self.interaction(S, L, X)
        return lam

    def log_ratio_all(self, L, X=None) -> np.ndarray:
        """``log pi_r / pi_1`` for every pattern (columns by pattern index)."""
        L = np.atleast_2d(np.asarray(L, float))
        lam = self._terms(L, X)
        K = self.K
        out = np.zeros((L.shape[0], 1 << K))
        for pat in all_patterns(K):
            j = pat.index
            if j in self.excluded:
                out[:, j] = -np.inf
                continue
            for S in _subsets(pat.missing):
                t = lam.get(frozenset(S))
                if t is not None:
                    out[:, j] += t
        return out

    def log_odds_ratio_all(self, L, X=None) -> np.ndarray:
        """Implied ``log OR(r, l | x)`` against ``(R = 1, L = l0)`` for every pattern."""
        L = np.atleast_2d(np.asarray(L, float))
        at_ref = self.log_ratio_all(np.broadcast_to(self.reference, L.shape), X)
        out = self.log_ratio_all(L, X) - at_ref
        out[:, list(self.excluded)] = -np.inf
        return out

    def pattern_prob_all(self, L, X=None) -> np.ndarray:
        L = np.atleast_2d(np.asarray(L, float))
        K = self.K
        lam = self._terms(L, X)
        lognum = np.zeros((L.shape[0], 1 << K))
        mains = [lam[frozenset((i,))] for i in range(K)]
        for pat in all_patterns(K):
            j = pat.index
            if j in self.excluded:
                lognum[:, j] = -np.inf
                continue
            acc = np.zeros(L.shape[0])
            for i, b in enumerate(pat.bits):
                # log p(R_i = b | R_{-i} = 1, l_{-i}, x)
                acc += log_expit(-mains[i]) if b else log_expit(mains[i])
            for S, v in lam.items():
                if len(S) >= 2 and all(not pat.bits[i] for i in S):
                    acc += v
            lognum[:, j] = acc
        if not np.isfinite(lognum.max(axis=1)).all():
            raise PositivityError("every pattern probability underflowed to zero")
        logC = logsumexp(lognum, axis=1, keepdims=True)
        return np.exp(lognum - logC)

    def theta(self, k: int, L, X=None) -> np.ndarray:
        """K=3 pairwise log odds ratio theta_k (k in 1..3) or theta_4 (k=4)."""
        if self.K != 3:
            raise DataError("theta terms are defined for K=3 only")
        S = {0, 1, 2} if k == 4 else {0, 1, 2} - {k - 1}
        return self.interaction(S, L, X)

    def to_dict(self) -> dict:
        d = self.or_spec.to_dict()
        d["baseline"] = {str(i + 1): {**b.to_dict(), "coef": [float(v) for v in c]}
                         for i, (b, c) in enumerate(self.baselines)}
        d["interactions"] = {",".join(str(i + 1) for i in sorted(S)):
                             {**b.to_dict(), "coef": [float(v) for v in c]}
                             for S, (b, c) in sorted(self.interactions.items(),
                                                     key=lambda kv: (len(kv[0]), sorted(kv[0])))}
        d["excluded_patterns"] = [str(PatternId.from_index(j, self.K)) for j in sorted(self.excluded)]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SelectionModel":
        or_spec = OddsRatioSpec.from_dict(d)
        K, p, ref = or_spec.K, or_spec.p, d.get("reference")
        baselines = tuple((BasisSpec.from_dict(d["baseline"][str(i + 1)], K, p, ref),
                           np.asarray(d["baseline"][str(i + 1)]["coef"], float)) for i in range(K))
        inter = {}
        for key, v in d.get("interactions", {}).items():
            S = frozenset(int(s) - 1 for s in key.split(","))
            inter[S] = (BasisSpec.from_dict(v, K, p, ref), np.asarray(v["coef"], float))
        excl = frozenset(PatternId(tuple(int(c) for c in s)).index for s in d.get("excluded_patterns", []))
        return cls(or_spec, baselines, inter, excl)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "SelectionModel":
        return cls.from_dict(json.loads(text))


def pattern_prob(model: SelectionModel, r: PatternId | Sequence[int], l, x=None) -> float:
    bits = r.bits if isinstance(r, PatternId) else tuple(r)
    if len(bits) != model.K:
        raise DataError(f"pattern has length {len(bits)}, expected {model.K}")
    j = PatternId(tuple(bits)).index
    return float(pattern_prob_all(model, l, x)[j])


def pattern_prob_all(model: SelectionModel, l, x=None) -> np.ndarray:
    l, x = _point(l, x, model.K, model.p)
    return model.pattern_prob_all(l, x)[0]
