"""Exhaustive-enumeration ground truth for small binary systems.

A ``DiscreteLaw`` stores the full table ``P[r_1..r_K, l_1..l_K, x_1..x_p]``.
Functions of ``(l, x)`` are arrays of shape ``(2,) * (K + p)``; functions of
the observed part ``(l_(r), x)`` keep singleton axes for the missing L's so
that they broadcast against full tables.

Laws are built from ``p(l, x)`` and log-linear terms ``lambda_T(l, x)`` for
nonempty ``T``: ``p(r | l, x)`` is proportional to ``exp(sum of lambda_T over
T within the missing set of r)``. No self-censoring holds exactly when no
``lambda_T`` varies along the axes of ``L_T``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .aipw import TargetFunctional
from .errors import DataError, PositivityError
from .oddsratio import OddsRatioSpec, SelectionModel, make_basis
from .patterns import Dataset, PatternId, all_patterns

MAX_BINARY_COORDS = 14
SCENARIOS = ("both-correct", "pi-wrong", "pm-wrong", "both-wrong", "or-wrong")
PERTURBATION = 0.3


def _subsets(items, min_size=1):
    items = tuple(items)
    for k in range(min_size, len(items) + 1):
        for c in itertools.combinations(items, k):
            yield frozenset(c)


@dataclass(frozen=True)
class DiscreteLaw:
    K: int
    p: int
    P: np.ndarray
    terms: Mapping[frozenset, np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self):
        if 2 * self.K + self.p > MAX_BINARY_COORDS:
            raise DataError(f"enumeration capped at {MAX_BINARY_COORDS} binary coordinates")
        if self.P.shape != (2,) * (2 * self.K + self.p):
            raise DataError("probability table has the wrong shape")
        if (self.P < 0).any() or abs(self.P.sum() - 1.0) > 1e-12:
            raise DataError("probability table must be nonnegative and sum to one")

    # -- axes ------------------------------------------------------------------
    @property
    def lx_shape(self):
        return (2,) * (self.K + self.p)

    def l_axes(self, idx) -> tuple[int, ...]:
        """Axes of a (l, x) table for the 0-based L indices ``idx``."""
        return tuple(sorted(idx))

    def grid(self) -> np.ndarray:
        """All ``(l, x)`` points in C order, shape ``(2**(K+p), K+p)``."""
        return np.array(list(itertools.product((0, 1), repeat=self.K + self.p)), dtype=float)

    def as_table(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, float).reshape(self.lx_shape)

    def L_table(self, j: int) -> np.ndarray:
        shape = [1] * (self.K + self.p)
        shape[j] = 2
        return np.arange(2.0).reshape(shape)

    def X_table(self, k: int) -> np.ndarray:
        return self.L_table(self.K + k)

    # -- basic quantities -----------------------------------------------------------
    def joint(self, bits) -> np.ndarray:
        """``p(R = r, l, x)`` as an (l, x) table."""
        return self.P[tuple(bits)]

    @property
    def p_lx(self) -> np.ndarray:
        return self.P.reshape(1 << self.K, *self.lx_shape).sum(axis=0)

    def pi(self, bits) -> np.ndarray:
        """``p(R = r | l, x)``."""
        return self.joint(bits) / self.p_lx

    def observed(self, bits) -> np.ndarray:
        """``q(r, l_(r), x)`` with singleton axes for missing L's."""
        miss = [i for i, b in enumerate(bits) if not b]
        return self.joint(bits).sum(axis=tuple(miss), keepdims=True)

    def observed_dataset(self) -> Dataset:
        """The observed-data law as a frequency-weighted ``Dataset``.

        One record per cell ``(r, l_(r), x)`` of positive probability, weighted
        by that probability; estimators run on it return population values.
        """
        R, L, X, w = [], [], [], []
        for pat in all_patterns(self.K):
            q = self.observed(pat.bits)
            for idx in itertools.product(*[range(s) for s in q.shape]):
                prob = float(q[idx])
                if prob <= 0:
                    continue
                R.append(pat.bits)
                L.append([float(idx[i]) if pat.bits[i] else np.nan for i in range(self.K)])
                X.append([float(v) for v in idx[self.K:]])
                w.append(prob)
        return Dataset(np.array(R), np.array(L), np.array(X).reshape(len(R), self.p), np.array(w))

    def full_dataset(self) -> tuple[Dataset, Dataset]:
        """(full-data, masked) weighted datasets over every cell of ``P``."""
        R, L, X, w = [], [], [], []
        for idx in itertools.product((0, 1), repeat=2 * self.K + self.p):
            prob = float(self.P[idx])
            if prob <= 0:
                continue
            R.append(idx[:self.K])
            L.append(idx[self.K:2 * self.K])
            X.append(idx[2 * self.K:])
            w.append(prob)
        R, L = np.array(R), np.array(L, float)
        X = np.array(X, float).reshape(len(R), self.p)
        full = Dataset(np.ones_like(R), L, X, np.array(w))
        return full, Dataset(R, L, X, np.array(w))

    def functional_table(self, functional: TargetFunctional) -> np.ndarray:
        return self.as_table(functional.values(self.grid()[:, :self.K]))

    def lambdas(self) -> dict:
        """Log-linear terms of ``p(r | l, x)``, recovered from the full table."""
        logpi1 = np.log(self.pi((1,) * self.K))
        lam = {}
        for M in _subsets(range(self.K)):
            bits = tuple(0 if i in M else 1 for i in range(self.K))
            lr = np.log(self.pi(bits)) - logpi1
            lam[M] = lr - sum(lam[T] for T in lam if T < M)
        return lam

    # -- sampling ---------------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
        """Exact draws from the table: (full-data, masked) datasets."""
        flat = self.P.ravel()
        cells = rng.choice(flat.size, size=n, p=flat / flat.sum())
        idx = np.array(np.unravel_index(cells, self.P.shape)).T
        R = idx[:, :self.K]
        L = idx[:, self.K:2 * self.K].astype(float)
        X = idx[:, 2 * self.K:].astype(float)
        return Dataset(np.ones_like(R), L, X), Dataset(R, L, X)

    # -- conversion -------------------------------------------------------------------
    def to_selection_model(self, reference=None) -> SelectionModel:
        """Exact ``SelectionModel`` with saturated bases reproducing ``p(r | l, x)``."""
        K, p = self.K, self.p
        ref = (0.0,) * K if reference is None else tuple(float(v) for v in reference)
        lam = self.lambdas()
        G = self.grid()
        L, X = G[:, :K], G[:, K:]
        l0_idx = tuple(int(v) for v in ref)

        def solve(basis, target):
            Z = basis.evaluate(L, X)
            coef, *_ = np.linalg.lstsq(Z, target.ravel(), rcond=None)
            return coef

        deltas, baselines = [], []
        for i in range(K):
            t = lam[frozenset((i,))]
            at_ref = _at_reference(t, [j for j in range(K) if j != i], l0_idx)
            db = make_basis("saturated", [j for j in range(K) if j != i], K, p, anchored=True,
                            reference=ref)
            deltas.append((db, solve(db, np.broadcast_to(t - at_ref, self.lx_shape))))
            bb = make_basis("saturated", (), K, p, reference=ref)
            baselines.append((bb, solve(bb, np.broadcast_to(-at_ref, self.lx_shape))))
        inter = {}
        for S, t in lam.items():
            if len(S) < 2:
                continue
            b = make_basis("saturated", [j for j in range(K) if j not in S], K, p, reference=ref)
            inter[S] = (b, solve(b, np.broadcast_to(t, self.lx_shape)))
        return SelectionModel(OddsRatioSpec(K, p, tuple(deltas)), tuple(baselines), inter)


def _at_reference(table, axes, l0_idx):
    """Evaluate an (l, x) table with the given L axes pinned at the reference."""
    idx = [slice(None)] * table.ndim
    for j in axes:
        idx[j] = slice(l0_idx[j], l0_idx[j] + 1)
    return table[tuple(idx)]


# -- construction -----------------------------------------------------------------------

def build_discrete_law(p_lx: np.ndarray, terms: Mapping[frozenset, np.ndarray], K: int,
                       p: int = 0, require_positive: bool = True) -> DiscreteLaw:
    """Joint table from ``p(l, x)`` and log-linear terms of ``p(r | l, x)``.

    ``terms[T]`` is an (l, x) table (anything broadcastable); missing keys mean
    zero. Positivity of ``p(R = 1 | l, x)`` holds automatically for finite
    terms; zero cells of ``p(l, x)`` are rejected when ``require_positive``.
    """
    shape = (2,) * (K + p)
    p_lx = np.broadcast_to(np.asarray(p_lx, float), shape)
    if require_positive and (p_lx <= 0).any():
        raise PositivityError("p(l, x) has zero cells")
    if abs(p_lx.sum() - 1) > 1e-12:
        raise DataError("p(l, x) must sum to one")
    full_terms = {T: np.broadcast_to(np.asarray(v, float), shape) for T, v in terms.items()}
    logits = np.zeros((1 << K,) + shape)
    pats = all_patterns(K)
    for k, pat in enumerate(pats):
        for T in _subsets(pat.missing):
            if T in full_terms:
                logits[k] += full_terms[T]
    cond = np.exp(logits - logsumexp(logits, axis=0, keepdims=True))
    P = np.zeros((2,) * K + shape)
    for k, pat in enumerate(pats):
        P[pat.bits] = cond[k] * p_lx
    P = P / P.sum()
    return DiscreteLaw(K, p, P, full_terms)


def _random_term(rng, K, p, free_axes, scale):
    shape = [1] * (K + p)
    for a in free_axes:
        shape[a] = 2
    return rng.normal(0.0, scale, size=shape)


def random_nsc_law(rng: np.random.Generator, K: int = 3, p: int = 0, main_scale: float = 0.8,
                   inter_scale: float = 0.5) -> DiscreteLaw:
    """Random positive law satisfying no self-censoring.

    ``p(l, x)`` is a random positive table; each ``lambda_T`` is a random
    function of ``(l_{-T}, x)``.
    """
    shape = (2,) * (K + p)
    p_lx = np.exp(rng.normal(0.0, 0.5, size=shape))
    p_lx /= p_lx.sum()
    terms = {}
    for T in _subsets(range(K)):
        free = [a for a in range(K + p) if a not in T]
        scale = main_scale if len(T) == 1 else inter_scale
        terms[T] = _random_term(rng, K, p, free, scale)
    return build_discrete_law(p_lx, terms, K, p)


def self_censoring_law(rng: np.random.Generator, K: int = 3, p: int = 0,
                       strength: float = 1.5) -> DiscreteLaw:
    """Negative control: ``lambda_i`` additionally depends on ``L_i`` itself."""
    base = random_nsc_law(rng, K, p)
    terms = dict(base.terms)
    for i in range(K):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        c = sign * (strength + rng.random())
        terms[frozenset((i,))] = terms[frozenset((i,))] + c * _axis(K, p, i)
    return build_discrete_law(base.p_lx, terms, K, p)


def mcar_law(K: int = 3, p: int = 0, pi_complete: float = 0.5) -> DiscreteLaw:
    """Uniform ``p(l, x)`` with missingness independent of everything."""
    shape = (2,) * (K + p)
    u = np.log((1 - pi_complete) / pi_complete) if 0 < pi_complete < 1 else 0.0
    terms = {frozenset((i,)): np.full(shape, u) for i in range(K)}
    return build_discrete_law(np.full(shape, 1.0 / 2 ** (K + p)), terms, K, p)


def _axis(K, p, j):
    shape = [1] * (K + p)
    shape[j] = 2
    return np.arange(2.0).reshape(shape)


# -- checks ------------------------------------------------------------------------------

@dataclass(frozen=True)
class NSCCheck:
    ok: tuple[bool, ...]
    gaps: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return all(self.ok)

    @property
    def max_gap(self) -> float:
        return max(self.gaps)


def verify_nsc(law: DiscreteLaw, tol: float = 1e-12) -> NSCCheck:
    """Largest change of ``p(R_i = 1 | r_{-i}, l, x)`` when only ``l_i`` flips."""
    K = law.K
    gaps = []
    for i in range(K):
        P = np.moveaxis(law.P, i, 0)      # R_i first
        tot = P[0] + P[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(tot > 0, P[1] / tot, np.nan)
        # L_i axis in cond: the remaining R axes (K-1) come first
        ax = (K - 1) + i
        c = np.moveaxis(cond, ax, 0)
        gap = np.nanmax(np.abs(c[1] - c[0])) if np.isfinite(c).any() else 0.0
        gaps.append(float(gap))
    return NSCCheck(tuple(g <= tol for g in gaps), tuple(gaps))


def reconstruct_terms(law: DiscreteLaw) -> dict:
    """Log-linear terms recovered from observed-data quantities only.

    ``lambda_M = log q(r_M, l_{-M}, x) - log sum_{l_M} q(1, l, x) exp(sum_{T<M} lambda_T)``
    in order of increasing ``|M|``; valid under no self-censoring.
    """
    K = law.K
    cc = law.joint((1,) * K)
    lam = {}
    for M in _subsets(range(K)):
        bits = tuple(0 if i in M else 1 for i in range(K))
        lower = sum((lam[T] for T in lam if T < M), np.zeros(law.lx_shape))
        denom = (cc * np.exp(lower)).sum(axis=tuple(sorted(M)), keepdims=True)
        lam[M] = np.log(law.observed(bits)) - np.log(denom)
    return lam


def pattern_probs_from_terms(lam: Mapping[frozenset, np.ndarray], K: int, shape) -> dict:
    """``p(r | l, x)`` assembled as product of leave-one-out conditionals times interactions."""
    lognum = {}
    for pat in all_patterns(K):
        acc = np.zeros(shape)
        for i, b in enumerate(pat.bits):
            li = lam[frozenset((i,))]
            acc = acc + (log_expit(-li) if b else log_expit(li))
        for S, v in lam.items():
            if len(S) >= 2 and all(not pat.bits[i] for i in S):
                acc = acc + v
        lognum[pat.bits] = np.broadcast_to(acc, shape)
    stack = np.stack(list(lognum.values()))
    logC = logsumexp(stack, axis=0)
    return {bits: np.exp(v - logC) for bits, v in lognum.items()}


@dataclass(frozen=True)
class IdentificationCheck:
    reconstruction_error: float
    beta_error: float


def verify_identification(law: DiscreteLaw, functional: TargetFunctional | None = None) -> IdentificationCheck:
    """Rebuild ``p(R | L, X)`` and ``beta`` from observed-data functionals only."""
    K = law.K
    functional = functional or TargetFunctional.product(range(1, K + 1))
    for i in range(K):
        bits = tuple(0 if j == i else 1 for j in range(K))
        if (law.observed(bits) <= 0).any():
            raise DataError(f"law lacks leave-one-out support for L{i + 1}")
    lam = reconstruct_terms(law)
    probs = pattern_probs_from_terms(lam, K, law.lx_shape)
    err = max(float(np.max(np.abs(probs[pat.bits] - law.pi(pat.bits)))) for pat in all_patterns(K))
    # beta through odds-ratio-weighted complete-case means
    full = (1,) * K
    b = law.functional_table(functional)
    cc = law.joint(full)
    l0 = (0,) * K
    beta = 0.0
    for pat in all_patterns(K):
        q = law.observed(pat.bits)
        if pat.is_complete:
            beta += float((cc * b).sum())
            continue
        miss = tuple(pat.missing)
        lor = np.log(probs[pat.bits]) - np.log(probs[full])
        lor = lor - _at_reference(lor, range(K), l0)
        odds = np.exp(lor)
        m = (cc * odds * b).sum(axis=miss, keepdims=True) / (cc * odds).sum(axis=miss, keepdims=True)
        beta += float((q * m).sum())
    return IdentificationCheck(err, abs(beta - true_functional(law, functional)))


def true_functional(law: DiscreteLaw, functional: TargetFunctional) -> float:
    return float((law.p_lx * law.functional_table(functional)).sum())


def pattern_mixture_means(law: DiscreteLaw, b: np.ndarray) -> dict:
    """True ``E[b | R = r, l_(r), x]`` per incomplete pattern."""
    out = {}
    for pat in all_patterns(law.K):
        if pat.is_complete:
            continue
        J = law.joint(pat.bits)
        miss = tuple(pat.missing)
        den = J.sum(axis=miss, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[pat.bits] = np.where(den > 0, (J * b).sum(axis=miss, keepdims=True) / den, 0.0)
    return out


def _phi_odds_mean(law, b, beta, pis, ms):
    full = (1,) * law.K
    inv = 1.0 / pis[full]
    total = law.joint(full) * inv * (b - beta)
    for bits, m in ms.items():
        total = total + law.joint(bits) * (m - beta) - law.joint(full) * inv * pis[bits] * (m - beta)
    return float(total.sum())


def verify_if_mean_zero(law: DiscreteLaw, functional: TargetFunctional,
                        beta: float | None = None) -> tuple[float, float]:
    """``(E[phi_odds], E[phi_adj])`` by enumeration at ``beta`` (default: truth)."""
    K = law.K
    b = law.functional_table(functional)
    beta = true_functional(law, functional) if beta is None else beta
    pis = {pat.bits: law.pi(pat.bits) for pat in all_patterns(K)}
    ms = pattern_mixture_means(law, b)
    e_odds = _phi_odds_mean(law, b, beta, pis, ms)
    # Delta(r, l, x) = b - E[b | r, l_(r), x]
    delta = {pat.bits: b - (ms[pat.bits] if not pat.is_complete else b) for pat in all_patterns(K)}
    e_adj = 0.0
    p_lx = law.p_lx
    for i in range(K):
        loo = tuple(0 if j == i else 1 for j in range(K))
        full = (1,) * K
        marg = (i,)
        p_lmi = p_lx.sum(axis=marg, keepdims=True)                          # p(l_{-i}, x)
        r0 = sum(law.joint(pat.bits) for pat in all_patterns(K) if not pat.bits[i])
        e_miss = r0.sum(axis=marg, keepdims=True) / p_lmi                    # E[1 - R_i | l_{-i}, x]
        p_rest = (law.joint(full) + law.joint(loo)).sum(axis=marg, keepdims=True) / p_lmi
        # observed-data conditional p(R_i = 1 | R_{-i} = 1, l_{-i}, x)
        c1 = law.joint(full).sum(axis=marg, keepdims=True)
        c0 = law.joint(loo).sum(axis=marg, keepdims=True)
        pr1 = c1 / (c0 + c1)
        num = sum(law.joint(pat.bits) * delta[pat.bits] for pat in all_patterns(K) if not pat.bits[i])
        e_delta = num.sum(axis=marg, keepdims=True) / r0.sum(axis=marg, keepdims=True)
        common = -e_miss / p_rest * (pr1 / (1 - pr1)) * e_delta
        # R_{-i} = 1 cells: R_i = 1 -> (1/pr1 - 1); R_i = 0 -> (0 - 1)
        term = law.joint(full) * common * (1 / pr1 - 1) + law.joint(loo) * common * (-1.0)
        e_adj += float(term.sum())
    return e_odds, e_adj


def _x_sum(law):
    s = np.zeros(law.lx_shape)
    for k in range(law.p):
        s = s + law.X_table(k)
    return s


def verify_double_robustness(law: DiscreteLaw, functional: TargetFunctional, scenario: str,
                             delta: float = PERTURBATION) -> float:
    """Population AIPW equation at the true ``beta`` with chosen components perturbed.

    ``pi-wrong`` multiplies every incomplete pattern's probability by
    ``exp(delta * (1 + sum x))`` before renormalizing (odds ratio unchanged);
    ``pm-wrong`` adds ``delta * (1 + sum of observed l + sum x)`` to each
    pattern-mixture mean; ``or-wrong`` tilts the odds ratio by
    ``exp(delta * sum_{i missing} sum_{j != i} l_j)`` in both components.
    """
    if scenario not in SCENARIOS:
        raise DataError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    K = law.K
    b = law.functional_table(functional)
    beta = true_functional(law, functional)
    full = (1,) * K
    pats = all_patterns(K)
    xs = _x_sum(law)
    logpi = {pat.bits: np.log(law.pi(pat.bits)) for pat in pats}
    tilt = {}
    for pat in pats:
        t = np.zeros(law.lx_shape)
        if scenario == "or-wrong":
            for i in pat.missing:
                for j in range(K):
                    if j != i:
                        t = t + delta * law.L_table(j)
        tilt[pat.bits] = t
    if scenario in ("pi-wrong", "both-wrong"):
        logpi = {bits: v + (0 if all(bits) else delta * (1 + xs)) for bits, v in logpi.items()}
    logpi = {bits: v + tilt[bits] for bits, v in logpi.items()}
    stack = np.stack([np.broadcast_to(v, law.lx_shape) for v in logpi.values()])
    logC = logsumexp(stack, axis=0)
    pis = {bits: np.exp(np.broadcast_to(v, law.lx_shape) - logC) for bits, v in logpi.items()}
    cc = law.joint(full)
    ms = {}
    for pat in pats:
        if pat.is_complete:
            continue
        miss = tuple(pat.missing)
        lor = np.log(law.pi(pat.bits)) - np.log(law.pi(full)) + tilt[pat.bits]
        odds = np.exp(lor)
        m = (cc * odds * b).sum(axis=miss, keepdims=True) / (cc * odds).sum(axis=miss, keepdims=True)
        if scenario in ("pm-wrong", "both-wrong"):
            obs_sum = sum((law.L_table(j) for j in pat.observed), np.zeros((1,) * (K + law.p)))
            m = m + delta * (1 + obs_sum + xs)
        ms[pat.bits] = m
    return _phi_odds_mean(law, b, beta, pis, ms)


def dr_or_population_residual(law: DiscreteLaw, i: int, scenario: str,
                              delta: float = PERTURBATION) -> float:
    """Sup-norm of the population doubly robust odds-ratio equation at the truth.

    ``i`` is 1-based. Features are the saturated anchored basis over
    ``(L_{-i}, X)``; ``pi-wrong`` shifts the baseline logit by
    ``delta * (1 + sum x)``, ``pm-wrong`` shifts each feature mean by the
    same amount.
    """
    if scenario not in SCENARIOS[:4]:
        raise DataError(f"unknown scenario {scenario!r}")
    K, p = law.K, law.p
    k = i - 1
    rest = [j for j in range(K) if j != k]
    basis = make_basis("saturated", rest, K, p, anchored=True)
    G = law.grid()
    D = basis.evaluate(G[:, :K], G[:, K:]).reshape(law.lx_shape + (basis.size,))
    lam = law.lambdas()
    lam_i = np.broadcast_to(lam[frozenset((k,))], law.lx_shape)
    at_ref = _at_reference(lam_i, rest, (0,) * K)
    dh = lam_i - at_ref                       # delta_h_i(l_{-i}, x)
    h_x = np.broadcast_to(-at_ref, law.lx_shape)
    full = (1,) * K
    loo = tuple(0 if j == k else 1 for j in range(K))
    cc = law.joint(full)
    lx_axes = tuple(range(K))
    mu = (cc[..., None] * D).sum(axis=lx_axes, keepdims=True) / cc.sum(axis=lx_axes, keepdims=True)[..., None]
    xs = _x_sum(law)
    if scenario in ("pi-wrong", "both-wrong"):
        h_x = h_x + delta * (1 + xs)
    if scenario in ("pm-wrong", "both-wrong"):
        mu = mu + delta * (1 + xs)[..., None]
    base = expit(h_x)
    res1 = cc * (1 - base)                              # R_i = 1, tilt 1
    res0 = law.joint(loo) * (0 - base) * np.exp(-dh)    # R_i = 0
    val = ((res1 + res0)[..., None] * (D - mu)).sum(axis=tuple(range(K + p)))
    return float(np.max(np.abs(val)))


def verify_u_theta(law: DiscreteLaw, g: str = "linear", theta4_shift: float = 0.0) -> float:
    """Max ``|E[U(theta_k)]|`` over k = 1..4 for the K=3 pairwise/three-way equations.

    The equations reweight complete cases by the product of leave-one-out
    conditionals and ``exp(theta)``. ``g`` is ``"const"`` or ``"linear"``
    (``(1, L_k, X)``); ``theta4_shift`` perturbs the three-way term.
    """
    if law.K != 3:
        raise DataError("verify_u_theta needs K=3")
    full = (1, 1, 1)
    lam = law.lambdas()
    cc = law.joint(full)
    p1 = []
    for i in range(3):
        loo = tuple(0 if j == i else 1 for j in range(3))
        p1.append(law.joint(full) / (law.joint(full) + law.joint(loo)))
    th = {1: lam[frozenset({1, 2})], 2: lam[frozenset({0, 2})], 3: lam[frozenset({0, 1})],
          4: lam[frozenset({0, 1, 2})] + theta4_shift}
    worst = 0.0
    for k in (1, 2, 3, 4):
        bits = (1, 0, 0) if k == 1 else (0, 1, 0) if k == 2 else (0, 0, 1) if k == 3 else (0, 0, 0)
        expo = th[k] if k < 4 else th[1] + th[2] + th[3] + th[4]
        fac = np.ones(law.lx_shape)
        for i in range(3):
            fac = fac * (p1[i] if bits[i] else 1 - p1[i])
        resid = cc / (p1[0] * p1[1] * p1[2]) * np.exp(expo) * fac - law.joint(bits)
        gs = [np.ones(law.lx_shape)]
        if g == "linear" and k < 4:
            gs.append(np.broadcast_to(law.L_table(k - 1), law.lx_shape))
            gs += [np.broadcast_to(law.X_table(j), law.lx_shape) for j in range(law.p)]
        elif g not in ("const", "linear"):
            raise DataError(f"unknown g choice {g!r}")
        for gv in gs:
            worst = max(worst, abs(float((gv * resid).sum())))
    return worst


def closure_checks(law: DiscreteLaw, functional: TargetFunctional | None = None) -> dict:
    """Quantities computed two independent ways; returns max disagreement per check."""
    K = law.K
    full = (1,) * K
    out = {}
    # leave-one-out conditionals: marginalize-then-divide vs cell ratio
    err = 0.0
    for i in range(K):
        loo = tuple(0 if j == i else 1 for j in range(K))
        a = law.joint(full).sum(axis=i, keepdims=True)
        c = law.joint(loo).sum(axis=i, keepdims=True)
        cell = law.joint(full) / (law.joint(full) + law.joint(loo))
        err = max(err, float(np.max(np.abs(a / (a + c) - cell))))
    out["loo_conditional"] = err
    # pattern-mixture means: direct vs odds-ratio reweighted complete cases
    functional = functional or TargetFunctional.product(range(1, K + 1))
    b = law.functional_table(functional)
    direct = pattern_mixture_means(law, b)
    cc = law.joint(full)
    err = 0.0
    for bits, m in direct.items():
        miss = tuple(i for i, v in enumerate(bits) if not v)
        odds = law.pi(bits) / law.pi(full)
        alt = (cc * odds * b).sum(axis=miss, keepdims=True) / (cc * odds).sum(axis=miss, keepdims=True)
        err = max(err, float(np.max(np.abs(alt - m))))
    out["pattern_mixture"] = err
    # pattern probabilities: table ratio vs the parametric engine
    model = law.to_selection_model()
    G = law.grid()
    probs = model.pattern_prob_all(G[:, :K], G[:, K:])
    err = 0.0
    for pat in all_patterns(K):
        err = max(err, float(np.max(np.abs(probs[:, pat.index] - law.pi(pat.bits).ravel()))))
    out["pattern_prob"] = err
    # pairwise odds-ratio symmetry
    err = 0.0
    for i, j in itertools.combinations(range(K), 2):
        a = _pairwise_log_or(law, i, j)
        c = _pairwise_log_or(law, j, i)
        err = max(err, float(np.max(np.abs(a - c))))
    out["pairwise_symmetry"] = err
    if K == 3:
        gam = [_gamma_from(law, i) for i in range(3)]
        out["gamma_pairings"] = max(float(np.max(np.abs(gam[a] - gam[c])))
                                    for a, c in itertools.combinations(range(3), 2))
        g0 = np.broadcast_to(gam[0], law.lx_shape)
        g0 = g0.reshape(2 ** K, -1)
        out["gamma_constancy"] = float(np.max(g0.max(axis=0) - g0.min(axis=0)))
    return out


def _loo_log_odds(law, i, rbits):
    """``log p(R_i=0 | R_{-i}=r_{-i}, l_{-i}, x) / p(R_i=1 | ...)`` with ``L_i`` summed out."""
    b0 = list(rbits)
    b0[i] = 0
    b1 = list(rbits)
    b1[i] = 1
    n0 = law.joint(tuple(b0)).sum(axis=i, keepdims=True)
    n1 = law.joint(tuple(b1)).sum(axis=i, keepdims=True)
    return np.log(n0) - np.log(n1)


def _pairwise_log_or(law, i, j, others=None):
    """log OR(R_i, R_j | rest = others, l) built from R_i's conditionals only."""
    K = law.K
    base = [1] * K if others is None else list(others)
    rj0 = list(base)
    rj0[j] = 0
    rj1 = list(base)
    rj1[j] = 1
    return _loo_log_odds(law, i, rj0) - _loo_log_odds(law, i, rj1)


def _gamma_from(law, i):
    """Three-way interaction as a difference of pairwise log ORs across ``R_i``."""
    j, k = [a for a in range(3) if a != i]
    at0 = [1, 1, 1]
    at0[i] = 0
    return _pairwise_log_or(law, j, k, at0) - _pairwise_log_or(law, j, k, [1, 1, 1])


def run_oracle_suite(n_laws: int = 20, seed: int = 0, n_controls: int = 5) -> list[dict]:
    """Run every oracle check over random laws; one row per (law, check)."""
    rows = []
    func = TargetFunctional.product((1, 2, 3))
    for t in range(n_laws):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t,))))
        p = 0 if t % 2 == 0 else 2
        law = random_nsc_law(rng, 3, p)
        name = f"nsc-{t:02d}(p={p})"
        ident = verify_identification(law, func)
        eo, ea = verify_if_mean_zero(law, func)
        rows += [
            {"law": name, "check": "nsc_gap", "value": verify_nsc(law).max_gap, "limit": 1e-12, "kind": "max"},
            {"law": name, "check": "reconstruction", "value": ident.reconstruction_error, "limit": 1e-10, "kind": "max"},
            {"law": name, "check": "beta_reconstruction", "value": ident.beta_error, "limit": 1e-10, "kind": "max"},
            {"law": name, "check": "E[phi_odds]", "value": abs(eo), "limit": 1e-10, "kind": "max"},
            {"law": name, "check": "E[phi_adj]", "value": abs(ea), "limit": 1e-10, "kind": "max"},
            {"law": name, "check": "E[U(theta)]", "value": verify_u_theta(law), "limit": 1e-12, "kind": "max"},
        ]
        for sc in SCENARIOS[:3]:
            rows.append({"law": name, "check": f"dr:{sc}", "value": abs(verify_double_robustness(law, func, sc)),
                         "limit": 1e-10, "kind": "max"})
        rows.append({"law": name, "check": "dr:both-wrong", "value": abs(verify_double_robustness(law, func, "both-wrong")),
                     "limit": 1e-3, "kind": "min"})
        for i in range(1, 4):
            for sc in SCENARIOS[:3]:
                rows.append({"law": name, "check": f"dr_or[{i}]:{sc}", "value": dr_or_population_residual(law, i, sc),
                             "limit": 1e-10, "kind": "max"})
            rows.append({"law": name, "check": f"dr_or[{i}]:both-wrong",
                         "value": dr_or_population_residual(law, i, "both-wrong"), "limit": 1e-3, "kind": "min"})
        for key, v in closure_checks(law, func).items():
            rows.append({"law": name, "check": f"closure:{key}", "value": v, "limit": 1e-12, "kind": "max"})
    for t in range(n_controls):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(10_000 + t,))))
        p = 0 if t % 2 == 0 else 2
        law = self_censoring_law(rng, 3, p)
        name = f"self-censoring-{t:02d}(p={p})"
        rows.append({"law": name, "check": "nsc_gap", "value": verify_nsc(law).max_gap, "limit": 1e-2, "kind": "min"})
        rows.append({"law": name, "check": "reconstruction", "value": verify_identification(law, func).reconstruction_error,
                     "limit": 1e-3, "kind": "min"})
    for row in rows:
        row["passed"] = row["value"] <= row["limit"] if row["kind"] == "max" else row["value"] > row["limit"]
    return rows
