"""Nuisance fits: per-variable logistic selection models, the doubly robust
odds-ratio equations, interaction (theta) equations and OR-weighted
pattern-mixture regressions.

Every fit is the root of a mean of per-record estimating functions. The
functions named ``ef_*`` return those per-record values (``n x m``) and are
shared with the stacked sandwich variance so fitting and variance estimation
can never drift apart.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericalError, SupportError
from .oddsratio import BasisSpec, OddsRatioSpec, SelectionModel, make_basis
from .patterns import Dataset, PatternId, all_patterns, leave_one_out, pattern_support
from .solve import FitResult, logistic_irls, newton_solve, weighted_lstsq

BASIS_KINDS = ("const", "linear", "main", "saturated", "x_only", "none")


# -- design -------------------------------------------------------------------------

@dataclass(frozen=True)
class NuisanceDesign:
    """Feature maps for every nuisance component.

    ``delta[i]``: anchored basis of ``delta_h_i`` over ``(L_{-i}, X)``.
    ``baseline[i]``: basis of ``h_{i,X}`` over X.
    ``mu[i]``: X basis for ``E[delta_h_i features | R = 1, X]`` (DR fit only).
    ``interactions``: basis of ``lambda_S`` over ``(L_{-S}, X)`` for ``|S| >= 2``.
    ``pm``: per incomplete pattern index, basis over ``(L_(r), X)``.
    """

    K: int
    p: int
    delta: tuple[BasisSpec, ...]
    baseline: tuple[BasisSpec, ...]
    mu: tuple[BasisSpec, ...]
    interactions: Mapping[frozenset, BasisSpec]
    pm: Mapping[int, BasisSpec]
    or_method: str = "dr"

    def __post_init__(self):
        if self.or_method not in ("dr", "ml"):
            raise DataError(f"or_method must be 'dr' or 'ml', got {self.or_method!r}")

    @property
    def reference(self) -> np.ndarray:
        return self.delta[0].l0


def _x_basis(kind, K, p, ref, transform):
    if kind == "const":
        return make_basis("linear", (), K, 0, reference=ref)
    if kind in ("linear", "main", "x_only"):
        return make_basis("linear", (), K, p, reference=ref, x_transform=transform)
    if kind == "saturated":
        return make_basis("saturated", (), K, p, reference=ref, x_transform=transform)
    raise DataError(f"unknown basis kind {kind!r} for an X-only basis")


def build_design(K: int, p: int, reference=None, *, delta: str = "linear",
                 baseline: str = "linear", mu: str = "linear", interaction: str = "linear",
                 pm: str = "linear", or_method: str = "dr",
                 missingness_transform: str = "identity",
                 outcome_transform: str = "identity") -> NuisanceDesign:
    """Assemble a ``NuisanceDesign`` from basis kinds.

    Kinds: ``linear`` (intercept plus main effects), ``saturated`` (all
    products, exact for binary variables), ``const``, ``x_only`` (interaction
    terms depending on X only) and ``none`` (no interaction terms). The top
    order interaction is an intercept unless the kind is ``saturated``.
    ``missingness_transform`` applies to the baseline and interaction bases,
    ``outcome_transform`` to the feature-mean and pattern-mixture bases.
    """
    for k in (delta, baseline, mu, interaction, pm):
        if k not in BASIS_KINDS:
            raise DataError(f"unknown basis kind {k!r}")
    ref = None if reference is None else tuple(float(v) for v in reference)
    mt, ot = (missingness_transform if p else "identity"), (outcome_transform if p else "identity")
    dkind = "saturated" if delta == "saturated" else "linear"
    deltas = tuple(make_basis(dkind, [j for j in range(K) if j != i], K, p, anchored=True,
                              reference=ref, x_transform=mt) for i in range(K))
    baselines = tuple(_x_basis(baseline, K, p, ref, mt) for _ in range(K))
    mus = tuple(_x_basis(mu, K, p, ref, ot) for _ in range(K))
    inter = {}
    if interaction != "none":
        for size in range(2, K + 1):
            for S in itertools.combinations(range(K), size):
                rest = [j for j in range(K) if j not in S]
                if interaction == "saturated":
                    b = make_basis("saturated", rest, K, p, reference=ref, x_transform=mt)
                elif interaction == "const" or size == K:
                    b = make_basis("linear", (), K, 0, reference=ref)
                    b = b.with_(p=p)
                elif interaction == "x_only":
                    b = make_basis("linear", (), K, p, reference=ref, x_transform=mt)
                else:
                    b = make_basis("linear", rest, K, p, reference=ref, x_transform=mt)
                inter[frozenset(S)] = b
    pms = {}
    for pat in all_patterns(K):
        if pat.is_complete:
            continue
        kind = "saturated" if pm == "saturated" else "linear"
        pms[pat.index] = make_basis(kind, pat.observed, K, p, reference=ref, x_transform=ot)
    return NuisanceDesign(K, p, deltas, baselines, mus, inter, pms, or_method)


# -- helpers -------------------------------------------------------------------------

def filled_L(dataset: Dataset, l0) -> np.ndarray:
    """``L`` with missing cells replaced by the reference point.

    Every estimating function multiplies by the indicator of the rows where
    its inputs are observed, so the fill value never reaches a result; it
    only keeps NaN out of the arithmetic.
    """
    L = dataset.L
    return np.where(np.isnan(L), np.broadcast_to(np.asarray(l0, float), L.shape), L)


def record_weights(dataset: Dataset) -> np.ndarray:
    return np.ones(dataset.n) if dataset.weights is None else np.asarray(dataset.weights)


def wmean(V: np.ndarray, w: np.ndarray) -> np.ndarray:
    return w @ V / w.sum()


def loo_mask(dataset: Dataset, i: int) -> np.ndarray:
    """Rows with ``R_{-i} = 1`` (0-based ``i``)."""
    R = dataset.R
    return np.delete(R, i, axis=1).all(axis=1)


def check_support(dataset: Dataset) -> None:
    sup = pattern_support(dataset)
    if sup.n_complete == 0:
        raise SupportError("no complete cases")
    bad = [i for i, ok in sup.leave_one_out_ok.items() if not ok]
    if bad:
        raise SupportError(f"no records with only L{bad[0]} missing (leave-one-out support)")


# -- per-record estimating functions -------------------------------------------------

def ef_logit(ind, Ri, D, H, c, a):
    """Binomial score for ``logit p(R_i = 1 | R_{-i} = 1) = H a - D c``."""
    res = ind * (Ri - expit(H @ a - D @ c))
    return res[:, None] * np.hstack([-D, H])


def ef_feature_mean(cc, D, M, B):
    """Least-squares equations for ``E[D | R = 1, X] = M B`` (B is q x d)."""
    res = cc[:, None] * (D - M @ B)
    return (res[:, :, None] * M[:, None, :]).reshape(len(cc), -1)


def ef_or_dr(ind, Ri, D, H, a, M, B, c):
    """Doubly robust equation for the odds-ratio coefficients ``c``."""
    tilt = np.exp(-(1.0 - Ri) * np.where(ind, D @ c, 0.0))
    res = ind * (Ri - expit(H @ a)) * tilt
    return res[:, None] * (D - M @ B)


def ef_interaction(cc, is_r, G, lam_sum, theta):
    """IPW equation tying pattern ``r`` to the complete cases through ``lambda``."""
    lin = np.where(cc, lam_sum + G @ theta, 0.0)
    res = cc * np.exp(lin) - is_r
    return res[:, None] * G


def ef_pm_ratio(cc, odds, b, P, gamma):
    res = cc * odds * (b - P @ gamma)
    return res[:, None] * P


def ef_pm_numerator(cc, odds, b, P, gamma):
    res = cc * (odds * b - P @ gamma)
    return res[:, None] * P


def ef_pm_denominator(cc, odds, P, nu):
    res = cc * (odds - np.exp(np.where(cc, P @ nu, 0.0)))
    return res[:, None] * P


# -- public fits ---------------------------------------------------------------------

def _xy(dataset, basis_like):
    l0 = basis_like.l0
    return filled_L(dataset, l0), dataset.X


def fit_univariate_selection(dataset: Dataset, i: int, delta_basis: BasisSpec,
                             baseline_basis: BasisSpec) -> FitResult:
    """Logistic fit of ``R_i`` among records with ``R_{-i} = 1`` (``i`` is 1-based).

    The model is ``logit p(R_i = 1 | R_{-i} = 1, L_{-i}, X) = h_{i,X} - delta_h_i``;
    the returned coefficients are ``(psi_{i,LX}, psi_{i,X})``.
    """
    k = _index(dataset, i)
    L, X = _xy(dataset, delta_basis)
    ind = loo_mask(dataset, k)
    if not ind.any():
        raise SupportError(f"no records with R_-{i} = 1")
    D = delta_basis.evaluate(L, X)
    H = baseline_basis.evaluate(L, X)
    w = record_weights(dataset)
    Z = np.hstack([-D, H])[ind]
    fit = logistic_irls(Z, dataset.R[ind, k], w[ind])
    c, a = fit.coefficients[:D.shape[1]], fit.coefficients[D.shape[1]:]
    fit.covariance_contribution = ef_logit(ind, dataset.R[:, k].astype(float), D, H, c, a)
    return fit


def fit_feature_means(dataset: Dataset, i: int, delta_basis: BasisSpec,
                      mu_basis: BasisSpec) -> np.ndarray:
    """Complete-case regression of the ``delta_h_i`` features on the X basis (q x d)."""
    k = _index(dataset, i)
    L, X = _xy(dataset, delta_basis)
    cc = dataset.R.all(axis=1)
    D, M = delta_basis.evaluate(L, X), mu_basis.evaluate(L, X)
    w = record_weights(dataset)
    return np.column_stack([weighted_lstsq(M[cc], D[cc, j], w[cc]) for j in range(D.shape[1])]) \
        if D.shape[1] else np.zeros((M.shape[1], 0))


def fit_or_doubly_robust(dataset: Dataset, i: int, delta_basis: BasisSpec,
                         baseline_basis: BasisSpec, psi_iX, mu_basis: BasisSpec, mu_coef,
                         start=None, tol: float = 1e-8) -> FitResult:
    """Solve the doubly robust odds-ratio equation for ``psi_{i,LX}`` (``i`` 1-based).

    ``psi_iX`` are baseline coefficients (usually from the logistic fit) and
    ``mu_coef`` the feature-mean regression from ``fit_feature_means``. The
    equation stays unbiased when either of the two is correctly specified.
    """
    k = _index(dataset, i)
    L, X = _xy(dataset, delta_basis)
    ind = loo_mask(dataset, k)
    if not (ind & (dataset.R[:, k] == 0)).any():
        raise SupportError(f"no records with only L{i} missing")
    D, H, M = delta_basis.evaluate(L, X), baseline_basis.evaluate(L, X), mu_basis.evaluate(L, X)
    Ri = dataset.R[:, k].astype(float)
    w = record_weights(dataset)
    a, B = np.asarray(psi_iX, float), np.asarray(mu_coef, float)
    return _solve_or_dr(ind, Ri, D, H, a, M, B, w, start, tol)


def _solve_or_dr(ind, Ri, D, H, a, M, B, w, start, tol):
    W = w.sum()
    resid = D - M @ B
    base = ind * expit(H @ a)

    def f(c):
        return wmean(ef_or_dr(ind, Ri, D, H, a, M, B, c), w)

    def jac(c):
        tilt = np.exp(-(1.0 - Ri) * np.where(ind, D @ c, 0.0))
        # d/dc of -expit(Ha) * exp(-delta) on R_i = 0 rows
        s = w * (1.0 - Ri) * base * tilt
        return (resid * s[:, None]).T @ D / W

    x0 = np.zeros(D.shape[1]) if start is None else np.asarray(start, float)
    fit = newton_solve(f, x0, jac=jac, tol=tol, bound=None)
    fit.covariance_contribution = ef_or_dr(ind, Ri, D, H, a, M, B, fit.coefficients)
    return fit


def _solve_interaction(cc, is_r, G, lam_sum, w, tol):
    W = w.sum()
    if not is_r.any():
        raise SupportError("interaction pattern has no records")

    def f(th):
        return wmean(ef_interaction(cc, is_r, G, lam_sum, th), w)

    def jac(th):
        e = np.exp(np.where(cc, lam_sum + G @ th, 0.0)) * cc * w
        return (G * e[:, None]).T @ G / W

    fit = newton_solve(f, np.zeros(G.shape[1]), jac=jac, tol=tol, bound=None)
    return fit


def supported_interactions(dataset: Dataset, design: NuisanceDesign):
    """Split interaction sets into those with pattern support and excluded ones."""
    counts = np.bincount(dataset.pattern_index, weights=record_weights(dataset),
                         minlength=1 << dataset.K)
    full = (1 << dataset.K) - 1
    fit, excluded = [], set()
    for S in sorted(design.interactions, key=lambda s: (len(s), sorted(s))):
        j = full - sum(1 << t for t in S)
        if counts[j] > 0:
            fit.append(S)
        else:
            excluded.add(j)
    # patterns with >= 2 missing entries but no interaction term still need support
    for pat in all_patterns(dataset.K):
        if len(pat.missing) >= 2 and frozenset(pat.missing) not in design.interactions \
                and counts[pat.index] == 0:
            excluded.add(pat.index)
    return fit, frozenset(excluded)


def fit_interactions(dataset: Dataset, model: SelectionModel,
                     bases: Mapping[frozenset, BasisSpec], tol: float = 1e-8):
    """Fit ``lambda_S`` for ``|S| >= 2`` in order of increasing ``|S|``.

    ``model`` supplies the main terms. Patterns with no records are excluded
    from the model (probability 0) with a warning. Returns the updated
    ``SelectionModel`` and a dict of ``FitResult`` keyed by ``S``.
    """
    design = NuisanceDesign(model.K, model.p, tuple(b for b, _ in model.or_spec.delta),
                            tuple(b for b, _ in model.baselines), (), dict(bases), {})
    order, excluded = supported_interactions(dataset, design)
    if excluded:
        warnings.warn(f"patterns without support excluded: "
                      f"{sorted(str(PatternId.from_index(j, model.K)) for j in excluded)}",
                      RuntimeWarning, stacklevel=2)
    L = filled_L(dataset, model.reference)
    X = dataset.X
    w = record_weights(dataset)
    cc = dataset.R.all(axis=1)
    lam = {frozenset((i,)): model.main_term(i, L, X) for i in range(model.K)}
    coefs, fits = {}, {}
    full = (1 << model.K) - 1
    for S in order:
        G = bases[S].evaluate(L, X)
        lam_sum = sum(lam[T] for T in lam if T < S)
        is_r = (dataset.pattern_index == full - sum(1 << t for t in S)).astype(float)
        fit = _solve_interaction(cc, is_r, G, lam_sum, w, tol)
        coefs[S] = (bases[S], fit.coefficients)
        lam[S] = G @ fit.coefficients
        fit.covariance_contribution = ef_interaction(cc, is_r, G, lam_sum, fit.coefficients)
        fits[S] = fit
    out = SelectionModel(model.or_spec, model.baselines, coefs, excluded)
    return out, fits


def default_theta_bases(K: int, p: int, reference=None) -> dict:
    """``(1, L_i, X)`` for the pairwise terms and a scalar for the three-way term."""
    return dict(build_design(K, p, reference, interaction="linear").interactions)


def fit_theta_ipw(dataset: Dataset, model: SelectionModel, g_bases=None, tol: float = 1e-8):
    """K=3 wrapper of ``fit_interactions``: returns (theta_1, theta_2, theta_3, theta_4).

    ``theta_k`` is the pairwise term not involving ``R_k``; ``theta_4`` is the
    three-way term. Every pattern with two or more missing entries must be
    present in the data. ``g_bases`` maps ``k`` (1..4) to a basis; defaults to
    ``default_theta_bases``.
    """
    if model.K != 3:
        raise DataError("fit_theta_ipw requires K=3")
    counts = np.bincount(dataset.pattern_index, minlength=8)
    for idx in (0, 1, 2, 4):
        if counts[idx] == 0:
            raise SupportError(f"pattern {PatternId.from_index(idx, 3)} has no records")
    key = {1: frozenset({1, 2}), 2: frozenset({0, 2}), 3: frozenset({0, 1}), 4: frozenset({0, 1, 2})}
    defaults = default_theta_bases(3, model.p, tuple(model.reference))
    bases = {key[k]: (g_bases or {}).get(k, defaults[key[k]]) for k in (1, 2, 3, 4)}
    fitted, fits = fit_interactions(dataset, model, bases, tol)
    coef = np.concatenate([fits[key[k]].coefficients for k in (1, 2, 3, 4)])
    resid = max(fits[key[k]].final_residual_norm for k in (1, 2, 3, 4))
    contrib = np.hstack([fits[key[k]].covariance_contribution for k in (1, 2, 3, 4)])
    return FitResult(coef, True, max(fits[key[k]].iterations for k in (1, 2, 3, 4)), resid, contrib), fitted


@dataclass
class PatternMixtureModel:
    """Per incomplete pattern: fitted ``E[b(L) | R = r, L_(r), X]``.

    ``entries[j]`` is ``("direct", None, None)`` when ``b`` depends only on the
    coordinates observed under pattern ``j``, ``("ratio", basis, gamma)`` for
    the OR-weighted regression, or ``("separate", basis, (gamma, nu))`` for the
    numerator / log-linear denominator form.
    """

    K: int
    entries: dict = field(default_factory=dict)

    def predict(self, j: int, L, X, b_values=None) -> np.ndarray:
        mode, basis, coef = self.entries[j]
        if mode == "direct":
            if b_values is None:
                raise DataError("direct pattern-mixture entries need b(L) values")
            return np.asarray(b_values, float)
        P = basis.evaluate(L, X)
        if mode == "ratio":
            return P @ coef
        gamma, nu = coef
        return (P @ gamma) / np.exp(P @ nu)


def fit_pattern_mixture(dataset: Dataset, pattern: PatternId, model: SelectionModel, b_values,
                        basis: BasisSpec, mode: str = "ratio", tol: float = 1e-8):
    """OR-weighted complete-case regression of ``b(L)`` on ``basis`` for one pattern.

    ``b_values`` holds ``b(L)`` per record (only complete cases are read).
    The weights are the model-implied odds ratios ``OR(r, L | X)``. Returns
    the coefficient vector (``mode="ratio"``) or ``(gamma, nu)``.
    """
    L = filled_L(dataset, model.reference)
    X = dataset.X
    cc = dataset.R.all(axis=1)
    if not cc.any():
        raise SupportError("no complete cases")
    w = record_weights(dataset)
    odds = np.exp(model.log_odds_ratio_all(L[cc], X[cc])[:, pattern.index])
    P = basis.evaluate(L, X)[cc]
    b = np.asarray(b_values, float)[cc]
    if mode == "ratio":
        return weighted_lstsq(P, b, w[cc] * odds)
    if mode == "separate":
        gamma = weighted_lstsq(P, odds * b, w[cc])
        ones = np.ones(cc.sum())
        W = w[cc].sum()

        def f(nu):
            return wmean(ef_pm_denominator(ones, odds, P, nu), w[cc])

        def jac(nu):
            e = np.exp(P @ nu) * w[cc]
            return -(P * e[:, None]).T @ P / W

        nu0 = np.zeros(P.shape[1])
        nu0[0] = np.log(wmean(odds, w[cc])) if basis.terms[0].factors == () else 0.0
        nu = newton_solve(f, nu0, jac=jac, tol=tol, bound=None).coefficients
        return gamma, nu
    raise DataError(f"unknown pattern-mixture mode {mode!r}")


def _index(dataset: Dataset, i: int) -> int:
    if not 1 <= i <= dataset.K:
        raise DataError(f"variable index {i} out of range 1..{dataset.K}")
    return i - 1
