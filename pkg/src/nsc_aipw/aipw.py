"""AIPW and IPW estimation of ``beta = E[b(L)]`` with a stacked sandwich variance.

``Pipeline`` fits every nuisance component on one dataset and exposes the
stacked per-record estimating functions

    logistic selection -> feature means -> DR odds ratio   (per variable)
    -> interactions (by order) -> pattern mixture (per pattern) -> beta

whose Jacobian and outer product give the sandwich covariance.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (BootstrapError, ConvergenceError, DataError, NSCError, NumericalError,
                     PositivityError)
from .nuisance import (NuisanceDesign, PatternMixtureModel, build_design, check_support,
                       ef_feature_mean, ef_interaction, ef_logit, ef_or_dr, ef_pm_denominator,
                       ef_pm_numerator, ef_pm_ratio, filled_L, loo_mask, record_weights,
                       supported_interactions, wmean, _solve_interaction, _solve_or_dr)
from .oddsratio import OddsRatioSpec, SelectionModel
from .patterns import Dataset, PatternId, SupportTable, all_patterns, pattern_support
from .solve import logistic_irls, newton_solve, numeric_jacobian, weighted_lstsq

# -- target functionals ------------------------------------------------------------


@dataclass(frozen=True)
class TargetFunctional:
    """``b(L)`` for ``beta = E[b(L)]``; ``variables`` are the 0-based L indices used."""

    kind: str
    variables: tuple[int, ...]
    name: str
    cell: tuple[int, ...] | None = None
    func: Callable | None = field(default=None, compare=False)

    @classmethod
    def mean(cls, i: int) -> "TargetFunctional":
        """Mean of ``L_i`` (1-based)."""
        return cls("mean", (i - 1,), f"mean:L{i}")

    @classmethod
    def product(cls, idx: Sequence[int]) -> "TargetFunctional":
        """Mean of the product of ``L_j`` over the 1-based indices ``idx``."""
        idx = tuple(sorted(set(idx)))
        return cls("product", tuple(j - 1 for j in idx), "product:" + ",".join(f"L{j}" for j in idx))

    @classmethod
    def cell_indicator(cls, cell: Sequence[int]) -> "TargetFunctional":
        cell = tuple(int(c) for c in cell)
        return cls("cell", tuple(range(len(cell))), "cell:" + "".join(map(str, cell)), cell)

    @classmethod
    def custom(cls, func: Callable, variables: Sequence[int], name: str) -> "TargetFunctional":
        """``func`` maps an ``(n, K)`` array to ``n`` values; ``variables`` are 1-based."""
        return cls("custom", tuple(j - 1 for j in variables), name, None, func)

    @classmethod
    def parse(cls, text: str) -> "TargetFunctional":
        """``mean:L3``, ``product:L1,L2,L3`` or ``cell:101``."""
        kind, _, arg = text.partition(":")
        try:
            if kind == "mean":
                return cls.mean(int(re.fullmatch(r"L(\d+)", arg).group(1)))
            if kind == "product":
                return cls.product([int(re.fullmatch(r"L(\d+)", a.strip()).group(1))
                                    for a in arg.split(",")])
            if kind == "cell":
                bits = arg.replace(",", "")
                if not bits or set(bits) - {"0", "1"}:
                    raise ValueError
                return cls.cell_indicator([int(c) for c in bits])
        except (AttributeError, ValueError):
            pass
        raise DataError(f"cannot parse functional {text!r} (use mean:L3, product:L1,L2 or cell:101)")

    def values(self, L: np.ndarray) -> np.ndarray:
        L = np.atleast_2d(np.asarray(L, float))
        if max(self.variables, default=-1) >= L.shape[1]:
            raise DataError(f"functional {self.name} refers to a variable beyond K={L.shape[1]}")
        if self.kind == "mean":
            return L[:, self.variables[0]].copy()
        if self.kind == "product":
            return np.prod(L[:, list(self.variables)], axis=1)
        if self.kind == "cell":
            if len(self.cell) != L.shape[1]:
                raise DataError(f"cell {self.cell} does not have K={L.shape[1]} entries")
            return np.all(L == np.asarray(self.cell, float), axis=1).astype(float)
        return np.asarray(self.func(L), dtype=float)


# -- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator options.

    Basis kinds are passed to ``build_design``. ``reference`` is ``"zero"``,
    ``"mean"`` (observed mean of each L) or an explicit vector. ``or_method``
    chooses the doubly robust (``"dr"``) or plain logistic (``"ml"``)
    odds-ratio coefficients. ``pm_mode`` is ``"ratio"`` (one OR-weighted
    regression) or ``"separate"`` (numerator regression over a log-linear
    denominator). With ``or_fallback`` a doubly robust odds-ratio equation
    that has no root falls back to the logistic estimate for that variable;
    the variables affected are listed in the report diagnostics.
    """

    delta: str = "linear"
    baseline: str = "linear"
    mu: str = "linear"
    interaction: str = "linear"
    pm: str = "linear"
    or_method: str = "dr"
    or_fallback: bool = True
    pm_mode: str = "ratio"
    reference: str | tuple = "zero"
    missingness_transform: str = "identity"
    outcome_transform: str = "identity"
    clip_eps: float = 1e-6
    tol: float = 1e-8
    variance: bool = True

    def with_(self, **kw) -> "EstimatorConfig":
        return replace(self, **kw)


def resolve_reference(dataset: Dataset, reference) -> np.ndarray:
    if isinstance(reference, str):
        if reference == "zero":
            return np.zeros(dataset.K)
        if reference == "mean":
            w = record_weights(dataset)
            obs = dataset.R == 1
            Lz = np.where(obs, dataset.L, 0.0)
            cnt = w @ obs
            if (cnt == 0).any():
                raise DataError("a variable is never observed; cannot center the reference point")
            return (w @ Lz) / cnt
        raise DataError(f"unknown reference {reference!r}")
    ref = np.asarray(reference, float)
    if ref.shape != (dataset.K,):
        raise DataError(f"reference must have length {dataset.K}")
    return ref


# -- report --------------------------------------------------------------------------

REPORT_COLUMNS = ("functional", "estimate", "se", "ci_lo", "ci_hi", "n", "n_complete", "n_clipped")


@dataclass
class EstimateReport:
    functional: str
    beta_hat: float
    sandwich_se: float | None
    n: int
    n_complete: int
    n_clipped_weights: int
    patterns_used: SupportTable | None = None
    bootstrap_ci: tuple[float, float] | None = None
    method: str = "aipw"
    diagnostics: dict = field(default_factory=dict)

    def row(self) -> dict:
        ci = self.bootstrap_ci or (math.nan, math.nan)
        return {"functional": self.functional, "estimate": self.beta_hat,
                "se": math.nan if self.sandwich_se is None else self.sandwich_se,
                "ci_lo": ci[0], "ci_hi": ci[1], "n": self.n, "n_complete": self.n_complete,
                "n_clipped": self.n_clipped_weights}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return "NA" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def format_reports(reports: Sequence[EstimateReport], fmt: str = "csv") -> str:
    rows = [[_fmt(r.row()[c]) for c in REPORT_COLUMNS] for r in reports]
    if fmt == "csv":
        return _csv_text(REPORT_COLUMNS, rows)
    if fmt == "text":
        table = [list(REPORT_COLUMNS)] + rows
        widths = [max(len(r[k]) for r in table) for k in range(len(REPORT_COLUMNS))]
        lines = ["  ".join(c.rjust(wd) if k else c.ljust(wd) for k, (c, wd) in enumerate(zip(r, widths)))
                 for r in table]
        return "\n".join(lines) + "\n"
    raise DataError(f"unknown output format {fmt!r}")


# -- pipeline ------------------------------------------------------------------------


@dataclass
class FunctionalFit:
    functional: TargetFunctional
    beta: float
    omega: np.ndarray
    n_clipped: int
    pm: PatternMixtureModel
    method: str


class Pipeline:
    """All nuisance fits on one dataset plus per-functional beta solves."""

    def __init__(self, dataset: Dataset, config: EstimatorConfig = EstimatorConfig()):
        self.data = dataset
        self.config = config
        self.K, self.p = dataset.K, dataset.p
        self.full = (1 << self.K) - 1
        self.w = record_weights(dataset)
        self.W = float(self.w.sum())
        self.support = pattern_support(dataset)
        self.cc = dataset.R.all(axis=1)
        self.ccf = self.cc.astype(float)
        self.trivial = bool(self.cc.all())
        if self.trivial:
            return
        check_support(dataset)
        self.l0 = resolve_reference(dataset, config.reference)
        self.design = build_design(
            self.K, self.p, self.l0, delta=config.delta, baseline=config.baseline, mu=config.mu,
            interaction=config.interaction, pm=config.pm, or_method=config.or_method,
            missingness_transform=config.missingness_transform,
            outcome_transform=config.outcome_transform)
        self._precompute()
        self._fit_nuisance()

    # -- setup ----------------------------------------------------------------
    def _precompute(self):
        d, data = self.design, self.data
        L, X = filled_L(data, self.l0), data.X
        self.Lf = L
        L0 = np.broadcast_to(self.l0, L.shape)
        self.Rf = data.R.astype(float)
        self.ind = [loo_mask(data, i).astype(float) for i in range(self.K)]
        self.D = [b.evaluate(L, X) for b in d.delta]
        self.D0 = [b.evaluate(L0, X) for b in d.delta]
        self.H = [b.evaluate(L, X) for b in d.baseline]
        self.M = [b.evaluate(L, X) for b in d.mu] if d.or_method == "dr" else None
        self.order, self.excluded = supported_interactions(data, d)
        if self.excluded:
            warnings.warn("patterns without support excluded: " + ", ".join(
                sorted(str(PatternId.from_index(j, self.K)) for j in self.excluded)),
                RuntimeWarning, stacklevel=3)
        self.G = {S: d.interactions[S].evaluate(L, X) for S in self.order}
        self.Gd = {S: self.G[S] - d.interactions[S].evaluate(L0, X) for S in self.order}
        self.is_r = {S: (data.pattern_index == self.full - sum(1 << t for t in S)).astype(float)
                     for S in self.order}
        counts = np.bincount(data.pattern_index, weights=self.w, minlength=1 << self.K)
        self.aug_patterns = [j for j in range(self.full) if counts[j] > 0]
        self.is_j = {j: (data.pattern_index == j).astype(float) for j in self.aug_patterns}
        self.missing_sets = {j: [T for T in self._terms() if T <= frozenset(PatternId.from_index(j, self.K).missing)]
                             for j in range(1 << self.K)}
        self._P = {}

    def _terms(self):
        return [frozenset((i,)) for i in range(self.K)] + list(self.order)

    def _pm_basis(self, j):
        if j not in self._P:
            self._P[j] = self.design.pm[j].evaluate(self.Lf, self.data.X)
        return self._P[j]

    # -- nuisance fit ------------------------------------------------------------
    def _fit_nuisance(self):
        cfg, w = self.config, self.w
        blocks = []
        self.c, self.a, self.or_fallback = [], [], []
        for i in range(self.K):
            ind = self.ind[i] > 0
            D, H = self.D[i], self.H[i]
            fit = logistic_irls(np.hstack([-D, H])[ind], self.Rf[ind, i], w[ind], tol=cfg.tol)
            c_ml, a = fit.coefficients[:D.shape[1]], fit.coefficients[D.shape[1]:]
            blocks.append(fit.coefficients)
            c = c_ml
            fallback = False
            if self.design.or_method == "dr":
                M = self.M[i]
                B = np.column_stack([weighted_lstsq(M[self.cc], D[self.cc, j], w[self.cc])
                                     for j in range(D.shape[1])])
                try:
                    c = _solve_or_dr(self.ind[i], self.Rf[:, i], D, H, a, M, B, w, c_ml,
                                     cfg.tol).coefficients
                    blocks.extend([B.T.ravel(), c])
                except (ConvergenceError, NumericalError):
                    # the doubly robust equation can lack a root in finite samples;
                    # keep the likelihood estimate for this variable
                    if not cfg.or_fallback:
                        raise
                    fallback = True
                    c = c_ml
            self.or_fallback.append(fallback)
            self.c.append(c)
            self.a.append(a)
        lam = self._main_terms(self.c, self.a)
        self.theta = {}
        for S in self.order:
            lam_sum = sum(lam[T] for T in lam if T < S)
            th = _solve_interaction(self.ccf, self.is_r[S], self.G[S], lam_sum, w, cfg.tol).coefficients
            self.theta[S] = th
            lam[S] = self.G[S] @ th
            blocks.append(th)
        self.lam = lam
        self.omega_nuis = np.concatenate(blocks) if blocks else np.zeros(0)

    def _main_terms(self, c, a):
        return {frozenset((i,)): self.D[i] @ c[i] - self.H[i] @ a[i] for i in range(self.K)}

    def selection_model(self) -> SelectionModel:
        if self.trivial:
            raise DataError("no missing data: no selection model to report")
        d = self.design
        or_spec = OddsRatioSpec(self.K, self.p, tuple(zip(d.delta, self.c)))
        inter = {S: (d.interactions[S], self.theta[S]) for S in self.order}
        return SelectionModel(or_spec, tuple(zip(d.baseline, self.a)), inter, self.excluded)

    # -- probabilities -------------------------------------------------------------
    def _log_ratios(self, lam):
        n = self.data.n
        out = np.zeros((n, 1 << self.K))
        for j in range(self.full):
            if j in self.excluded:
                out[:, j] = -np.inf
            else:
                for T in self.missing_sets[j]:
                    if T in lam:
                        out[:, j] += lam[T]
        return out

    def _probs(self, lam):
        lr = np.where(self.cc[:, None], self._log_ratios(lam), 0.0)
        lr[:, list(self.excluded)] = -np.inf
        return np.exp(lr - logsumexp(lr, axis=1, keepdims=True))

    def _odds(self, j, dlog):
        s = np.zeros(self.data.n)
        for T in self.missing_sets[j]:
            s = s + dlog[T]
        return np.exp(np.where(self.cc, s, 0.0)) * self.ccf

    # -- per-functional fit ---------------------------------------------------------
    def _direct(self, functional, j):
        obs = set(PatternId.from_index(j, self.K).observed)
        return set(functional.variables) <= obs

    def fit_functional(self, functional: TargetFunctional, method: str = "aipw") -> FunctionalFit:
        b = functional.values(self.Lf if not self.trivial else self.data.L)
        if self.trivial:
            beta = float(wmean(b, self.w))
            return FunctionalFit(functional, beta, np.array([beta]), 0, PatternMixtureModel(self.K), method)
        dlog = {frozenset((i,)): (self.D[i] - self.D0[i]) @ self.c[i] for i in range(self.K)}
        for S in self.order:
            dlog[S] = self.Gd[S] @ self.theta[S]
        w, cc = self.w, self.cc
        pm = PatternMixtureModel(self.K)
        blocks, m = [], {}
        if method == "aipw":
            for j in self.aug_patterns:
                if self._direct(functional, j):
                    pm.entries[j] = ("direct", None, None)
                    m[j] = b
                    continue
                P = self._pm_basis(j)
                odds = self._odds(j, dlog)
                if self.config.pm_mode == "ratio":
                    g = weighted_lstsq(P[cc], b[cc], (w * odds)[cc])
                    blocks.append(g)
                    m[j] = P @ g
                    pm.entries[j] = ("ratio", self.design.pm[j], g)
                elif self.config.pm_mode == "separate":
                    g = weighted_lstsq(P[cc], (odds * b)[cc], w[cc])
                    nu = self._fit_denominator(P, odds)
                    blocks += [g, nu]
                    m[j] = (P @ g) / np.exp(np.where(cc | (self.is_j[j] > 0), P @ nu, 0.0))
                    pm.entries[j] = ("separate", self.design.pm[j], (g, nu))
                else:
                    raise DataError(f"unknown pattern-mixture mode {self.config.pm_mode!r}")
        elif method != "ipw":
            raise DataError(f"unknown method {method!r}")
        pi = self._probs(self.lam)
        A, C, n_clip = self._beta_parts(b, pi, m)
        beta = float((w @ A) / (w @ C))
        omega = np.concatenate([self.omega_nuis] + blocks + [[beta]])
        return FunctionalFit(functional, beta, omega, n_clip, pm, method)

    def _fit_denominator(self, P, odds):
        w, cc = self.w, self.ccf
        Wt = self.W

        def f(nu):
            return wmean(ef_pm_denominator(cc, odds, P, nu), w)

        def jac(nu):
            e = np.exp(np.where(self.cc, P @ nu, 0.0)) * cc * w
            return -(P * e[:, None]).T @ P / Wt

        nu0 = np.zeros(P.shape[1])
        return newton_solve(f, nu0, jac=jac, tol=self.config.tol, bound=None).coefficients

    def _beta_parts(self, b, pi, m):
        eps = self.config.clip_eps
        pi1 = pi[:, self.full]
        clipped = self.cc & (pi1 < eps)
        n_clip = int(clipped.sum())
        if n_clip and n_clip == int(self.cc.sum()):
            raise PositivityError("every complete-case weight was clipped")
        inv = np.where(self.cc, 1.0 / np.maximum(pi1, eps), 0.0)
        A = inv * np.where(self.cc, b, 0.0)
        C = inv.copy()
        for j, mj in m.items():
            mj = np.where(self.cc | (self.is_j[j] > 0), mj, 0.0)
            A += self.is_j[j] * mj - inv * pi[:, j] * mj
            C += self.is_j[j] - inv * pi[:, j]
        return A, C, n_clip

    # -- stacked estimating functions -------------------------------------------
    def contributions(self, omega: np.ndarray, functional: TargetFunctional,
                      method: str = "aipw") -> np.ndarray:
        """Per-record stacked estimating functions at ``omega`` (``n x dim``)."""
        pos = 0

        def take(k):
            nonlocal pos
            v = omega[pos:pos + k]
            pos += k
            return v

        parts, c_all, a_all = [], [], []
        for i in range(self.K):
            D, H = self.D[i], self.H[i]
            c_ml, a = take(D.shape[1]), take(H.shape[1])
            parts.append(ef_logit(self.ind[i], self.Rf[:, i], D, H, c_ml, a))
            c = c_ml
            if self.design.or_method == "dr" and not self.or_fallback[i]:
                M = self.M[i]
                B = take(M.shape[1] * D.shape[1]).reshape(D.shape[1], M.shape[1]).T
                parts.append(ef_feature_mean(self.ccf, D, M, B))
                c = take(D.shape[1])
                parts.append(ef_or_dr(self.ind[i], self.Rf[:, i], D, H, a, M, B, c))
            c_all.append(c)
            a_all.append(a)
        lam = self._main_terms(c_all, a_all)
        dlog = {frozenset((i,)): (self.D[i] - self.D0[i]) @ c_all[i] for i in range(self.K)}
        for S in self.order:
            th = take(self.G[S].shape[1])
            lam_sum = sum(lam[T] for T in lam if T < S)
            parts.append(ef_interaction(self.ccf, self.is_r[S], self.G[S], lam_sum, th))
            lam[S] = self.G[S] @ th
            dlog[S] = self.Gd[S] @ th
        b = functional.values(self.Lf)
        m = {}
        if method == "aipw":
            for j in self.aug_patterns:
                if self._direct(functional, j):
                    m[j] = b
                    continue
                P = self._pm_basis(j)
                odds = self._odds(j, dlog)
                g = take(P.shape[1])
                if self.config.pm_mode == "ratio":
                    parts.append(ef_pm_ratio(self.ccf, odds, b, P, g))
                    m[j] = P @ g
                else:
                    nu = take(P.shape[1])
                    parts.append(ef_pm_numerator(self.ccf, odds, b, P, g))
                    parts.append(ef_pm_denominator(self.ccf, odds, P, nu))
                    m[j] = (P @ g) / np.exp(np.where(self.cc | (self.is_j[j] > 0), P @ nu, 0.0))
        beta = take(1)[0]
        pi = self._probs(lam)
        A, C, _ = self._beta_parts(b, pi, m)
        parts.append((A - beta * C)[:, None])
        if pos != omega.size:
            raise DataError(f"parameter vector has {omega.size} entries, stack uses {pos}")
        return np.hstack(parts)

    def sandwich(self, fit: FunctionalFit) -> np.ndarray:
        """Sandwich covariance ``A^-1 B A^-T / n`` of the stacked parameters."""
        if self.trivial:
            b = fit.functional.values(self.data.L)
            v = float(wmean((b - fit.beta) ** 2, self.w))
            return np.array([[v / self.W]])
        w = self.w
        V = self.contributions(fit.omega, fit.functional, fit.method)
        Bm = (V * w[:, None]).T @ V / self.W
        A = numeric_jacobian(lambda om: wmean(self.contributions(om, fit.functional, fit.method), w),
                             fit.omega)
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            raise NumericalError("singular Jacobian in the sandwich variance") from None
        if not np.isfinite(Ainv).all():
            raise NumericalError("singular Jacobian in the sandwich variance")
        return Ainv @ Bm @ Ainv.T / self.W

    def report(self, fit: FunctionalFit, variance: bool | None = None) -> EstimateReport:
        variance = self.config.variance if variance is None else variance
        se = None
        if variance:
            cov = self.sandwich(fit)
            se = float(math.sqrt(max(cov[-1, -1], 0.0)))
        diag = {}
        if not self.trivial:
            diag = {"excluded_patterns": [str(PatternId.from_index(j, self.K)) for j in sorted(self.excluded)],
                    "n_parameters": int(fit.omega.size),
                    "or_fallback": [i + 1 for i, f in enumerate(self.or_fallback) if f]}
        return EstimateReport(fit.functional.name, fit.beta, se, self.data.n, self.support.n_complete,
                              fit.n_clipped, self.support, None, fit.method, diag)


# -- public entry points ------------------------------------------------------------


def estimate_aipw(dataset: Dataset, functional: TargetFunctional,
                  config: EstimatorConfig = EstimatorConfig()) -> EstimateReport:
    pipe = Pipeline(dataset, config)
    return pipe.report(pipe.fit_functional(functional, "aipw"))


def estimate_ipw(dataset: Dataset, functional: TargetFunctional,
                 config: EstimatorConfig = EstimatorConfig()) -> EstimateReport:
    """Normalized inverse weighting of the complete cases by ``pi_1``."""
    pipe = Pipeline(dataset, config)
    return pipe.report(pipe.fit_functional(functional, "ipw"))


def estimate_complete_case(dataset: Dataset, functional: TargetFunctional) -> EstimateReport:
    """Complete-case mean: the naive baseline, biased under MNAR."""
    cc = dataset.R.all(axis=1)
    if not cc.any():
        raise DataError("no complete cases")
    w = record_weights(dataset)[cc]
    b = functional.values(dataset.L[cc])
    beta = float(wmean(b, w))
    se = float(math.sqrt(wmean((b - beta) ** 2, w) / w.sum()))
    sup = pattern_support(dataset)
    return EstimateReport(functional.name, beta, se, dataset.n, sup.n_complete, 0, sup, None, "cc")


def sandwich_variance(dataset: Dataset, functional: TargetFunctional,
                      config: EstimatorConfig = EstimatorConfig(), method: str = "aipw"):
    """Return ``(omega_hat, covariance)`` of the stacked estimating equations."""
    pipe = Pipeline(dataset, config)
    fit = pipe.fit_functional(functional, method)
    return fit.omega, pipe.sandwich(fit)


def replicate_rng(seed: int, t: int) -> np.random.Generator:
    """Independent generator for replicate ``t`` derived from ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t,))))


def _bootstrap_one(args):
    dataset, functional, config, seed, t, method = args
    rng = replicate_rng(seed, t)
    idx = rng.integers(0, dataset.n, dataset.n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pipe = Pipeline(dataset.take(idx), config.with_(variance=False))
            return pipe.fit_functional(functional, method).beta
    except (NSCError, np.linalg.LinAlgError, FloatingPointError):
        return math.nan


def bootstrap_ci(dataset: Dataset, functional: TargetFunctional,
                 config: EstimatorConfig = EstimatorConfig(), B: int = 1000, seed: int = 0,
                 alpha: float = 0.05, threads: int = 1, method: str = "aipw",
                 max_fail: float = 0.10) -> tuple[float, float]:
    """Percentile interval from ``B`` nonparametric bootstrap replicates.

    Nuisances are refit on every replicate. Replicate ``t`` draws from its own
    generator, so the result does not depend on ``threads``.
    """
    if B < 2:
        raise DataError("bootstrap needs B >= 2")
    jobs = [(dataset, functional, config, seed, t, method) for t in range(B)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            reps = list(ex.map(_bootstrap_one, jobs, chunksize=max(1, B // (4 * threads))))
    else:
        reps = [_bootstrap_one(j) for j in jobs]
    reps = np.asarray(reps)
    fails = int(np.isnan(reps).sum())
    if fails > max_fail * B:
        raise BootstrapError(f"{fails} of {B} bootstrap replicates failed")
    ok = reps[~np.isnan(reps)]
    lo, hi = np.percentile(ok, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def joint_distribution_binary(dataset: Dataset, config: EstimatorConfig = EstimatorConfig(),
                              method: str = "aipw"):
    """AIPW estimate of every cell probability of binary ``L``.

    Returns ``(table, factor)``: ``table`` has shape ``(2,) * K`` indexed by
    ``(l_1, ..., l_K)`` and sums to one; ``factor`` is the raw sum of the cell
    estimates before renormalization.
    """
    obs = dataset.L[dataset.R == 1]
    if not np.isin(obs, (0.0, 1.0)).all():
        raise DataError("joint_distribution_binary needs binary L")
    pipe = Pipeline(dataset, config)
    table = np.zeros((2,) * dataset.K)
    for cell in itertools.product((0, 1), repeat=dataset.K):
        table[cell] = pipe.fit_functional(TargetFunctional.cell_indicator(cell), method).beta
    factor = float(table.sum())
    return table / factor, factor


def cell_odds_ratio(table: np.ndarray, i: int, j: int) -> float:
    """Odds ratio between binary ``L_i`` and ``L_j`` (1-based) from a joint table."""
    K = table.ndim
    other = tuple(k for k in range(K) if k not in (i - 1, j - 1))
    t2 = table.sum(axis=other)
    if i > j:
        t2 = t2.T
    return float(t2[1, 1] * t2[0, 0] / (t2[1, 0] * t2[0, 1]))
