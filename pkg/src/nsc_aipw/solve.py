"""Root finding for estimating equations: damped Newton and logistic IRLS."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DataError, NumericalError, SeparationError

TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 20
SEPARATION_BOUND = 50.0


@dataclass
class FitResult:
    """Outcome of one root-finding problem.

    ``covariance_contribution`` holds the per-record estimating-function
    values at the root (``n x m``) when the caller asks for them; the stacked
    sandwich uses these.
    """

    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_residual_norm: float
    covariance_contribution: np.ndarray | None = field(default=None, repr=False)


def numeric_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian with step ``step * (1 + |x_k|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        h = step * (1.0 + abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * h))
    return np.column_stack(cols) if cols else np.empty((0, 0))


def newton_solve(f: Callable[[np.ndarray], np.ndarray], x0, *,
                 jac: Callable[[np.ndarray], np.ndarray] | None = None,
                 tol: float = TOL, max_iter: int = MAX_ITER, max_halvings: int = MAX_HALVINGS,
                 bound: float | None = SEPARATION_BOUND, polish: int = 2) -> FitResult:
    """Damped Newton on ``f(x) = 0``.

    A step is halved until the Euclidean residual norm decreases. Convergence
    is declared on the sup-norm; after that up to ``polish`` further full
    steps are taken while they keep reducing the residual, which costs little
    and drives exactly-solvable population problems to rounding level.
    """
    x = np.array(x0, dtype=float)
    if x.size == 0:
        return FitResult(x, True, 0, 0.0)
    jac = jac or (lambda z: numeric_jacobian(f, z))
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        raise DataError(f"estimating function returned shape {fx.shape} for {x.size} parameters")
    it = 0
    polished = 0
    converged = bool(np.max(np.abs(fx)) <= tol)
    while it < max_iter:
        if converged and polished >= polish:
            break
        it += 1
        J = np.asarray(jac(x), dtype=float)
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(J, -fx, rcond=None)
        if not np.isfinite(step).all():
            raise NumericalError("singular Jacobian in Newton iteration")
        norm0 = np.linalg.norm(fx)
        t = 1.0
        for _ in range(max_halvings + 1):
            xn = x + t * step
            fn = np.asarray(f(xn), dtype=float)
            if np.isfinite(fn).all() and np.linalg.norm(fn) < norm0:
                break
            t *= 0.5
        else:
            if converged:
                break
            raise ConvergenceError(f"line search failed after {max_halvings} halvings "
                                   f"(residual {np.max(np.abs(fx)):.3g})")
        x, fx = xn, fn
        if bound is not None and np.max(np.abs(x)) > bound:
            raise SeparationError(f"coefficient magnitude exceeded {bound}")
        if converged:
            polished += 1
        converged = converged or bool(np.max(np.abs(fx)) <= tol)
    if not converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations "
                               f"(residual {np.max(np.abs(fx)):.3g})")
    return FitResult(x, True, it, float(np.max(np.abs(fx))))


def logistic_irls(Z: np.ndarray, y: np.ndarray, w: np.ndarray | None = None, *,
                  offset: np.ndarray | None = None, tol: float = TOL,
                  max_iter: int = MAX_ITER, bound: float = SEPARATION_BOUND) -> FitResult:
    """Weighted logistic regression ``logit P(y=1) = offset + Z @ beta``.

    Columns are centred (when a constant column is present) and scaled before
    fitting, so the separation bound applies on a unit-free scale; the
    returned coefficients refer to the original columns. Convergence is
    judged on the sup-norm of the mean score. Coefficients beyond ``bound``
    or a response that never varies raise ``SeparationError``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = Z.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    W = w.sum()
    if W <= 0:
        raise DataError("no records for logistic fit")
    ybar = (w * y).sum() / W
    if ybar <= 0 or ybar >= 1:
        raise SeparationError("response does not vary among the fitted records")

    T = _standardizer(Z, w / W)
    Zs = Z @ T

    def score(b):
        return Zs.T @ (w * (y - expit(off + Zs @ b))) / W

    def jac(b):
        mu = expit(off + Zs @ b)
        return -(Zs * (w * mu * (1 - mu))[:, None]).T @ Zs / W

    fit = newton_solve(score, np.zeros(m), jac=jac, tol=tol, max_iter=max_iter, bound=bound)
    fit.coefficients = T @ fit.coefficients
    return fit


def _standardizer(Z: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Matrix ``T`` such that ``Z @ T`` has centred, unit-variance columns.

    Centring uses the first constant column, if any; constant columns are
    left unchanged.
    """
    m = Z.shape[1]
    T = np.eye(m)
    mean = p @ Z
    sd = np.sqrt(np.maximum(p @ (Z - mean) ** 2, 0.0))
    const = [k for k in range(m) if sd[k] <= 1e-12 * (1.0 + abs(mean[k])) and mean[k] != 0]
    for k in range(m):
        if k in const or sd[k] == 0:
            continue
        T[k, k] = 1.0 / sd[k]
        if const:
            c = const[0]
            T[c, k] = -mean[k] / (sd[k] * mean[c])
    return T


def weighted_lstsq(Z: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least squares via the normal equations (raises on rank deficiency)."""
    Zw = Z * w[:, None]
    G = Zw.T @ Z
    if Z.shape[1] and np.linalg.matrix_rank(G) < Z.shape[1]:
        raise NumericalError("rank-deficient design in weighted regression")
    return np.linalg.solve(G, Zw.T @ y)
