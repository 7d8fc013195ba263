"""Linear recalibration regressions fitted by minimizing the evaluation score itself.

The design matrix always carries an intercept in column 0 and the forecast in
column 1 (plus optional further covariates).  Each loss family gets the solver
it needs:

* squared error: closed-form least squares on a rank-revealing column subset;
* QLIKE: damped Newton with step-halving that keeps every fitted value
  strictly positive;
* check loss: smoothed iteratively-reweighted least squares, refined by an
  exact vertex search, with a final subgradient optimality certificate.

The reference fit is the unconditional functional: the sample mean for the
two mean losses, the lower sample quantile for the check loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .errors import EstimationError, InputError
from .scoring import CHECK_LOSS, MEAN, QLIKE, SQUARED_ERROR, ScoringSpec, score, score_d1, score_d2

_COLLIN_TOL = 1e-9


@dataclass(frozen=True)
class DesignMatrix:
    """T x k recalibration design; column 0 is the intercept, column 1 the forecast."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2:
            raise InputError("design matrix must be two-dimensional")
        if not np.allclose(W[:, 0], 1.0, rtol=0.0, atol=0.0):
            raise InputError("design matrix column 0 must be identically 1")
        if W.shape[0] <= W.shape[1]:
            raise InputError("need more observations than design columns")
        object.__setattr__(self, "W", W)

    @classmethod
    def from_forecast(cls, x, extra=None) -> "DesignMatrix":
        x = np.asarray(x, dtype=float).ravel()
        cols = [np.ones_like(x), x]
        if extra is not None:
            extra = np.atleast_2d(np.asarray(extra, dtype=float))
            if extra.shape[0] != x.size:
                extra = extra.T
            if extra.shape[0] != x.size:
                raise InputError("extra covariates are not aligned with the forecast series")
            cols.extend(extra[:, j] for j in range(extra.shape[1]))
        return cls(np.column_stack(cols))

    @property
    def shape(self):
        return self.W.shape


@dataclass
class FitResult:
    """Outcome of one recalibration regression."""

    theta_hat: np.ndarray
    fitted: np.ndarray
    objective: float
    converged: bool
    iterations: int
    rank_deficient: bool
    rank: int


def _as_design(W) -> np.ndarray:
    if isinstance(W, DesignMatrix):
        return W.W
    return DesignMatrix(np.asarray(W, dtype=float)).W


def _independent_columns(W: np.ndarray) -> np.ndarray:
    """Greedy left-to-right selection of linearly independent columns.

    Later columns that are (numerically) in the span of earlier ones are
    dropped, so a constant forecast loses against the intercept.
    """
    T, k = W.shape
    keep = np.zeros(k, dtype=bool)
    basis = np.empty((T, 0))
    for j in range(k):
        col = W[:, j]
        if basis.shape[1]:
            resid = col - basis @ np.linalg.lstsq(basis, col, rcond=None)[0]
        else:
            resid = col
        if np.linalg.norm(resid) > _COLLIN_TOL * max(1.0, np.linalg.norm(col)):
            keep[j] = True
            basis = np.column_stack([basis, col])
    return keep


def _pad(theta_kept: np.ndarray, keep: np.ndarray) -> np.ndarray:
    theta = np.zeros(keep.size)
    theta[keep] = theta_kept
    return theta


def lower_quantile(y, level: float) -> float:
    """Left-continuous inverse of the empirical CDF (the lower sample quantile)."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise InputError("empty sample")
    return float(np.quantile(y, level, method="inverted_cdf"))


def fit_reference(spec: ScoringSpec, y) -> float:
    """Unconditional reference forecast: sample mean (Bregman) or lower sample quantile."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise InputError("empty sample")
    if spec.functional == MEAN:
        if spec.family == QLIKE and np.any(y <= spec.domain_floor):
            raise InputError("QLIKE reference requires strictly positive realizations")
        return float(np.mean(y))
    return lower_quantile(y, spec.level)


def _objective(spec: ScoringSpec, W, theta, y) -> float:
    return float(np.mean(score(spec, W @ theta, y)))


def fit_linear(spec: ScoringSpec, W, y) -> FitResult:
    """Minimize the empirical average score of ``W @ theta`` against ``y``."""
    W = _as_design(W)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != W.shape[0]:
        raise InputError("realizations are not aligned with the design matrix")

    keep = _independent_columns(W)
    Wk = W[:, keep]
    rank = int(keep.sum())
    rank_deficient = rank < W.shape[1]

    if spec.family == SQUARED_ERROR:
        theta_k, iters, converged = _fit_se(Wk, y), 0, True
    elif spec.family == QLIKE:
        theta_k, iters, converged = _fit_qlike(spec, Wk, y)
    else:
        theta_k, iters, converged = _fit_check(spec, Wk, y)

    theta = _pad(theta_k, keep)
    fitted = W @ theta
    return FitResult(
        theta_hat=theta,
        fitted=fitted,
        objective=_objective(spec, W, theta, y),
        converged=converged,
        iterations=iters,
        rank_deficient=rank_deficient,
        rank=rank,
    )


def _fit_se(W: np.ndarray, y: np.ndarray) -> np.ndarray:
    theta, *_ = np.linalg.lstsq(W, y, rcond=None)
    return theta


# --- QLIKE: damped Newton with positivity-preserving line search -------------

_QLIKE_MAX_ITER = 200
_QLIKE_GTOL = 1e-10


def _qlike_feasible_start(spec: ScoringSpec, W: np.ndarray, y: np.ndarray) -> np.ndarray:
    theta = _fit_se(W, y)
    if np.min(W @ theta) > spec.domain_floor:
        return theta
    theta = np.zeros(W.shape[1])
    theta[0] = float(np.mean(y))
    if theta[0] <= spec.domain_floor:
        raise EstimationError("no positive-fitted starting point found for the QLIKE fit")
    return theta


def _qlike_newton(spec, W, y, theta):
    obj = _objective(spec, W, theta, y)
    iters = 0
    converged = False
    for _ in range(_QLIKE_MAX_ITER):
        fitted = W @ theta
        g = (score_d1(spec, fitted, y) @ W) / y.size
        if np.linalg.norm(g) <= _QLIKE_GTOL * (1.0 + abs(obj)):
            converged = True
            break
        H = (W * score_d2(spec, fitted, y)[:, None]).T @ W / y.size
        direction = None
        ridge = 0.0
        for _ in range(8):
            try:
                cand = np.linalg.solve(H + ridge * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                cand = None
            if cand is not None and g @ cand < 0:
                direction = cand
                break
            ridge = 10.0 * ridge if ridge else 1e-8 * (1.0 + np.abs(H).max())
        if direction is None:
            direction = -g
        step = 1.0
        improved = False
        for _ in range(60):
            trial = theta + step * direction
            if np.min(W @ trial) > spec.domain_floor:
                trial_obj = _objective(spec, W, trial, y)
                if trial_obj <= obj + 1e-4 * step * (g @ direction):
                    theta, obj = trial, trial_obj
                    improved = True
                    break
            step *= 0.5
        iters += 1
        if not improved:
            break
    return theta, obj, iters, converged


def _fit_qlike(spec: ScoringSpec, W: np.ndarray, y: np.ndarray):
    if np.any(y <= spec.domain_floor):
        raise InputError("QLIKE requires strictly positive realizations")
    theta = _qlike_feasible_start(spec, W, y)
    theta, obj, iters, converged = _qlike_newton(spec, W, y, theta)

    # Restart from any feasible probe that beats the current optimum; the
    # objective is not globally convex and the probes anchor the decomposition
    # guarantees (identity line and reference constant).
    probes = []
    if W.shape[1] >= 2:
        identity = np.zeros(W.shape[1])
        identity[1] = 1.0
        probes.append(identity)
    ref = np.zeros(W.shape[1])
    ref[0] = float(np.mean(y))
    probes.append(ref)
    for probe in probes:
        if np.min(W @ probe) <= spec.domain_floor:
            continue
        if _objective(spec, W, probe, y) < obj - 1e-12:
            theta2, obj2, it2, conv2 = _qlike_newton(spec, W, y, probe)
            iters += it2
            if obj2 < obj:
                theta, obj, converged = theta2, obj2, conv2
    return theta, iters, converged


# --- check loss: smoothed IRLS, vertex polish, subgradient certificate -------

_IRLS_EPS_LEVELS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
_IRLS_MAX_INNER = 60


def _check_objective(level, W, theta, y):
    u = y - W @ theta
    return float(np.mean(u * (level - (u < 0))))


def _fit_check_irls(level, W, y, theta0):
    theta = theta0.copy()
    iters = 0
    for eps in _IRLS_EPS_LEVELS:
        for _ in range(_IRLS_MAX_INNER):
            u = y - W @ theta
            w = 1.0 / np.maximum(np.abs(u), eps)
            # asymmetric weights: |rho'(u)| = level on u>0 and 1-level on u<0
            w *= np.where(u >= 0, level, 1.0 - level)
            sw = np.sqrt(w)
            try:
                Ww = W * w[:, None]
                theta_new = np.linalg.solve(Ww.T @ W, Ww.T @ y)
            except np.linalg.LinAlgError:
                theta_new = np.linalg.lstsq(W * sw[:, None], y * sw, rcond=None)[0]
            iters += 1
            if np.max(np.abs(theta_new - theta)) <= 1e-12 * (1.0 + np.max(np.abs(theta))):
                theta = theta_new
                break
            theta = theta_new
    return theta, iters


def _vertex_polish(level, W, y, theta):
    """Exact search over interpolating vertices near the IRLS solution.

    The check-loss optimum generically interpolates k observations; trying all
    k-subsets of the closest candidates recovers it exactly.
    """
    T, k = W.shape
    u = np.abs(y - W @ theta)
    n_cand = min(T, k + 6)
    cand = np.argsort(u, kind="stable")[:n_cand]
    best_theta = theta
    best_obj = _check_objective(level, W, theta, y)
    for subset in combinations(cand, k):
        cand_theta = _interpolate(W, y, np.array(subset))
        if cand_theta is None:
            continue
        cand_obj = _check_objective(level, W, cand_theta, y)
        if cand_obj < best_obj - 1e-15:
            best_theta, best_obj = cand_theta, cand_obj
    return best_theta


def _interpolate(W, y, rows):
    A = W[rows]
    try:
        theta = np.linalg.solve(A, y[rows])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > 1e10:
        return None
    return theta


def check_subgradient_certificate(level, W, y, theta, tol=1e-7) -> bool:
    """Verify 0 lies in the subdifferential of the empirical check loss at theta.

    Inactive observations contribute (1{y < fit} - level) * w_t; observations
    on the fitted hyperplane may take any weight in [-level, 1-level].  The
    certificate solves the induced linear feasibility problem.
    """
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    u = y - W @ theta
    scale = max(1.0, float(np.abs(W).sum(axis=0).max()))
    ztol = 1e-9 * (1.0 + np.max(np.abs(y)))
    active = np.abs(u) <= ztol
    inactive = ~active
    if inactive.any():
        g_fixed = ((u[inactive] < 0).astype(float) - level) @ W[inactive]
    else:
        g_fixed = np.zeros(W.shape[1])
    n_active = int(active.sum())
    if n_active == 0:
        return bool(np.max(np.abs(g_fixed)) <= tol * scale)
    A = W[active].T  # k x n_active
    # find z in [-level, 1-level]^n_active with A z = -g_fixed, allowing tol slack
    k = A.shape[0]
    n = A.shape[1]
    # minimize s  s.t.  -s <= (A z + g_fixed)_j <= s,  bounds on z
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.zeros((2 * k, n + 1))
    b_ub = np.zeros(2 * k)
    A_ub[:k, :n] = A
    A_ub[:k, -1] = -1.0
    b_ub[:k] = -g_fixed
    A_ub[k:, :n] = -A
    A_ub[k:, -1] = -1.0
    b_ub[k:] = g_fixed
    bounds = [(-level, 1.0 - level)] * n + [(0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        return False
    return bool(res.x[-1] <= tol * scale)


def _fit_check(spec: ScoringSpec, W: np.ndarray, y: np.ndarray):
    level = spec.level
    theta0 = _fit_se(W, y)
    theta, iters = _fit_check_irls(level, W, y, theta0)
    theta = _vertex_polish(level, W, y, theta)
    converged = check_subgradient_certificate(level, W, y, theta)
    if not converged:
        # widen the vertex candidate set once
        u = np.abs(y - W @ theta)
        T, k = W.shape
        cand = np.argsort(u, kind="stable")[: min(T, k + 10)]
        best_obj = _check_objective(level, W, theta, y)
        for subset in combinations(cand, k):
            cand_theta = _interpolate(W, y, np.array(subset))
            if cand_theta is None:
                continue
            cand_obj = _check_objective(level, W, cand_theta, y)
            if cand_obj < best_obj - 1e-15:
                theta, best_obj = cand_theta, cand_obj
        converged = check_subgradient_certificate(level, W, y, theta)
    return theta, iters, converged
