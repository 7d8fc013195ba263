"""Long-run (HAC) covariance estimation and the quadratic-form nuisance matrices.

The default estimator is the quadratic spectral kernel with the Andrews (1991)
AR(1)-implied data-driven bandwidth and no prewhitening; a Bartlett kernel and
fixed bandwidths are available.  Kernel weights below ~1e-5 are truncated,
which is far inside the sampling noise of the autocovariances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, InputError
from .scoring import ScoringSpec, score_d1, score_d2

KERNEL_QS = "qs"
KERNEL_BARTLETT = "bartlett"

_QS_ENVELOPE_CUT = 150.0  # lag/bandwidth ratio beyond which QS weights are dropped
_DEGENERATE_TOL = 1e-14


@dataclass(frozen=True)
class HacOptions:
    """Kernel and bandwidth selection for HAC estimation.

    ``bandwidth`` is either the string ``"andrews"`` or a fixed non-negative
    float; 0 reduces the estimator to the plain sample covariance.
    """

    kernel: str = KERNEL_QS
    bandwidth: object = "andrews"

    def __post_init__(self):
        if self.kernel not in (KERNEL_QS, KERNEL_BARTLETT):
            raise InputError(f"unknown HAC kernel {self.kernel!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "andrews":
                raise InputError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif float(self.bandwidth) < 0:
            raise InputError("fixed bandwidth must be non-negative")


@dataclass
class LongRunCov:
    matrix: np.ndarray
    bandwidth: float
    kernel: str
    prewhitened: bool = False
    degenerate_cols: tuple = ()
    singular: bool = False

    def sqrt(self) -> np.ndarray:
        """Symmetric PSD square root; negative eigenvalue dust is clipped to 0 here only."""
        vals, vecs = np.linalg.eigh(self.matrix)
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T


def qs_weight(x):
    """Quadratic spectral kernel, normalized so the weight at 0 is 1."""
    x = np.asarray(x, dtype=float)
    z = 1.2 * np.pi * x
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    w = 3.0 / zs**2 * (np.sin(zs) / zs - np.cos(zs))
    return np.where(small, 1.0 - z**2 / 10.0, w)


def bartlett_weight(x):
    x = np.asarray(x, dtype=float)
    return np.clip(1.0 - np.abs(x), 0.0, None)


def andrews_bandwidth(series: np.ndarray, kernel: str = KERNEL_QS) -> float:
    """AR(1)-implied automatic bandwidth of Andrews (1991)."""
    u = np.atleast_2d(np.asarray(series, dtype=float))
    if u.shape[0] == 1:
        u = u.T
    T = u.shape[0]
    num = 0.0
    den = 0.0
    for j in range(u.shape[1]):
        col = u[:, j]
        denom = float(col[:-1] @ col[:-1])
        if denom <= _DEGENERATE_TOL * T:
            continue
        rho = float(col[1:] @ col[:-1]) / denom
        rho = float(np.clip(rho, -0.9999, 0.9999))
        resid = col[1:] - rho * col[:-1]
        sigma2 = float(resid @ resid) / (T - 1)
        if sigma2 <= 0.0:
            continue
        if kernel == KERNEL_QS:
            num += 4.0 * rho**2 * sigma2**2 / (1.0 - rho) ** 8
        else:
            num += 4.0 * rho**2 * sigma2**2 / ((1.0 - rho) ** 6 * (1.0 + rho) ** 2)
        den += sigma2**2 / (1.0 - rho) ** 4
    if den <= 0.0:
        return 0.0
    alpha = num / den
    if kernel == KERNEL_QS:
        return 1.3221 * (alpha * T) ** 0.2
    return 1.1447 * (alpha * T) ** (1.0 / 3.0)


def _max_lag(T: int, bandwidth: float, kernel: str) -> int:
    if bandwidth <= 0.0:
        return 0
    if kernel == KERNEL_BARTLETT:
        return min(T - 1, int(np.ceil(bandwidth)))
    return min(T - 1, int(np.ceil(_QS_ENVELOPE_CUT * bandwidth)))


def hac_cov(series, options: HacOptions = HacOptions()) -> LongRunCov:
    """Kernel-weighted sum of autocovariances of an already-centered series.

    Parameters
    ----------
    series : (T, m) array
        Centered observations; a 1-d array is treated as a single column.
    options : HacOptions
        Kernel and bandwidth rule.

    With bandwidth 0 the result equals the lag-0 sample covariance exactly.
    """
    u = np.atleast_2d(np.asarray(series, dtype=float))
    if u.shape[0] == 1 and u.shape[1] > 1:
        u = u.T
    T, m = u.shape
    if T < 10:
        raise InputError("HAC estimation needs at least 10 observations")

    var0 = np.einsum("ij,ij->j", u, u) / T
    scale = max(var0.max(), _DEGENERATE_TOL)
    degenerate = tuple(int(j) for j in np.nonzero(var0 <= _DEGENERATE_TOL * scale)[0])
    live = np.array([j for j in range(m) if j not in degenerate], dtype=int)
    ul = u[:, live]

    if isinstance(options.bandwidth, str):
        bw = andrews_bandwidth(ul, options.kernel) if live.size else 0.0
    else:
        bw = float(options.bandwidth)
    weight_fn = qs_weight if options.kernel == KERNEL_QS else bartlett_weight

    omega_live = ul.T @ ul / T
    L = _max_lag(T, bw, options.kernel)
    for lag in range(1, L + 1):
        w = float(weight_fn(lag / bw))
        if w == 0.0:
            continue
        gamma = ul[lag:].T @ ul[:-lag] / T
        omega_live += w * (gamma + gamma.T)

    omega = np.zeros((m, m))
    omega[np.ix_(live, live)] = omega_live
    omega = 0.5 * (omega + omega.T)

    singular = bool(live.size < m)
    if live.size:
        eigvals = np.linalg.eigvalsh(omega_live)
        if eigvals.min() <= 1e-12 * max(eigvals.max(), _DEGENERATE_TOL):
            singular = True
    return LongRunCov(
        matrix=omega,
        bandwidth=bw,
        kernel=options.kernel,
        degenerate_cols=degenerate,
        singular=singular,
    )


def omega_hat(dec1, dec2, options: HacOptions = HacOptions()) -> LongRunCov:
    """HAC covariance of the demeaned per-observation score 5-vector.

    The columns are (original1, recalibrated1, original2, recalibrated2,
    reference); population parameters are replaced by their plug-in fits.
    Both decompositions must share the realizations and the scoring function,
    which makes their reference score series identical.
    """
    if dec1.per_obs.shape[0] != dec2.per_obs.shape[0]:
        raise InputError("decompositions cover different sample sizes")
    if not np.array_equal(dec1.per_obs[:, 2], dec2.per_obs[:, 2]):
        raise InputError("decompositions do not share realizations and scoring function")
    series = np.column_stack(
        [
            dec1.per_obs[:, 0],
            dec1.per_obs[:, 1],
            dec2.per_obs[:, 0],
            dec2.per_obs[:, 1],
            dec1.per_obs[:, 2],
        ]
    )
    series = series - series.mean(axis=0)
    return hac_cov(series, options)


@dataclass
class QuadFormNuisance:
    """Plug-in curvature and score-gradient matrices for the boundary-case tests."""

    upsilon: np.ndarray
    h_inverse: np.ndarray
    pi: LongRunCov


def quadform_nuisance(spec: ScoringSpec, W, y, theta_hat, r_hat, options: HacOptions = HacOptions()) -> QuadFormNuisance:
    """Estimate the curvature matrix, its reference-anchored variant and the
    long-run covariance of the score-gradient series.

    Only smooth loss families are supported; the quantile route goes through
    the dedicated quantile-regression Wald test instead.
    """
    if not spec.is_smooth:
        raise NotImplementedError("quadratic-form nuisance matrices need a smooth loss family")
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    T = y.size

    fitted = W @ theta_hat
    upsilon = (W * score_d2(spec, fitted, y)[:, None]).T @ W / T

    s2_ref = score_d2(spec, np.full_like(y, r_hat), y)
    a_ref = (W * s2_ref[:, None]).T @ W / T
    mean_s2_ref = float(np.mean(s2_ref))
    try:
        a_ref_inv = np.linalg.inv(a_ref)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular curvature matrix at the reference fit") from exc
    if abs(mean_s2_ref) <= _DEGENERATE_TOL:
        raise EstimationError("degenerate second derivative at the reference fit")
    h_inverse = a_ref_inv.copy()
    h_inverse[0, 0] -= 1.0 / mean_s2_ref

    grad_series = W * score_d1(spec, fitted, y)[:, None]
    grad_series = grad_series - grad_series.mean(axis=0)
    pi = hac_cov(grad_series, options)

    # Upsilon must be invertible for the boundary statistic
    if np.linalg.cond(upsilon) > 1e12:
        raise EstimationError("singular curvature matrix in the recalibration fit")
    return QuadFormNuisance(upsilon=upsilon, h_inverse=h_inverse, pi=pi)
