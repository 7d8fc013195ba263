"""Value-at-Risk backtest battery on hit (exceedance) series.

Every two-sided backtest is framed uniformly as a regression of the quantile
identification values  v_t = 1{y_t <= x_t} - alpha  on a covariate set, with a
Wald test that all coefficients vanish:

* UC   : constant only
* CC   : constant and the first lagged hit
* DQ   : constant and four lagged hits
* DQX  : DQ plus the current forecast

One-sided procedures: the Basel binomial traffic light and the two-moment
test with instruments (1, forecast).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom, chi2, norm

from .errors import EstimationError, InputError
from .inference import TestReport, vqr_test
from .longrun import HacOptions, hac_cov

_DQ_LAGS = 4


@dataclass(frozen=True)
class HitSeries:
    """Identification values of a VaR series: each entry is 1-alpha (hit) or -alpha."""

    v: np.ndarray
    alpha: float
    n_hits: int

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).ravel()
        ok = np.isclose(v, 1.0 - self.alpha) | np.isclose(v, -self.alpha)
        if not np.all(ok):
            raise InputError("hit series values must lie in {1 - alpha, -alpha}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "n_hits", int(np.isclose(v, 1.0 - self.alpha).sum()))

    @property
    def hit_freq(self) -> float:
        return self.n_hits / self.v.size


def make_hits(x, y, alpha: float) -> HitSeries:
    """Hit series v_t = 1{y_t <= x_t} - alpha for VaR forecasts x."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise InputError("forecast and realization series are not aligned")
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    v = (y <= x).astype(float) - alpha
    return HitSeries(v=v, alpha=alpha, n_hits=0)


def _wald_hc(G: np.ndarray, v: np.ndarray, name: str, notes=None) -> TestReport:
    """OLS of v on G and heteroskedasticity-robust Wald test that all coefficients are 0.

    Uses the HC1 finite-sample factor.  With very sparse hit series (small
    alpha, few exceedances) the joint Wald with several lagged-hit covariates
    is known to over-reject; sizes are reliable once the expected hit count is
    well above the covariate count.
    """
    notes = list(notes or [])
    T = v.size
    GtG = G.T @ G
    if np.linalg.cond(GtG) > 1e12:
        raise EstimationError(f"{name}: collinear backtest covariates")
    beta = np.linalg.solve(GtG, G.T @ v)
    resid = v - G @ beta
    meat = (G * resid[:, None] ** 2).T @ G * (T / max(T - G.shape[1], 1))
    bread = np.linalg.inv(GtG)
    cov = bread @ meat @ bread
    try:
        stat = float(beta @ np.linalg.solve(cov, beta))
    except np.linalg.LinAlgError:
        # zero-residual degenerate case: all mass on the point null
        if np.max(np.abs(beta)) <= 1e-12:
            return TestReport(name, 0.0, 1.0, "wald_hc", df_or_weights=G.shape[1], notes=notes + ["zero variance"])
        return TestReport(name, np.inf, 0.0, "wald_hc", df_or_weights=G.shape[1], notes=notes + ["zero variance"])
    dof = G.shape[1]
    return TestReport(name, stat, float(chi2.sf(stat, dof)), "wald_hc", df_or_weights=dof, notes=notes)


def regression_backtest(hits: HitSeries, which: str, x=None, lags: int | None = None) -> TestReport:
    """One of the regression-framed backtests UC, CC, DQ, DQX.

    ``lags`` overrides the lag depth of DQ/DQX (CC is DQ with one lag).
    Rows lost to lagging are dropped from the front of the sample.
    """
    which = which.upper()
    v = hits.v
    T = v.size
    if which == "UC":
        n_lags = 0
    elif which == "CC":
        n_lags = 1
    elif which in ("DQ", "DQX"):
        n_lags = _DQ_LAGS if lags is None else int(lags)
    else:
        raise InputError(f"unknown backtest {which!r}")
    if which == "DQX" and x is None:
        raise InputError("DQX needs the forecast series")

    cols = [np.ones(T - n_lags)]
    if which == "DQX":
        x = np.asarray(x, dtype=float).ravel()
        if x.size != T:
            raise InputError("forecast series is not aligned with the hit series")
        cols.append(x[n_lags:])
    for lag in range(1, n_lags + 1):
        cols.append(v[n_lags - lag : T - lag])
    G = np.column_stack(cols)
    target = v[n_lags:]
    if target.size <= G.shape[1] + 5:
        raise InputError(f"{which}: sample too short for {G.shape[1]} covariates")

    notes = []
    if hits.n_hits in (0, T):
        notes.append("degenerate hit series (all or no hits)")
        if which != "UC":
            lag_cols = G[:, -n_lags:] if n_lags else G[:, :0]
            if n_lags and np.allclose(lag_cols.std(axis=0), 0.0):
                return TestReport(which.lower(), np.nan, np.nan, "wald_hc", notes=notes + ["constant lagged-hit column"])
    return _wald_hc(G, target, which.lower(), notes)


def basel_traffic_light(T: int, alpha: float, n_hits: int):
    """Basel traffic-light zone and binomial exceedance p-value.

    The p-value is P(Bin(T, alpha) >= n_hits).  Zones generalize the 250-day /
    99% construction: yellow starts where the binomial CDF reaches 0.95, red
    where it reaches 0.9999.
    """
    if n_hits > T or n_hits < 0:
        raise InputError("hit count must lie in [0, T]")
    p = float(binom.sf(n_hits - 1, T, alpha))
    cdf = float(binom.cdf(n_hits, T, alpha))
    if cdf < 0.95:
        zone = "green"
    elif cdf < 0.9999:
        zone = "yellow"
    else:
        zone = "red"
    return zone, p


def nz_test(hits: HitSeries, x, hac: HacOptions = HacOptions()) -> TestReport:
    """One-sided moment test that both components of mean((1, x_t) v_t) are <= 0.

    Each moment is standardized by its HAC standard error; the combined
    p-value is the Bonferroni bound over the two one-sided tests.
    """
    x = np.asarray(x, dtype=float).ravel()
    v = hits.v
    if x.size != v.size:
        raise InputError("forecast series is not aligned with the hit series")
    G = np.column_stack([np.ones_like(x), x])
    mom_series = G * v[:, None]
    moments = mom_series.mean(axis=0)
    centered = mom_series - moments
    lrv = hac_cov(centered, hac)

    notes = []
    if np.mean(x) < 0:
        notes.append("negative mean forecast: moment orientation follows the (1, x) instrument convention")
    p_each = []
    for j in range(2):
        var_j = lrv.matrix[j, j]
        if var_j <= 0.0 or j in lrv.degenerate_cols:
            notes.append(f"degenerate variance for moment {j}")
            p_each.append(1.0 if moments[j] <= 0 else 0.0)
            continue
        t_j = moments[j] / np.sqrt(var_j / v.size)
        p_each.append(float(norm.sf(t_j)))
    stat = float(max(moments / np.sqrt(np.maximum(np.diag(lrv.matrix), 1e-300) / v.size)))
    p = float(min(1.0, 2.0 * min(p_each)))
    return TestReport(
        "nz",
        stat,
        p,
        "moment_one_sided",
        components={"p_intercept": p_each[0], "p_forecast": p_each[1]},
        notes=notes,
    )


def vqr_backtest(x, y, alpha: float, hac: HacOptions = HacOptions()) -> TestReport:
    """Quantile-regression calibration backtest: (intercept, slope) = (0, 1)."""
    rep = vqr_test(x, y, alpha, null="intercept_and_slope", hac=hac)
    rep.name = "vqr"
    return rep
