"""Empirical score decomposition into miscalibration, discrimination and uncertainty.

The average score of a forecast splits as  S = MCB - DSC + UNC  where

* MCB is the score improvement achievable by linear recalibration,
* DSC the improvement of the recalibrated forecast over the best constant,
* UNC the score of that constant (forecast-independent).

The identity is algebraic and holds to machine precision; non-negativity of
MCB and DSC is guaranteed by fitting the recalibration with the same scoring
function used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, InputError
from .recalibration import DesignMatrix, fit_linear, fit_reference, lower_quantile
from .scoring import MEAN, ScoringSpec, score

NONNEG_TOL = 1e-9


@dataclass
class Decomposition:
    """Score decomposition of one forecast series.

    ``per_obs`` holds the (original, recalibrated, reference) score triple for
    every observation; downstream long-run covariance estimation consumes the
    centered versions of exactly these series.
    """

    s_bar: float
    mcb: float
    dsc: float
    unc: float
    theta_hat: np.ndarray
    r_hat: float
    per_obs: np.ndarray
    fitted: np.ndarray
    spec: ScoringSpec
    rank_deficient: bool = False
    n_obs: int = 0

    def __post_init__(self):
        if self.n_obs == 0:
            self.n_obs = self.per_obs.shape[0]


def decompose(spec: ScoringSpec, x, y, extra=None) -> Decomposition:
    """Decompose the average score of forecasts ``x`` for realizations ``y``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise InputError("forecast and realization series are not aligned")
    design = DesignMatrix.from_forecast(x, extra)
    if y.size < design.shape[1] + 2:
        raise InputError(f"need at least {design.shape[1] + 2} observations")

    fit = fit_linear(spec, design, y)
    r_hat = fit_reference(spec, y)

    s_orig = score(spec, x, y)
    s_recal = score(spec, fit.fitted, y)
    s_ref = score(spec, np.full_like(y, r_hat), y)

    s_bar = float(np.mean(s_orig))
    s_recal_bar = float(np.mean(s_recal))
    s_ref_bar = float(np.mean(s_ref))

    mcb = s_bar - s_recal_bar
    dsc = s_ref_bar - s_recal_bar
    unc = s_ref_bar
    if mcb < -NONNEG_TOL or dsc < -NONNEG_TOL:
        raise EstimationError(
            f"recalibration fit violated the non-negativity guarantee "
            f"(MCB={mcb:.3e}, DSC={dsc:.3e}); treating as solver failure"
        )

    return Decomposition(
        s_bar=s_bar,
        mcb=mcb,
        dsc=dsc,
        unc=unc,
        theta_hat=fit.theta_hat,
        r_hat=r_hat,
        per_obs=np.column_stack([s_orig, s_recal, s_ref]),
        fitted=fit.fitted,
        spec=spec,
        rank_deficient=fit.rank_deficient,
        n_obs=y.size,
    )


def split_mcb(spec: ScoringSpec, x, y):
    """Split miscalibration into its unconditional (bias) and conditional parts.

    The shift constant makes ``x + c`` unconditionally calibrated: the mean
    error for mean forecasts, the lower sample quantile of ``y - x`` for
    quantile forecasts.  Returns ``(umcb, cmcb)`` with ``umcb + cmcb == mcb``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    dec = decompose(spec, x, y)
    if spec.functional == MEAN:
        c = float(np.mean(y) - np.mean(x))
    else:
        c = lower_quantile(y - x, spec.level)
    shifted = float(np.mean(score(spec, x + c, y)))
    umcb = dec.s_bar - shifted
    cmcb = dec.mcb - umcb
    if umcb < -NONNEG_TOL or cmcb < -NONNEG_TOL:
        raise EstimationError(
            f"miscalibration split violated non-negativity (uMCB={umcb:.3e}, cMCB={cmcb:.3e})"
        )
    return umcb, cmcb
