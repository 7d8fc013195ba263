"""Consistent scoring functions for mean and quantile forecasts.

Three built-in loss families are supported:

* squared error          ``S(x, y) = (x - y)^2``            (mean functional)
* QLIKE                  ``S(x, y) = y/x - log(y/x) - 1``   (mean functional, positive data)
* check loss at level a  ``S(x, y) = (1{y <= x} - a)(x - y)``  (a-quantile functional)

Squared error and QLIKE are the two members of the mean (Bregman-type) family
shipped here; the check loss is the piecewise-linear quantile loss with the
identity weight function.  ``bregman_score`` and ``gpl_score`` are the generic
construction points should another convex generator / weight function ever be
needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

MEAN = "mean"
QUANTILE = "quantile"

SQUARED_ERROR = "se"
QLIKE = "qlike"
CHECK_LOSS = "check"

_SMOOTH_FAMILIES = (SQUARED_ERROR, QLIKE)


@dataclass(frozen=True)
class ScoringSpec:
    """Target functional plus loss family.

    Parameters
    ----------
    family : str
        One of ``"se"``, ``"qlike"``, ``"check"``.
    functional : str
        ``"mean"`` or ``"quantile"``; derived from the family if omitted.
    level : float, optional
        Quantile level in (0, 1); required for the check loss.
    domain_floor : float
        Positivity floor for QLIKE arguments.  Values at or below the floor
        are rejected rather than clamped, since clamping would bias the
        downstream decomposition.
    """

    family: str
    functional: str = ""
    level: float | None = None
    domain_floor: float = field(default=1e-12)

    def __post_init__(self):
        if self.family not in (SQUARED_ERROR, QLIKE, CHECK_LOSS):
            raise InputError(f"unknown loss family {self.family!r}")
        functional = self.functional or (QUANTILE if self.family == CHECK_LOSS else MEAN)
        object.__setattr__(self, "functional", functional)
        if self.family in (SQUARED_ERROR, QLIKE) and self.functional != MEAN:
            raise InputError(f"{self.family} requires the mean functional")
        if self.family == CHECK_LOSS:
            if self.functional != QUANTILE:
                raise InputError("check loss requires the quantile functional")
            if self.level is None or not 0.0 < self.level < 1.0:
                raise InputError("check loss requires a quantile level in (0, 1)")
        elif self.level is not None:
            raise InputError("quantile level is only meaningful for the check loss")

    @classmethod
    def squared_error(cls) -> "ScoringSpec":
        return cls(family=SQUARED_ERROR)

    @classmethod
    def qlike(cls, domain_floor: float = 1e-12) -> "ScoringSpec":
        return cls(family=QLIKE, domain_floor=domain_floor)

    @classmethod
    def check_loss(cls, level: float) -> "ScoringSpec":
        return cls(family=CHECK_LOSS, level=level)

    @property
    def is_smooth(self) -> bool:
        return self.family in _SMOOTH_FAMILIES


def bregman_score(phi, phi_d1, x, y):
    """Mean score generated by a strictly convex ``phi``: phi(y)-phi(x)-phi'(x)(y-x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return phi(y) - phi(x) - phi_d1(x) * (y - x)


def gpl_score(g, level, x, y):
    """Quantile score with non-decreasing weight ``g``: (1{y<=x} - level)(g(x)-g(y))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return ((y <= x).astype(float) - level) * (g(x) - g(y))


def _check_qlike_domain(spec: ScoringSpec, x, y):
    bad_x = ~(x > spec.domain_floor)
    bad_y = ~(y > spec.domain_floor)
    if np.any(bad_x) or np.any(bad_y):
        which = "forecast" if np.any(bad_x) else "realization"
        idx = int(np.argmax(bad_x if np.any(bad_x) else bad_y))
        raise InputError(
            f"QLIKE requires strictly positive values above {spec.domain_floor:g}; "
            f"offending {which} at position {idx}"
        )


def score(spec: ScoringSpec, x, y):
    """Evaluate the loss S(x, y) elementwise.  Non-negative for all built-in families."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.family == SQUARED_ERROR:
        return (x - y) ** 2
    if spec.family == QLIKE:
        _check_qlike_domain(spec, x, y)
        r = y / x
        return r - np.log(r) - 1.0
    return ((y <= x).astype(float) - spec.level) * (x - y)


def score_d1(spec: ScoringSpec, x, y):
    """First partial derivative of the score in the forecast argument (smooth families)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.family == SQUARED_ERROR:
        return 2.0 * (x - y)
    if spec.family == QLIKE:
        _check_qlike_domain(spec, x, y)
        return (x - y) / x**2
    raise NotImplementedError("check loss is not differentiable in its first argument")


def score_d2(spec: ScoringSpec, x, y):
    """Second partial derivative of the score in the forecast argument (smooth families)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.family == SQUARED_ERROR:
        return np.full(np.broadcast(x, y).shape, 2.0)
    if spec.family == QLIKE:
        _check_qlike_domain(spec, x, y)
        return (2.0 * y - x) / x**3
    raise NotImplementedError("check loss is not twice differentiable")


def identification(spec: ScoringSpec, x, y):
    """Identification (moment) function: 2(x-y) for the mean, 1{y<=x} - level for quantiles."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.functional == MEAN:
        return 2.0 * (x - y)
    return (y <= x).astype(float) - spec.level
