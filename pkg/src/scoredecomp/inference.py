"""Hypothesis tests and p-value machinery for the score decomposition components.

Three asymptotic regimes are covered:

* strictly positive components: Gaussian tests built from selection vectors on
  the joint limit of (MCB1, DSC1, MCB2, DSC2); the selection (1,-1,-1,1)
  reproduces the classical test of equal average scores;
* boundary components (zero miscalibration / discrimination, smooth losses):
  generalized chi-square limits whose tail probabilities are computed with
  Imhof's inversion integral;
* quantile forecasts: Wald tests on the quantile regression of the
  realizations on (1, forecast), with a kernel density sandwich and a HAC
  middle matrix.

Two-sample hypotheses combine both regimes through
``max(p_plus, 2 * min(p0_1, p0_2))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.stats import chi2, norm

from .decomposition import Decomposition, decompose
from .errors import EstimationError, InputError
from .longrun import HacOptions, LongRunCov, hac_cov, omega_hat, quadform_nuisance
from .recalibration import DesignMatrix, fit_linear
from .scoring import CHECK_LOSS, ScoringSpec

# rows map the score 5-vector (orig1, recal1, orig2, recal2, reference) to
# (MCB1, DSC1, MCB2, DSC2)
XI = np.array(
    [
        [1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, -1.0, 1.0],
    ]
)
# single-forecast analogue on (orig, recal, reference)
XI_SINGLE = np.array([[1.0, -1.0, 0.0], [0.0, -1.0, 1.0]])

OMEGA_MCB = (1.0, 0.0, -1.0, 0.0)
OMEGA_DSC = (0.0, 1.0, 0.0, -1.0)
OMEGA_SCORE = (1.0, -1.0, -1.0, 1.0)

_EIG_DUST = 1e-12
_NEG_EIG_REL = 1e-8


@dataclass
class TestReport:
    """Outcome of a single hypothesis test."""

    name: str
    statistic: float
    p_value: float
    method: str
    components: dict = field(default_factory=dict)
    df_or_weights: object = None
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Imhof's method for quadratic forms in standard normals
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _imhof_theta(u, lam, q):
    u = np.asarray(u, dtype=float)
    return 0.5 * np.sum(np.arctan(np.multiply.outer(u, lam)), axis=-1) - 0.5 * q * u


def _imhof_theta_d1(u, lam, q):
    u = np.asarray(u, dtype=float)
    return 0.5 * np.sum(lam / (1.0 + np.multiply.outer(u, lam) ** 2), axis=-1) - 0.5 * q


def _imhof_integrand(u, lam, q):
    u = np.asarray(u, dtype=float)
    theta = _imhof_theta(u, lam, q)
    log_rho = 0.25 * np.sum(np.log1p(np.multiply.outer(u, lam) ** 2), axis=-1)
    return np.sin(theta) / (u * np.exp(log_rho))


def _envelope_tail(u, m, log_prod_sqrt_lam):
    # integral of the envelope 1/(u * rho(u)) from u to infinity
    return 2.0 / (np.pi * m) * np.exp(-0.5 * m * np.log(u) - log_prod_sqrt_lam)


def _accelerated_sum(terms):
    """Sum an (eventually) alternating series by repeated averaging of partial sums."""
    partial = np.cumsum(terms)
    estimate = partial[-1]
    err = abs(terms[-1])
    row = partial
    while row.size > 1:
        row = 0.5 * (row[1:] + row[:-1])
        new_err = abs(row[-1] - estimate)
        estimate = row[-1]
        if new_err < err:
            err = new_err
    return estimate, err


def imhof_pvalue(q, lambdas, abs_tol=1e-8):
    """P(sum_j lambda_j Z_j^2 > q) for iid standard normal Z_j via Imhof's integral.

    Weights below 1e-12 of the largest absolute weight are dropped; if nothing
    remains the distribution is a point mass at zero.  Absolute accuracy is
    well below 1e-6 for positive weight vectors.
    """
    lam = np.asarray(lambdas, dtype=float).ravel()
    q = float(q)
    amax = float(np.max(np.abs(lam))) if lam.size else 0.0
    if amax <= 0.0:
        return 1.0 if q <= 0.0 else 0.0
    lam = lam[np.abs(lam) >= _EIG_DUST * amax]
    lam = lam / amax
    q = q / amax
    m = lam.size
    all_pos = bool(np.all(lam > 0.0))
    if q <= 0.0:
        if all_pos:
            return 1.0
        if np.all(lam < 0.0):
            return 0.0
        q = 0.0
    if all_pos and q <= 1e-14:
        return 1.0

    log_prod_sqrt_lam = 0.5 * np.sum(np.log(np.abs(lam)))

    if q == 0.0:
        # mixed signs at the origin: envelope decays like u^(-1-m/2), no
        # forced oscillation; a plain adaptive pass is accurate enough here.
        val, _ = quad(lambda u: float(_imhof_integrand(u, lam, q)), 0.0, np.inf, limit=400)
        return float(np.clip(0.5 + val / np.pi, 0.0, 1.0))

    # beyond u0 the phase is strictly decreasing at rate at least q/4
    u0 = float(np.sqrt(2.0 * np.sum(1.0 / np.abs(lam)) / q))

    # first zero of sin(theta) past u0
    phase0 = float(_imhof_theta(u0, lam, q))
    n0 = int(np.floor(-phase0 / np.pi)) + 1
    u_prev = _imhof_zero(u0, n0, lam, q)

    # the stretch up to the first zero carries no sign change; integrate it in
    # logarithmically spaced pieces so huge ranges (tiny q) stay accurate
    knots = [0.0]
    step = min(1.0, u_prev)
    while step < u_prev / 8.0:
        knots.append(step)
        step *= 8.0
    knots.append(u_prev)
    head = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        piece, _ = quad(
            lambda u: float(_imhof_integrand(u, lam, q)),
            a,
            b,
            limit=200,
            epsabs=abs_tol / (10.0 * len(knots)),
            epsrel=1e-12,
        )
        head += piece

    total = head
    terms = []
    n = n0
    max_segments = 4096
    chunk = 16
    tail_err = np.inf
    while len(terms) < max_segments:
        zeros = [u_prev]
        for j in range(chunk):
            zeros.append(_imhof_zero(zeros[-1], n + j + 1, lam, q))
        zeros = np.asarray(zeros)
        a = zeros[:-1]
        b = zeros[1:]
        mid = 0.5 * (a + b)[:, None]
        half = 0.5 * (b - a)[:, None]
        nodes = mid + half * _GL_NODES[None, :]
        vals = _imhof_integrand(nodes, lam, q)
        seg = np.sum(vals * _GL_WEIGHTS[None, :] * half, axis=1)
        terms.extend(seg.tolist())
        u_prev = float(zeros[-1])
        n += chunk

        env_tail = _envelope_tail(u_prev, m, log_prod_sqrt_lam)
        acc, acc_err = _accelerated_sum(np.asarray(terms))
        tail_err = min(env_tail, acc_err / np.pi + env_tail * 1e-6)
        if env_tail < abs_tol:
            total += float(np.sum(terms))
            break
        if acc_err / np.pi < abs_tol:
            total += float(acc)
            break
    else:
        acc, _ = _accelerated_sum(np.asarray(terms))
        total += float(acc)

    return float(np.clip(0.5 + total / np.pi, 0.0, 1.0))


def _imhof_zero(u_start, n, lam, q):
    """Solve theta(u) = -n*pi on the strictly decreasing branch right of u_start."""
    target = -np.pi * n
    u = u_start + (float(_imhof_theta(u_start, lam, q)) - target) / (0.5 * q)
    lo = u_start
    for _ in range(30):
        f = float(_imhof_theta(u, lam, q)) - target
        if abs(f) < 1e-12 * (1.0 + abs(target)):
            return float(u)
        d = float(_imhof_theta_d1(u, lam, q))
        step = f / d
        u_new = u - step
        if not np.isfinite(u_new) or u_new <= lo:
            u_new = 0.5 * (u + lo) if f > 0 else u + 2.0 * np.pi / q
        u = u_new
    return float(u)


# ---------------------------------------------------------------------------
# Gaussian selection-vector tests (positive-component regime)
# ---------------------------------------------------------------------------


def gaussian_component_test(dec1: Decomposition, dec2: Decomposition, omega_sel, omega: LongRunCov) -> TestReport:
    """Normal test of a linear contrast of (MCB1, DSC1, MCB2, DSC2).

    The contrast variance comes from the long-run covariance of the score
    5-vector mapped through the decomposition Jacobian.  The selection
    (1,-1,-1,1) reproduces the classical equal-score test exactly.
    """
    omega_sel = np.asarray(omega_sel, dtype=float).ravel()
    if omega_sel.shape != (4,):
        raise InputError("selection vector must have 4 entries")
    if dec1.n_obs != dec2.n_obs:
        raise InputError("decompositions cover different sample sizes")
    T = dec1.n_obs
    v = np.array([dec1.mcb, dec1.dsc, dec2.mcb, dec2.dsc])
    contrast = float(omega_sel @ v)
    var = float(omega_sel @ XI @ omega.matrix @ XI.T @ omega_sel)

    notes = []
    scale = max(np.abs(omega.matrix).max(), 1.0)
    if var <= 1e-14 * scale:
        notes.append("degenerate contrast variance")
        if abs(contrast) <= 1e-12 * max(1.0, np.abs(v).max()):
            return TestReport("component_contrast", 0.0, 1.0, "gaussian", notes=notes)
        return TestReport("component_contrast", np.inf, 1.0, "gaussian", notes=notes + ["contrast nonzero"])

    stat = np.sqrt(T) * contrast / np.sqrt(var)
    p = 2.0 * norm.sf(abs(stat))
    return TestReport("component_contrast", float(stat), float(p), "gaussian", df_or_weights=None, notes=notes)


def combine_pvalues(p_plus, p0_1, p0_2) -> float:
    """Two-regime combination: max(p_plus, min(1, 2 min(p0_1, p0_2)))."""
    for p in (p_plus, p0_1, p0_2):
        if not 0.0 <= p <= 1.0:
            raise InputError("p-values must lie in [0, 1]")
    return float(max(p_plus, min(1.0, 2.0 * min(p0_1, p0_2))))


# ---------------------------------------------------------------------------
# boundary tests (zero miscalibration / zero discrimination)
# ---------------------------------------------------------------------------


def _quadform_weights(A: np.ndarray, pi_cov: LongRunCov):
    """Eigenvalues of 0.5 * Pi^(1/2) A Pi^(1/2), with small negative dust clipped."""
    half = pi_cov.sqrt()
    M = 0.5 * half @ A @ half
    M = 0.5 * (M + M.T)
    vals = np.linalg.eigvalsh(M)
    top = max(float(vals.max()), 0.0)
    if top <= 0.0:
        raise EstimationError("all quadratic-form weights vanish")
    floor = -_NEG_EIG_REL * top
    if np.any(vals < floor):
        raise EstimationError(
            f"quadratic-form weight matrix is indefinite (eigenvalues {np.sort(vals)[:3]}, "
            f"largest {top:.3e}); the asymptotic approximation does not apply"
        )
    vals = np.clip(vals, 0.0, None)
    return vals[vals > 0.0]


def _zero_test_smooth(spec, W, y, dec, which, hac):
    qn = quadform_nuisance(spec, W, y, dec.theta_hat, dec.r_hat, hac)
    if which == "mcb":
        A = np.linalg.inv(qn.upsilon)
        stat = dec.n_obs * dec.mcb
        name = "mcb_zero"
    else:
        A = qn.h_inverse
        stat = dec.n_obs * dec.dsc
        name = "dsc_zero"
    weights = _quadform_weights(A, qn.pi)
    p = imhof_pvalue(stat, weights)
    return TestReport(name, float(stat), float(p), "imhof", df_or_weights=[float(w) for w in weights])


def _zero_test_quantile(spec, x, y, extra, which, hac):
    G = DesignMatrix.from_forecast(x, extra).W
    k = G.shape[1]
    if which == "mcb":
        R = np.eye(k)
        r = np.zeros(k)
        r[1] = 1.0
        name = "mcb_zero"
    else:
        R = np.eye(k)[1:]
        r = np.zeros(k - 1)
        name = "dsc_zero"
    rep = _quantile_wald(G, y, spec.level, R, r, hac)
    rep.name = name
    return rep


def test_mcb_zero(spec: ScoringSpec, x, y, extra=None, hac: HacOptions = HacOptions()) -> TestReport:
    """Test that the population miscalibration of a single forecast is zero.

    Smooth families use the generalized chi-square limit of T * MCB; the check
    loss goes through the quantile-regression Wald test of (intercept, slope)
    = (0, 1).
    """
    if spec.family == CHECK_LOSS:
        return _zero_test_quantile(spec, x, y, extra, "mcb", hac)
    dec = decompose(spec, x, y, extra)
    W = DesignMatrix.from_forecast(np.asarray(x, dtype=float).ravel(), extra).W
    return _zero_test_smooth(spec, W, np.asarray(y, dtype=float).ravel(), dec, "mcb", hac)


def test_dsc_zero(spec: ScoringSpec, x, y, extra=None, hac: HacOptions = HacOptions()) -> TestReport:
    """Test that the population discrimination of a single forecast is zero."""
    if spec.family == CHECK_LOSS:
        return _zero_test_quantile(spec, x, y, extra, "dsc", hac)
    dec = decompose(spec, x, y, extra)
    W = DesignMatrix.from_forecast(np.asarray(x, dtype=float).ravel(), extra).W
    return _zero_test_smooth(spec, W, np.asarray(y, dtype=float).ravel(), dec, "dsc", hac)


# ---------------------------------------------------------------------------
# quantile regression Wald test (Mincer-Zarnowitz type for quantiles)
# ---------------------------------------------------------------------------


def _hall_sheather_bandwidth(level: float, T: int) -> float:
    z_a = norm.ppf(0.975)
    z_l = norm.ppf(level)
    return T ** (-1.0 / 3.0) * z_a ** (2.0 / 3.0) * (1.5 * norm.pdf(z_l) ** 2 / (2.0 * z_l**2 + 1.0)) ** (1.0 / 3.0)


def _quantile_wald(G, y, level, R, r, hac: HacOptions) -> TestReport:
    y = np.asarray(y, dtype=float).ravel()
    G = np.asarray(G, dtype=float)
    T = y.size
    notes = []
    if T < 50:
        notes.append("sample smaller than 50; Wald approximation is unreliable")

    spec = ScoringSpec.check_loss(level)
    fit = fit_linear(spec, G, y)
    if fit.rank_deficient:
        raise EstimationError("rank-deficient design: the quantile Wald test is undefined")
    beta = fit.theta_hat
    u = y - fit.fitted

    h_prob = _hall_sheather_bandwidth(level, T)
    lo = float(np.clip(level - h_prob, 1e-6, 1.0 - 1e-6))
    hi = float(np.clip(level + h_prob, 1e-6, 1.0 - 1e-6))
    iqr = np.subtract(*np.percentile(u, [75, 25]))
    sigma = min(float(np.std(u, ddof=1)), float(iqr) / 1.349) if iqr > 0 else float(np.std(u, ddof=1))
    if sigma <= 0:
        raise EstimationError("degenerate residuals in the quantile Wald test")
    h = sigma * (norm.ppf(hi) - norm.ppf(lo))

    inside = np.abs(u) <= h
    fhat = float(inside.sum()) / (2.0 * h * T)
    if fhat < 1e-10:
        raise EstimationError("conditional density estimate vanished at the fitted quantile")
    D = (G[inside].T @ G[inside]) / (2.0 * h * T)

    psi = G * ((y <= fit.fitted).astype(float) - level)[:, None]
    psi = psi - psi.mean(axis=0)
    M = hac_cov(psi, hac).matrix

    try:
        D_inv = np.linalg.inv(D)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular density-weighted design in the quantile Wald test") from exc
    cov = D_inv @ M @ D_inv / T

    diff = R @ beta - r
    mid = R @ cov @ R.T
    try:
        stat = float(diff @ np.linalg.solve(mid, diff))
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular restricted covariance in the quantile Wald test") from exc
    dof = R.shape[0]
    p = float(chi2.sf(stat, dof))
    return TestReport("vqr_wald", stat, p, "vqr_wald", df_or_weights=dof, notes=notes)


def vqr_test(x, y, level, null="intercept_and_slope", hac: HacOptions = HacOptions()) -> TestReport:
    """Quantile-regression calibration test of ``y`` on (1, x) at the given level.

    ``null`` selects the restriction: ``"intercept_and_slope"`` tests
    (0, 1), ``"slope_only"`` tests a zero slope.
    """
    x = np.asarray(x, dtype=float).ravel()
    G = DesignMatrix.from_forecast(x).W
    if null == "intercept_and_slope":
        R = np.eye(2)
        r = np.array([0.0, 1.0])
    elif null == "slope_only":
        R = np.array([[0.0, 1.0]])
        r = np.array([0.0])
    else:
        raise InputError(f"unknown null {null!r}")
    rep = _quantile_wald(G, y, level, R, r, hac)
    rep.name = f"vqr_{null}"
    return rep


# ---------------------------------------------------------------------------
# two-sample combined tests and confidence intervals
# ---------------------------------------------------------------------------


def _equal_component_test(spec, x1, x2, y, extra1, extra2, which, hac) -> TestReport:
    y = np.asarray(y, dtype=float).ravel()
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    dec1 = decompose(spec, x1, y, extra1)
    dec2 = decompose(spec, x2, y, extra2)
    om = omega_hat(dec1, dec2, hac)
    sel = OMEGA_MCB if which == "mcb" else OMEGA_DSC
    rep_plus = gaussian_component_test(dec1, dec2, sel, om)

    if spec.family == CHECK_LOSS:
        rep0_1 = _zero_test_quantile(spec, x1, y, extra1, which, hac)
        rep0_2 = _zero_test_quantile(spec, x2, y, extra2, which, hac)
    else:
        W1 = DesignMatrix.from_forecast(x1, extra1).W
        W2 = DesignMatrix.from_forecast(x2, extra2).W
        rep0_1 = _zero_test_smooth(spec, W1, y, dec1, which, hac)
        rep0_2 = _zero_test_smooth(spec, W2, y, dec2, which, hac)

    notes = list(rep_plus.notes)
    degenerate_plus = "contrast nonzero" in rep_plus.notes
    if degenerate_plus:
        p = min(1.0, 2.0 * min(rep0_1.p_value, rep0_2.p_value))
        notes.append("combined p-value taken from the boundary branch only")
    else:
        p = combine_pvalues(rep_plus.p_value, rep0_1.p_value, rep0_2.p_value)
    return TestReport(
        name=f"equal_{which}",
        statistic=rep_plus.statistic,
        p_value=p,
        method="combined",
        components={"p_plus": rep_plus.p_value, "p0_1": rep0_1.p_value, "p0_2": rep0_2.p_value},
        df_or_weights=None,
        notes=notes,
    )


def test_equal_mcb(spec: ScoringSpec, x1, x2, y, extra1=None, extra2=None, hac: HacOptions = HacOptions()) -> TestReport:
    """Combined test of equal miscalibration of two forecast series."""
    return _equal_component_test(spec, x1, x2, y, extra1, extra2, "mcb", hac)


def test_equal_dsc(spec: ScoringSpec, x1, x2, y, extra1=None, extra2=None, hac: HacOptions = HacOptions()) -> TestReport:
    """Combined test of equal discrimination of two forecast series."""
    return _equal_component_test(spec, x1, x2, y, extra1, extra2, "dsc", hac)


def test_equal_score(spec: ScoringSpec, x1, x2, y, extra1=None, extra2=None, hac: HacOptions = HacOptions()) -> TestReport:
    """Test of equal average scores: the selection vector (1,-1,-1,1)."""
    y = np.asarray(y, dtype=float).ravel()
    dec1 = decompose(spec, x1, y, extra1)
    dec2 = decompose(spec, x2, y, extra2)
    om = omega_hat(dec1, dec2, hac)
    rep = gaussian_component_test(dec1, dec2, OMEGA_SCORE, om)
    rep.name = "dm"
    return rep


def component_ci(spec: ScoringSpec, x, y, which, level, x2=None, extra=None, extra2=None, hac: HacOptions = HacOptions()):
    """Gaussian confidence interval for a component or a component difference.

    ``which`` is one of ``"mcb"``, ``"dsc"``, ``"mcb_diff"``, ``"dsc_diff"``;
    the differences require a second forecast series.  Lower endpoints of
    single-forecast intervals are truncated at 0.
    """
    if not 0.0 <= level < 1.0:
        raise InputError("confidence level must lie in [0, 1)")
    which = which.lower()
    y = np.asarray(y, dtype=float).ravel()
    z = norm.ppf(0.5 + level / 2.0) if level > 0 else 0.0

    if which in ("mcb", "dsc"):
        dec = decompose(spec, x, y, extra)
        series = dec.per_obs - dec.per_obs.mean(axis=0)
        om3 = hac_cov(series, hac).matrix
        cov = XI_SINGLE @ om3 @ XI_SINGLE.T
        idx = 0 if which == "mcb" else 1
        est = dec.mcb if which == "mcb" else dec.dsc
        se = float(np.sqrt(max(cov[idx, idx], 0.0) / dec.n_obs))
        lo, hi = est - z * se, est + z * se
        return max(lo, 0.0), hi

    if which in ("mcb_diff", "dsc_diff"):
        if x2 is None:
            raise InputError("component differences need a second forecast series")
        dec1 = decompose(spec, x, y, extra)
        dec2 = decompose(spec, x2, y, extra2)
        om = omega_hat(dec1, dec2, hac)
        sel = np.asarray(OMEGA_MCB if which == "mcb_diff" else OMEGA_DSC)
        est = float(sel @ np.array([dec1.mcb, dec1.dsc, dec2.mcb, dec2.dsc]))
        var = float(sel @ XI @ om.matrix @ XI.T @ sel)
        se = float(np.sqrt(max(var, 0.0) / dec1.n_obs))
        return est - z * se, est + z * se

    raise InputError(f"unknown component {which!r}")
