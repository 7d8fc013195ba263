"""Monte Carlo lab: data-generating processes, closed-form population values,
and rejection-rate studies for the decomposition tests.

The realizations follow  y_t = V_t' gamma + eps_t  with four independent AR(1)
predictors V_t = (K, L, M, N) of coefficient beta (stationary start, variance
1/(1 - beta^2)).  Forecaster 1 never sees L, forecaster 2 never sees K:

    x1_t = delta0 + V_t' delta        x2_t = xi0 + V_t' xi

Quantile forecasts add the standard normal quantile of the target level.
Squared-error and check-loss population decompositions of these forecasts are
available in closed form, which makes the scenarios exact oracles for size and
power studies.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter
from scipy.stats import norm

from .decomposition import decompose
from .errors import EstimationError, InputError
from .inference import (
    OMEGA_DSC,
    OMEGA_MCB,
    OMEGA_SCORE,
    _zero_test_quantile,
    _zero_test_smooth,
    combine_pvalues,
    gaussian_component_test,
)
from .longrun import HacOptions, omega_hat
from .recalibration import DesignMatrix
from .scoring import ScoringSpec


@dataclass(frozen=True)
class SimScenario:
    """One parameterization of the simulation DGP.

    ``alpha`` is None for mean scenarios and the quantile level otherwise;
    ``k`` is the misspecification knob of the scenario tables.
    """

    gamma: tuple
    delta0: float
    delta: tuple
    xi0: float
    xi: tuple
    beta: float = 0.25
    alpha: float | None = None
    k: float = 0.0
    table_id: str = "custom"

    def __post_init__(self):
        for name in ("gamma", "delta", "xi"):
            vec = tuple(float(v) for v in getattr(self, name))
            if len(vec) != 4:
                raise InputError(f"{name} must have 4 entries")
            object.__setattr__(self, name, vec)
        if self.delta[1] != 0.0:
            raise InputError("forecaster 1 has no access to the second predictor (delta_L must be 0)")
        if self.xi[0] != 0.0:
            raise InputError("forecaster 2 has no access to the first predictor (xi_K must be 0)")
        if not -1.0 < self.beta < 1.0:
            raise InputError("the AR coefficient must lie in (-1, 1)")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise InputError("quantile level must lie in (0, 1)")
        if self.k < 0:
            raise InputError("the misspecification parameter k is non-negative")

    @property
    def is_quantile(self) -> bool:
        return self.alpha is not None

    @property
    def varsigma(self) -> float:
        return 1.0 / (1.0 - self.beta**2)

    def scoring_spec(self) -> ScoringSpec:
        if self.is_quantile:
            return ScoringSpec.check_loss(self.alpha)
        return ScoringSpec.squared_error()

    def oracle(self) -> "PopulationOracle":
        return population_check(self) if self.is_quantile else population_se(self)


@dataclass(frozen=True)
class PopulationOracle:
    """Closed-form population decomposition attached to a scenario."""

    mcb1: float
    dsc1: float
    mcb2: float
    dsc2: float
    unc: float
    notes: tuple = ()

    def __post_init__(self):
        vals = (self.mcb1, self.dsc1, self.mcb2, self.dsc2)
        if min(vals) < -1e-10 or self.unc <= 0:
            raise EstimationError("population components must be non-negative with positive uncertainty")
        for name in ("mcb1", "dsc1", "mcb2", "dsc2"):
            object.__setattr__(self, name, max(0.0, getattr(self, name)))


# ---------------------------------------------------------------------------
# scenario catalogs
# ---------------------------------------------------------------------------


def _mean_rows(k: float):
    q = 0.25
    rt2 = np.sqrt(2.0)
    return {
        "1a": ((0, q, q, 0), 0.0, (0, 0, k / rt2 + q, 0), 0.0, (0, k / 2 + q, k / 2 + q, 0)),
        "1b": ((q, q, q, 0), 0.0, (k / 2 + q, 0, k / 2 + q, 0), 0.0, (0, k / 2 + q, k / 2 + q, 0)),
        "2a": ((0, q, q, 0), 0.0, (0, 0, q, 0), 0.0, (0, k / 2 + q, k / 2 + q, 0)),
        "2b": ((q, q, q, 0), 0.0, (q, 0, q, 0), 0.0, (0, k / 2 + q, k / 2 + q, 0)),
        "3a": ((0, q, q, 0), 0.0, (0, 0, k + q, 0), 0.0, (0, k / 2 + q, k / 2 + q, 0)),
        "3b": ((q, q, q, 0), 0.0, (k / rt2 + q, 0, k / rt2 + q, 0), 0.0, (0, k / 2 + q, k / 2 + q, 0)),
        "4a": ((0, 0, 0, k), 0.0, (k / 2 + q / rt2, 0, 0, k / 2 + q / rt2), 0.0, (0, k / 2 + q, 0, k / 2 + q)),
        "4b": ((0, 0, 0, k), 0.0, (k / 2 + q, 0, 0, k / 2 + q), 0.0, (0, k / 2 + q, 0, k / 2 + q)),
        "5a": ((0, 0, 0, k), 0.0, (0, 0, q, 0), 0.0, (0, k / 2 + q, 0, k / 2 + q)),
        "5b": ((0, 0, 0, k), 0.0, (q, 0, q, 0), 0.0, (0, k / 2 + q, 0, k / 2 + q)),
        "6a": ((0, 0, 0, k), 0.0, (0, 0, 0, k + q), 0.0, (0, k / 2 + q, 0, k / 2 + q)),
        "6b": ((0, 0, 0, k), 1.0 / np.sqrt(15.0), (0, 0, 0, k + q), 0.0, (0, k / 2 + q, 0, k / 2 + q)),
    }


MEAN_SCENARIO_IDS = tuple(sorted(_mean_rows(0.0)))
QUANTILE_SCENARIO_IDS = ("1", "2", "4", "5")


def mean_scenario(row: str, k: float, beta: float = 0.25) -> SimScenario:
    """Mean-forecast scenario from the twelve-row catalog ('1a' ... '6b')."""
    rows = _mean_rows(k)
    if row not in rows:
        raise InputError(f"unknown mean scenario {row!r}; choose from {MEAN_SCENARIO_IDS}")
    gamma, d0, delta, x0, xi = rows[row]
    return SimScenario(gamma, d0, delta, x0, xi, beta=beta, alpha=None, k=k, table_id=f"m{row}")


def quantile_scenario(row: str, k: float, alpha: float, beta: float = 0.25) -> SimScenario:
    """Quantile-forecast scenario from the four-row catalog ('1', '2', '4', '5').

    Row '5' pins the second intercept numerically so both forecasters share
    the same population miscalibration at every (k, alpha).
    """
    q = 0.25
    if row == "1":
        gamma, d0, delta = (q, q, q, 0), 0.0, (k / 2 + q, 0, k / 2 + q, 0)
        x0, xi = 0.0, (0, k / 2 + q, k / 2 + q, 0)
    elif row == "2":
        gamma, d0, delta = (q, q, q, 0), 0.0, (q, 0, q, 0)
        x0, xi = 0.0, (0, k / 2 + q, k / 2 + q, 0)
    elif row == "4":
        gamma, d0, delta = (0, 0, 0, k), 0.0, (k / 2 + q, 0, 0, k / 2 + q)
        x0, xi = 0.0, (0, k / 2 + q, 0, k / 2 + q)
    elif row == "5":
        gamma, d0, delta = (0, 0, 0, k), 0.5, (q, 0, q, 0)
        xi = (0, k / 2 + q, 0, k / 2 + q)
        x0 = solve_xi0(k, alpha, beta=beta)
    else:
        raise InputError(f"unknown quantile scenario {row!r}; choose from {QUANTILE_SCENARIO_IDS}")
    return SimScenario(gamma, d0, delta, x0, xi, beta=beta, alpha=alpha, k=k, table_id=f"q{row}")


# ---------------------------------------------------------------------------
# path generation
# ---------------------------------------------------------------------------


def gen_paths(scenario: SimScenario, T: int, seed=0):
    """Simulate (y, x1, x2) of length T; a fixed seed gives bit-identical paths.

    The predictors start from their exact stationary distribution, so no
    burn-in is needed and finite-sample moments match the closed forms in
    expectation.
    """
    if T < 1:
        raise InputError("need at least one observation")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    beta = scenario.beta
    sd0 = np.sqrt(scenario.varsigma)

    v0 = rng.standard_normal(4) * sd0
    innov = rng.standard_normal((T, 4))
    eps_y = rng.standard_normal(T)

    V, _ = lfilter([1.0], [1.0, -beta], innov, axis=0, zi=(beta * v0)[None, :])

    gamma = np.asarray(scenario.gamma)
    delta = np.asarray(scenario.delta)
    xi = np.asarray(scenario.xi)
    y = V @ gamma + eps_y
    x1 = scenario.delta0 + V @ delta
    x2 = scenario.xi0 + V @ xi
    if scenario.is_quantile:
        z = norm.ppf(scenario.alpha)
        x1 = x1 + z
        x2 = x2 + z
    return y, x1, x2


# ---------------------------------------------------------------------------
# closed-form population oracles
# ---------------------------------------------------------------------------


def _se_components(c0, cvec, gamma, vs):
    cvec = np.asarray(cvec, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    cc = float(cvec @ cvec)
    if cc == 0.0:
        return c0**2, 0.0, True
    cg = float(cvec @ gamma)
    mcb = c0**2 + vs * (cc - cg) ** 2 / cc
    dsc = vs * cg**2 / cc
    return mcb, dsc, False


def population_se(scenario: SimScenario) -> PopulationOracle:
    """Squared-error population decomposition of a mean scenario."""
    if scenario.is_quantile:
        raise InputError("population_se applies to mean scenarios")
    vs = scenario.varsigma
    gamma = np.asarray(scenario.gamma)
    mcb1, dsc1, flat1 = _se_components(scenario.delta0, scenario.delta, gamma, vs)
    mcb2, dsc2, flat2 = _se_components(scenario.xi0, scenario.xi, gamma, vs)
    unc = vs * float(gamma @ gamma) + 1.0
    notes = []
    if flat1:
        notes.append("forecaster 1 is constant: DSC convention 0")
    if flat2:
        notes.append("forecaster 2 is constant: DSC convention 0")
    return PopulationOracle(mcb1, dsc1, mcb2, dsc2, unc, tuple(notes))


def _check_components(c0, cvec, gamma, vs, alpha):
    cvec = np.asarray(cvec, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    z = norm.ppf(alpha)
    gg = float(gamma @ gamma)
    sigma_y = np.sqrt(vs * gg + 1.0)
    cc = float(cvec @ cvec)
    cg = float(cvec @ gamma) if cc else 0.0
    flat = cc == 0.0
    sigma_giv = sigma_y if flat else np.sqrt(sigma_y**2 - vs * cg**2 / cc)
    m = -(c0 + z)
    s = np.sqrt(1.0 + vs * (gg + cc - 2.0 * cg))
    kappa = m / s
    mcb = m * (norm.cdf(kappa) + alpha - 1.0) + s * norm.pdf(kappa) - sigma_giv * norm.pdf(z)
    dsc = norm.pdf(z) * (sigma_y - sigma_giv)
    return float(mcb), float(dsc), flat


def population_check(scenario: SimScenario) -> PopulationOracle:
    """Check-loss population decomposition of a quantile scenario."""
    if not scenario.is_quantile:
        raise InputError("population_check applies to quantile scenarios")
    vs = scenario.varsigma
    alpha = scenario.alpha
    gamma = np.asarray(scenario.gamma)
    mcb1, dsc1, flat1 = _check_components(scenario.delta0, scenario.delta, gamma, vs, alpha)
    mcb2, dsc2, flat2 = _check_components(scenario.xi0, scenario.xi, gamma, vs, alpha)
    sigma_y = np.sqrt(vs * float(gamma @ gamma) + 1.0)
    unc = float(sigma_y * norm.pdf(norm.ppf(alpha)))
    notes = []
    if flat1:
        notes.append("forecaster 1 is constant: DSC convention 0")
    if flat2:
        notes.append("forecaster 2 is constant: DSC convention 0")
    return PopulationOracle(mcb1, dsc1, mcb2, dsc2, unc, tuple(notes))


def solve_xi0(k: float, alpha: float, beta: float = 0.25) -> float:
    """Second intercept of the quantile scenario '5' equating both miscalibrations.

    Root of MCB1(k) - MCB2(k; xi0) on the increasing branch of MCB2, found by
    bracketed root search with objective tolerance 1e-10.
    """
    vs = 1.0 / (1.0 - beta**2)
    q = 0.25
    gamma = np.array([0.0, 0.0, 0.0, k])
    delta = np.array([q, 0.0, q, 0.0])
    xi = np.array([0.0, k / 2 + q, 0.0, k / 2 + q])
    target, _, _ = _check_components(0.5, delta, gamma, vs, alpha)

    def objective(x0):
        mcb2, _, _ = _check_components(x0, xi, gamma, vs, alpha)
        return target - mcb2

    z = norm.ppf(alpha)
    s2 = np.sqrt(1.0 + vs * (k**2 / 2.0 + 1.0 / 8.0))
    branch_lo = max(-5.0, z * (s2 - 1.0))
    hi = 5.0
    if objective(branch_lo) * objective(hi) > 0:
        hi = 10.0  # widen the bracket once
        if objective(branch_lo) * objective(hi) > 0:
            raise EstimationError("no sign change when solving for the scenario-5 intercept")
    root = float(brentq(objective, branch_lo, hi, xtol=1e-13, rtol=8.9e-16))
    if abs(objective(root)) > 1e-10:
        raise EstimationError("intercept solver did not reach the requested tolerance")
    return root


# ---------------------------------------------------------------------------
# rejection-rate studies
# ---------------------------------------------------------------------------

STUDY_TESTS = ("equal_mcb", "equal_dsc", "dm")


@dataclass(frozen=True)
class StudyConfig:
    """Configuration of one rejection-rate study."""

    scenarios: tuple
    T: int = 500
    reps: int = 1000
    level: float = 0.1
    tests: tuple = STUDY_TESTS
    seed: int = 0
    n_jobs: int = 1
    hac: HacOptions = field(default_factory=HacOptions)

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "tests", tuple(self.tests))
        if self.reps < 1:
            raise InputError("need at least one replication")
        unknown = set(self.tests) - set(STUDY_TESTS)
        if unknown:
            raise InputError(f"unknown tests {sorted(unknown)}")
        if not 0.0 < self.level < 1.0:
            raise InputError("nominal level must lie in (0, 1)")


def substream(seed: int, rep: int) -> np.random.Generator:
    """Replication-indexed random substream; identical under any parallel schedule."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))


def battery_pvalues(spec: ScoringSpec, x1, x2, y, tests, hac: HacOptions) -> dict:
    """p-values of the requested tests, sharing the fitted decompositions."""
    y = np.asarray(y, dtype=float).ravel()
    dec1 = decompose(spec, x1, y)
    dec2 = decompose(spec, x2, y)
    om = omega_hat(dec1, dec2, hac)
    out = {}
    if "dm" in tests:
        out["dm"] = gaussian_component_test(dec1, dec2, OMEGA_SCORE, om).p_value
    zero_cache = {}

    def zero_p(which, xi_, dec):
        key = (which, id(dec))
        if key not in zero_cache:
            if spec.family == "check":
                rep = _zero_test_quantile(spec, xi_, y, None, which, hac)
            else:
                W = DesignMatrix.from_forecast(np.asarray(xi_, dtype=float).ravel()).W
                rep = _zero_test_smooth(spec, W, y, dec, which, hac)
            zero_cache[key] = rep.p_value
        return zero_cache[key]

    for which, name in (("mcb", "equal_mcb"), ("dsc", "equal_dsc")):
        if name not in tests:
            continue
        sel = OMEGA_MCB if which == "mcb" else OMEGA_DSC
        rep_plus = gaussian_component_test(dec1, dec2, sel, om)
        p0_1 = zero_p(which, x1, dec1)
        p0_2 = zero_p(which, x2, dec2)
        if "contrast nonzero" in rep_plus.notes:
            out[name] = min(1.0, 2.0 * min(p0_1, p0_2))
        else:
            out[name] = combine_pvalues(rep_plus.p_value, p0_1, p0_2)
    return out


def _run_one_rep(args):
    scenario, T, tests, hac, seed, rep = args
    rng = substream(seed, rep)
    y, x1, x2 = gen_paths(scenario, T, rng)
    spec = scenario.scoring_spec()
    try:
        return rep, battery_pvalues(spec, x1, x2, y, tests, hac)
    except EstimationError as exc:
        return rep, {"__failure__": str(exc)}


def run_rejection_study(config: StudyConfig):
    """Rejection frequencies per (scenario, test) with Monte Carlo standard errors.

    Replications with estimation failures are dropped when they stay below 1%
    of the total, otherwise the study aborts.  Output rows are deterministic
    given the seed, regardless of the parallelism level.
    """
    if config.reps < 100:
        import warnings

        warnings.warn("fewer than 100 replications gives very coarse rejection rates", stacklevel=2)
    rows = []
    for scenario in config.scenarios:
        jobs = [(scenario, config.T, config.tests, config.hac, config.seed, rep) for rep in range(config.reps)]
        if config.n_jobs > 1:
            with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
                results = list(pool.map(_run_one_rep, jobs, chunksize=max(1, config.reps // (4 * config.n_jobs))))
        else:
            results = [_run_one_rep(j) for j in jobs]
        results.sort(key=lambda item: item[0])
        pvals = {t: [] for t in config.tests}
        failures = 0
        for _, res in results:
            if "__failure__" in res:
                failures += 1
                continue
            for t in config.tests:
                pvals[t].append(res[t])
        if failures > 0.01 * config.reps:
            raise EstimationError(
                f"{failures} of {config.reps} replications failed for scenario {scenario.table_id}"
            )
        n_eff = config.reps - failures
        for t in config.tests:
            p = np.asarray(pvals[t])
            rate = float(np.mean(p < config.level))
            mc_se = float(np.sqrt(rate * (1.0 - rate) / n_eff))
            rows.append(
                {
                    "scenario": scenario.table_id,
                    "k": scenario.k,
                    "alpha": "" if scenario.alpha is None else scenario.alpha,
                    "test": t,
                    "T": config.T,
                    "reps": n_eff,
                    "rate": rate,
                    "mc_se": mc_se,
                }
            )
    return rows


def rejection_rows_to_csv(rows, path=None) -> str:
    """Serialize study rows with a stable column order; returns the CSV text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["scenario", "k", "alpha", "test", "T", "reps", "rate", "mc_se"])
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["k"] = f"{row['k']:.10g}"
        out["rate"] = f"{row['rate']:.10g}"
        out["mc_se"] = f"{row['mc_se']:.10g}"
        if row["alpha"] != "":
            out["alpha"] = f"{row['alpha']:.10g}"
        writer.writerow(out)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
