"""Score decompositions with asymptotic inference, backtests and a simulation lab."""

from .scoring import ScoringSpec, score, score_d1, score_d2, identification
from .recalibration import DesignMatrix, FitResult, fit_linear, fit_reference
from .decomposition import Decomposition, decompose, split_mcb
from .longrun import HacOptions, LongRunCov, QuadFormNuisance, hac_cov, omega_hat, quadform_nuisance
from .inference import (
    TestReport,
    combine_pvalues,
    component_ci,
    gaussian_component_test,
    imhof_pvalue,
    test_dsc_zero,
    test_equal_dsc,
    test_equal_mcb,
    test_equal_score,
    test_mcb_zero,
    vqr_test,
)
from .backtests import HitSeries, basel_traffic_light, make_hits, nz_test, regression_backtest, vqr_backtest
from .simlab import (
    PopulationOracle,
    SimScenario,
    StudyConfig,
    gen_paths,
    mean_scenario,
    population_check,
    population_se,
    quantile_scenario,
    run_rejection_study,
    solve_xi0,
)
from .errors import DegenerateInferenceWarning, EstimationError, InputError

__all__ = [
    "ScoringSpec",
    "score",
    "score_d1",
    "score_d2",
    "identification",
    "DesignMatrix",
    "FitResult",
    "fit_linear",
    "fit_reference",
    "Decomposition",
    "decompose",
    "split_mcb",
    "HacOptions",
    "LongRunCov",
    "QuadFormNuisance",
    "hac_cov",
    "omega_hat",
    "quadform_nuisance",
    "TestReport",
    "imhof_pvalue",
    "combine_pvalues",
    "gaussian_component_test",
    "test_mcb_zero",
    "test_dsc_zero",
    "test_equal_mcb",
    "test_equal_dsc",
    "test_equal_score",
    "vqr_test",
    "component_ci",
    "HitSeries",
    "make_hits",
    "regression_backtest",
    "basel_traffic_light",
    "nz_test",
    "vqr_backtest",
    "SimScenario",
    "PopulationOracle",
    "StudyConfig",
    "gen_paths",
    "mean_scenario",
    "quantile_scenario",
    "population_se",
    "population_check",
    "solve_xi0",
    "run_rejection_study",
    "InputError",
    "EstimationError",
    "DegenerateInferenceWarning",
]

__version__ = "0.1.0"
