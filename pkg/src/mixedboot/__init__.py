"""Linear mixed models on clustered longitudinal data, with Wald,
percentile-bootstrap and BCa confidence intervals for both fixed
effects and variance components."""

from .bootstrap import (
    BootstrapRun,
    JackknifeRun,
    jackknife_run,
    mammen_draw,
    parametric_resample,
    run_bootstrap,
    wild_precompute,
    wild_resample,
)
from .data import (
    LongitudinalDataset,
    SimulationDesign,
    read_csv,
    simulate_dataset,
    write_csv,
)
from .estimation import FitResult, ParameterSet, fit, log_likelihood, to_reported
from .formula import ModelFormula, parse_formula
from .intervals import CiOptions, CiTable, confint, percentile_ci, wald_ci
from .numerics import RandomStream
from .robust import RobustConfig, fit_robust

__version__ = "0.1.0"
