"""Zero-inflated probabilistic PCA for compositional count data."""

__version__ = "0.1.0"

from .bench import BenchConfig, RmseReport, rmse, run_benchmark
from .elbo import ElboBreakdown, VariationalParams, alpha0_hat, elbo_lpnm, elbo_poisson, pi_hat
from .errors import (
    DegenerateSupportError,
    DomainError,
    NonFiniteError,
    SingularityError,
    ValidationError,
    ZippcaError,
)
from .fit import FitOptions, FitResult, classify_pi, estimate_eta, fit, initialize
from .model import (
    CountMatrix,
    Hyperparams,
    LatentState,
    ModelParams,
    alr,
    alr_inv,
    underlying_compositions,
    zero_inflated_compositions,
)
from .simulate import Scenario, ScenarioConfig, SimulatedDataset, generate
