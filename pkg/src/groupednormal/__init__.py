"""Normal-distribution parameter estimation from grouped (binned) counts."""

from .errors import *  # noqa: F401,F403
from .estimators import (
    FitOptions,
    FitResult,
    Method,
    cell_probabilities,
    em_step,
    fit,
    fit_em,
    fit_exact_mle,
    fit_mcem,
    grouped_loglik,
    mard,
    mcem_step,
    moment_init,
)
from .gaussian import GaussianParams, rect_prob, rect_prob_batch
from .grouped import (
    Axis,
    GroupedTable,
    Rectangle,
    bin_samples,
    load_galton,
    marginal,
    parse_grouped_csv,
    read_grouped_csv,
    write_grouped_csv,
)
from .inference import MeanInference, empirical_info_em, empirical_info_mcem, mean_score
from .sampling import RngState, sample_trunc_1d, sample_trunc_nd
from .simulation import Scenario, load_scenario, run_scenario, simulate_dataset
from .truncated import TruncMoments, trunc_moments_nd

__version__ = "0.1.0"
