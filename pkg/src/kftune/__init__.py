"""Kalman-filter process-noise tuning by Student-t process Bayesian optimization."""

__version__ = "0.1.0"

from .acquisition import expected_improvement, propose_next
from .consistency import (
    ChiSquareBounds,
    ConsistencyReport,
    StatSeries,
    average_series,
    chi2_bounds,
    consistency_test,
    j_nees,
    j_nis,
    nees,
    nis,
)
from .direct import BoxBounds, DirectBudget, direct_minimize
from .ekf import ContinuousModel, FilterState, NoiseSpec, predict, update
from .harness import (
    ExperimentConfig,
    TuningObjective,
    evaluate_candidate,
    matched_process_noise,
    process_noise_from_design,
    simulate,
    simulate_truth,
)
from .skycrane import LqrDesign, SkycraneParams, lqr_gain
from .stp import KernelSpec, fit_hyperparameters, make_training_set, posterior_predict
from .tpbo import TuningProblem, run_tpbo
