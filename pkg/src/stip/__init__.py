"""Spatiotemporal likelihoods for parameter inference in chaotic ODE systems.

The package covers the full calibrate-emulate-sample workflow:

* :mod:`stip.dynamics` integrates the Lorenz-63, Rössler and Chen systems;
* :mod:`stip.likelihood` implements static, time-averaged and
  spatiotemporal Gaussian-process (STGP) matrix-normal likelihoods;
* :mod:`stip.calibrate` runs ensemble Kalman inversion and sampling;
* :mod:`stip.emulate` fits a Gaussian-process surrogate of the forward map;
* :mod:`stip.sample` provides pCN and ∞-MALA samplers;
* :mod:`stip.analyze` computes errors, Fisher information and predictions.
"""

from .analyze import (
    FisherSpec,
    check_loewner,
    fisher_matrix,
    predict_forward,
    predict_posterior_stgp,
    rem,
    verify_theorem_1,
    verify_theorem_2,
)
from .calibrate import Ensemble, EnkHistory, EnsembleKalmanCalibrator, eki_step, eks_step, run_enk
from .config import ExperimentConfig, load_config
from .dynamics import ObservationConfig, TrajectoryMatrix, get_system, integrate, integrate_batch
from .emulate import EmulatedPotential, GaussianProcessEmulator
from .exceptions import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    InvalidArgumentError,
    SingularMatrixError,
    StipError,
)
from .likelihood import MatrixNormalLikelihood
from .prior import LogNormalPrior
from .problems import BENCHMARKS, InverseProblem, build_problem, get_benchmark
from .sample import PosteriorChain, PosteriorSampler, inf_mala_step, pcn_step, run_chain

__version__ = "0.1.0"

__all__ = [
    "BENCHMARKS",
    "ConfigurationError",
    "DivergenceError",
    "DomainError",
    "EmulatedPotential",
    "EnkHistory",
    "Ensemble",
    "EnsembleKalmanCalibrator",
    "ExperimentConfig",
    "FisherSpec",
    "GaussianProcessEmulator",
    "InvalidArgumentError",
    "InverseProblem",
    "LogNormalPrior",
    "MatrixNormalLikelihood",
    "ObservationConfig",
    "PosteriorChain",
    "PosteriorSampler",
    "SingularMatrixError",
    "StipError",
    "TrajectoryMatrix",
    "build_problem",
    "check_loewner",
    "eki_step",
    "eks_step",
    "fisher_matrix",
    "get_benchmark",
    "get_system",
    "inf_mala_step",
    "integrate",
    "integrate_batch",
    "load_config",
    "pcn_step",
    "predict_forward",
    "predict_posterior_stgp",
    "rem",
    "run_chain",
    "run_enk",
    "verify_theorem_1",
    "verify_theorem_2",
]
