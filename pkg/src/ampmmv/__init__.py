"""Joint-sparse recovery of temporally correlated signals by approximate message passing."""
from .amp_frame import LocalPrior, run_amp
from .em_tuner import EmTuner, initial_params
from .exact_oracle import enumerate_mmse
from .metrics import estimate_support, nser, tnmse
from .mmv_engine import PosteriorSummary, SolverConfig, solve
from .signal_model import (GenConfig, GroundTruth, LinearOperator, MmvProblem, ModelParams,
                           generate_instance, rho_for_variance, steady_state_variance)
from .sks_oracle import sks_smooth

__all__ = [
    "LocalPrior", "run_amp", "EmTuner", "initial_params", "enumerate_mmse", "estimate_support",
    "nser", "tnmse", "PosteriorSummary", "SolverConfig", "solve", "GenConfig", "GroundTruth",
    "LinearOperator", "MmvProblem", "ModelParams", "generate_instance", "rho_for_variance",
    "steady_state_variance", "sks_smooth",
]
__version__ = "0.1.0"
