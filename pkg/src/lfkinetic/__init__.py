"""Feedback-controlled leader-follower interacting particle simulations.

The package has three layers: a grid solver for the reduced two-on-two
control problem (dp, riccati), a binary-collision particle engine that
deploys the averaged feedback (dsmc), and the shared model vocabulary
underneath (kernels, control_problem, microsim).  Numerical hot loops
live in a compiled extension with a pure-numpy fallback; set
LFKINETIC_PURE_PYTHON=1 to force the fallback.
"""

__version__ = "0.1.0"

from .backend import BACKEND
from .control_problem import BinaryState, ControlGrid, CostParams, binary_step, running_cost
from .diagnostics import CostAccumulator, DensityHistogram, histogram, linear_moment_odes, mean_opinion
from .dp import (
    Mesh,
    ValueGrid,
    feedback,
    feedback_batch,
    interpolate_value,
    policy_iteration,
    value_iteration,
)
from .dsmc import (
    CallableFeedback,
    GridFeedback,
    ParticleEnsemble,
    RiccatiFeedback,
    RunResult,
    ScalingParams,
    estimate_phi,
    run_tpbb,
    sample_initial,
    stochastic_round,
    tpbb_step,
)
from .errors import (
    EmptyFollowerSet,
    EmptySampleSet,
    InfeasibleCounts,
    NoStabilizingSolution,
    NonConvergenceWarning,
    PersistFailure,
    ValidationError,
)
from .gridfile import check_grid_matches, load_grid, save_grid
from .kernels import KernelSpec, KernelTriple, eval_kernel, interaction_velocity
from .microsim import micro_step, simulate_micro
from .riccati import RiccatiGain, riccati_gain

__all__ = [
    "__version__",
    "BACKEND",
    "BinaryState", "ControlGrid", "CostParams", "binary_step", "running_cost",
    "CostAccumulator", "DensityHistogram", "histogram", "linear_moment_odes", "mean_opinion",
    "Mesh", "ValueGrid", "feedback", "feedback_batch", "interpolate_value",
    "policy_iteration", "value_iteration",
    "CallableFeedback", "GridFeedback", "ParticleEnsemble", "RiccatiFeedback",
    "RunResult", "ScalingParams", "estimate_phi", "run_tpbb", "sample_initial",
    "stochastic_round", "tpbb_step",
    "EmptyFollowerSet", "EmptySampleSet", "InfeasibleCounts",
    "NoStabilizingSolution", "NonConvergenceWarning", "PersistFailure",
    "ValidationError",
    "check_grid_matches", "load_grid", "save_grid",
    "KernelSpec", "KernelTriple", "eval_kernel", "interaction_velocity",
    "micro_step", "simulate_micro",
    "RiccatiGain", "riccati_gain",
]
