"""Accelerated nonlinear primal-dual extragradient method for nonsmooth
PDE-constrained problems on a 1D elliptic model."""

__version__ = "0.1.0"

from .engine import StepSchedule, run, schedule_update, pdegm_step
from .fem1d import build_mesh, forward_solve, derivative_apply, adjoint_apply
from .problems import make_problem, lipschitz_estimate, NoiseConfig
from .prox import ScalarProxSpec

__all__ = [
    "StepSchedule",
    "run",
    "schedule_update",
    "pdegm_step",
    "build_mesh",
    "forward_solve",
    "derivative_apply",
    "adjoint_apply",
    "make_problem",
    "lipschitz_estimate",
    "NoiseConfig",
    "ScalarProxSpec",
]
