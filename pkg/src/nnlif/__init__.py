"""Equilibria, linearized stability and simulation of the delayed NNLIF model."""

from .equilibria import (ModelParams, SteadyState, eval_I, eval_dIdN, find_equilibria,
                         locate_b_e, slope_S, steady_profile)
from .grid import Grid
from .kernels import BACKEND
from .linear_pde import FiringTrace, LinearField, compute_Nq, firing_rate
from .nonlinear_pde import SimConfig, simulate
from .spectral_stability import (LaplaceEvaluator, StabilityVerdict, classify, phi_d,
                                 stability_map)
from .volterra import RenewalProblem, classify_asymptotics, solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "FiringTrace", "Grid", "LaplaceEvaluator", "LinearField", "ModelParams",
    "RenewalProblem", "SimConfig", "StabilityVerdict", "SteadyState", "classify",
    "classify_asymptotics", "compute_Nq", "eval_I", "eval_dIdN", "find_equilibria",
    "firing_rate", "locate_b_e", "phi_d", "simulate", "slope_S", "solve", "stability_map",
    "steady_profile",
]
