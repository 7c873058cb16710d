"""Moment models for radiation hydrodynamics in slab geometry.

Closure tables for the MP_N/HMP_N families, the coupled model, structural
stability checks, a splitting finite-volume solver and the eps -> 0 limit.
"""

from .closure import (
    ALPHA_MAX,
    ClosureDomainError,
    ClosureTables,
    DegeneracyError,
    build_basis,
    closed_form_kappa,
    closure_tables,
    r_coefficient,
)
from .kernels import BACKEND
from .limit import convergence_study, corrector_w1, initial_layer, limit_run, recover_theta
from .model import DEFAULT_MODEL, FullState, ThermoRadiationModel, equilibrium_state, source_Q
from .solver import FieldState, Grid1D, SolverConfig, run
from .stability import run_stability_sweep

__version__ = "0.1.0"

__all__ = [
    "ALPHA_MAX", "BACKEND", "ClosureDomainError", "ClosureTables", "DEFAULT_MODEL", "DegeneracyError",
    "FieldState", "FullState", "Grid1D", "SolverConfig", "ThermoRadiationModel", "build_basis",
    "closed_form_kappa", "closure_tables", "convergence_study", "corrector_w1", "equilibrium_state",
    "initial_layer", "limit_run", "r_coefficient", "recover_theta", "run", "run_stability_sweep",
    "source_Q",
]
