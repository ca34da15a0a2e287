"""Uncertainty-quantification engines over a gPC basis."""

from .galerkin import (GalerkinSystem, run_sg, sg_assemble, sg_quadrature, sg_solve_dc,
                       sg_solve_transient)
from .sampling import SampleFailure, mc_solve, pilot_step, sc_solve, worker_count
from .state import GpcState, UqResult, moments, sampling_speedup_ratio, surrogate_eval
from .stochastic_testing import (ic_rows, run_st, st_residual_system, st_solve_dc,
                                 st_solve_transient)
from .testing import (DEFAULT_BETA, SelectionError, TestingSet, default_candidates,
                      select_testing_points)

__all__ = [
    "DEFAULT_BETA", "GalerkinSystem", "GpcState", "SampleFailure", "SelectionError",
    "TestingSet", "UqResult", "default_candidates", "ic_rows", "mc_solve", "moments",
    "pilot_step", "run_sg", "run_st", "sampling_speedup_ratio", "sc_solve",
    "select_testing_points", "sg_assemble", "sg_quadrature", "sg_solve_dc",
    "sg_solve_transient", "st_residual_system", "st_solve_dc", "st_solve_transient",
    "surrogate_eval", "worker_count",
]
