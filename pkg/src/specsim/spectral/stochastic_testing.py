"""Stochastic testing: collocation of the expanded circuit at K selected points.

Block k of the coupled system is the circuit evaluated at the testing point
``xi_k`` with state ``sum_j V[k, j] x^j``. The Jacobian factors as
``blkdiag(J_k) (V kron I)``, so each Newton step costs K independent n x n
solves plus a K x K transform.
"""

from __future__ import annotations

import time

import numpy as np

from ..circuit.model import Circuit
from ..detsolve import (ConvergenceError, NewtonOptions, NewtonStats, StepController,
                        dc_solve, solve_operating_point, transient_solve)
from ..polychaos import GpcBasis
from ..systems import PointSystem
from .state import GpcState, UqResult
from .testing import TestingSet, default_candidates, select_testing_points


def ic_rows(circuit: Circuit) -> dict[int, float] | None:
    """``.ic`` values keyed by unknown index."""
    if not circuit.initial_conditions:
        return None
    return {circuit.unknown_index(k): float(v) for k, v in circuit.initial_conditions.items()}


def st_residual_system(circuit: Circuit, basis: GpcBasis, tset: TestingSet,
                       decoupled: bool = True) -> PointSystem:
    """Coupled K*n system whose unknowns are the expansion coefficients."""
    if tset.K != basis.size:
        raise ValueError(f"testing set has {tset.K} points but the basis has {basis.size} terms")
    return PointSystem(circuit, tset.points, tset.V, tset.V_inv, decoupled)


def lift_nominal(circuit: Circuit, basis: GpcBasis, opts: NewtonOptions) -> np.ndarray:
    """Initial guess: the nominal operating point as the constant term."""
    y = np.zeros(basis.size * circuit.n)
    try:
        y[: circuit.n] = dc_solve(circuit, circuit.nominal_point(), opts)
    except (ConvergenceError, np.linalg.LinAlgError):
        pass
    return y


def st_solve_dc(circuit: Circuit, basis: GpcBasis, tset: TestingSet | None = None,
                opts: NewtonOptions = NewtonOptions(), decoupled: bool = True,
                stats: NewtonStats | None = None, callback=None, y0=None) -> GpcState:
    """Newton on the coupled DC system, one n x n solve per testing point."""
    tset = tset if tset is not None else select_testing_points(default_candidates(basis), basis)
    system = st_residual_system(circuit, basis, tset, decoupled)
    if y0 is None:
        y0 = lift_nominal(circuit, basis, opts)
    try:
        y, _ = solve_operating_point(system, 0.0, y0, opts, stats, callback)
    except ConvergenceError as exc:
        bad = np.flatnonzero(exc.failed) if exc.failed is not None else []
        where = ", ".join(f"xi={tset.points[k].tolist()}" for k in bad[:3])
        raise ConvergenceError(f"{exc} at testing point(s) {where}", exc.best, exc.residual,
                               exc.failed) from exc
    return GpcState(y, basis, 0.0)


def st_solve_transient(circuit: Circuit, basis: GpcBasis, tset: TestingSet | None,
                       t_span, controller: StepController = StepController(),
                       opts: NewtonOptions = NewtonOptions(), decoupled: bool = True,
                       stats: NewtonStats | None = None):
    """Integrate the coupled DAE; returns the trajectory of coefficient vectors."""
    tset = tset if tset is not None else select_testing_points(default_candidates(basis), basis)
    system = st_residual_system(circuit, basis, tset, decoupled)
    stats = stats if stats is not None else NewtonStats()
    ic = ic_rows(circuit)
    y0 = None
    if not ic:
        y0 = st_solve_dc(circuit, basis, tset, opts, decoupled, stats).coeffs
    return transient_solve(system, t_span=t_span, controller=controller, opts=opts, x0=y0,
                           ic=ic, stats=stats, breakpoints=circuit.breakpoints())


def run_st(circuit: Circuit, basis: GpcBasis, analysis: str = "dc", t_span=None,
           candidates=None, beta: float = 1e-2, controller: StepController = StepController(),
           opts: NewtonOptions = NewtonOptions()) -> UqResult:
    """Stochastic-testing DC or transient run packaged as a :class:`UqResult`."""
    start = time.perf_counter()
    cand = candidates if candidates is not None else default_candidates(basis)
    tset = select_testing_points(cand, basis, beta)
    stats = NewtonStats()
    info = {"K": basis.size, "candidates": cand.size, "kappa_samp": cand.size / basis.size,
            "cond_V": tset.cond, "beta": beta}
    if analysis == "dc":
        st = st_solve_dc(circuit, basis, tset, opts, stats=stats)
        times, coeffs = np.zeros(1), st.blocks[None]
        evaluations = basis.size
    else:
        traj = st_solve_transient(circuit, basis, tset, t_span, controller, opts, stats=stats)
        times = traj.times
        coeffs = traj.states.reshape(len(times), basis.size, circuit.n)
        info.update(steps=traj.accepted, rejected=traj.rejected, min_step=traj.min_step)
        evaluations = basis.size
    info["newton"] = stats.as_dict()
    return UqResult.from_coeffs("st", times, coeffs, basis, circuit.unknown_names,
                                evaluations=evaluations,
                                wall_time=time.perf_counter() - start, info=info)
