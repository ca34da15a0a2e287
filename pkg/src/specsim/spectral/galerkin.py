"""Stochastic Galerkin: residual projected on every basis function by quadrature."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg as sla

from ..circuit.model import Circuit
from ..detsolve import (NewtonOptions, NewtonStats, StepController, solve_operating_point,
                        transient_solve)
from ..polychaos import GpcBasis
from ..quadrature import RuleND, tensor_gauss
from ..systems import SingularJacobianError, _diagnose, block_norms
from .state import GpcState, UqResult
from .stochastic_testing import ic_rows, lift_nominal


def sg_quadrature(basis: GpcBasis, param_degree: int = 1, margin: int = 2) -> RuleND:
    """Tensor Gauss rule exact to degree ``2p + param_degree + margin`` per axis.

    Device nonlinearities make the integrands non-polynomial, so the margin
    is a heuristic; pass an explicit rule to :func:`sg_assemble` to override.
    """
    n = math.ceil((2 * basis.order + param_degree + margin + 1) / 2)
    return tensor_gauss(basis.distributions, max(n, 1))


class GalerkinLinearization:
    def __init__(self, system: "GalerkinSystem", q, f, b, dq, df):
        self.system = system
        self.q, self.f, self.b = q.reshape(-1), f.reshape(-1), b.reshape(-1)
        self.dq_nodes, self.df_nodes = dq, df  # (M, n, n)

    def _project(self, nodes_blocks):
        """Coupled matrix ``[k a, l b] = sum_j w_j H_jk H_jl A_j[a, b]``."""
        s = self.system
        WH = s.weights[:, None] * s.H
        J = np.einsum("jk,jl,jab->kalb", WH, s.H, nodes_blocks, optimize=True)
        return J.reshape(s.size, s.size)

    def matrix(self, cq: float, cf: float) -> np.ndarray:
        return self._project(cq * self.dq_nodes + cf * self.df_nodes)

    def solve(self, cq: float, cf: float, rhs):
        rhs = np.asarray(rhs, dtype=float)
        A = self.matrix(cq, cf)
        try:
            lu = sla.lu_factor(A)
        except (ValueError, np.linalg.LinAlgError):
            raise SingularJacobianError(_diagnose(self.system.circuit, self.df_nodes)) from None
        if np.any(np.diag(lu[0]) == 0):
            raise SingularJacobianError(_diagnose(self.system.circuit, self.df_nodes))
        return sla.lu_solve(lu, rhs)

    def _apply(self, nodes_blocks, M):
        s = self.system
        M = np.asarray(M, dtype=float)
        vec = M.ndim == 1
        P = np.einsum("jl,lbm->jbm", s.H, M.reshape(s.K, s.n, -1))
        out = np.einsum("jk,jab,jbm->kam", s.weights[:, None] * s.H, nodes_blocks, P)
        out = out.reshape(s.size, -1)
        return out[:, 0] if vec else out

    def dq_dot(self, M):
        return self._apply(self.dq_nodes, M)

    def df_dot(self, M):
        return self._apply(self.df_nodes, M)


@dataclass
class GalerkinSystem:
    circuit: Circuit
    basis: GpcBasis
    quad: RuleND
    forced: Mapping[int, float] | None = None

    def __post_init__(self):
        self.H = self.basis.evaluate(self.quad.nodes)
        self.weights = np.asarray(self.quad.weights, dtype=float)

    @property
    def K(self) -> int:
        return self.basis.size

    @property
    def n(self) -> int:
        return self.circuit.n

    @property
    def size(self) -> int:
        return self.K * self.n

    @property
    def algebraic(self) -> np.ndarray:
        alg = self.circuit.algebraic_rows.copy()
        if self.forced:
            alg[list(self.forced)] = True
        return np.tile(alg, self.K)

    def with_forced(self, forced) -> "GalerkinSystem":
        return GalerkinSystem(self.circuit, self.basis, self.quad, forced)

    def node_states(self, y) -> np.ndarray:
        return self.H @ np.asarray(y, dtype=float).reshape(self.K, self.n)

    def linearize(self, y, t: float) -> GalerkinLinearization:
        X = self.node_states(y)
        q, f, dq, df, b = self.circuit.evaluate(X, self.quad.nodes, t, self.forced)
        WH = self.weights[:, None] * self.H
        return GalerkinLinearization(self, WH.T @ q, WH.T @ f, WH.T @ b, dq, df)

    def limit(self, y, dy) -> np.ndarray:
        s = self.circuit.limit_scale(self.node_states(y), -self.node_states(dy))
        return dy * s.min()

    def block_norms(self, v, kind: str = "state") -> np.ndarray:
        return block_norms(self.circuit, v, self.K, kind)

    def norm(self, v, kind: str = "state") -> float:
        return float(self.block_norms(v, kind).max())


def sg_assemble(circuit: Circuit, basis: GpcBasis, quad: RuleND | None = None) -> GalerkinSystem:
    quad = quad if quad is not None else sg_quadrature(basis, circuit.param_degree)
    return GalerkinSystem(circuit, basis, quad)


def sg_solve_dc(circuit: Circuit, basis: GpcBasis, quad: RuleND | None = None,
                opts: NewtonOptions = NewtonOptions(), stats: NewtonStats | None = None,
                y0=None) -> GpcState:
    system = sg_assemble(circuit, basis, quad)
    y0 = lift_nominal(circuit, basis, opts) if y0 is None else y0
    y, _ = solve_operating_point(system, 0.0, y0, opts, stats)
    return GpcState(y, basis, 0.0)


def sg_solve_transient(circuit: Circuit, basis: GpcBasis, quad: RuleND | None, t_span,
                       controller: StepController = StepController(),
                       opts: NewtonOptions = NewtonOptions(), stats: NewtonStats | None = None):
    system = sg_assemble(circuit, basis, quad)
    stats = stats if stats is not None else NewtonStats()
    ic = ic_rows(circuit)
    y0 = None if ic else sg_solve_dc(circuit, basis, system.quad, opts, stats).coeffs
    return transient_solve(system, t_span=t_span, controller=controller, opts=opts, x0=y0,
                           ic=ic, stats=stats, breakpoints=circuit.breakpoints())


def run_sg(circuit: Circuit, basis: GpcBasis, analysis: str = "dc", t_span=None,
           quad: RuleND | None = None, controller: StepController = StepController(),
           opts: NewtonOptions = NewtonOptions()) -> UqResult:
    start = time.perf_counter()
    quad = quad if quad is not None else sg_quadrature(basis, circuit.param_degree)
    stats = NewtonStats()
    info = {"K": basis.size, "quadrature_nodes": quad.size}
    if analysis == "dc":
        st = sg_solve_dc(circuit, basis, quad, opts, stats)
        times, coeffs = np.zeros(1), st.blocks[None]
    else:
        traj = sg_solve_transient(circuit, basis, quad, t_span, controller, opts, stats)
        times = traj.times
        coeffs = traj.states.reshape(len(times), basis.size, circuit.n)
        info.update(steps=traj.accepted, rejected=traj.rejected, min_step=traj.min_step)
    info["newton"] = stats.as_dict()
    return UqResult.from_coeffs("sg", times, coeffs, basis, circuit.unknown_names,
                                evaluations=quad.size, wall_time=time.perf_counter() - start,
                                info=info)
