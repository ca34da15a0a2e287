"""DAE systems ``d/dt q(y) + f(y) = b(t)`` consumed by the Newton and time integrators.

:class:`PointSystem` stacks K copies of a circuit evaluated at parameter
points. With ``transform=None`` the copies are independent (a batch of
deterministic simulations, as used by Monte Carlo and collocation). With a
K x K transform ``V`` the unknowns are expansion coefficients and copy k
sees the state ``sum_j V[k, j] y_j``, which is the stochastic-testing
system; its Jacobian factors as ``blkdiag(J_k) (V kron I_n)`` and is solved
block by block.

Linear-algebra objects returned by ``linearize`` expose ``solve(cq, cf, rhs)``
for ``(cq dq/dy + cf df/dy) z = rhs`` plus products with ``dq/dy`` and
``df/dy``; integrators never touch the block structure directly.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.linalg as sla

from .circuit.model import Circuit

VOLT_SCALE = 1.0
AMP_SCALE = 1e-3


class SingularJacobianError(np.linalg.LinAlgError):
    def __init__(self, msg, rows=()):
        self.rows = tuple(rows)
        super().__init__(msg)


def _diagnose(circuit: Circuit, mats: np.ndarray) -> str:
    names = circuit.unknown_names
    bad = set()
    for m in np.atleast_3d(mats).reshape(-1, circuit.n, circuit.n):
        zero_rows = np.where(~np.any(m != 0, axis=1))[0]
        zero_cols = np.where(~np.any(m != 0, axis=0))[0]
        bad.update(zero_rows.tolist())
        bad.update(zero_cols.tolist())
    if bad:
        return "singular MNA Jacobian; check for floating nodes at " + ", ".join(
            names[i] for i in sorted(bad))
    return "singular MNA Jacobian (floating subcircuit or voltage-source loop)"


def _batched_solve(A: np.ndarray, B: np.ndarray, circuit: Circuit) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            out = np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        raise SingularJacobianError(_diagnose(circuit, A)) from None
    if not np.all(np.isfinite(out)):
        raise SingularJacobianError(_diagnose(circuit, A))
    return out


class PointLinearization:
    """Linearization of a :class:`PointSystem` at one state."""

    def __init__(self, system: "PointSystem", X, q, f, b, dq, df, drive):
        self.system = system
        self.X = X  # (K, n) circuit states at the points
        self.q_blocks, self.f_blocks, self.b_blocks = q, f, b
        self.dq_blocks, self.df_blocks = dq, df
        self.drive_blocks = drive  # unscaled f - b, for scaling sensitivities
        self.q = q.reshape(-1)
        self.f = f.reshape(-1)
        self.b = b.reshape(-1)

    def _to_points(self, M):
        """(V kron I) M for M of shape (K*n,) or (K*n, m), returned as (K, n, m)."""
        K, n = self.system.K, self.system.n
        M = M.reshape(K, n, -1)
        V = self.system.transform
        if V is None:
            return M
        return np.einsum("kj,jam->kam", V, M)

    def _from_points(self, Y):
        V_inv = self.system.transform_inv
        if V_inv is None:
            return Y
        return np.einsum("kj,jam->kam", V_inv, Y)

    def block_matrices(self, cq: float, cf: float) -> np.ndarray:
        return cq * self.dq_blocks + cf * self.df_blocks

    def matrix(self, cq: float, cf: float) -> np.ndarray:
        """Assembled coupled matrix ``blkdiag(cq dq_k + cf df_k) (V kron I)``."""
        K, n = self.system.K, self.system.n
        A = self.block_matrices(cq, cf)
        V = self.system.transform if self.system.transform is not None else np.eye(K)
        return np.einsum("kab,kj->kajb", A, V).reshape(K * n, K * n)

    def solve(self, cq: float, cf: float, rhs):
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        K, n = self.system.K, self.system.n
        if self.system.decoupled:
            A = self.block_matrices(cq, cf)
            Y = _batched_solve(A, rhs.reshape(K, n, -1), self.system.circuit)
            Z = self._from_points(Y)
            out = Z.reshape(K * n, -1)
        else:
            M = self.matrix(cq, cf)
            try:
                lu = sla.lu_factor(M, check_finite=True)
            except (ValueError, np.linalg.LinAlgError):
                raise SingularJacobianError(_diagnose(self.system.circuit, self.dq_blocks * cq + self.df_blocks * cf)) from None
            if np.any(np.diag(lu[0]) == 0):
                raise SingularJacobianError(_diagnose(self.system.circuit, self.block_matrices(cq, cf)))
            out = sla.lu_solve(lu, rhs.reshape(K * n, -1))
        return out[:, 0] if vec else out

    def dq_dot(self, M):
        return self._apply(self.dq_blocks, M)

    def df_dot(self, M):
        return self._apply(self.df_blocks, M)

    def _apply(self, blocks, M):
        M = np.asarray(M, dtype=float)
        vec = M.ndim == 1
        P = self._to_points(M)
        out = np.einsum("kab,kbm->kam", blocks, P).reshape(self.system.size, -1)
        return out[:, 0] if vec else out


@dataclass
class PointSystem:
    circuit: Circuit
    points: np.ndarray  # (K, d)
    transform: np.ndarray | None = None  # V, (K, K)
    transform_inv: np.ndarray | None = None
    decoupled: bool = True
    scale: np.ndarray | None = None  # per-point time scaling a_k of f and b
    forced: Mapping[int, float] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if self.circuit.d == 0 and pts.ndim < 2:
            pts = pts.reshape(max(1, pts.size), 0)
        self.points = np.atleast_2d(pts)
        if self.transform is not None:
            self.transform = np.asarray(self.transform, dtype=float)
            if self.transform_inv is None:
                self.transform_inv = np.linalg.inv(self.transform)

    @property
    def K(self) -> int:
        return self.points.shape[0]

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

    def with_scale(self, scale) -> "PointSystem":
        return PointSystem(self.circuit, self.points, self.transform, self.transform_inv,
                           self.decoupled, np.asarray(scale, dtype=float), self.forced)

    def with_forced(self, forced) -> "PointSystem":
        return PointSystem(self.circuit, self.points, self.transform, self.transform_inv,
                           self.decoupled, self.scale, forced)

    def point_states(self, y) -> np.ndarray:
        Y = np.asarray(y, dtype=float).reshape(self.K, self.n)
        return Y if self.transform is None else self.transform @ Y

    def coefficients(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(self.K, self.n)
        return X if self.transform_inv is None else self.transform_inv @ X

    def linearize(self, y, t: float) -> PointLinearization:
        X = self.point_states(y)
        q, f, dq, df, b = self.circuit.evaluate(X, self.points, t, self.forced)
        drive = f - b
        if self.scale is not None:
            a = self.scale[:, None]
            f = f * a
            b = b * a
            df = df * a[:, :, None]
        return PointLinearization(self, X, q, f, b, dq, df, drive)

    def limit(self, y, dy) -> np.ndarray:
        """Scale a Newton correction ``dy`` (applied as ``y - dy``)."""
        X = self.point_states(y)
        dX = self.point_states(dy)
        s = self.circuit.limit_scale(X, -dX)
        if self.transform is None:
            return (dy.reshape(self.K, self.n) * s[:, None]).reshape(-1)
        return dy * s.min()

    def block_norms(self, v, kind: str = "state") -> np.ndarray:
        return block_norms(self.circuit, v, self.K, kind)

    def norm(self, v, kind: str = "state") -> float:
        return float(self.block_norms(v, kind).max())


@functools.lru_cache(maxsize=256)
def _scales(n_nodes: int, n: int, kind: str) -> np.ndarray:
    volt = np.arange(n) < n_nodes
    if kind == "state":
        out = np.where(volt, 1.0 / VOLT_SCALE, 1.0 / AMP_SCALE)
    else:
        # node rows are KCL (currents); branch rows are voltage equations
        out = np.where(volt, 1.0 / AMP_SCALE, 1.0 / VOLT_SCALE)
    out.setflags(write=False)
    return out


def unknown_scales(circuit: Circuit, kind: str) -> np.ndarray:
    return 1.0 / _scales(len(circuit.node_names), circuit.n, kind)


def block_norms(circuit: Circuit, v, K: int, kind: str = "state") -> np.ndarray:
    """Weighted RMS of each n-block: volts over 1 V, amperes over 1 mA."""
    inv = _scales(len(circuit.node_names), circuit.n, kind)
    V = np.asarray(v, dtype=float).reshape(K, circuit.n) * inv
    return np.sqrt(np.einsum("ka,ka->k", V, V) / circuit.n)
