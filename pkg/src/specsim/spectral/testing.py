"""Greedy selection of stochastic-testing points from a quadrature candidate set."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..polychaos import GpcBasis
from ..quadrature import RuleND, smolyak_grid, tensor_gauss

log = logging.getLogger(__name__)

DEFAULT_BETA = 1e-2


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class TestingSet:
    """K testing points with ``V[i, j] = H_j(points[i])`` and its inverse."""

    __test__ = False  # not a pytest class

    points: np.ndarray  # (K, d)
    V: np.ndarray
    V_inv: np.ndarray
    beta_threshold: float
    candidate_count: int
    candidate_indices: np.ndarray

    @property
    def K(self) -> int:
        return self.points.shape[0]

    @property
    def cond(self) -> float:
        return float(np.linalg.cond(self.V))


def default_candidates(basis: GpcBasis) -> RuleND:
    """Tensor Gauss with p+1 points per axis for d <= 3, Smolyak level p+1 beyond."""
    if basis.dim <= 3:
        return tensor_gauss(basis.distributions, basis.order + 1)
    return smolyak_grid(basis.distributions, basis.order + 1)


def select_testing_points(candidates: RuleND, basis: GpcBasis,
                          beta: float = DEFAULT_BETA) -> TestingSet:
    """Pick K candidates in order of decreasing |weight|.

    A candidate is accepted when the part of its basis vector orthogonal to
    the rows already accepted keeps more than ``beta`` of its norm.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    K = basis.size
    n_cand = candidates.size
    if n_cand < K:
        raise SelectionError(
            f"{n_cand} candidate points cannot supply {K} testing points; use a richer rule")
    order = np.argsort(-np.abs(candidates.weights), kind="stable")
    H = basis.evaluate(candidates.nodes)
    Q = np.zeros((K, K))  # orthonormal rows spanning accepted basis vectors
    chosen = []
    for j in order:
        h = H[j]
        h_norm = np.linalg.norm(h)
        r = h.copy()
        m = len(chosen)
        for _ in range(2):  # classical Gram-Schmidt, repeated once for stability
            r -= Q[:m].T @ (Q[:m] @ r)
        r_norm = np.linalg.norm(r)
        if h_norm > 0 and r_norm / h_norm > beta:
            Q[m] = r / r_norm
            chosen.append(int(j))
            if len(chosen) == K:
                break
    if len(chosen) < K:
        raise SelectionError(
            f"only {len(chosen)} of {K} testing points accepted from {n_cand} candidates; "
            "lower beta or use a richer candidate rule")
    idx = np.array(chosen)
    V = H[idx]
    V_inv = np.linalg.inv(V)
    tset = TestingSet(candidates.nodes[idx].copy(), V, V_inv, float(beta), n_cand, idx)
    log.info("selected %d testing points from %d candidates, cond(V)=%.3e", K, n_cand, tset.cond)
    return tset
