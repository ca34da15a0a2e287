"""One-dimensional and d-dimensional quadrature rules under probability measures.

All weights absorb the density, so they sum to one and ``integrate``
returns expectations directly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.sparse import coo_matrix

from .polychaos import Distribution, recurrence_coeffs

MERGE_TOL = 1e-12


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class Rule1D:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    exact_degree: int

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class RuleND:
    nodes: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)
    kind: str

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]


def gauss_rule(dist: Distribution, n_points: int) -> Rule1D:
    """Golub-Welsch rule: eigen-decomposition of the Jacobi matrix."""
    if not isinstance(dist, Distribution):
        raise QuadratureError(f"unsupported distribution {dist!r}")
    if n_points < 1:
        raise QuadratureError(f"need at least one node, got {n_points}")
    table = recurrence_coeffs(dist, n_points - 1)
    diag = np.array(table.alpha[:n_points], dtype=float)
    off = np.sqrt(table.beta[1:n_points])
    if n_points == 1:
        t, w = diag.copy(), np.ones(1)
    else:
        t, vec = eigh_tridiagonal(diag, off)
        order = np.argsort(t)
        t = t[order]
        w = vec[0, order] ** 2
    if dist.symmetric:
        # enforce exact mirror symmetry so that nodes shared between rules merge
        t = 0.5 * (t - t[::-1])
        w = 0.5 * (w + w[::-1])
        if n_points % 2:
            t[n_points // 2] = 0.0
    w = w / w.sum()
    x = dist.from_standard(t)
    return Rule1D(_frozen(x), _frozen(w), "gauss", 2 * n_points - 1)


def clenshaw_curtis_rule(level: int, dist: Distribution | None = None) -> Rule1D:
    """Nested Clenshaw-Curtis rule with ``2**level + 1`` nodes (one node at level 0)."""
    if dist is not None and dist.family != "uniform":
        raise QuadratureError(
            f"Clenshaw-Curtis needs a uniform parameter on [-1, 1], got {dist}")
    if level < 0:
        raise QuadratureError(f"level must be >= 0, got {level}")
    if level == 0:
        return Rule1D(_frozen(np.zeros(1)), _frozen(np.ones(1)), "clenshaw_curtis", 1)
    n = 2**level + 1
    N = n - 1
    theta = np.pi * np.arange(n) / N
    x = -np.cos(theta)
    x[N // 2] = 0.0
    x = 0.5 * (x - x[::-1])
    w = np.empty(n)
    # standard closed form on [-1, 1] (Lebesgue weights summing to 2)
    for j in range(n):
        s = 0.0
        for k in range(1, N // 2 + 1):
            b = 1.0 if 2 * k == N else 2.0
            s += b / (4 * k * k - 1) * math.cos(2 * k * theta[j])
        c = 1.0 if j in (0, N) else 2.0
        w[j] = c / N * (1.0 - s)
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    return Rule1D(_frozen(x), _frozen(w), "clenshaw_curtis", n - 1)


def tensor_grid(rules: Sequence[Rule1D]) -> RuleND:
    if not rules:
        raise QuadratureError("need at least one 1-D rule")
    nodes = np.array(list(itertools.product(*[r.nodes for r in rules])), dtype=float)
    weights = np.array([math.prod(ws) for ws in itertools.product(*[r.weights for r in rules])])
    return RuleND(_frozen(nodes.reshape(-1, len(rules))), _frozen(weights), "tensor")


def tensor_gauss(dists: Sequence[Distribution], n_points: int | Sequence[int]) -> RuleND:
    if np.ndim(n_points) == 0:
        n_points = [int(n_points)] * len(dists)
    return tensor_grid([gauss_rule(d, n) for d, n in zip(dists, n_points)])


def _smolyak_1d(dist: Distribution, index: int) -> Rule1D:
    if dist.family == "uniform":
        return clenshaw_curtis_rule(index - 1)
    return gauss_rule(dist, index)


def smolyak_grid(dists: Sequence[Distribution], level: int) -> RuleND:
    """Smolyak combination rule.

    ``level`` L combines 1-D rules of index 1..L: Clenshaw-Curtis with
    ``2**(i-1) + 1`` nodes (one node for i = 1) for uniform parameters and
    i-point Gauss rules otherwise.
    """
    d = len(dists)
    if level < 1:
        raise QuadratureError(f"Smolyak level must be >= 1, got {level}")
    if d < 1:
        raise QuadratureError("need at least one distribution")
    q = level + d - 1
    cache = {}
    nodes, weights = [], []
    for idx in itertools.product(range(1, level + 1), repeat=d):
        s = sum(idx)
        if s < max(d, q - d + 1) or s > q:
            continue
        coef = (-1) ** (q - s) * math.comb(d - 1, q - s)
        rules = []
        for j, i in enumerate(idx):
            key = (j, i)
            if key not in cache:
                cache[key] = _smolyak_1d(dists[j], i)
            rules.append(cache[key])
        t = tensor_grid(rules)
        nodes.append(t.nodes)
        weights.append(coef * t.weights)
    rule = RuleND(np.vstack(nodes), np.concatenate(weights), "smolyak")
    return merge_nodes(rule)


def merge_nodes(rule: RuleND, tol: float = MERGE_TOL) -> RuleND:
    """Merge nodes closer than ``tol`` (max-norm), summing weights.

    Nodes whose merged weight cancels to round-off are dropped. Output is
    sorted lexicographically.
    """
    nodes = np.asarray(rule.nodes, dtype=float)
    w = np.asarray(rule.weights, dtype=float)
    n = len(w)
    pairs = cKDTree(nodes).query_pairs(tol, p=np.inf, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    ncomp, label = connected_components(graph, directed=False)
    merged_w = np.zeros(ncomp)
    np.add.at(merged_w, label, w)
    first = np.full(ncomp, n)
    np.minimum.at(first, label, np.arange(n))
    merged_x = nodes[first]
    keep = np.abs(merged_w) > 1e-14 * max(np.abs(merged_w).max(), 1e-300)
    merged_x, merged_w = merged_x[keep], merged_w[keep]
    order = np.lexsort(merged_x.T[::-1])
    return RuleND(_frozen(merged_x[order]), _frozen(merged_w[order]), rule.kind)


def integrate(rule: RuleND, f: Callable[[np.ndarray], np.ndarray]):
    """``sum_j w_j f(xi_j)``; ``f`` maps one d-vector to a scalar or array."""
    vals = [np.asarray(f(x), dtype=float) for x in rule.nodes]
    return np.tensordot(rule.weights, np.array(vals), axes=1)


def gauss_points_for_degree(degree: int) -> int:
    """Fewest Gauss nodes integrating polynomials of ``degree`` exactly."""
    return max(1, math.ceil((degree + 1) / 2))


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a
