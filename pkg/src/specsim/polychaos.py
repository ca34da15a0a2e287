"""Orthonormal polynomial chaos bases for independent random parameters.

Four families are supported, each with its standard density:

============  ===========================================  ============
family        density                                      support
============  ===========================================  ============
gaussian      exp(-x^2/2) / sqrt(2 pi)                     (-inf, inf)
gamma(g)      x^(g-1) exp(-x) / Gamma(g)                   [0, inf)
beta(a, b)    x^(a-1) (1-x)^(b-1) / B(a, b)                [0, 1]
uniform       1/2                                          [-1, 1]
============  ===========================================  ============

Polynomials are stored as monic three-term recurrences plus a norm
sequence and normalized on evaluation. Beta variables are handled on the
Jacobi interval [-1, 1] through ``t = 2x - 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FAMILIES = ("gaussian", "gamma", "beta", "uniform")
MAX_ORDER = 8
_SUPPORT_TOL = 1e-12


class BasisError(ValueError):
    """Invalid distribution, degree or evaluation point."""


@dataclass(frozen=True)
class Distribution:
    """A univariate parameter distribution from the supported families."""

    family: str
    shape: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BasisError(f"unsupported distribution family {self.family!r}")
        want = {"gaussian": 0, "uniform": 0, "gamma": 1, "beta": 2}[self.family]
        if len(self.shape) != want:
            raise BasisError(
                f"{self.family} takes {want} shape parameter(s), got {len(self.shape)}")
        for s in self.shape:
            if not (np.isfinite(s) and s > 0):
                raise BasisError(f"shape parameters must be positive, got {self.shape}")
        object.__setattr__(self, "shape", tuple(float(s) for s in self.shape))

    @classmethod
    def gaussian(cls) -> "Distribution":
        return cls("gaussian")

    @classmethod
    def uniform(cls) -> "Distribution":
        return cls("uniform")

    @classmethod
    def gamma(cls, g: float) -> "Distribution":
        return cls("gamma", (g,))

    @classmethod
    def beta(cls, a: float, b: float) -> "Distribution":
        return cls("beta", (a, b))

    @property
    def support(self) -> tuple[float, float]:
        return {
            "gaussian": (-math.inf, math.inf),
            "gamma": (0.0, math.inf),
            "beta": (0.0, 1.0),
            "uniform": (-1.0, 1.0),
        }[self.family]

    @property
    def bounded(self) -> bool:
        lo, hi = self.support
        return math.isfinite(lo) or math.isfinite(hi)

    @property
    def symmetric(self) -> bool:
        if self.family == "beta":
            return self.shape[0] == self.shape[1]
        return self.family in ("gaussian", "uniform")

    def mean(self) -> float:
        if self.family == "gamma":
            return self.shape[0]
        if self.family == "beta":
            a, b = self.shape
            return a / (a + b)
        return 0.0

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        if self.family == "gaussian":
            return np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi)
        if self.family == "uniform":
            return np.where(inside, 0.5, 0.0)
        if self.family == "gamma":
            (g,) = self.shape
            xs = np.where(inside, x, 1.0)
            val = np.exp((g - 1) * np.log(xs) - xs - math.lgamma(g))
            at_zero = 1.0 if g == 1 else 0.0
            return np.where(x > 0, val, np.where(x == 0, at_zero, 0.0))
        a, b = self.shape
        xs = np.clip(x, 1e-300, 1 - 1e-16)
        logb = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        val = np.exp((a - 1) * np.log(xs) + (b - 1) * np.log1p(-xs) - logb)
        return np.where(inside, val, 0.0)

    def moment(self, m: int) -> float:
        """Closed-form raw moment E[x^m]."""
        if self.family == "gaussian":
            return 0.0 if m % 2 else float(math.prod(range(m - 1, 0, -2)))
        if self.family == "uniform":
            return 0.0 if m % 2 else 1.0 / (m + 1)
        if self.family == "gamma":
            (g,) = self.shape
            return math.exp(math.lgamma(g + m) - math.lgamma(g))
        a, b = self.shape
        return math.exp(math.lgamma(a + m) + math.lgamma(a + b)
                        - math.lgamma(a) - math.lgamma(a + b + m))

    def to_standard(self, x):
        """Map a user-facing value onto the recurrence variable."""
        if self.family == "beta":
            return 2.0 * np.asarray(x, dtype=float) - 1.0
        return np.asarray(x, dtype=float)

    def from_standard(self, t):
        if self.family == "beta":
            return 0.5 * (np.asarray(t, dtype=float) + 1.0)
        return np.asarray(t, dtype=float)

    def check_support(self, x) -> None:
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        if np.any(~np.isfinite(x)):
            raise BasisError("non-finite parameter value")
        if np.any(x < lo - _SUPPORT_TOL) or np.any(x > hi + _SUPPORT_TOL):
            raise BasisError(
                f"point outside the {self.family} support [{lo}, {hi}]: {x}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "gaussian":
            return rng.standard_normal(size)
        if self.family == "uniform":
            return rng.uniform(-1.0, 1.0, size)
        if self.family == "gamma":
            return rng.standard_gamma(self.shape[0], size)
        return rng.beta(*self.shape, size)

    def __str__(self):
        if self.shape:
            return f"{self.family}({','.join(f'{s:g}' for s in self.shape)})"
        return self.family


@dataclass(frozen=True)
class RecurrenceTable:
    """Monic three-term recurrence ``pi_{j+1} = (t - alpha_j) pi_j - beta_j pi_{j-1}``.

    ``beta[0]`` is the total mass of the measure (always 1 here) and
    ``norms[j]`` is the L2 norm of the monic ``pi_j``.
    """

    dist: Distribution
    degree_max: int
    alpha: np.ndarray
    beta: np.ndarray
    norms: np.ndarray


def _jacobi_recurrence(n: int, a: float, b: float):
    # monic Jacobi on [-1, 1], weight (1-t)^a (1+t)^b normalized to mass 1
    alpha = np.empty(n)
    beta = np.empty(n)
    ab = a + b
    alpha[0] = (b - a) / (ab + 2.0)
    beta[0] = 1.0
    if n > 1:
        beta[1] = 4.0 * (a + 1) * (b + 1) / ((ab + 2) ** 2 * (ab + 3))
    for j in range(1, n):
        s = 2 * j + ab
        alpha[j] = (b * b - a * a) / (s * (s + 2))
        if j >= 2:
            beta[j] = 4.0 * j * (j + a) * (j + b) * (j + ab) / (s * s * (s + 1) * (s - 1))
    return alpha, beta


def recurrence_coeffs(dist: Distribution, degree_max: int) -> RecurrenceTable:
    """Closed-form recurrence table for ``dist`` up to ``degree_max``.

    Coefficient ``j`` is available for ``0 <= j <= degree_max`` so that the
    same table also drives a ``degree_max + 1``-point Gauss rule.
    """
    if not isinstance(dist, Distribution):
        raise BasisError(f"unsupported distribution {dist!r}")
    if int(degree_max) != degree_max or degree_max < 0:
        raise BasisError(f"degree_max must be a non-negative integer, got {degree_max}")
    n = int(degree_max) + 1
    j = np.arange(n, dtype=float)
    if dist.family == "gaussian":
        alpha = np.zeros(n)
        beta = j.copy()
        beta[0] = 1.0
    elif dist.family == "uniform":
        alpha = np.zeros(n)
        beta = j**2 / (4 * j**2 - 1)
        beta[0] = 1.0
    elif dist.family == "gamma":
        (g,) = dist.shape
        alpha = 2 * j + g
        beta = j * (j + g - 1)
        beta[0] = 1.0
    else:
        a, b = dist.shape
        # beta(a, b) on [0,1] is Jacobi(b-1, a-1) on [-1,1]
        alpha, beta = _jacobi_recurrence(n, b - 1.0, a - 1.0)
    norms = np.sqrt(np.cumprod(beta))
    for arr in (alpha, beta, norms):
        arr.setflags(write=False)
    return RecurrenceTable(dist, int(degree_max), alpha, beta, norms)


def _eval_all(table: RecurrenceTable, degree: int, t: np.ndarray) -> np.ndarray:
    """Orthonormal values of degrees 0..degree at standard points ``t``."""
    out = np.empty((degree + 1,) + t.shape)
    prev = np.zeros_like(t)
    cur = np.ones_like(t)
    out[0] = 1.0
    for j in range(degree):
        nxt = (t - table.alpha[j]) * cur - (table.beta[j] * prev if j else 0.0)
        prev, cur = cur, nxt
        out[j + 1] = cur
    norms = table.norms[: degree + 1].reshape((-1,) + (1,) * t.ndim)
    return out / norms


def eval_univariate(table: RecurrenceTable, degree: int, point):
    """Orthonormal polynomial of the given degree at ``point`` (scalar or array)."""
    if int(degree) != degree or not 0 <= degree <= table.degree_max:
        raise BasisError(f"degree {degree} outside 0..{table.degree_max}")
    t = table.dist.to_standard(point)
    vals = _eval_all(table, int(degree), np.atleast_1d(t))[int(degree)]
    return float(vals[0]) if np.ndim(point) == 0 else vals.reshape(np.shape(point))


def count_indices(d: int, p: int, scheme: str = "total_degree") -> int:
    if scheme == "total_degree":
        return math.comb(p + d, p)
    if scheme == "tensor_product":
        return (p + 1) ** d
    raise BasisError(f"unknown truncation scheme {scheme!r}")


def build_index_set(d: int, p: int, scheme: str = "total_degree") -> list[tuple[int, ...]]:
    """Multi-indices in graded lexicographic order.

    Sorted by total degree, then lexicographically, so ``(0,...,0)`` comes
    first and e.g. ``d=2, p=1`` gives ``[(0, 0), (0, 1), (1, 0)]``.
    """
    if d < 1 or p < 0:
        raise BasisError(f"need d >= 1 and p >= 0, got d={d}, p={p}")
    if scheme not in ("total_degree", "tensor_product"):
        raise BasisError(f"unknown truncation scheme {scheme!r}")
    out = []
    for alpha in itertools.product(range(p + 1), repeat=d):
        if scheme == "total_degree" and sum(alpha) > p:
            continue
        out.append(alpha)
    out.sort(key=lambda a: (sum(a), a))
    return out


@dataclass(frozen=True)
class GpcBasis:
    """Multivariate orthonormal basis ``H_k(xi) = prod_j phi_{alpha_j}(xi_j)``.

    Indices ``k`` are zero-based in code; ``H_0`` is the constant.
    """

    distributions: tuple[Distribution, ...]
    order: int
    scheme: str = "total_degree"
    index_set: tuple[tuple[int, ...], ...] = field(init=False)
    tables: tuple[RecurrenceTable, ...] = field(init=False)

    def __post_init__(self):
        dists = tuple(self.distributions)
        if not dists:
            raise BasisError("a basis needs at least one distribution")
        if self.order > MAX_ORDER:
            raise BasisError(f"order {self.order} exceeds the supported maximum {MAX_ORDER}")
        object.__setattr__(self, "distributions", dists)
        object.__setattr__(
            self, "index_set", tuple(build_index_set(len(dists), self.order, self.scheme)))
        object.__setattr__(
            self, "tables", tuple(recurrence_coeffs(dd, self.order) for dd in dists))

    @property
    def dim(self) -> int:
        return len(self.distributions)

    @property
    def size(self) -> int:
        return len(self.index_set)

    @property
    def indices(self) -> np.ndarray:
        return np.array(self.index_set, dtype=int).reshape(self.size, self.dim)

    def check_points(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1:] != (self.dim,):
            raise BasisError(f"expected points with {self.dim} coordinates, got shape {xi.shape}")
        for j, dist in enumerate(self.distributions):
            dist.check_support(xi[..., j])
        return xi

    def evaluate(self, xi) -> np.ndarray:
        """Basis matrix: ``out[..., k] = H_k(xi[...])`` for points of shape (..., d)."""
        xi = self.check_points(xi)
        flat = xi.reshape(-1, self.dim)
        out = np.ones((flat.shape[0], self.size))
        idx = self.indices
        for j, (dist, table) in enumerate(zip(self.distributions, self.tables)):
            uni = _eval_all(table, self.order, dist.to_standard(flat[:, j]))
            out *= uni[idx[:, j]].T
        return out.reshape(xi.shape[:-1] + (self.size,))

    def project_samples(self, xi, values, weights) -> np.ndarray:
        """Discrete projection ``sum_j w_j H_k(xi_j) values_j`` for every k."""
        H = self.evaluate(xi)
        return np.einsum("j,jk,j...->k...", np.asarray(weights, float), H, np.asarray(values, float))


def eval_multivariate(basis: GpcBasis, k: int, xi) -> float:
    """``H_k(xi)`` with a one-based index ``k`` as in the expansion sum."""
    if not 1 <= k <= basis.size:
        raise BasisError(f"basis index {k} outside 1..{basis.size}")
    return float(basis.evaluate(np.asarray(xi, dtype=float))[k - 1])


def eval_basis_vector(basis: GpcBasis, xi) -> np.ndarray:
    return basis.evaluate(np.asarray(xi, dtype=float))


def moments_from_coeffs(coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of a surrogate from its coefficient blocks (axis 0)."""
    c = np.asarray(coeffs, dtype=float)
    return c[0].copy(), np.sum(c[1:] ** 2, axis=0)


def make_basis(dists: Sequence[Distribution], order: int,
               scheme: str = "total_degree") -> GpcBasis:
    return GpcBasis(tuple(dists), int(order), scheme)
