"""Expansion states, UQ results and surrogate post-processing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..polychaos import GpcBasis, moments_from_coeffs
from ..quadrature import RuleND


@dataclass(frozen=True)
class GpcState:
    """Stacked coefficients ``[x^1; ...; x^K]`` of an n-unknown circuit."""

    coeffs: np.ndarray  # (K*n,)
    basis: GpcBasis
    t: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if c.size % self.basis.size:
            raise ValueError(f"{c.size} coefficients do not split into {self.basis.size} blocks")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite gPC coefficients")
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.basis.size

    @property
    def n(self) -> int:
        return self.coeffs.size // self.K

    @property
    def blocks(self) -> np.ndarray:
        return self.coeffs.reshape(self.K, self.n)


def surrogate_eval(state: GpcState, xi) -> np.ndarray:
    """``sum_k x^k H_k(xi)``; ``xi`` may hold a batch of points (..., d)."""
    H = state.basis.evaluate(np.asarray(xi, dtype=float))
    return H @ state.blocks


def moments(state: GpcState) -> tuple[np.ndarray, np.ndarray]:
    """Mean (first block) and variance (sum of squares of the rest)."""
    return moments_from_coeffs(state.blocks)


def sampling_speedup_ratio(quad: RuleND, basis: GpcBasis) -> float:
    """``kappa_samp = N_hat / K``: collocation nodes per stochastic-testing point.

    For nested Smolyak candidates the ratio approaches about ``2**p`` only
    when d is large; at small d it is much lower.
    """
    return quad.size / basis.size


@dataclass
class UqResult:
    """Statistics of every MNA unknown over a time axis (length 1 for DC)."""

    method: str
    times: np.ndarray  # (T,)
    mean: np.ndarray  # (T, n)
    std: np.ndarray  # (T, n)
    names: list[str]
    coeffs: np.ndarray | None = None  # (T, K, n)
    basis: GpcBasis | None = None
    evaluations: int = 0
    wall_time: float = 0.0
    mean_stderr: np.ndarray | None = None
    std_stderr: np.ndarray | None = None
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.std < 0):
            raise ValueError("negative standard deviation")

    @classmethod
    def from_coeffs(cls, method, times, coeffs, basis, names, **kw) -> "UqResult":
        coeffs = np.asarray(coeffs, dtype=float)
        mean = coeffs[:, 0, :].copy()
        std = np.sqrt(np.sum(coeffs[:, 1:, :] ** 2, axis=1))
        return cls(method, np.asarray(times, dtype=float), mean, std, list(names),
                   coeffs, basis, **kw)

    def state(self, i: int = -1) -> GpcState:
        if self.coeffs is None:
            raise ValueError(f"{self.method} results carry no expansion coefficients")
        return GpcState(self.coeffs[i].reshape(-1), self.basis, float(self.times[i]))

    def index(self, output: str) -> int:
        key = output.strip().lower()
        names = [s.lower() for s in self.names]
        if key in names:
            return names.index(key)
        if f"v({key})" in names:
            return names.index(f"v({key})")
        raise KeyError(f"no output {output!r}")
