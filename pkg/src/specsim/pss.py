"""Stochastic periodic steady state by shooting Newton on the stochastic-testing system.

Forced circuits solve ``Phi(y, 0, T) - y = 0`` for the coefficient vector
``y``. Because every testing point evolves independently, the Monodromy
matrix is ``(V^-1 kron I) blkdiag(M_k) (V kron I)`` and ``Monodromy - I`` is
inverted block by block through the same similarity transform.

Autonomous circuits rescale time, ``t = tau * a(xi)``, with an expanded
scaling ``a(xi) = sum_k a_k H_k(xi)``, integrate over ``tau in [0, T0]`` and
pin the phase by fixing every coefficient of one node voltage (the constant
term to a level ``lambda``, the rest to zero). The sensitivity of the
end state to ``a`` follows the step-wise recursion, per testing point,

    s_1 = -J_1^-1 [ (-dq_0 + c a df_0|diff) s_0 + c (g_1 + g_0|diff) ]

with ``c = h/2``, ``g = f - b`` unscaled, ``J_1 = dq_1 + c a df_1`` and
``|diff`` restricting to rows that carry charge.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from .circuit.model import Circuit, sample_points
from .detsolve import (ConvergenceError, NewtonOptions, NewtonStats, StepController,
                       _predict, _propagate, _StepSolver, dc_solve,
                       initial_state, transient_solve)
from .polychaos import GpcBasis
from .systems import PointSystem, SingularJacobianError, _batched_solve

log = logging.getLogger(__name__)

DEFAULT_STEPS = 200
HARMONICS = 10


class ShootingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShootingOptions:
    tol: float = 1e-9  # state norm of Phi(y) - y
    max_iters: int = 20
    steps_per_period: int = DEFAULT_STEPS
    warmup_periods: int = 5

    def __post_init__(self):
        if self.steps_per_period < 32:
            raise ValueError("steps_per_period must be >= 32")
        if not self.tol > 0 or self.max_iters < 1:
            raise ValueError("need tol > 0 and max_iters >= 1")


@dataclass
class ForcedShootingProblem:
    system: PointSystem
    basis: GpcBasis
    period: float
    y0: np.ndarray | None = None

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")


@dataclass
class AutonomousShootingProblem:
    system: PointSystem
    basis: GpcBasis
    period: float  # reference period T0
    node: int  # index of the phase node voltage
    level: float | None = None
    y0: np.ndarray | None = None
    a0: np.ndarray | None = None

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("reference period must be positive")
        if not self.system.circuit.is_voltage[self.node]:
            raise ValueError("the phase unknown must be a node voltage")


@dataclass
class PssSolution:
    """Periodic point ``coeffs`` plus the one-period coefficient trajectory."""

    coeffs: np.ndarray  # (K*n,)
    basis: GpcBasis
    circuit: Circuit
    period: float  # T for forced, T0 for autonomous
    times: np.ndarray  # (N+1,) grid over one period (tau for autonomous)
    trajectory: np.ndarray  # (N+1, K, n)
    iterations: int
    residual: float
    scaling: np.ndarray | None = None  # a_hat for autonomous circuits
    history: list = field(default_factory=list)
    node: int | None = None
    level: float | None = None

    @property
    def autonomous(self) -> bool:
        return self.scaling is not None

    @property
    def K(self) -> int:
        return self.basis.size

    @property
    def blocks(self) -> np.ndarray:
        return self.coeffs.reshape(self.K, -1)

    def scaling_at(self, xi) -> np.ndarray:
        if self.scaling is None:
            return np.ones(np.asarray(xi).shape[:-1])
        return self.basis.evaluate(xi) @ self.scaling

    def period_at(self, xi) -> np.ndarray:
        """Period surrogate ``T0 * a(xi)``."""
        return self.period * self.scaling_at(xi)

    def waveforms(self, xi, unknown: int) -> np.ndarray:
        """One-period samples of one unknown at points ``xi`` (S, d) -> (S, N+1)."""
        H = self.basis.evaluate(np.atleast_2d(xi))
        return H @ self.trajectory[:, :, unknown].T

    def realize(self, xi, t) -> np.ndarray:
        """State at physical times ``t`` for one point ``xi`` (periodic extension)."""
        xi = np.asarray(xi, dtype=float)
        H = self.basis.evaluate(xi)
        X = np.einsum("k,tkn->tn", H, self.trajectory)
        period = float(self.period_at(xi))
        tau = np.mod(np.asarray(t, dtype=float) / period, 1.0) * self.period
        return np.stack([np.interp(tau, self.times, X[:, a]) for a in range(X.shape[1])], axis=-1)


def _grid(period, steps):
    return np.linspace(0.0, period, steps + 1)


def _one_period(system, y0, grid, opts, stats, mode=None, scale_sens=False):
    """Integrate one period with trapezoidal steps from the start.

    ``mode``: None, "blocks" (per-point Monodromy, shape (K, n, n)) or "full"
    (dense sensitivity of the stacked unknowns). With ``scale_sens`` the
    per-point sensitivity to the time scaling is propagated too.
    """
    solver = _StepSolver(system, opts, stats)
    K, n = system.K, system.n
    diff = solver.diff.reshape(K, n)[:, :, None]
    lin = system.linearize(y0, grid[0])
    y = np.asarray(y0, dtype=float)
    states = [y]
    S = None
    if mode == "blocks":
        S = np.repeat(np.eye(n)[None], K, axis=0)
    elif mode == "full":
        S = np.eye(system.size)
    s = np.zeros((K, n, 1)) if scale_sens else None
    for i in range(1, len(grid)):
        h = grid[i] - grid[i - 1]
        c = 0.5 * h
        guess = _predict(grid[:i], states, grid[i]) if i >= 2 else y
        y1, lin1 = solver.step(y, lin, grid[i], h, "trap", guess)
        if mode == "blocks" or scale_sens:
            A1 = lin1.dq_blocks + c * lin1.df_blocks
            R = lin.dq_blocks - c * diff * lin.df_blocks
            if mode == "blocks":
                S = _batched_solve(A1, R @ S, system.circuit)
            if scale_sens:
                g = (lin1.drive_blocks + diff[:, :, 0] * lin.drive_blocks)[:, :, None]
                s = _batched_solve(A1, R @ s - c * g, system.circuit)
        elif mode == "full":
            S = _propagate(solver, lin, lin1, c, "trap", S)
        y, lin = y1, lin1
        states.append(y)
    return np.array(states), S, (s[:, :, 0] if scale_sens else None)


def _solve_blocks(system, M_blocks, g):
    """``(Monodromy - I)^-1 g`` through the similarity transform."""
    K, n = system.K, system.n
    G = g.reshape(K, n)
    if system.transform is not None:
        G = system.transform @ G
    A = M_blocks - np.eye(n)[None]
    try:
        Z = _batched_solve(A, G[:, :, None], system.circuit)[:, :, 0]
    except SingularJacobianError:
        raise ShootingError("Monodromy - I is singular; the circuit may be autonomous "
                            "(use .pss auto)") from None
    if system.transform_inv is not None:
        Z = system.transform_inv @ Z
    return Z.reshape(-1)


def warm_start(system, period, opts: ShootingOptions, newton_opts: NewtonOptions,
               stats=None, ic=None):
    """Operating point followed by a few periods of transient."""
    y = initial_state(system, 0.0, newton_opts, ic, stats)
    grid = _grid(period, opts.steps_per_period)
    for _ in range(opts.warmup_periods):
        states, _, _ = _one_period(system, y, grid, newton_opts, stats)
        y = states[-1]
    return y


def shoot_forced(problem: ForcedShootingProblem, opts: ShootingOptions = ShootingOptions(),
                 newton_opts: NewtonOptions = NewtonOptions(),
                 stats: NewtonStats | None = None, callback=None) -> PssSolution:
    """Shooting Newton for a periodically driven circuit.

    Decoupled systems (the default stochastic-testing form) use per-point
    Monodromy blocks; coupled ones (``decoupled=False`` or Galerkin) use the
    dense sensitivity of the stacked unknowns. ``callback(it, y)`` sees each
    iterate.
    """
    system = problem.system
    stats = stats if stats is not None else NewtonStats()
    grid = _grid(problem.period, opts.steps_per_period)
    y = (np.asarray(problem.y0, dtype=float).copy() if problem.y0 is not None
         else warm_start(system, problem.period, opts, newton_opts, stats))
    mode = "blocks" if getattr(system, "decoupled", False) else "full"
    history = []
    for it in range(opts.max_iters + 1):
        if callback is not None:
            callback(it, y)
        try:
            states, S, _ = _one_period(system, y, grid, newton_opts, stats, mode)
        except (ConvergenceError, SingularJacobianError) as exc:
            raise ShootingError(f"integration over one period failed: {exc}; "
                                "try a better initial guess from a longer transient") from exc
        g = states[-1] - y
        res = system.norm(g)
        history.append(res)
        if res <= opts.tol:
            return PssSolution(y, problem.basis, system.circuit, problem.period, grid,
                               states.reshape(len(grid), system.K, system.n), it, res,
                               history=history)
        if it == opts.max_iters:
            break
        if mode == "blocks":
            dy = _solve_blocks(system, S, g)
        else:
            try:
                dy = np.linalg.solve(S - np.eye(system.size), g)
            except np.linalg.LinAlgError:
                raise ShootingError("Monodromy - I is singular; the circuit may be autonomous "
                                    "(use .pss auto)") from None
        y = y - dy
    raise ShootingError(f"shooting did not converge in {opts.max_iters} iterations "
                        f"(residual {history[-1]:.3e}); try a longer warm-up transient")


@dataclass
class PilotRun:
    """Long deterministic transient of an oscillator at one parameter point."""

    period: float
    state: np.ndarray  # interpolated state at the last upward crossing
    level: float
    crossings: np.ndarray
    times: np.ndarray
    states: np.ndarray


def _upward_crossings(t, v, level, mask):
    idx = np.flatnonzero(mask[1:] & (v[:-1] < level) & (v[1:] >= level))
    frac = (level - v[idx]) / (v[idx + 1] - v[idx])
    return idx, frac, t[idx] + frac * (t[idx + 1] - t[idx])


def pilot_oscillation(circuit: Circuit, xi, period_guess: float, node: int,
                      level: float | None = None, periods: int = 30, kick: float = 0.1,
                      lte_tol: float = 1e-6, newton_opts: NewtonOptions = NewtonOptions()
                      ) -> PilotRun:
    """Long adaptive transient at ``xi`` and its limit-cycle period.

    The oscillation is started by displacing the phase node from its
    (unstable) operating point. The period is the mean spacing of upward
    crossings of ``level`` over the last ten periods; by default the level
    is the time average of the node over whole periods.
    """
    xi = np.asarray(xi, dtype=float)
    x0 = dc_solve(circuit, xi, newton_opts)
    x0[node] += kick  # backward-Euler start only sees q(x0), so no consistency needed
    system = PointSystem(circuit, xi.reshape(1, circuit.d))
    ctl = StepController(lte_tol=lte_tol, h_max=period_guess / 50.0)
    traj = transient_solve(system, t_span=(0.0, periods * period_guess), controller=ctl,
                           opts=newton_opts, x0=x0)
    t, X = traj.times, traj.states
    v = X[:, node]
    window = t >= t[-1] - 10 * period_guess
    if level is None:
        mid = 0.5 * (v[window].max() + v[window].min())
        _, _, cr = _upward_crossings(t, v, mid, window)
        if len(cr) >= 2:
            tt = np.linspace(cr[0], cr[-1], 20 * 64 * (len(cr) - 1) + 1)
            level = float(np.mean(np.interp(tt[:-1], t, v)))
        else:
            level = mid
    idx, frac, crossings = _upward_crossings(t, v, level, window)
    if len(idx) < 3:
        raise ShootingError(f"no sustained oscillation through level {level:g} at xi={xi.tolist()}")
    period = float((crossings[-1] - crossings[0]) / (len(crossings) - 1))
    k, fr = idx[-1], frac[-1]
    state = X[k] + fr * (X[k + 1] - X[k])
    state[node] = level
    return PilotRun(period, state, float(level), crossings, t, X)


def shoot_autonomous(problem: AutonomousShootingProblem, opts: ShootingOptions = ShootingOptions(),
                     newton_opts: NewtonOptions = NewtonOptions(),
                     stats: NewtonStats | None = None) -> PssSolution:
    """Shooting Newton for an oscillator with an expanded period scaling."""
    system = problem.system
    if system.transform is None:
        raise ValueError("autonomous shooting needs the stochastic-testing system")
    stats = stats if stats is not None else NewtonStats()
    K, n, j = system.K, system.n, problem.node
    V, V_inv = system.transform, system.transform_inv
    T0 = problem.period
    level = problem.level
    if problem.y0 is None or problem.a0 is None or level is None:
        circuit = system.circuit
        pilot = pilot_oscillation(circuit, circuit.nominal_point(), T0, j, level,
                                  newton_opts=newton_opts)
        level = pilot.level
        y = np.zeros((K, n))
        y[0] = pilot.state
        a = np.zeros(K)
        a[0] = pilot.period / T0
    if problem.y0 is not None:
        y = np.asarray(problem.y0, dtype=float).reshape(K, n).copy()
    if problem.a0 is not None:
        a = np.asarray(problem.a0, dtype=float).copy()
    y[:, j] = 0.0
    y[0, j] = level
    y = y.reshape(-1)
    grid = _grid(T0, opts.steps_per_period)
    pinned = np.arange(K) * n + j
    history = []
    for it in range(opts.max_iters + 1):
        a_pts = V @ a
        if np.any(a_pts <= 0):
            raise ShootingError(f"time scaling became non-positive ({a_pts.min():.3e}) at a "
                                "testing point")
        scaled = system.with_scale(a_pts)
        try:
            states, M, s = _one_period(scaled, y, grid, newton_opts, stats, "blocks", True)
        except (ConvergenceError, SingularJacobianError) as exc:
            raise ShootingError(f"integration over one period failed: {exc}") from exc
        g = states[-1] - y
        res = system.norm(g)
        history.append(res)
        if res <= opts.tol:
            return PssSolution(y, problem.basis, system.circuit, T0, grid,
                               states.reshape(len(grid), K, n), it, res, scaling=a.copy(),
                               history=history, node=j, level=level)
        if it == opts.max_iters:
            break
        Jy = np.einsum("ik,kab,kj->iajb", V_inv, M, V).reshape(K * n, K * n) - np.eye(K * n)
        Ja = np.einsum("ik,ka,kj->iaj", V_inv, s, V).reshape(K * n, K)
        E = np.zeros((K, K * n))
        E[np.arange(K), pinned] = 1.0
        A = np.block([[Jy, Ja], [E, np.zeros((K, K))]])
        try:
            delta = np.linalg.solve(A, np.concatenate([g, np.zeros(K)]))
        except np.linalg.LinAlgError:
            raise ShootingError("singular bordered shooting Jacobian; check the phase node and "
                                "level") from None
        y = y - delta[: K * n]
        a = a - delta[K * n:]
        y[pinned] = 0.0
        y[j] = level
    raise ShootingError(f"autonomous shooting did not converge in {opts.max_iters} iterations "
                        f"(residual {history[-1]:.3e}); check that level {level:g} lies inside "
                        "the oscillation range")


def thd(waveform, harmonics: int = HARMONICS) -> np.ndarray:
    """Total harmonic distortion of uniformly sampled periods (last axis, no endpoint).

    RMS of harmonics 2..H over the fundamental; NaN where the fundamental is
    below 1e-12.
    """
    w = np.asarray(waveform, dtype=float)
    N = w.shape[-1]
    if N < 2 * harmonics + 1:
        raise ValueError(f"need at least {2 * harmonics + 1} samples per period")
    X = np.abs(np.fft.rfft(w, axis=-1)) / N
    fund = X[..., 1]
    harm = np.sqrt(np.sum(X[..., 2:harmonics + 1] ** 2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(fund > 1e-12, harm / fund, np.nan)


@dataclass
class PssStatistics:
    quantity: str
    samples: np.ndarray
    mean: float
    std: float
    undefined: int
    density_x: np.ndarray
    density: np.ndarray


def kde_density(samples, n_points: int = 200):
    """Gaussian KDE with Silverman bandwidth; degenerate samples give a spike."""
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return np.zeros(0), np.zeros(0)
    if x.size < 2 or np.ptp(x) == 0:
        return np.array([x[0]]), np.array([np.inf])
    kde = gaussian_kde(x, bw_method="silverman")
    pad = 3.0 * kde.factor * x.std()
    grid = np.linspace(x.min() - pad, x.max() + pad, n_points)
    return grid, kde(grid)


def _device_power(sol: PssSolution, xi, device: str):
    circuit = sol.circuit
    dev = circuit.device(device)
    H = sol.basis.evaluate(xi)
    X = np.einsum("sk,tkn->stn", H, sol.trajectory[:-1])  # (S, N, n)
    Xg = np.concatenate([X, np.zeros(X.shape[:2] + (1,))], axis=-1)
    env = circuit.env(np.atleast_2d(xi))
    a, c = dev.terminals[:2]
    v = Xg[:, :, a] - Xg[:, :, c]
    if dev.kind == "resistor":
        R = np.broadcast_to(dev.params["value"].evaluate(env), (xi.shape[0],))
        return np.mean(v**2, axis=1) / R
    if dev.kind == "vsource":
        i = X[:, :, dev.branch]
        return -np.mean(v * i, axis=1)  # power delivered by the source
    raise ValueError(f"power is supported for resistors and voltage sources, not {dev.kind}")


def postprocess_pss(sol: PssSolution, quantity: str, output: int | None = None,
                    device: str | None = None, n_samples: int = 10_000, seed: int = 0,
                    harmonics: int = HARMONICS) -> PssStatistics:
    """Sample the surrogate and summarize THD, average power or frequency."""
    rng = np.random.Generator(np.random.Philox(seed))
    xi = sample_points(sol.basis.distributions, rng, n_samples)
    if quantity == "thd":
        if output is None:
            raise ValueError("THD needs an output unknown")
        vals = thd(sol.waveforms(xi, output)[:, :-1], harmonics)
    elif quantity == "power":
        if device is None:
            raise ValueError("power needs a device name")
        vals = _device_power(sol, xi, device)
    elif quantity == "frequency_pdf":
        vals = 1.0 / sol.period_at(xi)
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    finite = np.isfinite(vals)
    x, dens = kde_density(vals[finite])
    good = vals[finite]
    return PssStatistics(quantity, vals, float(good.mean()) if good.size else math.nan,
                         float(good.std(ddof=1)) if good.size > 1 else math.nan,
                         int(np.count_nonzero(~finite)), x, dens)


__all__ = [
    "AutonomousShootingProblem", "ForcedShootingProblem", "PilotRun", "PssSolution", "PssStatistics",
    "ShootingError", "ShootingOptions", "kde_density", "pilot_oscillation", "postprocess_pss",
    "shoot_autonomous", "shoot_forced", "thd", "warm_start",
]
