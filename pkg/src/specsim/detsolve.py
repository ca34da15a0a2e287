"""Newton DC solves and trapezoidal transient integration.

The integrators work on any system exposing ``linearize``, ``limit``,
``norm`` and ``algebraic`` (see :mod:`specsim.systems`), so the same code
runs a single circuit, a batch of Monte Carlo samples, or the coupled
stochastic-testing and Galerkin systems.

Trapezoidal steps treat rows with no charge (algebraic rows) implicitly at
the new time point; for consistent states this is the same solution as the
averaged form but avoids the undamped alternation of algebraic variables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuit.model import Circuit
from .systems import PointSystem, SingularJacobianError

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Newton failed; ``best`` holds the iterate with the smallest residual."""

    def __init__(self, msg, best=None, residual=math.inf, failed=None):
        self.best = best
        self.residual = residual
        self.failed = failed
        super().__init__(msg)


class TransientError(RuntimeError):
    def __init__(self, msg, trajectory=None):
        self.trajectory = trajectory
        super().__init__(msg)


@dataclass(frozen=True)
class NewtonOptions:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_iters: int = 50
    damping: str = "none"  # or "line_search"

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.damping not in ("none", "line_search"):
            raise ValueError(f"unknown damping {self.damping!r}")


@dataclass(frozen=True)
class StepController:
    lte_tol: float = 1e-6
    h_min: float | None = None
    h_max: float | None = None
    h_init: float | None = None
    grow_clamp: float = 2.0
    shrink_clamp: float = 0.2
    mode: str = "adaptive"  # or "fixed"
    h: float | None = None  # fixed step

    def __post_init__(self):
        if self.mode not in ("adaptive", "fixed"):
            raise ValueError(f"unknown step mode {self.mode!r}")
        if not self.lte_tol > 0:
            raise ValueError(f"lte_tol must be positive, got {self.lte_tol}")
        if self.mode == "fixed" and not (self.h and self.h > 0):
            raise ValueError("fixed stepping needs a positive step h")
        if self.h_min is not None and self.h_max is not None and not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if not (self.grow_clamp >= 1.0 and 0 < self.shrink_clamp <= 1.0):
            raise ValueError("clamps must satisfy grow >= 1 and 0 < shrink <= 1")

    @classmethod
    def fixed(cls, h: float) -> "StepController":
        return cls(mode="fixed", h=h)


@dataclass
class NewtonStats:
    solves: int = 0
    iterations: int = 0
    last_updates: list = field(default_factory=list)

    def as_dict(self):
        return {"solves": self.solves, "iterations": self.iterations}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (N, size)
    accepted: int = 0
    rejected: int = 0
    newton_iterations: int = 0
    min_step: float = math.inf
    monodromy: np.ndarray | None = None


def newton(system, y0, build: Callable, opts: NewtonOptions, stats: NewtonStats | None = None,
           callback: Callable | None = None):
    """Solve ``F(y) = 0`` where ``build(y) -> (F, lin, (cq, cf))``.

    ``F / cf`` is measured with the residual norm, the update with the state
    norm; both must pass. ``callback(it, y, lin)`` sees every iterate.
    Returns ``(y, lin)`` with ``lin`` evaluated at the converged point.
    """
    y = np.array(y0, dtype=float)
    best, best_res = y.copy(), math.inf
    upd = math.inf
    updates = []
    for it in range(opts.max_iters + 1):
        F, lin, (cq, cf) = build(y)
        res = system.norm(F / cf, "residual")
        if not np.isfinite(res):
            break
        if res < best_res:
            best, best_res = y.copy(), res
        if callback is not None:
            callback(it, y, lin)
        if it > 0 and res <= opts.abs_tol and upd <= opts.rel_tol * (1.0 + system.norm(y)):
            if stats is not None:
                stats.solves += 1
                stats.iterations += it
                stats.last_updates = updates
            return y, lin
        if it == opts.max_iters:
            break
        dy = lin.solve(cq, cf, F)
        dy = system.limit(y, dy)
        if opts.damping == "line_search":
            lam = 1.0
            while lam > 1e-4:
                Ft, _, _ = build(y - lam * dy)
                if system.norm(Ft / cf, "residual") < res or res == 0:
                    break
                lam *= 0.5
            dy = lam * dy
        y = y - dy
        upd = system.norm(dy)
        updates.append(upd)
    failed = None
    if hasattr(system, "block_norms"):
        F, _, (cq, cf) = build(y)
        failed = system.block_norms(F / cf, "residual") > opts.abs_tol
    raise ConvergenceError(
        f"Newton did not converge in {opts.max_iters} iterations (best residual {best_res:.3e})",
        best=best, residual=best_res, failed=failed)


def solve_operating_point(system, t: float = 0.0, y0=None, opts: NewtonOptions = NewtonOptions(),
                          stats: NewtonStats | None = None, callback=None):
    """DC solve ``f(y) = b(t)`` of any system."""
    y0 = np.zeros(system.size) if y0 is None else np.asarray(y0, dtype=float)

    def build(y):
        lin = system.linearize(y, t)
        return lin.f - lin.b, lin, (0.0, 1.0)

    return newton(system, y0, build, opts, stats, callback)


def dc_solve(circuit: Circuit, xi=None, opts: NewtonOptions = NewtonOptions(), x0=None,
             t: float = 0.0) -> np.ndarray:
    """Operating point of the circuit at one parameter point."""
    xi = circuit.nominal_point() if xi is None else np.asarray(xi, dtype=float)
    system = PointSystem(circuit, xi.reshape(1, circuit.d))
    y, _ = solve_operating_point(system, t, x0, opts)
    return y


def initial_state(system, t0: float = 0.0, opts: NewtonOptions = NewtonOptions(),
                  ic: dict | None = None, stats=None):
    """DC point with ``.ic`` node voltages held fixed."""
    if ic:
        forced_sys = system.with_forced(ic)
        y, _ = solve_operating_point(forced_sys, t0, None, opts, stats)
        return y
    y, _ = solve_operating_point(system, t0, None, opts, stats)
    return y


class _StepSolver:
    """One implicit step of backward Euler or trapezoidal with fixed previous data."""

    def __init__(self, system, opts: NewtonOptions, stats: NewtonStats):
        self.system = system
        self.opts = opts
        self.stats = stats
        self.diff = ~np.asarray(system.algebraic)

    def step(self, y_prev, lin_prev, t_new, h, method, guess):
        c = h if method == "be" else 0.5 * h
        q0 = lin_prev.q
        if method == "trap":
            e = np.where(self.diff, c * (lin_prev.f - lin_prev.b), 0.0)
        else:
            e = 0.0

        def build(y):
            lin = self.system.linearize(y, t_new)
            return lin.q - q0 + c * (lin.f - lin.b) + e, lin, (1.0, c)

        return newton(self.system, guess, build, self.opts, self.stats)


def _predict(times, states, t_new):
    """Polynomial extrapolation through the last (up to) three points."""
    k = min(len(times), 3)
    ts = times[-k:]
    ys = states[-k:]
    out = np.zeros_like(ys[0])
    for i in range(k):
        li = 1.0
        for j in range(k):
            if j != i:
                li *= (t_new - ts[j]) / (ts[i] - ts[j])
        out = out + li * ys[i]
    return out


def transient_solve(circuit_or_system, xi=None, t_span=(0.0, 1e-3),
                    controller: StepController = StepController(),
                    opts: NewtonOptions = NewtonOptions(), x0=None, ic=None,
                    stats: NewtonStats | None = None, breakpoints: Sequence[float] = ()) -> Trajectory:
    """Integrate from ``t_span[0]`` to ``t_span[1]``.

    Accepts a circuit (evaluated at ``xi``) or a prepared system. The start
    state is ``x0`` if given, else the DC point (with ``ic`` node voltages
    held). Trapezoidal steps follow one backward-Euler step; adaptive mode
    estimates the local truncation error from the difference between the
    corrector and a quadratic predictor.
    """
    if isinstance(circuit_or_system, Circuit):
        circuit = circuit_or_system
        xi = circuit.nominal_point() if xi is None else np.asarray(xi, dtype=float)
        system = PointSystem(circuit, xi.reshape(1, circuit.d))
        if ic is None and circuit.initial_conditions:
            ic = {circuit.unknown_index(k): v for k, v in circuit.initial_conditions.items()}
        breakpoints = list(breakpoints) + circuit.breakpoints()
    else:
        system = circuit_or_system
    stats = stats if stats is not None else NewtonStats()
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    if x0 is None:
        y = initial_state(system, t0, opts, ic, stats)
    else:
        y = np.asarray(x0, dtype=float).reshape(-1)
    if controller.mode == "fixed":
        n_steps = max(1, int(round((t1 - t0) / controller.h)))
        grid = np.linspace(t0, t1, n_steps + 1)
        return _integrate_grid(system, y, grid, opts, stats, startup="be")
    return _integrate_adaptive(system, y, t0, t1, controller, opts, stats, breakpoints)


def _integrate_grid(system, y0, grid, opts, stats, startup="be", sensitivity=False,
                    param_sens=None):
    solver = _StepSolver(system, opts, stats)
    lin = system.linearize(y0, grid[0])
    y = np.asarray(y0, dtype=float)
    states = [y]
    S = np.eye(system.size) if sensitivity else None
    P = param_sens.initial() if param_sens is not None else None
    it0 = stats.iterations
    for i in range(1, len(grid)):
        h = grid[i] - grid[i - 1]
        method = startup if i == 1 else "trap"
        guess = _predict(grid[:i], states, grid[i]) if i >= 2 else y
        try:
            y_new, lin_new = solver.step(y, lin, grid[i], h, method, guess)
        except (ConvergenceError, SingularJacobianError) as exc:
            traj = Trajectory(np.asarray(grid[:i]), np.array(states), i - 1, 0)
            raise TransientError(f"step at t={grid[i]:.6e} failed: {exc}", traj) from exc
        if S is not None or P is not None:
            c = h if method == "be" else 0.5 * h
            if S is not None:
                S = _propagate(solver, lin, lin_new, c, method, S)
            if P is not None:
                P = param_sens.step(solver, lin, lin_new, c, method, P)
        y, lin = y_new, lin_new
        states.append(y)
    traj = Trajectory(np.asarray(grid, dtype=float), np.array(states), len(grid) - 1, 0,
                      stats.iterations - it0, float(np.min(np.diff(grid))))
    traj.monodromy = S
    if param_sens is not None:
        traj.param_sensitivity = P
    return traj


def _propagate(solver, lin0, lin1, c, method, S):
    """Chain rule for one step: ``dy1/dy0 = -(dF/dy1)^-1 dF/dy0``."""
    rhs = lin0.dq_dot(S)
    if method == "trap":
        rhs = rhs - np.where(solver.diff[:, None], c * lin0.df_dot(S), 0.0)
    return lin1.solve(1.0, c, rhs)


def _integrate_adaptive(system, y0, t0, t1, ctl: StepController, opts, stats, breakpoints):
    span = t1 - t0
    h_max = ctl.h_max if ctl.h_max is not None else span / 50.0
    h_min = ctl.h_min if ctl.h_min is not None else span * 1e-12
    h = ctl.h_init if ctl.h_init is not None else min(h_max, span * 1e-4)
    bps = sorted(b for b in set(breakpoints) if t0 < b < t1) + [t1]
    solver = _StepSolver(system, opts, stats)
    lin = system.linearize(y0, t0)
    times, states = [t0], [np.asarray(y0, dtype=float)]
    history_start = 0
    accepted = rejected = 0
    min_step = math.inf
    it0 = stats.iterations
    t = t0
    y = states[0]
    while t < t1 - 1e-15 * span:
        next_bp = next(b for b in bps if b > t + 1e-15 * span)
        h = min(h, h_max)
        # steps shortened to land on a breakpoint do not count towards min_step
        clipped = next_bp - (t + h) < max(h_min, 1e-9 * span)
        if clipped:
            h = next_bp - t
        n_hist = len(times) - history_start
        method = "be" if n_hist == 1 else "trap"
        t_new = t + h
        guess = _predict(times[history_start:], states[history_start:], t_new) if n_hist >= 2 else y
        try:
            y_new, lin_new = solver.step(y, lin, t_new, h, method, guess)
        except (ConvergenceError, SingularJacobianError) as exc:
            rejected += 1
            h *= 0.5
            if h < h_min:
                traj = Trajectory(np.array(times), np.array(states), accepted, rejected,
                                  stats.iterations - it0, min_step)
                raise TransientError(f"time step fell below h_min at t={t:.6e}: {exc}", traj) from exc
            continue
        ratio = ctl.grow_clamp
        if method == "trap" and n_hist >= 3:
            pred = _predict(times[history_start:], states[history_start:], t_new)
            t_hist = times[-3:]
            spread = (t_new - t_hist[-1]) * (t_new - t_hist[-2]) * (t_new - t_hist[-3]) / 6.0
            # corrector-minus-predictor ~ x''' (spread + h^3/12); trapezoidal LTE = h^3/12 x'''
            lte = (y_new - pred) * (h**3 / 12.0) / (spread + h**3 / 12.0)
            err = system.norm(lte)
            tol = ctl.lte_tol * (1.0 + system.norm(y_new))
            if err > tol:
                rejected += 1
                h = h * max(ctl.shrink_clamp, 0.9 * (tol / err) ** (1.0 / 3.0))
                if h < h_min:
                    traj = Trajectory(np.array(times), np.array(states), accepted, rejected,
                                      stats.iterations - it0, min_step)
                    raise TransientError(f"time step fell below h_min at t={t:.6e}", traj)
                continue
            ratio = min(ctl.grow_clamp, max(ctl.shrink_clamp, 0.9 * (tol / max(err, 1e-300)) ** (1.0 / 3.0)))
        accepted += 1
        if not clipped or accepted == 1:
            min_step = min(min_step, h)
        t, y, lin = t_new, y_new, lin_new
        times.append(t)
        states.append(y)
        if abs(t - next_bp) <= 1e-15 * span and t < t1:
            # restart history after a source corner
            history_start = len(times) - 1
        h = h * ratio
    return Trajectory(np.array(times), np.array(states), accepted, rejected,
                      stats.iterations - it0, min_step)


def transient_with_sensitivity(circuit_or_system, t_grid, x0, xi=None,
                               opts: NewtonOptions = NewtonOptions(), startup: str = "trap",
                               stats: NewtonStats | None = None, param_sens=None) -> Trajectory:
    """Fixed-grid integration that also propagates ``dx(t_end)/dx(t_0)``.

    The returned trajectory carries the Monodromy matrix in ``.monodromy``.
    A zero-length grid gives the identity.
    """
    if isinstance(circuit_or_system, Circuit):
        circuit = circuit_or_system
        xi = circuit.nominal_point() if xi is None else np.asarray(xi, dtype=float)
        system = PointSystem(circuit, xi.reshape(1, circuit.d))
    else:
        system = circuit_or_system
    grid = np.asarray(t_grid, dtype=float)
    y0 = np.asarray(x0, dtype=float).reshape(-1)
    if len(grid) < 2 or grid[-1] == grid[0]:
        traj = Trajectory(grid[:1], y0[None, :])
        traj.monodromy = np.eye(system.size)
        return traj
    stats = stats if stats is not None else NewtonStats()
    return _integrate_grid(system, y0, grid, opts, stats, startup, sensitivity=True,
                           param_sens=param_sens)
