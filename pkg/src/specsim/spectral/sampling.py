"""Non-intrusive engines: stochastic collocation and Monte Carlo.

Both run independent deterministic solves, vectorized in chunks of points
that are dispatched to a thread pool (``SPECSIM_THREADS`` caps the worker
count). Results are assembled in point order, so they do not depend on the
number of workers.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..circuit.model import Circuit, sample_points
from ..detsolve import (ConvergenceError, NewtonOptions, StepController, TransientError,
                        dc_solve, solve_operating_point, transient_solve)
from ..polychaos import GpcBasis
from ..quadrature import RuleND
from ..systems import PointSystem
from .state import UqResult
from .stochastic_testing import ic_rows
from .testing import default_candidates

log = logging.getLogger(__name__)

CHUNK = 512
MAX_FAILURE_FRACTION = 0.01


class SampleFailure(RuntimeError):
    pass


def worker_count() -> int:
    env = os.environ.get("SPECSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"SPECSIM_THREADS must be an integer, got {env!r}") from None
    return max(1, min(8, os.cpu_count() or 1))


def pilot_step(circuit: Circuit, t_span, controller: StepController = StepController(),
               opts: NewtonOptions = NewtonOptions()) -> float:
    """Smallest accepted step of an adaptive run at the nominal parameters."""
    traj = transient_solve(circuit, circuit.nominal_point(), t_span, controller, opts)
    return float(traj.min_step)


def _solve_chunk(circuit, points, analysis, t_span, h, opts, x_guess):
    """Returns (values (T, m, n), ok mask (m,), times)."""
    m = points.shape[0]
    system = PointSystem(circuit, points)
    if analysis == "dc":
        y, _ = solve_operating_point(system, 0.0, np.tile(x_guess, m), opts)
        return y.reshape(1, m, circuit.n), np.zeros(1)
    traj = transient_solve(system, t_span=t_span, controller=StepController.fixed(h), opts=opts,
                           ic=ic_rows(circuit))
    return traj.states.reshape(len(traj.times), m, circuit.n), traj.times


def _run_points(circuit: Circuit, points: np.ndarray, analysis: str, t_span, h,
                opts: NewtonOptions, tolerate: bool):
    """Solve every point; failed points (if tolerated) are flagged, not raised."""
    n_pts = points.shape[0]
    try:
        x_guess = dc_solve(circuit, circuit.nominal_point(), opts)
    except (ConvergenceError, np.linalg.LinAlgError):
        x_guess = np.zeros(circuit.n)
    chunks = [(s, min(s + CHUNK, n_pts)) for s in range(0, n_pts, CHUNK)]

    def work(span):
        s, e = span
        try:
            vals, times = _solve_chunk(circuit, points[s:e], analysis, t_span, h, opts, x_guess)
            return vals, np.ones(e - s, bool), times
        except (ConvergenceError, TransientError, np.linalg.LinAlgError):
            pass
        # isolate the failing points
        rows, ok, times = [], [], None
        for i in range(s, e):
            try:
                v, times = _solve_chunk(circuit, points[i:i + 1], analysis, t_span, h, opts,
                                        x_guess)
                rows.append(v[:, 0])
                ok.append(True)
            except (ConvergenceError, TransientError, np.linalg.LinAlgError) as exc:
                if not tolerate:
                    raise SampleFailure(f"deterministic solve failed at point {i} "
                                        f"(xi={points[i].tolist()}): {exc}") from exc
                rows.append(None)
                ok.append(False)
        T = next((r.shape[0] for r in rows if r is not None), 1)
        rows = [r if r is not None else np.full((T, circuit.n), np.nan) for r in rows]
        return np.stack(rows, axis=1), np.array(ok), times

    workers = min(worker_count(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    times = next((p[2] for p in parts if p[2] is not None), np.zeros(1))
    values = np.concatenate([p[0] for p in parts], axis=1)
    ok = np.concatenate([p[1] for p in parts])
    return times, values, ok


def sc_solve(circuit: Circuit, basis: GpcBasis, quad: RuleND | None = None,
             analysis: str = "dc", t_span=None, h: float | None = None,
             opts: NewtonOptions = NewtonOptions(),
             controller: StepController = StepController()) -> UqResult:
    """Collocation: deterministic solves at the nodes, then weighted projection.

    Transient runs share a fixed grid; by default its step is the smallest
    step an adaptive pilot run takes at the nominal parameters.
    """
    start = time.perf_counter()
    quad = quad if quad is not None else default_candidates(basis)
    info = {"K": basis.size, "quadrature_nodes": quad.size}
    if analysis != "dc":
        h = h if h is not None else pilot_step(circuit, t_span, controller, opts)
        info["h"] = h
    times, values, _ = _run_points(circuit, quad.nodes, analysis, t_span, h, opts, False)
    H = basis.evaluate(quad.nodes)
    coeffs = np.einsum("j,jk,tjn->tkn", quad.weights, H, values)
    if analysis != "dc":
        info["steps"] = len(times) - 1
    return UqResult.from_coeffs("sc", times, coeffs, basis, circuit.unknown_names,
                                evaluations=quad.size, wall_time=time.perf_counter() - start,
                                info=info)


def mc_solve(circuit: Circuit, n_samples: int, seed: int = 0, analysis: str = "dc",
             t_span=None, h: float | None = None, opts: NewtonOptions = NewtonOptions(),
             controller: StepController = StepController(), keep_samples: bool = True) -> UqResult:
    """Monte Carlo with i.i.d. draws from a seeded counter-based generator.

    Failed samples are dropped and counted; more than 1% failures abort.
    ``result.info['samples']`` holds the final-time values of every sample.
    """
    if n_samples < 2:
        raise ValueError("Monte Carlo needs at least 2 samples")
    start = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(seed))
    points = sample_points(circuit.distributions, rng, n_samples)
    info = {"seed": int(seed), "samples_requested": int(n_samples)}
    if analysis != "dc":
        h = h if h is not None else pilot_step(circuit, t_span, controller, opts)
        info["h"] = h
    times, values, ok = _run_points(circuit, points, analysis, t_span, h, opts, True)
    failures = int(np.count_nonzero(~ok))
    info["failures"] = failures
    if failures > MAX_FAILURE_FRACTION * n_samples:
        raise SampleFailure(f"{failures} of {n_samples} Monte Carlo samples failed")
    good = values[:, ok, :]
    N = good.shape[1]
    mean = good.mean(axis=1)
    std = good.std(axis=1, ddof=1)
    const = np.ptp(good, axis=1) == 0  # exact zero spread despite round-off in the mean
    mean = np.where(const, good[:, 0, :], mean)
    std = np.where(const, 0.0, std)
    if keep_samples:
        info["samples"] = good[-1]
    return UqResult("mc", times, mean, std, circuit.unknown_names, evaluations=N,
                    wall_time=time.perf_counter() - start,
                    mean_stderr=std / np.sqrt(N), std_stderr=std / np.sqrt(2.0 * (N - 1)),
                    info=info)
