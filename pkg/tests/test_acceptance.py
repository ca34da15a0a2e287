"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 -m tests.test_acceptance``.
"""

import json
import math
import time

import numpy as np

from specsim.circuit import parse_netlist
from specsim.cli import main as cli_main
from specsim.detsolve import NewtonOptions, NewtonStats, dc_solve
from specsim.polychaos import Distribution, make_basis
from specsim.pss import (AutonomousShootingProblem, ForcedShootingProblem, ShootingOptions,
                         _one_period, pilot_oscillation, shoot_autonomous, shoot_forced)
from specsim.quadrature import gauss_rule, tensor_gauss
from specsim.spectral import (default_candidates, mc_solve, run_sg, run_st, sc_solve,
                              select_testing_points, st_residual_system, st_solve_dc)

from .conftest import DIODE_D2, DIVIDER, OSCILLATOR, RC_DECAY, RC_DRIVEN

RESULTS: dict[int, str] = {}

FAMILIES = {
    "hermite/gaussian": Distribution.gaussian(),
    "legendre/uniform": Distribution.uniform(),
    "laguerre/gamma(2)": Distribution.gamma(2.0),
    "jacobi/beta(2,3)": Distribution.beta(2.0, 3.0),
}


def _record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# ---- 1. basis orthonormality ------------------------------------------------

def test_criterion_1_basis_orthonormality():
    start = time.perf_counter()
    worst = 0.0
    for dist in FAMILIES.values():
        basis = make_basis([dist], 4)
        rule = gauss_rule(dist, 10)
        H = basis.evaluate(rule.nodes[:, None])
        G = H.T @ (rule.weights[:, None] * H)
        worst = max(worst, np.abs(G - np.eye(basis.size)).max())
    # a mixed two-parameter basis as well
    dists = [FAMILIES["hermite/gaussian"], FAMILIES["jacobi/beta(2,3)"]]
    basis = make_basis(dists, 4)
    rule = tensor_gauss(dists, 6)
    H = basis.evaluate(rule.nodes)
    G = H.T @ (rule.weights[:, None] * H)
    worst = max(worst, np.abs(G - np.eye(basis.size)).max())
    elapsed = time.perf_counter() - start
    _record(1, worst < 1e-10 and elapsed < 1.0,
            f"max |G - I| = {worst:.2e} (< 1e-10), runtime {elapsed:.3f} s (< 1 s)")


# ---- 2. Gauss quadrature exactness -----------------------------------------

def test_criterion_2_quadrature_exactness():
    worst = 0.0
    for dist in FAMILIES.values():
        for n in range(1, 9):
            rule = gauss_rule(dist, n)
            for m in range(2 * n):
                ref = dist.moment(m)
                got = rule.weights @ rule.nodes**m
                # zero odd moments are measured relative to E|x|^m
                scale = abs(ref) if ref != 0 else rule.weights @ np.abs(rule.nodes) ** m
                if scale > 0:
                    worst = max(worst, abs(got - ref) / scale)
                elif got != ref:
                    worst = math.inf
    _record(2, worst < 1e-10, f"max relative moment error = {worst:.2e} (< 1e-10)")


# ---- 3. decoupling identity -------------------------------------------------

def test_criterion_3_decoupling_identity():
    ckt = parse_netlist(DIODE_D2)
    basis = make_basis(ckt.distributions, 2)
    ts = select_testing_points(default_candidates(basis), basis)
    n = ckt.n
    worst = []

    def check(it, y, lin):
        J = lin.matrix(0.0, 1.0)
        A = lin.block_matrices(0.0, 1.0)
        ref = np.zeros_like(J)
        for k in range(basis.size):
            ref[k * n:(k + 1) * n, k * n:(k + 1) * n] = A[k]
        ref = ref @ np.kron(ts.V, np.eye(n))
        worst.append(np.abs(J - ref).max())

    a = st_solve_dc(ckt, basis, ts, callback=check, decoupled=False)
    b = st_solve_dc(ckt, basis, ts, decoupled=True)
    diff = np.abs(a.coeffs - b.coeffs).max()
    ok = basis.size == 6 and max(worst) < 1e-10 and diff < 1e-8
    _record(3, ok, f"K={basis.size}, {len(worst)} iterates, max |J - blkdiag(J_k)(V x I)| = "
                   f"{max(worst):.2e} (< 1e-10), |x_dec - x_cpl| = {diff:.2e} (< 1e-8)")


# ---- 4. cross-method agreement ----------------------------------------------

def test_criterion_4_cross_method_agreement():
    start = time.perf_counter()
    ckt = parse_netlist(DIODE_D2)
    basis = make_basis(ckt.distributions, 3)
    st = run_st(ckt, basis).coeffs[0]
    sg = run_sg(ckt, basis).coeffs[0]
    sc = sc_solve(ckt, basis).coeffs[0]
    l2 = max(np.linalg.norm(st - sg), np.linalg.norm(st - sc), np.linalg.norm(sg - sc))
    mc = mc_solve(ckt, 100_000, seed=2024, keep_samples=False)
    worst_se = 0.0
    for c in (st, sg, sc):
        mean = c[0]
        std = np.sqrt(np.sum(c[1:] ** 2, axis=0))
        live = mc.std[0] > 0
        worst_se = max(worst_se,
                       np.max(np.abs(mean - mc.mean[0])[live] / mc.mean_stderr[0][live]),
                       np.max(np.abs(std - mc.std[0])[live] / mc.std_stderr[0][live]))
    elapsed = time.perf_counter() - start
    ok = l2 < 1e-6 and worst_se < 3.0 and elapsed < 30.0
    _record(4, ok, f"max pairwise L2 (ST/SG/SC, p=3) = {l2:.2e} (< 1e-6), worst MC deviation "
                   f"{worst_se:.2f} SE (< 3), runtime {elapsed:.1f} s (< 30 s)")


# ---- 5. Monte Carlo solve count ---------------------------------------------

def test_criterion_5_mc_solve_count():
    ckt = parse_netlist(DIODE_D2)
    basis = make_basis(ckt.distributions, 3)
    res = run_st(ckt, basis)
    j = res.index("v(2)")
    rule = tensor_gauss(ckt.distributions, 24)
    ref = rule.weights @ np.array([dc_solve(ckt, x)[j] for x in rule.nodes])
    eps = max(abs(res.mean[0, j] - ref), np.finfo(float).eps * abs(ref))
    sigma = res.std[0, j]
    n_mc = math.ceil((sigma / eps) ** 2)
    st_solves = res.info["K"] + res.info["candidates"]
    kappa = res.info["kappa_samp"]
    ok = n_mc >= 1000 and st_solves <= 50 and n_mc >= 20 * st_solves
    _record(5, ok, f"ST mean error {eps:.2e} at sigma {sigma:.2e}: MC needs {n_mc:.3g} solves "
                   f"(>= 1e3) vs ST {st_solves} (<= 50), ratio {n_mc / st_solves:.3g} (>= 20), "
                   f"kappa_samp = {kappa:.3f}")


# ---- 6. stochastic transient ------------------------------------------------

def test_criterion_6_transient():
    ckt = parse_netlist(RC_DECAY)
    basis = make_basis(ckt.distributions, 3)
    span = (0.0, 5e-3)
    st = run_st(ckt, basis, "tran", span)
    rule = gauss_rule(Distribution.uniform(), 64)
    tau = 1e-3 * (1 + 0.1 * rule.nodes)
    vals = np.exp(-np.outer(st.times, 1.0 / tau))
    mean = vals @ rule.weights
    std = np.sqrt(np.maximum(vals**2 @ rule.weights - mean**2, 0.0))
    err_m = np.abs(st.mean[:, 0] - mean).max()
    err_s = np.abs(st.std[:, 0] - std).max()
    sc = sc_solve(ckt, basis, analysis="tran", t_span=span)
    kappa_t = sc.info["steps"] / st.info["steps"]
    ok = err_m < 1e-4 and err_s < 1e-4 and st.info["steps"] < sc.info["steps"]
    _record(6, ok, f"max |mean err| = {err_m:.2e}, max |std err| = {err_s:.2e} (< 1e-4); "
                   f"ST steps {st.info['steps']} vs SC fixed steps {sc.info['steps']}, "
                   f"kappa_tctrl = {kappa_t:.2f}")


# ---- 7. forced periodic steady state ----------------------------------------

def test_criterion_7_forced_pss():
    ckt = parse_netlist(RC_DRIVEN)
    basis = make_basis(ckt.distributions, 3)
    ts = select_testing_points(default_candidates(basis), basis)
    system = st_residual_system(ckt, basis, ts)
    opts = ShootingOptions(steps_per_period=1000)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3), opts)
    cold = shoot_forced(ForcedShootingProblem(system, basis, 1e-3, y0=np.zeros(system.size)), opts)
    states, _, _ = _one_period(system, sol.coeffs, sol.times, NewtonOptions(), NewtonStats())
    resid = system.norm(states[-1] - sol.coeffs)
    rule = gauss_rule(Distribution.uniform(), 64)
    w = sol.waveforms(rule.nodes[:, None], ckt.unknown_index("v(2)"))[:, :-1]
    amp = np.abs(2.0 * np.fft.rfft(w, axis=-1)[:, 1] / w.shape[1])
    R = 1e3 * (1 + 0.1 * rule.nodes)
    ref = np.abs(1.0 / (1.0 + 1j * 2 * np.pi * 1e3 * R * 159e-9))
    mean_ref = rule.weights @ ref
    std_ref = math.sqrt(rule.weights @ (ref - mean_ref) ** 2)
    mean = rule.weights @ amp
    std = math.sqrt(rule.weights @ (amp - mean) ** 2)
    err = max(abs(mean - mean_ref), abs(std - std_ref))
    iters = max(sol.iterations, cold.iterations)
    ok = iters <= 6 and resid < 1e-8 and err < 1e-4
    _record(7, ok, f"shooting iterations {sol.iterations} from warm start, {cold.iterations} "
                   f"from zero (<= 6), re-integration residual "
                   f"{resid:.2e} (< 1e-8), amplitude mean/std error {err:.2e} (< 1e-4)")


# ---- 8. autonomous periodic steady state ------------------------------------

def test_criterion_8_autonomous_pss():
    ckt = parse_netlist(OSCILLATOR)
    basis = make_basis(ckt.distributions, 3)
    ts = select_testing_points(default_candidates(basis), basis)
    system = st_residual_system(ckt, basis, ts)
    an = ckt.analyses[0].options
    node = ckt.unknown_index(an["node"])
    sol = shoot_autonomous(AutonomousShootingProblem(system, basis, an["period"], node,
                                                     an["level"]))
    phase_ok = sol.blocks[0, node] == sol.level and np.all(sol.blocks[1:, node] == 0.0)
    worst_T, worst_rms = 0.0, 0.0
    for x in (-1.0, 0.0, 1.0):
        xi = np.array([x])
        pilot = pilot_oscillation(ckt, xi, an["period"], node, sol.level, periods=60)
        T = float(sol.period_at(xi[None])[0])
        worst_T = max(worst_T, abs(T - pilot.period) / pilot.period)
        t = np.linspace(0.0, T, 400, endpoint=False)
        ref = np.interp(pilot.crossings[-2] + t, pilot.times, pilot.states[:, node])
        got = sol.realize(xi, t)[:, node]
        rms = np.sqrt(np.mean((got - ref) ** 2)) / np.sqrt(np.mean((ref - ref.mean()) ** 2))
        worst_rms = max(worst_rms, rms)
    ok = worst_T < 0.01 and phase_ok and worst_rms < 0.02
    _record(8, ok, f"max period error vs long transients {worst_T:.2e} (< 1%), phase constraint "
                   f"{'exact' if phase_ok else 'violated'}, max realization RMS {worst_rms:.2e} "
                   f"(< 2%)")


# ---- 9. determinism ----------------------------------------------------------

def _run_twice(tmp, netlist_text, *args):
    path = tmp / "c.cir"
    path.write_text(netlist_text)
    outs = []
    for tag in ("a", "b"):
        out = tmp / tag
        code = cli_main(["run", str(path), "--out", str(out), *map(str, args)])
        assert code == 0
        outs.append(out)
    return outs


def _same_outputs(a, b) -> bool:
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    for name in names:
        if name == "summary.json":
            sa, sb = (json.loads((d / name).read_text()) for d in (a, b))
            for s in (sa, sb):
                s.pop("wall_time", None)
                s["config"].pop("out", None)
            if sa != sb:
                return False
        elif (a / name).read_bytes() != (b / name).read_bytes():
            return False
    return True


def test_criterion_9_determinism(tmp_path):
    cases = [("mc-dc", DIODE_D2, ("--method", "mc", "--samples", 5000, "--seed", 9)),
             ("st-dc", DIODE_D2, ("--method", "st", "--order", 3)),
             ("sc-tran", RC_DECAY, ("--method", "sc", "--order", 2)),
             ("mc-tran", DIVIDER + ".tran 1m\n", ("--method", "mc", "--samples", 200)),
             ("st-pss", RC_DRIVEN, ("--method", "st", "--order", 2))]
    bad = []
    for name, text, args in cases:
        tmp = tmp_path / name
        tmp.mkdir()
        a, b = _run_twice(tmp, text, *args)
        if not _same_outputs(a, b):
            bad.append(name)
    _record(9, not bad, f"{len(cases)} CLI configurations rerun: "
                        f"{'all result files bit-identical' if not bad else 'differ: ' + ', '.join(bad)}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for n, fn in enumerate([test_criterion_1_basis_orthonormality,
                            test_criterion_2_quadrature_exactness,
                            test_criterion_3_decoupling_identity,
                            test_criterion_4_cross_method_agreement,
                            test_criterion_5_mc_solve_count,
                            test_criterion_6_transient,
                            test_criterion_7_forced_pss,
                            test_criterion_8_autonomous_pss], start=1):
        try:
            fn()
        except AssertionError:
            failed += 1
    with tempfile.TemporaryDirectory() as d:
        try:
            test_criterion_9_determinism(Path(d))
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
