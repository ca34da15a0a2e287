import math

import numpy as np
import pytest

from specsim.circuit import parse_netlist
from specsim.detsolve import (NewtonOptions, NewtonStats, StepController, dc_solve,
                              transient_solve)
from specsim.polychaos import Distribution, make_basis
from specsim.pss import (AutonomousShootingProblem, ForcedShootingProblem, ShootingError,
                         ShootingOptions, _one_period, kde_density, pilot_oscillation,
                         postprocess_pss, shoot_autonomous, shoot_forced, thd)
from specsim.quadrature import gauss_rule
from specsim.spectral import default_candidates, select_testing_points, st_residual_system

from .conftest import OSCILLATOR, RC_DRIVEN

F0, C0, R0 = 1e3, 159e-9, 1e3


def _st_system(ckt, p, decoupled=True):
    basis = make_basis(ckt.distributions, p)
    ts = select_testing_points(default_candidates(basis), basis)
    return st_residual_system(ckt, basis, ts, decoupled), basis


def _fundamental(w):
    """Complex first Fourier coefficient (sine/cosine amplitude) of one sampled period."""
    N = w.shape[-1]
    return 2.0 * np.fft.rfft(w, axis=-1)[..., 1] / N


def _phasor(R):
    # node 2 of the driven RC: 1/(1 + j w R C) times the unit sine drive
    return 1.0 / (1.0 + 1j * 2 * np.pi * F0 * R * C0)


# ---- forced shooting --------------------------------------------------------

def test_rc_phasor_amplitude():
    ckt = parse_netlist(RC_DRIVEN)
    system, basis = _st_system(ckt, 0)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3), ShootingOptions(steps_per_period=4000))
    w = sol.trajectory[:-1, 0, 1]
    amp = abs(_fundamental(w))
    assert amp == pytest.approx(abs(_phasor(R0)), abs=1e-6)


def test_rc_mean_block_matches_quadrature():
    ckt = parse_netlist(RC_DRIVEN)
    system, basis = _st_system(ckt, 3)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3), ShootingOptions(steps_per_period=1000))
    rule = gauss_rule(Distribution.uniform(), 64)
    R = R0 * (1 + 0.1 * rule.nodes)
    ref_mean = rule.weights @ _phasor(R)
    got = _fundamental(sol.trajectory[:-1, 0, 1])
    # sin drive: fundamental coefficient of a sin(wt + phi) is -j a e^{j phi}
    assert got == pytest.approx(-1j * ref_mean, abs=1e-5)


def test_rectifier_matches_long_transient():
    ckt = parse_netlist("V1 1 0 sin(0 2 1k)\nD1 1 2\nR1 2 0 1k\nC1 2 0 1u\n"
                       "param xi1 uniform\nR2 2 0 100k*(1+0.1*xi1)\n")
    system, basis = _st_system(ckt, 0)
    steps = 200
    opts = ShootingOptions(steps_per_period=steps)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3), opts)
    # 50-period transient on the same grid; its last period is the limit cycle
    xi = system.points[0]
    tr = transient_solve(ckt, xi, (0.0, 50e-3), StepController.fixed(1e-3 / steps))
    last = tr.states[-(steps + 1):]
    assert np.max(np.abs(last - sol.trajectory[:, 0, :])[:, :2]) < 5e-6


def test_zero_input_periodic_point_is_dc():
    ckt = parse_netlist("param xi1 uniform\nV1 1 0 0.3\nR1 1 2 1k*(1+0.1*xi1)\nC1 2 0 1u\nD1 2 0\n")
    system, basis = _st_system(ckt, 2)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3))
    for k, xi in enumerate(system.points):
        X = system.point_states(sol.coeffs)
        assert X[k] == pytest.approx(dc_solve(ckt, xi), abs=1e-9)


def test_fixed_point_property():
    ckt = parse_netlist(RC_DRIVEN)
    system, basis = _st_system(ckt, 2)
    opts = ShootingOptions(tol=1e-10)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3, y0=np.zeros(system.size)), opts)
    states, _, _ = _one_period(system, sol.coeffs, sol.times, NewtonOptions(), NewtonStats())
    assert system.norm(states[-1] - sol.coeffs) <= 10 * opts.tol


def test_decoupled_and_coupled_iterates_agree():
    ckt = parse_netlist("param xi1 uniform\nV1 1 0 sin(0.5 1 1k)\nR1 1 2 1k*(1+0.1*xi1)\n"
                        "D1 2 3\nC1 3 0 200n\nR2 3 0 10k\n")
    iterates = {}
    for dec in (True, False):
        system, basis = _st_system(ckt, 2, dec)
        seen = []
        shoot_forced(ForcedShootingProblem(system, basis, 1e-3, y0=np.zeros(system.size)),
                     callback=lambda it, y: seen.append(y.copy()))
        iterates[dec] = seen
    assert len(iterates[True]) == len(iterates[False]) >= 3
    for a, b in zip(iterates[True], iterates[False]):
        assert np.max(np.abs(a - b)) < 1e-8


def test_shooting_options_validation():
    with pytest.raises(ValueError):
        ShootingOptions(steps_per_period=16)
    ckt = parse_netlist(RC_DRIVEN)
    system, basis = _st_system(ckt, 1)
    with pytest.raises(ValueError):
        ForcedShootingProblem(system, basis, 0.0)


def test_shooting_failure_is_reported():
    ckt = parse_netlist(RC_DRIVEN)
    system, basis = _st_system(ckt, 1)
    with pytest.raises(ShootingError):
        # an unreachable tolerance exhausts the iteration budget
        shoot_forced(ForcedShootingProblem(system, basis, 1e-3, y0=np.ones(system.size)),
                     ShootingOptions(max_iters=1, tol=1e-300))


# ---- post-processing --------------------------------------------------------

def test_thd_examples():
    t = np.arange(256) / 256
    w = np.sin(2 * np.pi * t)
    assert thd(w) == pytest.approx(0.0, abs=1e-14)
    assert thd(w + 0.1 * np.sin(4 * np.pi * t)) == pytest.approx(0.1, rel=1e-12)
    assert math.isnan(thd(np.zeros(64)))
    with pytest.raises(ValueError):
        thd(np.zeros(8))


def test_power_at_dc_periodic_point():
    ckt = parse_netlist("param xi1 uniform\nV1 1 0 0.5\nR1 1 0 1k\n")
    system, basis = _st_system(ckt, 1)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3))
    st_r = postprocess_pss(sol, "power", device="R1", n_samples=100)
    st_v = postprocess_pss(sol, "power", device="V1", n_samples=100)
    assert st_r.mean == pytest.approx(0.25e-3, rel=1e-9)
    assert st_v.mean == pytest.approx(0.25e-3, rel=1e-9)
    assert st_r.std == pytest.approx(0.0, abs=1e-15)


def test_thd_statistics_of_rc():
    ckt = parse_netlist(RC_DRIVEN)
    system, basis = _st_system(ckt, 2)
    sol = shoot_forced(ForcedShootingProblem(system, basis, 1e-3))
    st = postprocess_pss(sol, "thd", output=1, n_samples=500, seed=4)
    # a linear filter of a sine is a sine
    assert st.mean < 1e-6 and st.undefined == 0
    with pytest.raises(ValueError):
        postprocess_pss(sol, "thd")
    with pytest.raises(ValueError):
        postprocess_pss(sol, "noise")


def test_kde_density_normalized():
    rng = np.random.default_rng(0)
    x, dens = kde_density(rng.normal(size=4000))
    assert np.trapezoid(dens, x) == pytest.approx(1.0, abs=0.02)
    x, dens = kde_density(np.full(10, 3.0))
    assert np.all(x == 3.0)


# ---- autonomous shooting ----------------------------------------------------

@pytest.fixture(scope="module")
def oscillator_solution():
    ckt = parse_netlist(OSCILLATOR)
    system, basis = _st_system(ckt, 3)
    an = ckt.analyses[0].options
    node = ckt.unknown_index(an["node"])
    sol = shoot_autonomous(AutonomousShootingProblem(system, basis, an["period"], node, an["level"]))
    return ckt, system, sol


def test_deterministic_oscillator_period():
    ckt = parse_netlist(OSCILLATOR)
    system, basis = _st_system(ckt, 0)
    sol = shoot_autonomous(AutonomousShootingProblem(system, basis, 198.7e-9, 0))
    T = float(sol.period_at(np.zeros((1, 1)))[0])
    ref = 2 * math.pi * math.sqrt(1e-6 * 1e-9)
    assert T == pytest.approx(ref, rel=0.01)


def test_oscillator_phase_constraint_exact(oscillator_solution):
    ckt, system, sol = oscillator_solution
    blocks = sol.blocks
    assert blocks[0, sol.node] == sol.level
    assert np.all(blocks[1:, sol.node] == 0.0)
    assert np.all(system.transform @ sol.scaling > 0)


def test_oscillator_fixed_point(oscillator_solution):
    ckt, system, sol = oscillator_solution
    scaled = system.with_scale(system.transform @ sol.scaling)
    states, _, _ = _one_period(scaled, sol.coeffs, sol.times, NewtonOptions(), NewtonStats())
    assert system.norm(states[-1] - sol.coeffs) <= 10 * ShootingOptions().tol


@pytest.mark.parametrize("xi", [-1.0, 1.0])
def test_oscillator_period_against_point_runs(oscillator_solution, xi):
    ckt, system, sol = oscillator_solution
    pilot = pilot_oscillation(ckt, np.array([xi]), 198.7e-9, sol.node, sol.level)
    T = float(sol.period_at(np.array([[xi]]))[0])
    assert T == pytest.approx(pilot.period, rel=0.01)


def test_oscillator_frequency_statistics(oscillator_solution):
    ckt, system, sol = oscillator_solution
    st = postprocess_pss(sol, "frequency_pdf", n_samples=10_000, seed=2)
    rule = gauss_rule(Distribution.uniform(), 64)
    f = 1.0 / sol.period_at(rule.nodes[:, None])
    mean = rule.weights @ f
    std = math.sqrt(rule.weights @ (f - mean) ** 2)
    se_mean = std / math.sqrt(10_000)
    se_std = std / math.sqrt(2 * 9_999)
    assert abs(st.mean - mean) < 3 * se_mean
    assert abs(st.std - std) < 3 * se_std


def test_oscillator_realization_matches_transient(oscillator_solution):
    ckt, system, sol = oscillator_solution
    xi = np.array([0.6])
    pilot = pilot_oscillation(ckt, xi, 198.7e-9, sol.node, sol.level)
    T = float(sol.period_at(xi[None])[0])
    t0 = pilot.crossings[-2]
    t = np.linspace(0.0, T, 400, endpoint=False)
    ref = np.interp(t0 + t, pilot.times, pilot.states[:, sol.node])
    got = sol.realize(xi, t)[:, sol.node]
    rms = np.sqrt(np.mean((got - ref) ** 2)) / np.sqrt(np.mean((ref - ref.mean()) ** 2))
    assert rms < 0.02
