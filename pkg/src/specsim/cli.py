"""Command-line front end.

``specsim run`` reads a netlist, runs one analysis (DC, transient or
periodic steady state) with one uncertainty method and writes a waveform
table, density tables and ``summary.json`` into the output directory.
``specsim compare`` reports the per-time L2 distance between two runs.

Exit codes: 0 success, 2 configuration or netlist error, 3 solver failure.
Failures also leave a machine-readable ``error.json`` in the output
directory (when it can be created) and print the same record to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import CircuitError, read_netlist
from .circuit.expr import ExprError
from .circuit.model import sample_points
from .detsolve import ConvergenceError, NewtonOptions, StepController, TransientError
from .polychaos import BasisError, make_basis
from .pss import (AutonomousShootingProblem, ForcedShootingProblem, ShootingError,
                  ShootingOptions, postprocess_pss, shoot_autonomous, shoot_forced)
from .quadrature import QuadratureError, smolyak_grid, tensor_gauss
from .report import (Table, compare, ensure_dir, plot_density, plot_table, safe_name,
                     write_density, write_json, write_table)
from .spectral import (SampleFailure, SelectionError, mc_solve, run_sg,
                       run_st, sc_solve, select_testing_points, sg_assemble,
                       st_residual_system)
from .spectral.galerkin import sg_quadrature
from .systems import SingularJacobianError

log = logging.getLogger("specsim")

EXIT_CONFIG = 2
EXIT_SOLVER = 3
TIMING_KEYS = ("wall_time",)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    netlist: str
    method: str = "st"
    order: int = 3
    quad: str | None = None  # tensor / smolyak; default picks by dimension
    level: int | None = None
    beta: float = 1e-2
    samples: int = 10_000
    seed: int = 0
    analysis: str | None = None
    out: str = "specsim_out"
    format: str = "csv"
    outputs: list[str] = field(default_factory=list)
    lte_tol: float = 1e-6
    steps_per_period: int = 200
    plot: bool = False

    def validate(self):
        if self.method not in ("st", "sg", "sc", "mc"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.order < 0:
            raise ConfigError("order must be >= 0")
        if self.quad not in (None, "tensor", "smolyak"):
            raise ConfigError(f"unknown quadrature {self.quad!r}")
        if self.level is not None and self.level < 1:
            raise ConfigError("level must be >= 1")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if self.method == "mc" and self.samples < 2:
            raise ConfigError("Monte Carlo needs at least 2 samples")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.analysis not in (None, "dc", "tran", "pss"):
            raise ConfigError(f"unknown analysis {self.analysis!r}")
        if self.steps_per_period < 32:
            raise ConfigError("steps per period must be >= 32")
        if not self.lte_tol > 0:
            raise ConfigError("lte tolerance must be positive")


def _rule(cfg: RunConfig, basis):
    """Candidate / collocation rule selected by ``--quad`` and ``--level``.

    Without options: tensor Gauss with p+1 points per axis for d <= 3, else
    Smolyak level p+1. ``--level`` is the Smolyak level or the number of
    Gauss points per axis.
    """
    quad = cfg.quad or ("tensor" if basis.dim <= 3 else "smolyak")
    if quad == "smolyak":
        return smolyak_grid(basis.distributions, cfg.level or basis.order + 1)
    return tensor_gauss(basis.distributions, cfg.level or basis.order + 1)


def _pick_analysis(cfg: RunConfig, circuit):
    kinds = {an.kind: an for an in circuit.analyses}
    if cfg.analysis is None:
        return circuit.analyses[0] if circuit.analyses else None, (
            circuit.analyses[0].kind if circuit.analyses else "dc")
    if cfg.analysis != "dc" and cfg.analysis not in kinds:
        raise ConfigError(f"analysis {cfg.analysis!r} needs a matching card in the netlist")
    return kinds.get(cfg.analysis), cfg.analysis


def _output_indices(cfg, circuit):
    if not cfg.outputs:
        return list(range(circuit.n))
    try:
        return [circuit.unknown_index(o) for o in cfg.outputs]
    except CircuitError as exc:
        raise ConfigError(str(exc)) from None


def _surrogate_samples(result, seed, idx):
    rng = np.random.Generator(np.random.Philox(seed))
    xi = sample_points(result.basis.distributions, rng, 10_000)
    return result.basis.evaluate(xi) @ result.coeffs[-1][:, idx]


def execute(cfg: RunConfig) -> dict:
    """Run one configuration; returns the summary written to ``summary.json``."""
    cfg.validate()
    path = Path(cfg.netlist)
    if not path.is_file():
        raise ConfigError(f"netlist not found: {path}")
    circuit = read_netlist(path)
    analysis, kind = _pick_analysis(cfg, circuit)
    out_dir = ensure_dir(cfg.out)
    idx = _output_indices(cfg, circuit)
    names = [circuit.unknown_names[i] for i in idx]
    opts = NewtonOptions()
    start = time.perf_counter()
    summary = {"method": cfg.method, "analysis": kind, "config": asdict(cfg),
               "circuit": {"title": circuit.title, "n": circuit.n, "d": circuit.d,
                           "variables": [f"{n} {dist}" for n, dist in circuit.variables]},
               "version": __version__}
    basis = make_basis(circuit.distributions, cfg.order) if circuit.d else None
    if basis is None and cfg.method != "mc":
        raise ConfigError("the netlist declares no random parameters (param cards)")
    if kind == "pss":
        return _execute_pss(cfg, circuit, analysis, basis, idx, names, out_dir, summary, start)
    t_span = None
    controller = StepController(lte_tol=cfg.lte_tol)
    if kind == "tran":
        t_span = (0.0, float(analysis.options["tstop"]))
        controller = StepController(lte_tol=float(analysis.options.get("tol", cfg.lte_tol)))
    an = "dc" if kind == "dc" else "tran"
    if cfg.method == "st":
        cand = _rule(cfg, basis)
        res = run_st(circuit, basis, an, t_span, cand, cfg.beta, controller, opts)
    elif cfg.method == "sg":
        quad = _rule(cfg, basis) if (cfg.level or cfg.quad) else sg_quadrature(
            basis, circuit.param_degree)
        res = run_sg(circuit, basis, an, t_span, quad, controller, opts)
    elif cfg.method == "sc":
        res = sc_solve(circuit, basis, _rule(cfg, basis), an, t_span, opts=opts,
                       controller=controller)
    else:
        res = mc_solve(circuit, cfg.samples, cfg.seed, an, t_span, opts=opts,
                       controller=controller)
    coeffs = res.coeffs[:, :, idx] if res.coeffs is not None else None
    table = Table(res.times, names, res.mean[:, idx], res.std[:, idx], coeffs)
    wave = write_table(out_dir / f"{kind}.{cfg.format}", table, cfg.format)
    files = [wave.name]
    densities = {}
    for j, i in enumerate(idx):
        if cfg.method == "mc":
            samples = res.info["samples"][:, i]
        else:
            samples = _surrogate_samples(res, cfg.seed, i)
        p = write_density(out_dir / f"density_{safe_name(names[j])}.{cfg.format}", samples,
                          cfg.format)
        densities[names[j]] = p.name
        files.append(p.name)
    info = {k: v for k, v in res.info.items() if k != "samples"}
    summary.update({
        "K": basis.size if basis is not None else None,
        "N_hat": info.get("candidates", info.get("quadrature_nodes")),
        "kappa_samp": info.get("kappa_samp"),
        "cond_V": info.get("cond_V"),
        "evaluations": res.evaluations,
        "newton": info.get("newton"),
        "details": info,
        "waveform_file": wave.name,
        "density_files": densities,
        "final": {n: {"mean": float(res.mean[-1, i]), "std": float(res.std[-1, i])}
                  for n, i in zip(names, idx)},
    })
    if res.mean_stderr is not None:
        summary["final_stderr"] = {n: {"mean": float(res.mean_stderr[-1, i]),
                                       "std": float(res.std_stderr[-1, i])}
                                   for n, i in zip(names, idx)}
    if cfg.plot:
        files += _plots(table, out_dir, kind, densities)
    summary["files"] = files
    summary["wall_time"] = time.perf_counter() - start
    write_json(out_dir / "summary.json", summary)
    return summary


def _plots(table, out_dir, prefix, densities):
    files = [p.name for p in plot_table(table, out_dir, prefix)]
    for name, fname in densities.items():
        if fname.endswith(".csv"):
            p = plot_density(out_dir / fname, name, out_dir / (Path(fname).stem + ".png"))
            files.append(p.name)
    return files


def _execute_pss(cfg, circuit, analysis, basis, idx, names, out_dir, summary, start):
    if cfg.method not in ("st", "sg"):
        raise ConfigError("periodic steady state is available for --method st or sg")
    sopts = ShootingOptions(steps_per_period=cfg.steps_per_period)
    auto = bool(analysis.options.get("autonomous"))
    period = float(analysis.options["period"])
    if cfg.method == "st":
        tset = select_testing_points(_rule(cfg, basis), basis, cfg.beta)
        system = st_residual_system(circuit, basis, tset)
        summary.update(K=basis.size, N_hat=tset.candidate_count,
                       kappa_samp=tset.candidate_count / basis.size, cond_V=tset.cond)
    else:
        if auto:
            raise ConfigError("autonomous periodic steady state needs --method st")
        system = sg_assemble(circuit, basis)
        summary.update(K=basis.size, N_hat=system.quad.size)
    if auto:
        node = circuit.unknown_index(analysis.options["node"])
        sol = shoot_autonomous(AutonomousShootingProblem(system, basis, period, node,
                                                         analysis.options.get("level")), sopts)
    else:
        sol = shoot_forced(ForcedShootingProblem(system, basis, period), sopts)
    coeffs = sol.trajectory[:, :, idx]
    mean = coeffs[:, 0, :]
    std = np.sqrt(np.sum(coeffs[:, 1:, :] ** 2, axis=1))
    table = Table(sol.times, names, mean, std, coeffs)
    wave = write_table(out_dir / f"pss.{cfg.format}", table, cfg.format)
    files = [wave.name]
    densities = {}
    extra = {"iterations": sol.iterations, "residual": sol.residual, "history": sol.history}
    if auto:
        stats = postprocess_pss(sol, "frequency_pdf", seed=cfg.seed)
        p = write_density(out_dir / f"density_frequency.{cfg.format}", stats.samples, cfg.format)
        densities["frequency"] = p.name
        extra.update(scaling=sol.scaling, level=sol.level, reference_period=period,
                     frequency={"mean": stats.mean, "std": stats.std})
    else:
        thd_stats = {}
        for j, i in enumerate(idx):
            if not circuit.is_voltage[i]:
                continue
            st = postprocess_pss(sol, "thd", output=i, seed=cfg.seed)
            p = write_density(out_dir / f"density_thd_{safe_name(names[j])}.{cfg.format}",
                              st.samples[np.isfinite(st.samples)], cfg.format)
            densities[f"thd {names[j]}"] = p.name
            thd_stats[names[j]] = {"mean": st.mean, "std": st.std, "undefined": st.undefined}
        extra["thd"] = thd_stats
    files += list(densities.values())
    summary.update(waveform_file=wave.name, density_files=densities, pss=extra,
                   evaluations=basis.size)
    if cfg.plot:
        files += _plots(table, out_dir, "pss", densities)
    summary["files"] = files
    summary["wall_time"] = time.perf_counter() - start
    write_json(out_dir / "summary.json", summary)
    return summary


def _error_record(kind: str, exc: Exception, out: str | None, **extra) -> dict:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), **extra}
    print(json.dumps(rec), file=sys.stderr)
    if out:
        try:
            ensure_dir(out)
            write_json(Path(out) / "error.json", rec)
        except OSError:
            pass
    return rec


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"specsim {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an analysis")
    run.add_argument("netlist")
    run.add_argument("--method", default="st", choices=["st", "sg", "sc", "mc"])
    run.add_argument("--order", type=int, default=3, help="total gPC order p")
    run.add_argument("--beta", type=float, default=1e-2, help="testing-point threshold")
    run.add_argument("--quad", default=None, choices=["tensor", "smolyak"],
                     help="candidate/collocation rule (default: tensor for d <= 3)")
    run.add_argument("--level", type=int, default=None,
                     help="Smolyak level, or Gauss points per axis for tensor rules")
    run.add_argument("--samples", type=int, default=10_000, help="Monte Carlo samples")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--analysis", choices=["dc", "tran", "pss"], default=None,
                     help="default: first analysis card of the netlist, else dc")
    run.add_argument("--output", action="append", default=[], dest="outputs",
                     help="unknown to report, e.g. v(2) or i(V1); repeatable")
    run.add_argument("--lte-tol", type=float, default=1e-6)
    run.add_argument("--steps-per-period", type=int, default=200)
    run.add_argument("--out", default="specsim_out")
    run.add_argument("--format", default="csv", choices=["csv", "json"])
    run.add_argument("--plot", action="store_true", help="also write PNG figures")
    cmp_ = sub.add_parser("compare", help="compare two result directories")
    cmp_.add_argument("run_a")
    cmp_.add_argument("run_b")
    cmp_.add_argument("--tol", type=float, default=1e-8)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare":
        try:
            rep = compare(args.run_a, args.run_b, args.tol)
        except (ValueError, OSError, KeyError) as exc:
            _error_record("config", exc, None)
            return EXIT_CONFIG
        brief = {k: rep[k] for k in ("metric", "max", "mean", "tolerance", "pass")}
        print(json.dumps(brief))
        return 0 if rep["pass"] else 1
    cfg = RunConfig(args.netlist, args.method, args.order, args.quad, args.level, args.beta,
                    args.samples, args.seed, args.analysis, args.out, args.format,
                    list(args.outputs), args.lte_tol, args.steps_per_period, args.plot)
    try:
        summary = execute(cfg)
    except (ConfigError, CircuitError, ExprError, BasisError, QuadratureError) as exc:
        _error_record("config", exc, cfg.out, path=cfg.netlist)
        return EXIT_CONFIG
    except OSError as exc:
        _error_record("config", exc, None, path=getattr(exc, "filename", None) or cfg.netlist)
        return EXIT_CONFIG
    except (ConvergenceError, TransientError, SingularJacobianError, ShootingError,
            SampleFailure, SelectionError, np.linalg.LinAlgError) as exc:
        _error_record("solver", exc, cfg.out)
        return EXIT_SOLVER
    final = summary.get("final") or {}
    for name, st in final.items():
        print(f"{name}: mean={st['mean']:.9g} std={st['std']:.9g}")
    print(f"results written to {cfg.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
