"""Modified nodal analysis model with parameter-dependent devices.

The circuit equation is ``d/dt q(x, xi) + f(x, xi) = B u(t, xi)`` with
unknowns ordered as the non-ground node voltages followed by branch
currents of voltage sources and inductors.

Evaluation is batched: states ``x`` of shape (K, n) and parameter points
``xi`` of shape (K, d) give (K, n) vectors and (K, n, n) Jacobians, which
is how the stochastic engines evaluate all testing points, quadrature
nodes or Monte Carlo samples at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..polychaos import Distribution
from .expr import ParamExpr

VT_300K = 0.025852
_EXP_CAP = 80.0


class CircuitError(ValueError):
    """Netlist or model error; ``line`` and ``col`` locate netlist problems."""

    def __init__(self, msg, line=None, col=None):
        self.line, self.col = line, col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + msg)


@dataclass(frozen=True)
class Waveform:
    """Independent-source waveform; ``kind`` is ``dc``, ``sin`` or ``pwl``."""

    kind: str
    args: tuple[ParamExpr, ...] = ()
    points: tuple[tuple[float, float], ...] = ()

    def value(self, t: float, env: Mapping[str, np.ndarray]):
        if self.kind == "dc":
            return self.args[0].evaluate(env)
        if self.kind == "sin":
            vals = [a.evaluate(env) for a in self.args] + [0.0] * (6 - len(self.args))
            vo, va, freq, td, theta, phase = vals
            dt = np.maximum(t - np.asarray(td, dtype=float), 0.0)
            ph = np.pi * np.asarray(phase, dtype=float) / 180.0
            return vo + va * np.exp(-dt * theta) * np.sin(2 * np.pi * freq * dt + ph)
        ts, vs = zip(*self.points)
        return float(np.interp(t, ts, vs))

    def breakpoints(self) -> list[float]:
        if self.kind == "pwl":
            return [p[0] for p in self.points]
        return []

    def period(self) -> float | None:
        if self.kind == "sin":
            freq = self.args[2]
            if freq.is_constant:
                f = freq.nominal
                return 1.0 / f if f > 0 else None
        return None

    @property
    def param_degree(self) -> int:
        return max((a.degree for a in self.args), default=0)


@dataclass(frozen=True)
class Device:
    name: str
    kind: str  # resistor capacitor inductor vsource isource diode mosfet nlcs
    nodes: tuple[str, ...]
    terminals: tuple[int, ...]  # unknown index per node, -1 for ground
    params: Mapping[str, ParamExpr] = field(default_factory=dict)
    source: Waveform | None = None
    branch: int | None = None
    polarity: int = 1  # -1 for pmos

    @property
    def param_degree(self) -> int:
        deg = max((p.degree for p in self.params.values()), default=0)
        if self.source is not None:
            deg = max(deg, self.source.param_degree)
        return deg


@dataclass(frozen=True)
class Analysis:
    kind: str  # dc tran pss
    options: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class Circuit:
    title: str
    node_names: tuple[str, ...]
    branch_names: tuple[str, ...]
    devices: tuple[Device, ...]
    variables: tuple[tuple[str, Distribution], ...]
    analyses: tuple[Analysis, ...] = ()
    initial_conditions: Mapping[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.node_names) + len(self.branch_names)

    @property
    def d(self) -> int:
        return len(self.variables)

    @property
    def distributions(self) -> tuple[Distribution, ...]:
        return tuple(dist for _, dist in self.variables)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.variables)

    @property
    def unknown_names(self) -> list[str]:
        return [f"v({nd})" for nd in self.node_names] + [f"i({b})" for b in self.branch_names]

    def unknown_index(self, name: str) -> int:
        """Index of ``v(node)``, ``i(device)`` or a bare node name."""
        key = name.strip().lower()
        names = [u.lower() for u in self.unknown_names]
        if key in names:
            return names.index(key)
        if f"v({key})" in names:
            return names.index(f"v({key})")
        raise CircuitError(f"unknown output {name!r}")

    def device(self, name: str) -> Device:
        for dev in self.devices:
            if dev.name.lower() == name.lower():
                return dev
        raise CircuitError(f"no device named {name!r}")

    @property
    def is_voltage(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        out[: len(self.node_names)] = True
        return out

    @property
    def algebraic_rows(self) -> np.ndarray:
        """Rows whose charge/flux entry is structurally zero."""
        dyn = np.zeros(self.n + 1, dtype=bool)
        for dev in self.devices:
            if dev.kind == "capacitor":
                dyn[list(dev.terminals)] = True
            elif dev.kind == "inductor":
                dyn[dev.branch] = True
        return ~dyn[: self.n]

    @property
    def param_degree(self) -> int:
        return max((dev.param_degree for dev in self.devices), default=0)

    @property
    def sources(self) -> list[Device]:
        return [dev for dev in self.devices if dev.kind in ("vsource", "isource")]

    def input_matrix(self) -> np.ndarray:
        """Incidence matrix ``B`` (n x m) mapping source values ``u`` to rows."""
        srcs = self.sources
        B = np.zeros((self.n + 1, len(srcs)))
        for col, dev in enumerate(srcs):
            if dev.kind == "vsource":
                B[dev.branch, col] = 1.0
            else:
                a, b = dev.terminals
                B[a, col] -= 1.0
                B[b, col] += 1.0
        return B[: self.n]

    def inputs(self, t: float, xi) -> np.ndarray:
        """Source values ``u(t, xi)`` with shape (K, m)."""
        xi = _as_points(xi, self.d)
        env = self.env(xi)
        K = xi.shape[0]
        cols = [np.broadcast_to(dev.source.value(t, env), (K,)) for dev in self.sources]
        return np.stack(cols, axis=1) if cols else np.zeros((K, 0))

    def breakpoints(self) -> list[float]:
        out = set()
        for dev in self.sources:
            out.update(dev.source.breakpoints())
        return sorted(out)

    def forced_period(self) -> float | None:
        periods = {dev.source.period() for dev in self.sources} - {None}
        return periods.pop() if len(periods) == 1 else None

    def env(self, xi: np.ndarray) -> dict[str, np.ndarray]:
        return {name: xi[:, j] for j, name in enumerate(self.variable_names)}

    def nominal_point(self) -> np.ndarray:
        return np.array([dist.mean() for dist in self.distributions], dtype=float)

    def evaluate(self, x, xi, t: float = 0.0, forced: Mapping[int, float] | None = None):
        """Batched ``(q, f, dq/dx, df/dx, B u)`` at states ``x`` (K, n) and points ``xi`` (K, d).

        ``forced`` replaces row ``i`` by the constraint ``x_i = value`` (used
        for initial conditions); those rows carry no charge.
        """
        x = np.asarray(x, dtype=float)
        xi = _as_points(xi, self.d)
        K = max(x.shape[0], xi.shape[0])
        if xi.shape[0] != K:
            xi = np.broadcast_to(xi, (K, self.d))
        if x.shape[0] != K:
            x = np.broadcast_to(x, (K, self.n))
        n = self.n
        X = np.zeros((K, n + 1))
        X[:, :n] = x
        q = np.zeros((K, n + 1))
        f = np.zeros((K, n + 1))
        dq = np.zeros((K, n + 1, n + 1))
        df = np.zeros((K, n + 1, n + 1))
        b = np.zeros((K, n + 1))
        env = self.env(xi)
        for dev in self.devices:
            _STAMPS[dev.kind](dev, X, env, t, q, f, dq, df, b, K)
        q, f, b = q[:, :n], f[:, :n], b[:, :n]
        dq, df = dq[:, :n, :n], df[:, :n, :n]
        if forced:
            for row, val in forced.items():
                q[:, row] = 0.0
                dq[:, row, :] = 0.0
                f[:, row] = x[:, row]
                df[:, row, :] = 0.0
                df[:, row, row] = 1.0
                b[:, row] = val
        return q, f, dq, df, b

    def limit_scale(self, x, dx) -> np.ndarray:
        """Per-point step scale in (0, 1] from diode junction limiting."""
        K = x.shape[0]
        scale = np.ones(K)
        diodes = [dev for dev in self.devices if dev.kind == "diode"]
        if not diodes:
            return scale
        X = np.zeros((K, self.n + 1))
        X[:, : self.n] = x
        D = np.zeros((K, self.n + 1))
        D[:, : self.n] = dx
        for dev in diodes:
            a, c = dev.terminals
            vold = X[:, a] - X[:, c]
            dv = D[:, a] - D[:, c]
            nvt = dev.params["n"].nominal * VT_300K
            isat = dev.params["is"].nominal
            vlim = pnjlim(vold + dv, vold, nvt, isat)
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(np.abs(dv) > 0, (vlim - vold) / dv, 1.0)
            scale = np.minimum(scale, np.clip(s, 1e-3, 1.0))
        return scale


def pnjlim(vnew, vold, nvt, isat):
    """SPICE junction-voltage limiting of a Newton update."""
    vcrit = nvt * math.log(nvt / (math.sqrt(2.0) * isat))
    vnew = np.asarray(vnew, dtype=float)
    vold = np.asarray(vold, dtype=float)
    limit = (vnew > vcrit) & (np.abs(vnew - vold) > 2 * nvt)
    arg = 1.0 + (vnew - vold) / nvt
    with np.errstate(invalid="ignore", divide="ignore"):
        from_old = np.where(arg > 0, vold + nvt * np.log(np.where(arg > 0, arg, 1.0)), vcrit)
        from_zero = nvt * np.log(np.where(vnew > 0, vnew / nvt, 1.0))
    limited = np.where(vold > 0, from_old, from_zero)
    return np.where(limit, limited, vnew)


def _as_points(xi, d):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi.reshape(1, d) if d else np.zeros((1, 0))
    if xi.ndim == 0 or xi.shape[-1] != d:
        raise CircuitError(f"expected parameter points with {d} coordinates, got {xi.shape}")
    return xi


def _val(expr: ParamExpr, env, K):
    return np.broadcast_to(np.asarray(expr.evaluate(env), dtype=float), (K,))


def _stamp_conductance(f, df, a, b, g, v):
    i = g * v
    f[:, a] += i
    f[:, b] -= i
    df[:, a, a] += g
    df[:, a, b] -= g
    df[:, b, a] -= g
    df[:, b, b] += g


def _resistor(dev, X, env, t, q, f, dq, df, b, K):
    a, c = dev.terminals
    g = 1.0 / _val(dev.params["value"], env, K)
    _stamp_conductance(f, df, a, c, g, X[:, a] - X[:, c])


def _capacitor(dev, X, env, t, q, f, dq, df, b, K):
    a, c = dev.terminals
    C = _val(dev.params["value"], env, K)
    qc = C * (X[:, a] - X[:, c])
    q[:, a] += qc
    q[:, c] -= qc
    dq[:, a, a] += C
    dq[:, a, c] -= C
    dq[:, c, a] -= C
    dq[:, c, c] += C


def _inductor(dev, X, env, t, q, f, dq, df, b, K):
    a, c = dev.terminals
    m = dev.branch
    L = _val(dev.params["value"], env, K)
    f[:, a] += X[:, m]
    f[:, c] -= X[:, m]
    df[:, a, m] += 1.0
    df[:, c, m] -= 1.0
    # branch row: v_a - v_c - L di/dt = 0
    q[:, m] -= L * X[:, m]
    dq[:, m, m] -= L
    f[:, m] += X[:, a] - X[:, c]
    df[:, m, a] += 1.0
    df[:, m, c] -= 1.0


def _vsource(dev, X, env, t, q, f, dq, df, b, K):
    a, c = dev.terminals
    m = dev.branch
    f[:, a] += X[:, m]
    f[:, c] -= X[:, m]
    df[:, a, m] += 1.0
    df[:, c, m] -= 1.0
    f[:, m] += X[:, a] - X[:, c]
    df[:, m, a] += 1.0
    df[:, m, c] -= 1.0
    b[:, m] += np.broadcast_to(dev.source.value(t, env), (K,))


def _isource(dev, X, env, t, q, f, dq, df, b, K):
    # current flows from the first node through the source into the second
    a, c = dev.terminals
    val = np.broadcast_to(dev.source.value(t, env), (K,))
    b[:, a] -= val
    b[:, c] += val


def _safe_exp(arg):
    """exp with linear continuation above a cap; returns value and derivative."""
    capped = np.minimum(arg, _EXP_CAP)
    e = np.exp(capped)
    over = np.maximum(arg - _EXP_CAP, 0.0)
    return e * (1.0 + over), e


def _diode(dev, X, env, t, q, f, dq, df, b, K):
    a, c = dev.terminals
    isat = _val(dev.params["is"], env, K)
    nvt = _val(dev.params["n"], env, K) * VT_300K
    v = X[:, a] - X[:, c]
    e, de = _safe_exp(v / nvt)
    i = isat * (e - 1.0)
    g = isat * de / nvt
    f[:, a] += i
    f[:, c] -= i
    df[:, a, a] += g
    df[:, a, c] -= g
    df[:, c, a] -= g
    df[:, c, c] += g


def _mos_core(vgs, vds, vt, beta, lam):
    """Square-law drain current and its partials for vds >= 0."""
    vov = vgs - vt
    on = vov > 0
    sat = on & (vds >= vov)
    lin = on & ~sat
    clm = 1.0 + lam * vds
    ids = np.zeros_like(vgs)
    gm = np.zeros_like(vgs)
    gds = np.zeros_like(vgs)
    ids = np.where(sat, 0.5 * beta * vov**2 * clm, ids)
    gm = np.where(sat, beta * vov * clm, gm)
    gds = np.where(sat, 0.5 * beta * vov**2 * lam, gds)
    core = vov * vds - 0.5 * vds**2
    ids = np.where(lin, beta * core * clm, ids)
    gm = np.where(lin, beta * vds * clm, gm)
    gds = np.where(lin, beta * ((vov - vds) * clm + core * lam), gds)
    return ids, gm, gds


def _mosfet(dev, X, env, t, q, f, dq, df, b, K):
    d, g, s = dev.terminals[:3]
    pol = dev.polarity
    vt = _val(dev.params["vto"], env, K) * pol
    beta = _val(dev.params["kp"], env, K) * _val(dev.params["w"], env, K) / _val(dev.params["l"], env, K)
    lam = _val(dev.params["lambda"], env, K)
    vgs = pol * (X[:, g] - X[:, s])
    vds = pol * (X[:, d] - X[:, s])
    vgd = vgs - vds
    fwd = vds >= 0
    # reverse mode: drain and source swap roles
    ids_f, gm_f, gds_f = _mos_core(vgs, vds, vt, beta, lam)
    ids_r, gm_r, gds_r = _mos_core(vgd, -vds, vt, beta, lam)
    # current from drain to source in the polarity-normalized frame, and its
    # derivatives with respect to (v_d, v_g, v_s) in that frame
    ids = np.where(fwd, ids_f, -ids_r)
    dd = np.where(fwd, gds_f, gm_r + gds_r)
    dg = np.where(fwd, gm_f, -gm_r)
    ds = np.where(fwd, -gm_f - gds_f, -gds_r)
    i = pol * ids
    f[:, d] += i
    f[:, s] -= i
    for col, gval in ((d, dd), (g, dg), (s, ds)):
        df[:, d, col] += gval
        df[:, s, col] -= gval


def _nlcs(dev, X, env, t, q, f, dq, df, b, K):
    # i = -g1 v + g3 v^3 flowing from the first node to the second
    a, c = dev.terminals
    g1 = _val(dev.params["g1"], env, K)
    g3 = _val(dev.params["g3"], env, K)
    v = X[:, a] - X[:, c]
    i = -g1 * v + g3 * v**3
    g = -g1 + 3.0 * g3 * v**2
    f[:, a] += i
    f[:, c] -= i
    df[:, a, a] += g
    df[:, a, c] -= g
    df[:, c, a] -= g
    df[:, c, c] += g


_STAMPS = {
    "resistor": _resistor,
    "capacitor": _capacitor,
    "inductor": _inductor,
    "vsource": _vsource,
    "isource": _isource,
    "diode": _diode,
    "mosfet": _mosfet,
    "nlcs": _nlcs,
}


def eval_qf(circuit: Circuit, x, xi, t: float = 0.0):
    """Single-point evaluation: ``(q, f, dq/dx, df/dx, B u)`` for one state."""
    x = np.asarray(x, dtype=float).reshape(1, circuit.n)
    xi = np.asarray(xi, dtype=float).reshape(1, circuit.d)
    q, f, dq, df, b = circuit.evaluate(x, xi, t)
    return q[0], f[0], dq[0], df[0], b[0]


def bind_parameters(circuit: Circuit, xi) -> dict[str, dict[str, float]]:
    """Numeric device parameter values at one parameter point."""
    xi = np.asarray(xi, dtype=float).reshape(1, circuit.d)
    env = circuit.env(xi)
    out = {}
    for dev in circuit.devices:
        vals = {}
        exprs = dict(dev.params)
        if dev.source is not None:
            for j, a in enumerate(dev.source.args):
                exprs[f"{dev.source.kind}{j}"] = a
        for key, expr in exprs.items():
            v = float(np.asarray(expr.evaluate(env), dtype=float).reshape(-1)[0])
            if not math.isfinite(v):
                raise CircuitError(f"device {dev.name}: parameter {key} is not finite at xi={xi[0]}")
            vals[key] = v
        out[dev.name] = vals
    return out


def nominal_point(circuit: Circuit) -> np.ndarray:
    return circuit.nominal_point()


def sample_points(dists: Sequence[Distribution], rng, size: int) -> np.ndarray:
    return np.stack([dist.sample(rng, size) for dist in dists], axis=1) if dists else np.zeros((size, 0))
