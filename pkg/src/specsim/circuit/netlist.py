"""Line-oriented SPICE-like netlist reader.

Example::

    * diode clamp with a stochastic resistor
    param xi1 gaussian
    param xi2 uniform
    V1 in 0 1
    R1 in mid 1k*(1+0.1*xi1)
    D1 mid 0 is=1e-14 n=1
    .dc

Random variables are declared with ``param <name> gaussian | uniform |
gamma(<g>) | beta(<a>,<b>)``. Device values are expressions over literals
(SI suffixes k, m, u, n, p, meg, ...) and declared variables. Lines
starting with ``*`` are comments and ``+`` continues the previous line.
Analysis cards: ``.dc``, ``.tran <tstop> [tol]``, ``.pss <T>``,
``.pss auto <T0> <node> [<lambda>]`` and ``.ic v(<node>)=<value> ...``.
"""

from __future__ import annotations

import re
from pathlib import Path

from ..polychaos import BasisError, Distribution
from .expr import ExprError, ParamExpr, parse_expr, parse_number
from .model import Analysis, Circuit, CircuitError, Device, Waveform

GROUND = ("0", "gnd")
_DEVICE_KINDS = {
    "r": "resistor", "c": "capacitor", "l": "inductor", "v": "vsource",
    "i": "isource", "d": "diode", "m": "mosfet", "n": "nlcs",
}
_DIODE_DEFAULTS = {"is": "1e-14", "n": "1"}
_MOS_DEFAULTS = {"vto": "0.7", "kp": "2e-5", "lambda": "0", "w": "1", "l": "1"}
_DIST = re.compile(r"^(gaussian|normal|uniform|gamma|beta)\s*(?:\((.*)\))?$", re.IGNORECASE)


def _tokens(text: str) -> list[tuple[str, int]]:
    """Whitespace split that keeps parenthesized groups together; yields (token, column)."""
    out = []
    depth = 0
    start = None
    for i, ch in enumerate(text):
        if ch.isspace() and depth == 0:
            if start is not None:
                out.append((text[start:i], start))
                start = None
            continue
        if start is None:
            start = i
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise CircuitError("unbalanced ')'", col=i + 1)
    if depth:
        raise CircuitError("unbalanced '('", col=len(text))
    if start is not None:
        out.append((text[start:], start))
    return out


def _split_args(inner: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in inner:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if depth == 0 and (ch.isspace() or ch == ","):
            if cur:
                parts.append("".join(cur))
                cur = []
            continue
        cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return parts


def _logical_lines(text: str):
    lines: list[tuple[int, str]] = []
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if stripped.startswith("+"):
            if not lines:
                raise CircuitError("continuation line with nothing to continue", num, 1)
            prev_num, prev = lines[-1]
            lines[-1] = (prev_num, prev + " " + stripped[1:])
            continue
        lines.append((num, line))
    return lines


class _Builder:
    def __init__(self):
        self.title = ""
        self.variables: dict[str, Distribution] = {}
        self.nodes: list[str] = []
        self.raw_devices: list[tuple[int, str, str, list[str], dict]] = []
        self.analyses: list[Analysis] = []
        self.ic: dict[str, float] = {}
        self.names: set[str] = set()

    def node(self, name: str) -> str:
        key = name.lower()
        if key in GROUND:
            return "0"
        if key not in self.nodes:
            self.nodes.append(key)
        return key


def _parse_distribution(spec: str, lineno: int, col: int) -> Distribution:
    m = _DIST.match(spec.strip())
    if not m:
        raise CircuitError(f"unknown distribution {spec!r}", lineno, col)
    family = m.group(1).lower()
    family = "gaussian" if family == "normal" else family
    args = _split_args(m.group(2) or "")
    try:
        shape = tuple(parse_number(a) for a in args)
        return Distribution(family, shape)
    except (BasisError, ExprError) as exc:
        raise CircuitError(str(exc), lineno, col) from None


def _expr(text: str, b: _Builder, lineno: int, col: int) -> ParamExpr:
    try:
        return parse_expr(text, set(b.variables))
    except ExprError as exc:
        raise CircuitError(str(exc), lineno, col) from None


def _waveform(toks: list[tuple[str, int]], b: _Builder, lineno: int) -> Waveform:
    if not toks:
        raise CircuitError("source value missing", lineno)
    first, col = toks[0]
    low = first.lower()
    if low == "dc":
        toks = toks[1:]
        if not toks:
            raise CircuitError("dc value missing", lineno, col + 1)
        first, col = toks[0]
        low = first.lower()
    for kind in ("sin", "pwl"):
        if low.startswith(kind + "(") or (low == kind and len(toks) > 1):
            body = " ".join(t for t, _ in toks)
            inner = body[body.index("(") + 1: body.rindex(")")]
            args = _split_args(inner)
            if kind == "sin":
                if not 3 <= len(args) <= 6:
                    raise CircuitError("sin(vo va freq [td theta phase]) takes 3 to 6 values", lineno, col + 1)
                return Waveform("sin", tuple(_expr(a, b, lineno, col + 1) for a in args))
            if len(args) < 2 or len(args) % 2:
                raise CircuitError("pwl needs time/value pairs", lineno, col + 1)
            try:
                vals = [parse_number(a) for a in args]
            except ExprError as exc:
                raise CircuitError(str(exc), lineno, col + 1) from None
            pts = tuple(zip(vals[0::2], vals[1::2]))
            if any(t1 <= t0 for (t0, _), (t1, _) in zip(pts, pts[1:])):
                raise CircuitError("pwl times must increase", lineno, col + 1)
            return Waveform("pwl", points=pts)
    return Waveform("dc", (_expr(" ".join(t for t, _ in toks), b, lineno, col + 1),))


def _keyvals(toks, lineno, allowed):
    out = {}
    for tok, col in toks:
        if "=" not in tok:
            raise CircuitError(f"expected key=value, got {tok!r}", lineno, col + 1)
        k, v = tok.split("=", 1)
        k = k.lower()
        if k not in allowed:
            raise CircuitError(f"unknown model parameter {k!r}", lineno, col + 1)
        out[k] = (v, col + len(k) + 2)
    return out


def _card(b: _Builder, toks, lineno):
    card = toks[0][0].lower()
    args = toks[1:]
    if card == ".end":
        return True
    if card == ".title":
        b.title = " ".join(t for t, _ in args)
    elif card == ".dc":
        b.analyses.append(Analysis("dc", {}))
    elif card == ".tran":
        if not 1 <= len(args) <= 2:
            raise CircuitError(".tran <tstop> [tol]", lineno, toks[0][1] + 1)
        try:
            opts = {"tstop": parse_number(args[0][0])}
            if len(args) == 2:
                opts["tol"] = parse_number(args[1][0])
        except ExprError as exc:
            raise CircuitError(str(exc), lineno, args[0][1] + 1) from None
        b.analyses.append(Analysis("tran", opts))
    elif card == ".pss":
        try:
            if args and args[0][0].lower() == "auto":
                if len(args) not in (3, 4):
                    raise CircuitError(".pss auto <T0> <node> [<lambda>]", lineno, toks[0][1] + 1)
                opts = {"autonomous": True, "period": parse_number(args[1][0]),
                        "node": args[2][0].lower(), "level": None}
                if len(args) == 4:
                    lev = args[3][0]
                    sign = -1.0 if lev.startswith("-") else 1.0
                    opts["level"] = sign * parse_number(lev.lstrip("+-"))
            else:
                if len(args) != 1:
                    raise CircuitError(".pss <T> or .pss auto <T0> <node> <lambda>", lineno, toks[0][1] + 1)
                opts = {"autonomous": False, "period": parse_number(args[0][0])}
        except ExprError as exc:
            raise CircuitError(str(exc), lineno, toks[0][1] + 1) from None
        if opts["period"] <= 0:
            raise CircuitError("period must be positive", lineno, toks[0][1] + 1)
        b.analyses.append(Analysis("pss", opts))
    elif card == ".ic":
        for tok, col in args:
            m = re.fullmatch(r"v\((\w+)\)\s*=\s*(\S+)", tok, re.IGNORECASE)
            if not m:
                raise CircuitError(f"expected v(node)=value, got {tok!r}", lineno, col + 1)
            try:
                b.ic[m.group(1).lower()] = parse_number(m.group(2))
            except ExprError as exc:
                raise CircuitError(str(exc), lineno, col + 1) from None
    else:
        raise CircuitError(f"unknown card {card!r}", lineno, toks[0][1] + 1)
    return False


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a validated :class:`Circuit`."""
    b = _Builder()
    for lineno, line in _logical_lines(text):
        try:
            toks = _tokens(line)
        except CircuitError as exc:
            raise CircuitError(str(exc).split(": ", 1)[-1], lineno, exc.col) from None
        head, hcol = toks[0]
        low = head.lower()
        if low.startswith("."):
            if _card(b, toks, lineno):
                break
            continue
        if low == "param":
            if len(toks) < 3:
                raise CircuitError("param <name> <distribution>", lineno, hcol + 1)
            name = toks[1][0].lower()
            if not re.fullmatch(r"[a-z_][a-z_0-9]*", name):
                raise CircuitError(f"bad variable name {name!r}", lineno, toks[1][1] + 1)
            if name in b.variables:
                raise CircuitError(f"variable {name!r} declared twice", lineno, toks[1][1] + 1)
            spec = " ".join(t for t, _ in toks[2:])
            b.variables[name] = _parse_distribution(spec, lineno, toks[2][1] + 1)
            continue
        kind = _DEVICE_KINDS.get(low[0])
        if kind is None:
            raise CircuitError(f"unknown device type {head!r}", lineno, hcol + 1)
        if low in b.names:
            raise CircuitError(f"duplicate device name {head!r}", lineno, hcol + 1)
        b.names.add(low)
        b.raw_devices.append((lineno, head, kind, toks, {}))
    return _assemble(b)


def _assemble(b: _Builder) -> Circuit:
    devices_spec = []
    for lineno, name, kind, toks, _ in b.raw_devices:
        rest = toks[1:]
        params: dict[str, ParamExpr] = {}
        source = None
        polarity = 1
        if kind in ("resistor", "capacitor", "inductor"):
            if len(rest) < 3:
                raise CircuitError(f"{name}: expected <n1> <n2> <value>", lineno, toks[0][1] + 1)
            nodes = [rest[0][0], rest[1][0]]
            params["value"] = _expr(" ".join(t for t, _ in rest[2:]), b, lineno, rest[2][1] + 1)
        elif kind in ("vsource", "isource"):
            if len(rest) < 3:
                raise CircuitError(f"{name}: expected <n+> <n-> <value>", lineno, toks[0][1] + 1)
            nodes = [rest[0][0], rest[1][0]]
            source = _waveform(rest[2:], b, lineno)
        elif kind == "diode":
            if len(rest) < 2:
                raise CircuitError(f"{name}: expected <anode> <cathode>", lineno, toks[0][1] + 1)
            nodes = [rest[0][0], rest[1][0]]
            kv = _keyvals(rest[2:], lineno, _DIODE_DEFAULTS)
            for key, default in _DIODE_DEFAULTS.items():
                text, col = kv.get(key, (default, 1))
                params[key] = _expr(text, b, lineno, col)
        elif kind == "mosfet":
            node_toks = [t for t in rest if "=" not in t[0] and t[0].lower() not in ("nmos", "pmos")]
            if len(node_toks) not in (3, 4):
                raise CircuitError(f"{name}: expected <d> <g> <s> [<b>]", lineno, toks[0][1] + 1)
            nodes = [t for t, _ in node_toks[:3]]
            if any(t[0].lower() == "pmos" for t in rest):
                polarity = -1
            kv = _keyvals([t for t in rest if "=" in t[0]], lineno, _MOS_DEFAULTS)
            for key, default in _MOS_DEFAULTS.items():
                text, col = kv.get(key, (default if polarity > 0 or key != "vto" else "-0.7", 1))
                params[key] = _expr(text, b, lineno, col)
        else:
            if len(rest) < 4:
                raise CircuitError(f"{name}: expected <n1> <n2> <g1> <g3>", lineno, toks[0][1] + 1)
            nodes = [rest[0][0], rest[1][0]]
            vals = rest[2:]
            if all("=" in t for t, _ in vals):
                kv = _keyvals(vals, lineno, {"g1": None, "g3": None})
                if set(kv) != {"g1", "g3"}:
                    raise CircuitError(f"{name}: needs g1 and g3", lineno, toks[0][1] + 1)
                for key, (text, col) in kv.items():
                    params[key] = _expr(text, b, lineno, col)
            elif len(vals) == 2:
                params["g1"] = _expr(vals[0][0], b, lineno, vals[0][1] + 1)
                params["g3"] = _expr(vals[1][0], b, lineno, vals[1][1] + 1)
            else:
                raise CircuitError(f"{name}: expected <g1> <g3>", lineno, toks[0][1] + 1)
        nodes = [b.node(nd) for nd in nodes]
        devices_spec.append((lineno, name, kind, nodes, params, source, polarity))

    node_names = tuple(b.nodes)
    branch_names = tuple(name for _, name, kind, *_ in devices_spec if kind in ("vsource", "inductor"))
    n_nodes = len(node_names)
    variables = tuple(b.variables.items())
    mean_env = {name: dist.mean() for name, dist in variables}

    def index(nd):
        return -1 if nd == "0" else node_names.index(nd)

    devices = []
    branch = n_nodes
    for lineno, name, kind, nodes, params, source, polarity in devices_spec:
        if kind in ("resistor", "capacitor", "inductor"):
            nominal = float(params["value"].evaluate(mean_env))
            if not nominal > 0:
                raise CircuitError(f"{name}: non-positive nominal value {nominal:g}", lineno)
        br = None
        if kind in ("vsource", "inductor"):
            br = branch
            branch += 1
        # ground maps to the extra slot at index n in the stamp arrays
        terms = tuple(index(nd) if index(nd) >= 0 else n_nodes + len(branch_names) for nd in nodes)
        devices.append(Device(name, kind, tuple(nodes), terms, params, source, br, polarity))

    for nd in b.ic:
        if nd not in node_names:
            raise CircuitError(f".ic references undeclared node {nd!r}")
    for an in b.analyses:
        if an.kind == "pss" and an.options.get("autonomous"):
            if an.options["node"] not in node_names:
                raise CircuitError(f".pss auto references undeclared node {an.options['node']!r}")
    return Circuit(b.title, node_names, branch_names, tuple(devices), variables,
                   tuple(b.analyses), dict(b.ic))


def read_netlist(path) -> Circuit:
    return parse_netlist(Path(path).read_text(encoding="utf-8"))
