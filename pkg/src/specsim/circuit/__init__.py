"""Netlist parsing and the parameter-dependent MNA device model."""

from .expr import ExprError, ParamExpr, parse_expr, parse_number
from .model import (
    Analysis,
    Circuit,
    CircuitError,
    Device,
    Waveform,
    bind_parameters,
    eval_qf,
)
from .netlist import parse_netlist, read_netlist

__all__ = [
    "Analysis", "Circuit", "CircuitError", "Device", "ExprError", "ParamExpr",
    "Waveform", "bind_parameters", "eval_qf", "parse_expr", "parse_netlist",
    "parse_number", "read_netlist",
]
