"""Arithmetic expressions over SI-suffixed literals and random-variable names.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | atom
    atom   := NUMBER | NAME | '(' expr ')'

Expressions compile to a small tree that evaluates on numpy arrays, so a
device value can be bound at many parameter points in one call. Only
polynomial dependence on the random variables is accepted (division by a
parameter-dependent quantity is rejected), with total degree at most 3.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

MAX_PARAM_DEGREE = 3

_SUFFIX = {
    "t": 1e12, "g": 1e9, "meg": 1e6, "k": 1e3, "m": 1e-3, "mil": 25.4e-6,
    "u": 1e-6, "n": 1e-9, "p": 1e-12, "f": 1e-15,
}
_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)(e[+-]?\d+)?([a-z]*)", re.IGNORECASE)
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


class ExprError(ValueError):
    def __init__(self, msg, col=None):
        self.col = col
        super().__init__(msg if col is None else f"{msg} (column {col + 1})")


def parse_number(token: str) -> float:
    """SPICE-style literal: ``1k``, ``2.2u``, ``10meg``, ``1e-3``, ``4.7uF``."""
    m = _NUMBER.fullmatch(token.strip())
    if not m:
        raise ExprError(f"bad numeric literal {token!r}")
    value = float(m.group(1) + (m.group(2) or ""))
    tail = m.group(3).lower()
    for suf in ("meg", "mil", "t", "g", "k", "m", "u", "n", "p", "f"):
        if tail.startswith(suf):
            return value * _SUFFIX[suf]
    # trailing unit letters without a scale factor (e.g. "5V", "1Ohm")
    return value


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple = ()
    value: float = 0.0
    name: str = ""

    def evaluate(self, env: Mapping[str, np.ndarray]):
        if self.op == "num":
            return self.value
        if self.op == "var":
            return env[self.name]
        if self.op == "neg":
            return -self.args[0].evaluate(env)
        a = self.args[0].evaluate(env)
        b = self.args[1].evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def degree(self) -> int:
        if self.op == "num":
            return 0
        if self.op == "var":
            return 1
        if self.op == "neg":
            return self.args[0].degree()
        da, db = (x.degree() for x in self.args)
        if self.op in "+-":
            return max(da, db)
        if self.op == "*":
            return da + db
        if db:
            raise ExprError("division by a parameter-dependent quantity is not polynomial")
        return da

    def names(self) -> set[str]:
        if self.op == "var":
            return {self.name}
        out = set()
        for a in self.args:
            out |= a.names()
        return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self):
        self._skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Node:
        node = self.expr()
        if self._peek():
            raise ExprError(f"unexpected {self._peek()!r} in {self.text!r}", self.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self._peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            node = Node(op, (node, self.term()))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self._peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            node = Node(op, (node, self.unary()))
        return node

    def unary(self) -> Node:
        c = self._peek()
        if c in ("+", "-"):
            self.pos += 1
            inner = self.unary()
            return inner if c == "+" else Node("neg", (inner,))
        return self.atom()

    def atom(self) -> Node:
        c = self._peek()
        if not c:
            raise ExprError(f"unexpected end of expression {self.text!r}", self.pos)
        if c == "(":
            self.pos += 1
            node = self.expr()
            if self._peek() != ")":
                raise ExprError(f"missing ')' in {self.text!r}", self.pos)
            self.pos += 1
            return node
        if c.isdigit() or c == ".":
            m = _NUMBER.match(self.text, self.pos)
            if not m:
                raise ExprError(f"bad number in {self.text!r}", self.pos)
            self.pos = m.end()
            return Node("num", value=parse_number(m.group(0)))
        m = _NAME.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Node("var", name=m.group(0).lower())
        raise ExprError(f"unexpected {c!r} in {self.text!r}", self.pos)


@dataclass(frozen=True)
class ParamExpr:
    """A device value: a polynomial in the declared random variables."""

    text: str
    tree: Node
    degree: int
    names: frozenset

    def evaluate(self, env: Mapping[str, np.ndarray]):
        return self.tree.evaluate(env)

    @property
    def nominal(self) -> float:
        return float(self.tree.evaluate({n: 0.0 for n in self.names}))

    @property
    def is_constant(self) -> bool:
        return not self.names


def parse_expr(text: str, allowed: set[str] | None = None) -> ParamExpr:
    tree = _Parser(text).parse()
    names = frozenset(tree.names())
    if allowed is not None:
        unknown = sorted(names - set(allowed))
        if unknown:
            raise ExprError(f"undeclared random variable {unknown[0]!r} in {text!r}")
    deg = tree.degree()
    if deg > MAX_PARAM_DEGREE:
        raise ExprError(
            f"parameter dependence of degree {deg} exceeds {MAX_PARAM_DEGREE} in {text!r}")
    return ParamExpr(text, tree, deg, names)
