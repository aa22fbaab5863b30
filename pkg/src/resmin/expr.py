"""Tiny recursive-descent parser for scalar coefficient expressions.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'x' | 'y' | 'pi' | FUNC '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus and is right associative, so ``-x^2``
is ``-(x^2)`` and ``2^3^2`` is ``2^9``.  Evaluation is vectorised over
numpy arrays.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
CONSTANTS = {"pi": np.pi}
VARIABLES = ("x", "y")

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")


class ExpressionError(ValueError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.pos = pos
        self.text = text


@dataclass
class _Tok:
    kind: str  # num, name, op, end
    value: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # only trailing whitespace is left
            break
        num, name, op = m.groups()
        start = m.start(m.lastindex)
        if num is not None:
            out.append(_Tok("num", num, start))
        elif name is not None:
            out.append(_Tok("name", name, start))
        else:
            if op not in "+-*/^()":
                raise ExpressionError(f"unexpected character {op!r}", text, start)
            out.append(_Tok("op", op, start))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


def _safe_div(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(b == 0, np.nan, a / np.where(b == 0, 1.0, b))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str) -> None:
        if self.tok.value != value:
            raise ExpressionError(f"expected {value!r}", self.text, self.tok.pos)
        self.take()

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise ExpressionError(f"unexpected {self.tok.value!r}", self.text, self.tok.pos)
        return node

    def expr(self):
        node = self.term()
        while self.tok.value in ("+", "-") and self.tok.kind == "op":
            op = self.take().value
            rhs = self.term()
            node = (lambda a, b: lambda env: a(env) + b(env))(node, rhs) if op == "+" \
                else (lambda a, b: lambda env: a(env) - b(env))(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.tok.value in ("*", "/") and self.tok.kind == "op":
            op = self.take().value
            rhs = self.unary()
            node = (lambda a, b: lambda env: a(env) * b(env))(node, rhs) if op == "*" \
                else (lambda a, b: lambda env: _safe_div(a(env), b(env)))(node, rhs)
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.value in ("+", "-"):
            op = self.take().value
            inner = self.unary()
            return inner if op == "+" else (lambda env: -inner(env))
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.value == "^":
            self.take()
            exponent = self.unary()
            return lambda env: np.power(base(env), exponent(env))
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.take()
            value = float(t.value)
            return lambda env: value
        if t.kind == "name":
            self.take()
            if t.value in VARIABLES:
                return lambda env: env[t.value]
            if t.value in CONSTANTS:
                value = CONSTANTS[t.value]
                return lambda env: value
            if t.value in FUNCTIONS:
                fn = FUNCTIONS[t.value]
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return lambda env: fn(arg(env))
            raise ExpressionError(f"unknown identifier {t.value!r}", self.text, t.pos)
        if t.kind == "op" and t.value == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if t.kind == "end" else repr(t.value)
        raise ExpressionError(f"unexpected {what}", self.text, t.pos)


class Expression:
    """Compiled scalar expression in ``x`` and ``y``.

    After each call ``nan_flagged`` tells whether any NaN was produced
    (division by zero, sqrt of a negative number, ...).
    """

    def __init__(self, text: str):
        self.text = text
        self._fn = _Parser(text).parse()
        self.nan_flagged = False

    def __call__(self, x, y, region=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            out = np.broadcast_to(np.asarray(self._fn({"x": x, "y": y}), dtype=float),
                                  np.broadcast(x, y).shape)
        self.nan_flagged = bool(np.isnan(out).any())
        return np.array(out)

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"


def parse_expression(text: str) -> Expression:
    return Expression(text)
