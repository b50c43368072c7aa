"""Arithmetic expression language used by interface bindings and mappings.

Grammar, lowest precedence first::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | atom
    atom  := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"

Functions: ``clamp(x, lo, hi)``, ``round(x)``, ``min(a, b)``, ``max(a, b)``.
``round`` is half-away-from-zero. Unary minus is desugared to ``(0 - x)`` so
the AST has exactly four node kinds: number, name, binary op, function call.

All arithmetic is over binary64 values. Evaluation is pure; looking up an
unbound name, dividing by zero, or calling clamp with lo > hi is an error,
never a silent default.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union


class ExprError(Exception):
    """Syntax or evaluation failure. Syntax errors carry a 1-based column."""

    def __init__(self, message: str, column: int | None = None):
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)
        self.column = column


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["ExprAst", ...]


ExprAst = Union[Num, Name, BinOp, Call]

#: function name -> required arity
FUNCTIONS = {"clamp": 3, "round": 1, "min": 2, "max": 2}

_TOKEN_RE = re.compile(
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>[()+\-*/,])"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprError(f"unexpected character {text[pos]!r}", pos + 1)
        kind = m.lastgroup
        tokens.append((kind, m.group(), pos + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]]):
        self._tokens = tokens
        self._idx = 0

    def _peek(self) -> tuple[str, str, int]:
        return self._tokens[self._idx]

    def _next(self) -> tuple[str, str, int]:
        tok = self._tokens[self._idx]
        self._idx += 1
        return tok

    def _expect(self, text: str) -> None:
        kind, value, col = self._next()
        if value != text:
            shown = value if kind != "end" else "end of expression"
            raise ExprError(f"expected {text!r}, found {shown}", col)

    def parse(self) -> ExprAst:
        node = self._expr()
        kind, value, col = self._peek()
        if kind != "end":
            raise ExprError(f"unexpected {value!r}", col)
        return node

    def _expr(self) -> ExprAst:
        node = self._term()
        while self._peek()[1] in ("+", "-"):
            op = self._next()[1]
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> ExprAst:
        node = self._unary()
        while self._peek()[1] in ("*", "/"):
            op = self._next()[1]
            node = BinOp(op, node, self._unary())
        return node

    def _unary(self) -> ExprAst:
        if self._peek()[1] == "-":
            self._next()
            return BinOp("-", Num(0.0), self._unary())
        return self._atom()

    def _atom(self) -> ExprAst:
        kind, value, col = self._next()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if self._peek()[1] != "(":
                return Name(value)
            self._next()
            if value not in FUNCTIONS:
                raise ExprError(f"unknown function {value!r}", col)
            args = [self._expr()]
            while self._peek()[1] == ",":
                self._next()
                args.append(self._expr())
            self._expect(")")
            if len(args) != FUNCTIONS[value]:
                raise ExprError(
                    f"{value} takes {FUNCTIONS[value]} argument(s), got {len(args)}", col
                )
            return Call(value, tuple(args))
        if value == "(":
            node = self._expr()
            self._expect(")")
            return node
        shown = value if kind != "end" else "end of expression"
        raise ExprError(f"unexpected {shown}", col)


def parse_expr(text: str) -> ExprAst:
    """Parse ``text`` into an AST. Raises :class:`ExprError` with a column."""
    return _Parser(_tokenize(text)).parse()


def free_vars(expr: ExprAst) -> frozenset[str]:
    """Exactly the name references occurring in the tree."""
    if isinstance(expr, Num):
        return frozenset()
    if isinstance(expr, Name):
        return frozenset((expr.ident,))
    if isinstance(expr, BinOp):
        return free_vars(expr.left) | free_vars(expr.right)
    return frozenset().union(*(free_vars(a) for a in expr.args)) if expr.args else frozenset()


def round_half_away(x: float) -> float:
    """Round to the nearest integer, ties away from zero."""
    if x >= 0:
        return float(math.floor(x + 0.5))
    return float(math.ceil(x - 0.5))


def evaluate(expr: ExprAst, env: Mapping[str, float]) -> float:
    """Evaluate ``expr`` over binary64 values taken from ``env``."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Name):
        try:
            return float(env[expr.ident])
        except KeyError:
            raise ExprError(f"unbound name {expr.ident!r}") from None
    if isinstance(expr, BinOp):
        left = evaluate(expr.left, env)
        right = evaluate(expr.right, env)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0.0:
            raise ExprError("division by zero")
        return left / right
    args = [evaluate(a, env) for a in expr.args]
    if expr.func == "round":
        return round_half_away(args[0])
    if expr.func == "min":
        return min(args)
    if expr.func == "max":
        return max(args)
    x, lo, hi = args
    if lo > hi:
        raise ExprError(f"clamp bounds inverted: lo={lo!r} > hi={hi!r}")
    return min(max(x, lo), hi)
