"""Small arithmetic expression language for Lagrangians, sections and fields.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := '-' factor | power
    power   := atom ['^' rational]
    atom    := NUMBER | IDENT | IDENT '(' expr {',' expr} ')' | '(' expr ')'
    rational:= INT | '-' INT | '(' ['-'] INT ['/' INT] ')'

Unary minus binds tighter than '^', so ``-x^2`` is ``(-x)^2``.  Exponents are
rational literals only; a chained ``a^2^3`` is rejected (parenthesize).
Variables are ``x0..x{n-1}`` and ``y0..y{n-1}``; any other identifier is a
named parameter resolved from the binding environment.  Functions:
sqrt, exp, log, sin, cos, abs, pow(base, p/q).

Parsing happens once; evaluation folds the tree either over jets
(:func:`eval_jet`) or over plain floats/arrays (:func:`eval_float`, used as
the jet-free oracle path).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EvalError, JetDomainError, ParseError
from .jets import Jet, jet_apply

__all__ = [
    "parse",
    "to_text",
    "eval_jet",
    "eval_float",
    "substitute_params",
    "variables_used",
]


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    axis: str          # 'x' or 'y'
    index: int
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Param:
    name: str
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str            # 'neg'
    operand: object
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Binary:
    op: str            # 'add' | 'sub' | 'mul' | 'div'
    left: object
    right: object
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str            # 'sqrt' | 'exp' | 'log' | 'sin' | 'cos' | 'abs'
    arg: object
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pow:
    base: object
    num: int
    den: int
    offset: int = field(default=0, compare=False)


_FUNCTIONS = ("sqrt", "exp", "log", "sin", "cos", "abs")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.advance()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off)

    # expression levels

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                right = self.parse_term()
                node = Binary("add" if val == "+" else "sub", node, right, off)
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            kind, val, off = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                right = self.parse_factor()
                node = Binary("mul" if val == "*" else "div", node, right, off)
            else:
                return node

    def parse_factor(self):
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            operand = self._unary_operand()
            return self.maybe_pow(Unary("neg", operand, off))
        return self.maybe_pow(self.parse_atom())

    def _unary_operand(self):
        # unary minus binds tighter than '^': -x0^2 is (-x0)^2
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Unary("neg", self._unary_operand(), off)
        return self.parse_atom()

    def maybe_pow(self, base):
        kind, val, off = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            num, den = self.parse_rational()
            node = Pow(base, num, den, off)
            kind, val, off = self.peek()
            if kind == "op" and val == "^":
                raise ParseError("chained '^' is ambiguous; parenthesize", off)
            return node
        return base

    def parse_rational(self):
        kind, val, off = self.peek()
        if kind == "op" and val == "(":
            self.advance()
            num, den = self._signed_ratio()
            self.expect_op(")")
            return num, den
        return self._signed_ratio()

    def _signed_ratio(self):
        sign = 1
        kind, val, off = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            sign = -1
            kind, val, off = self.peek()
        if kind != "num" or "." in val or "e" in val or "E" in val:
            raise ParseError("exponent must be a rational literal", off)
        self.advance()
        num = sign * int(val)
        kind, val2, off2 = self.peek()
        if kind == "op" and val2 == "/":
            self.advance()
            kind, val3, off3 = self.peek()
            if kind != "num" or "." in val3 or "e" in val3 or "E" in val3:
                raise ParseError("exponent denominator must be an integer", off3)
            self.advance()
            den = int(val3)
            if den <= 0:
                raise ParseError("exponent denominator must be positive", off3)
            return num, den
        return num, 1

    def parse_atom(self):
        kind, val, off = self.advance()
        if kind == "num":
            return Const(float(val), off)
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            m = re.fullmatch(r"([xy])(\d+)", val)
            if m:
                index = int(m.group(2))
                if index >= self.dim:
                    raise ParseError(
                        f"variable {val!r} out of range for dimension {self.dim}", off
                    )
                return Var(m.group(1), index, off)
            nxt_kind, nxt_val, _ = self.peek()
            if nxt_kind == "op" and nxt_val == "(":
                if val == "pow":
                    self.advance()
                    base = self.parse_expr()
                    self.expect_op(",")
                    num, den = self._signed_ratio()
                    self.expect_op(")")
                    return Pow(base, num, den, off)
                if val not in _FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", off)
                self.advance()
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(val, arg, off)
            return Param(val, off)
        raise ParseError(f"unexpected token {val!r}" if val else "unexpected end of input", off)


def parse(text: str, dim: int):
    """Parse an expression over x0..x{dim-1}, y0..y{dim-1} and parameters."""
    parser = _Parser(text, dim)
    node = parser.parse_expr()
    kind, val, off = parser.peek()
    if kind != "end":
        raise ParseError(f"trailing input {val!r}", off)
    return node


# -- canonical printer --------------------------------------------------------

_PREC = {"add": 10, "sub": 10, "mul": 20, "div": 20, "pow": 30, "neg": 40}


def _prec(node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Pow):
        return _PREC["pow"]
    if isinstance(node, Unary):
        return _PREC["neg"]
    return 100


def to_text(node) -> str:
    """Canonical rendering; parse(to_text(parse(s))) == parse(s)."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return f"{node.axis}{node.index}"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Unary):
        inner = to_text(node.operand)
        if _prec(node.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.fn}({to_text(node.arg)})"
    if isinstance(node, Pow):
        base = to_text(node.base)
        if _prec(node.base) <= _PREC["pow"]:
            base = f"({base})"
        if node.den == 1 and node.num >= 0:
            return f"{base}^{node.num}"
        return f"{base}^({node.num}/{node.den})"
    if isinstance(node, Binary):
        lhs, rhs = to_text(node.left), to_text(node.right)
        p = _PREC[node.op]
        if _prec(node.left) < p:
            lhs = f"({lhs})"
        # left-associative: right child needs parens at equal precedence
        if _prec(node.right) < p or (
            _prec(node.right) == p and node.op in ("sub", "div", "add", "mul")
        ):
            rhs = f"({rhs})"
        return f"{lhs} {'+' if node.op == 'add' else '-' if node.op == 'sub' else '*' if node.op == 'mul' else '/'} {rhs}"
    raise TypeError(f"not an AST node: {node!r}")


# -- evaluation ---------------------------------------------------------------


def eval_jet(node, env: dict, params: dict | None = None) -> Jet:
    """Evaluate in jet arithmetic.  ``env`` maps 'x0', 'y1', ... to jets of a
    common dim/order; ``params`` maps parameter names to reals."""
    params = params or {}

    probe = next(iter(env.values()))
    dim, order = probe.dim, probe.order

    def rec(n):
        if isinstance(n, Const):
            return Jet.constant(n.value, dim, order)
        if isinstance(n, Var):
            key = f"{n.axis}{n.index}"
            if key not in env:
                raise EvalError(f"variable {key} missing from environment", n.offset)
            return env[key]
        if isinstance(n, Param):
            if n.name not in params:
                raise EvalError(f"unbound parameter {n.name!r}", n.offset)
            return Jet.constant(float(params[n.name]), dim, order)
        try:
            if isinstance(n, Unary):
                return -rec(n.operand)
            if isinstance(n, Binary):
                return jet_apply(n.op, [rec(n.left), rec(n.right)])
            if isinstance(n, Call):
                return jet_apply(n.fn, [rec(n.arg)])
            if isinstance(n, Pow):
                return rec(n.base).powr(n.num, n.den)
        except JetDomainError as exc:
            raise EvalError(str(exc), n.offset) from exc
        raise TypeError(f"not an AST node: {n!r}")

    return rec(node)


def eval_float(node, env: dict, params: dict | None = None):
    """Plain float/ndarray evaluation; independent of the jet machinery."""
    params = params or {}

    def rec(n):
        if isinstance(n, Const):
            return n.value
        if isinstance(n, Var):
            key = f"{n.axis}{n.index}"
            if key not in env:
                raise EvalError(f"variable {key} missing from environment", n.offset)
            return env[key]
        if isinstance(n, Param):
            if n.name not in params:
                raise EvalError(f"unbound parameter {n.name!r}", n.offset)
            return float(params[n.name])
        if isinstance(n, Unary):
            return -rec(n.operand)
        if isinstance(n, Binary):
            a, b = rec(n.left), rec(n.right)
            if n.op == "add":
                return a + b
            if n.op == "sub":
                return a - b
            if n.op == "mul":
                return a * b
            return a / b
        if isinstance(n, Call):
            a = rec(n.arg)
            if n.fn == "abs":
                return np.abs(a)
            return getattr(np, n.fn)(a)
        if isinstance(n, Pow):
            base = rec(n.base)
            if n.den == 1:
                return np.power(base, n.num)
            return np.power(base, n.num / n.den)
        raise TypeError(f"not an AST node: {n!r}")

    return rec(node)


# -- utilities ----------------------------------------------------------------


def substitute_params(node, bindings: dict):
    """Replace named parameters by AST subtrees (used to inline e.g. a scale
    factor a(t) into a Lagrangian template)."""

    def rec(n):
        if isinstance(n, Param) and n.name in bindings:
            return bindings[n.name]
        if isinstance(n, Unary):
            return Unary(n.op, rec(n.operand), n.offset)
        if isinstance(n, Binary):
            return Binary(n.op, rec(n.left), rec(n.right), n.offset)
        if isinstance(n, Call):
            return Call(n.fn, rec(n.arg), n.offset)
        if isinstance(n, Pow):
            return Pow(rec(n.base), n.num, n.den, n.offset)
        return n

    return rec(node)


def variables_used(node) -> set:
    """Set of 'x0'/'y3'-style variable names referenced by the tree."""
    out = set()

    def rec(n):
        if isinstance(n, Var):
            out.add(f"{n.axis}{n.index}")
        elif isinstance(n, Unary):
            rec(n.operand)
        elif isinstance(n, Binary):
            rec(n.left)
            rec(n.right)
        elif isinstance(n, Call):
            rec(n.arg)
        elif isinstance(n, Pow):
            rec(n.base)

    rec(node)
    return out
