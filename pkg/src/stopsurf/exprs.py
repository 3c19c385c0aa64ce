"""Small expression language for problem coefficients, gains and jump maps.

Expressions are written over a fixed set of declared variables (usually
``t, x, y`` plus mark variables ``xi1..xiD``) with the grammar

    expr   := term  (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom (("^" | "**") unary)?      # right associative
    atom   := NUMBER | VAR | FUNC "(" expr ("," expr)* ")" | "(" expr ")"

with functions ``exp, log, sqrt, abs, pos`` (one argument) and
``min, max`` (two arguments).  ``pos(e)`` is the positive part
``max(e, 0)``.  Precedence is pow > unary minus > mul/div > add/sub.

Parsed trees are immutable and safe to evaluate concurrently.  Evaluation
accepts scalar or numpy-array bindings and follows IEEE double semantics,
except that division by exact zero, ``log`` of a non-positive argument and
``sqrt`` of a negative argument raise :class:`DomainError` instead of
producing silent non-finite values.

Symbolic differentiation is exact on smooth nodes.  ``min/max/abs/pos``
are differentiated branchwise: the derivative tree contains a guard node
that raises :class:`NonSmoothAtKink` at evaluation time whenever the
branch selector is within ``kink_tol`` (relative) of its switch point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

__all__ = [
    "Expression",
    "Num",
    "Var",
    "Unary",
    "Binary",
    "Branch",
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownIdentifier",
    "EvalError",
    "DomainError",
    "MissingBinding",
    "NonSmoothAtKink",
    "parse",
    "evaluate",
    "differentiate",
    "to_source",
    "free_vars",
    "substitute",
    "DEFAULT_KINK_TOL",
]

DEFAULT_KINK_TOL = 1e-10

Value = Union[float, np.ndarray]
EvalContext = Mapping[str, Value]

UNARY_FUNCS = ("exp", "log", "sqrt", "abs", "pos")
BINARY_FUNCS = ("min", "max")
FUNCTIONS = UNARY_FUNCS + BINARY_FUNCS


class ExpressionError(Exception):
    """Base class for all expression-language errors."""


class ExpressionSyntaxError(ExpressionError):
    """Malformed source text.

    Attributes: ``offset`` is the byte offset of the offending token,
    ``expected`` the set of token descriptions that would have been legal.
    """

    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        super().__init__(f"{message} at offset {offset}"
                         + (f" (expected one of: {', '.join(sorted(expected))})" if expected else ""))
        self.offset = offset
        self.expected = expected


class UnknownIdentifier(ExpressionSyntaxError):
    """An identifier that names neither a declared variable nor a function."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}'", offset)
        self.name = name


class EvalError(ExpressionError):
    """Base class for evaluation-time errors."""


class DomainError(EvalError):
    """Evaluation hit a domain violation (division by zero, log/sqrt range).

    ``where`` is the flat index of the first offending element for array
    evaluation, or None for scalar evaluation.
    """

    def __init__(self, message: str, where: int | None = None):
        super().__init__(message + ("" if where is None else f" (flat index {where})"))
        self.where = where


class MissingBinding(EvalError):
    def __init__(self, name: str):
        super().__init__(f"no binding for variable '{name}'")
        self.name = name


class NonSmoothAtKink(EvalError):
    """A branchwise derivative was evaluated too close to its switch point."""

    def __init__(self, message: str, where: int | None = None):
        super().__init__(message + ("" if where is None else f" (flat index {where})"))
        self.where = where


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Expression:
    """Abstract base node; all concrete nodes are frozen dataclasses."""


@dataclass(frozen=True)
class Num(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    name: str


@dataclass(frozen=True)
class Unary(Expression):
    op: str  # neg, exp, log, sqrt, abs, pos
    arg: Expression


@dataclass(frozen=True)
class Binary(Expression):
    op: str  # + - * / ^ min max
    a: Expression
    b: Expression


@dataclass(frozen=True)
class Branch(Expression):
    """Branchwise derivative of min/max/abs/pos with a kink sentinel.

    Selects ``when_a`` where the ``kind`` comparison of (a, b) picks a,
    ``when_b`` otherwise; raises NonSmoothAtKink when |a - b| is within
    the relative kink tolerance.  Not part of the surface grammar.
    """

    kind: str  # "max" or "min"
    a: Expression
    b: Expression
    when_a: Expression
    when_b: Expression


# --- tokenizer / parser ------------------------------------------------------

_SINGLE_OPS = set("+-*/^(),")


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    """Return (kind, text, offset) triples; kinds: num, ident, op, end."""
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ExpressionSyntaxError(f"bad number literal '{text}'", i)
            tokens.append(("num", text, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        if source.startswith("**", i):
            tokens.append(("op", "^", i))
            i += 2
            continue
        if c in _SINGLE_OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        raise ExpressionSyntaxError(f"unexpected character {c!r}", i,
                                    frozenset({"number", "identifier", "operator"}))
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, variables: frozenset[str]):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExpressionSyntaxError(f"got {text or 'end of input'!r}", off, frozenset({repr(op)}))
        return self.advance()

    def parse(self) -> Expression:
        e = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"trailing input {text!r}", off,
                                        frozenset({"end of input", "operator"}))
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                e = _fold(Binary(text, e, self.term()))
            else:
                return e

    def term(self) -> Expression:
        e = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                e = _fold(Binary(text, e, self.unary()))
            else:
                return e

    def unary(self) -> Expression:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return _fold(Unary("neg", self.unary()))
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            # exponent binds at unary level so a^-b and a^b^c work
            return _fold(Binary("^", base, self.unary()))
        return base

    def atom(self) -> Expression:
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            nk, nt, _ = self.peek()
            if nk == "op" and nt == "(":
                return self.call(text, off)
            if text in self.variables:
                return Var(text)
            raise UnknownIdentifier(text, off)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExpressionSyntaxError(f"got {text or 'end of input'!r}", off,
                                    frozenset({"number", "identifier", "'('", "'-'"}))

    def call(self, name: str, off: int) -> Expression:
        if name not in FUNCTIONS:
            raise UnknownIdentifier(name, off)
        self.expect_op("(")
        args = [self.expr()]
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text == ",":
                self.advance()
                args.append(self.expr())
            else:
                break
        self.expect_op(")")
        if name in UNARY_FUNCS:
            if len(args) != 1:
                raise ExpressionSyntaxError(f"{name}() takes 1 argument, got {len(args)}", off)
            return _fold(Unary(name, args[0]))
        if len(args) != 2:
            raise ExpressionSyntaxError(f"{name}() takes 2 arguments, got {len(args)}", off)
        return _fold(Binary(name, args[0], args[1]))


def parse(source: str, variables: Iterable[str] = ("t", "x", "y")) -> Expression:
    """Parse ``source`` over the declared variable set.

    Raises ExpressionSyntaxError (with byte offset and expected-token set)
    on malformed input and UnknownIdentifier for undeclared names.
    """
    return _Parser(source, frozenset(variables)).parse()


def _fold(e: Expression) -> Expression:
    """Constant folding: collapse literal-only nodes with finite values."""
    children_literal = (
        (isinstance(e, Unary) and isinstance(e.arg, Num))
        or (isinstance(e, Binary) and isinstance(e.a, Num) and isinstance(e.b, Num))
    )
    if children_literal:
        try:
            v = float(evaluate(e, {}))
        except EvalError:
            return e
        if math.isfinite(v):
            return Num(v)
    return e


# --- evaluation --------------------------------------------------------------

def _first_bad(mask) -> int | None:
    arr = np.asarray(mask)
    if arr.ndim == 0:
        return None
    return int(np.flatnonzero(arr)[0])


def evaluate(e: Expression, ctx: EvalContext, kink_tol: float = DEFAULT_KINK_TOL) -> Value:
    """Evaluate ``e`` under ``ctx`` (scalar or numpy-array bindings)."""
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        return _eval(e, ctx, kink_tol)


def _eval(e: Expression, ctx: EvalContext, kink_tol: float) -> Value:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return ctx[e.name]
        except KeyError:
            raise MissingBinding(e.name) from None
    if isinstance(e, Unary):
        v = _eval(e.arg, ctx, kink_tol)
        if e.op == "neg":
            return -np.asarray(v) if isinstance(v, np.ndarray) else -v
        if e.op == "exp":
            return np.exp(v)
        if e.op == "log":
            bad = np.less_equal(v, 0.0)
            if np.any(bad):
                raise DomainError("log of non-positive argument", _first_bad(bad))
            return np.log(v)
        if e.op == "sqrt":
            bad = np.less(v, 0.0)
            if np.any(bad):
                raise DomainError("sqrt of negative argument", _first_bad(bad))
            return np.sqrt(v)
        if e.op == "abs":
            return np.abs(v)
        if e.op == "pos":
            return np.maximum(v, 0.0)
        raise ValueError(f"unknown unary op {e.op!r}")
    if isinstance(e, Binary):
        a = _eval(e.a, ctx, kink_tol)
        b = _eval(e.b, ctx, kink_tol)
        if e.op == "+":
            return np.add(a, b)
        if e.op == "-":
            return np.subtract(a, b)
        if e.op == "*":
            return np.multiply(a, b)
        if e.op == "/":
            bad = np.equal(b, 0.0)
            if np.any(bad):
                raise DomainError("division by zero", _first_bad(bad))
            return np.divide(a, b)
        if e.op == "^":
            neg_base = np.less(a, 0.0)
            frac_exp = np.not_equal(np.mod(b, 1.0), 0.0)
            bad = np.logical_and(neg_base, frac_exp)
            if np.any(bad):
                raise DomainError("negative base with non-integer exponent", _first_bad(bad))
            bad = np.logical_and(np.equal(a, 0.0), np.less(b, 0.0))
            if np.any(bad):
                raise DomainError("zero base with negative exponent", _first_bad(bad))
            return np.power(a, b)
        if e.op == "min":
            return np.minimum(a, b)
        if e.op == "max":
            return np.maximum(a, b)
        raise ValueError(f"unknown binary op {e.op!r}")
    if isinstance(e, Branch):
        a = np.asarray(_eval(e.a, ctx, kink_tol), dtype=float)
        b = np.asarray(_eval(e.b, ctx, kink_tol), dtype=float)
        scale = 1.0 + np.maximum(np.abs(a), np.abs(b))
        near = np.abs(a - b) <= kink_tol * scale
        if np.any(near):
            raise NonSmoothAtKink(
                f"branchwise derivative of {e.kind} evaluated within kink_tol of its switch point",
                _first_bad(near))
        wa = _eval(e.when_a, ctx, kink_tol)
        wb = _eval(e.when_b, ctx, kink_tol)
        pick_a = a > b if e.kind == "max" else a < b
        out = np.where(pick_a, wa, wb)
        return float(out) if out.ndim == 0 else out
    raise TypeError(f"not an expression node: {e!r}")


# --- differentiation ---------------------------------------------------------

def _add(a, b):
    if a == Num(0.0):
        return b
    if b == Num(0.0):
        return a
    return _fold(Binary("+", a, b))


def _sub(a, b):
    if b == Num(0.0):
        return a
    if a == Num(0.0):
        return _fold(Unary("neg", b))
    return _fold(Binary("-", a, b))


def _mul(a, b):
    if a == Num(0.0) or b == Num(0.0):
        return Num(0.0)
    if a == Num(1.0):
        return b
    if b == Num(1.0):
        return a
    return _fold(Binary("*", a, b))


def _div(a, b):
    if a == Num(0.0):
        return Num(0.0)
    if b == Num(1.0):
        return a
    return _fold(Binary("/", a, b))


def _pow(a, b):
    if b == Num(1.0):
        return a
    if b == Num(0.0):
        return Num(1.0)
    return _fold(Binary("^", a, b))


def differentiate(e: Expression, var: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to ``var``.

    min/max/abs/pos produce Branch guard nodes that refuse evaluation near
    the kink; repeated application yields higher derivatives.
    """
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0) if e.name == var else Num(0.0)
    if isinstance(e, Unary):
        du = differentiate(e.arg, var)
        if e.op == "neg":
            return _sub(Num(0.0), du) if du != Num(0.0) else Num(0.0)
        if e.op == "exp":
            return _mul(Unary("exp", e.arg), du)
        if e.op == "log":
            return _div(du, e.arg)
        if e.op == "sqrt":
            return _div(du, _mul(Num(2.0), Unary("sqrt", e.arg)))
        if e.op == "abs":
            if du == Num(0.0):
                return Num(0.0)
            return Branch("max", e.arg, Num(0.0), du, _sub(Num(0.0), du))
        if e.op == "pos":
            if du == Num(0.0):
                return Num(0.0)
            return Branch("max", e.arg, Num(0.0), du, Num(0.0))
        raise ValueError(f"unknown unary op {e.op!r}")
    if isinstance(e, Binary):
        da = differentiate(e.a, var)
        db = differentiate(e.b, var)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.b), _mul(e.a, db))
        if e.op == "/":
            num = _sub(_mul(da, e.b), _mul(e.a, db))
            return _div(num, _pow(e.b, Num(2.0)))
        if e.op == "^":
            if isinstance(e.b, Num):
                # power rule with constant exponent
                return _mul(_mul(e.b, _pow(e.a, Num(e.b.value - 1.0))), da)
            # general a^b = exp(b log a)
            inner = _add(_mul(db, Unary("log", e.a)), _div(_mul(e.b, da), e.a))
            return _mul(Binary("^", e.a, e.b), inner)
        if e.op in ("min", "max"):
            if da == Num(0.0) and db == Num(0.0):
                return Num(0.0)
            return Branch(e.op, e.a, e.b, da, db)
        raise ValueError(f"unknown binary op {e.op!r}")
    if isinstance(e, Branch):
        return Branch(e.kind, e.a, e.b,
                      differentiate(e.when_a, var), differentiate(e.when_b, var))
    raise TypeError(f"not an expression node: {e!r}")


# --- printing / utilities ----------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(e: Expression) -> int:
    if isinstance(e, Binary) and e.op in _PREC:
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Num) and (e.value < 0 or (e.value == 0.0 and np.signbit(e.value))):
        return _PREC["neg"]  # prints with a leading minus
    return 5


def to_source(e: Expression) -> str:
    """Render ``e`` back to grammar source; parses to a structurally equal tree."""
    if isinstance(e, Num):
        if e.value < 0 or (e.value == 0.0 and np.signbit(e.value)):
            return f"-{repr(-e.value)}"  # reparses via fold to the same literal
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_source(e.arg)
            if _prec(e.arg) < _PREC["neg"]:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({to_source(e.arg)})"
    if isinstance(e, Binary):
        if e.op in ("min", "max"):
            return f"{e.op}({to_source(e.a)}, {to_source(e.b)})"
        p = _PREC[e.op]
        left = to_source(e.a)
        right = to_source(e.b)
        if e.op == "^":
            if _prec(e.a) <= p:
                left = f"({left})"
            if _prec(e.b) < p and _prec(e.b) != _PREC["neg"]:
                right = f"({right})"
        else:
            if _prec(e.a) < p:
                left = f"({left})"
            if _prec(e.b) < p or (_prec(e.b) == p and isinstance(e.b, Binary)):
                right = f"({right})"
        return f"{left} {e.op} {right}" if e.op in "+-" else f"{left}{e.op}{right}"
    if isinstance(e, Branch):
        raise ValueError("guard nodes from branchwise differentiation have no source form")
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: Expression) -> frozenset[str]:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Unary):
        return free_vars(e.arg)
    if isinstance(e, Binary):
        return free_vars(e.a) | free_vars(e.b)
    if isinstance(e, Branch):
        return free_vars(e.a) | free_vars(e.b) | free_vars(e.when_a) | free_vars(e.when_b)
    raise TypeError(f"not an expression node: {e!r}")


def substitute(e: Expression, replacements: Mapping[str, Expression]) -> Expression:
    """Replace variables by expressions (used for the mirrored orientation)."""
    if isinstance(e, Num):
        return e
    if isinstance(e, Var):
        return replacements.get(e.name, e)
    if isinstance(e, Unary):
        return _fold(Unary(e.op, substitute(e.arg, replacements)))
    if isinstance(e, Binary):
        return _fold(Binary(e.op, substitute(e.a, replacements), substitute(e.b, replacements)))
    if isinstance(e, Branch):
        return Branch(e.kind, substitute(e.a, replacements), substitute(e.b, replacements),
                      substitute(e.when_a, replacements), substitute(e.when_b, replacements))
    raise TypeError(f"not an expression node: {e!r}")
