"""Symbolic phase-space observables A(q, p).

Observables are immutable expression trees over the canonical variables
``q1..qn``, ``p1..pn``, named parameters and the functions ``sin``, ``cos``
and ``exp``.  Source strings follow this grammar::

    expr      = term { ("+" | "-") term } ;
    term      = unary { ("*" | "/") unary } ;
    unary     = ("+" | "-") unary | power ;
    power     = atom [ ("^" | "**") exponent ] ;
    exponent  = [ "+" | "-" ] integer
              | "(" [ "+" | "-" ] integer ")" ;
    atom      = number | variable | parameter
              | function "(" expr ")" | "(" expr ")" ;
    variable  = ( "q" | "p" ) integer ;        (* index in 1..n *)
    function  = "sin" | "cos" | "exp" ;
    parameter = identifier ;                   (* any other name: m, omega, ... *)

Numbers are kept as exact fractions, so polynomial identities are decided
exactly on the canonical sum-of-products form produced by :func:`simplify`.
Identities involving transcendental or rational terms fall back to randomized
numeric evaluation (see :func:`is_zero`).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .errors import (DimensionError, EvaluationError, ExprSyntaxError,
                     UnboundParameterError, UnknownFunctionError)

FUNCTIONS = ("sin", "cos", "exp")


# --------------------------------------------------------------------------
# expression nodes

@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Var:
    kind: str  # "q" or "p"
    index: int  # 1-based

    def __str__(self):
        return f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Add:
    terms: tuple


@dataclass(frozen=True)
class Mul:
    factors: tuple


@dataclass(frozen=True)
class Pow:
    base: object
    exp: int


@dataclass(frozen=True)
class Func:
    name: str
    arg: object


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def _const(value) -> Const:
    return Const(Fraction(value))


# --------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^()])
""", re.VERBOSE)

_VARIABLE = re.compile(r"([qp])(\d+)$")


def _tokenize(text):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(kind), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = n
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] != "op":
            if tok[0] == "end":
                self.error(f"expected {value!r} but input ended")
            self.error(f"expected {value!r}, found {tok[1]!r}")
        return self.take()

    def parse(self):
        if self.peek()[0] == "end":
            self.error("empty expression")
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.error(f"unexpected token {tok[1]!r}")
        return node

    def expr(self):
        terms = [self.term()]
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            t = self.term()
            terms.append(t if op == "+" else Mul((_const(-1), t)))
        return terms[0] if len(terms) == 1 else Add(tuple(terms))

    def term(self):
        factors = [self.unary()]
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            f = self.unary()
            factors.append(f if op == "*" else Pow(f, -1))
        return factors[0] if len(factors) == 1 else Mul(tuple(factors))

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("+", "-"):
            self.take()
            operand = self.unary()
            return operand if tok[1] == "+" else Mul((_const(-1), operand))
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("^", "**"):
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self):
        paren = False
        if self.peek()[1] == "(":
            self.take()
            paren = True
        sign = 1
        if self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            sign = -1 if self.take()[1] == "-" else 1
        tok = self.take()
        if tok[0] != "num" or not tok[1].isdigit():
            self.error("exponent must be an integer literal", tok)
        if paren:
            self.expect(")")
        return sign * int(tok[1])

    def atom(self):
        tok = self.take()
        kind, value, pos = tok
        if kind == "num":
            return Const(Fraction(value))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if value not in FUNCTIONS:
                    raise UnknownFunctionError(f"unknown function {value!r}", pos, self.text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Func(value, arg)
            if value in FUNCTIONS:
                self.error(f"function {value!r} needs an argument", tok)
            m = _VARIABLE.match(value)
            if m:
                index = int(m.group(2))
                if not 1 <= index <= self.n:
                    raise ExprSyntaxError(
                        f"variable {value} out of range for n={self.n}", pos, self.text)
                return Var(m.group(1), index)
            return Param(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.error("unexpected end of input", tok)
        self.error(f"unexpected token {value!r}", tok)


# --------------------------------------------------------------------------
# canonical polynomial form
#
# A canonical form is a dict {monomial: Fraction} where a monomial is a sorted
# tuple of (atom, exponent).  Atoms are Var, Param, Func and, for reciprocals of
# sums, Add nodes that are themselves canonical.

def _atom_key(atom):
    if isinstance(atom, Var):
        return (0, 0 if atom.kind == "q" else 1, atom.index, "")
    if isinstance(atom, Param):
        return (1, 0, 0, atom.name)
    if isinstance(atom, Func):
        return (2, 0, 0, atom.name + "(" + to_string(atom.arg) + ")")
    return (3, 0, 0, to_string(atom))


def _mono_key(mono):
    return tuple((_atom_key(a), e) for a, e in mono)


def _mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    exps = dict(m1)
    for atom, e in m2:
        exps[atom] = exps.get(atom, 0) + e
    items = [(a, e) for a, e in exps.items() if e != 0]
    items.sort(key=lambda ae: _atom_key(ae[0]))
    return tuple(items)


def _poly_add(a, b):
    out = dict(a)
    for m, c in b.items():
        v = out.get(m, 0) + c
        if v == 0:
            out.pop(m, None)
        else:
            out[m] = v
    return out


def _poly_mul(a, b):
    out = {}
    for m1, c1 in a.items():
        for m2, c2 in b.items():
            m = _mono_mul(m1, m2)
            v = out.get(m, 0) + c1 * c2
            if v == 0:
                out.pop(m, None)
            else:
                out[m] = v
    return out


def _poly_pow(a, k):
    out = {(): Fraction(1)}
    base = a
    while k:
        if k & 1:
            out = _poly_mul(out, base)
        k >>= 1
        if k:
            base = _poly_mul(base, base)
    return out


_EXACT_AT_ZERO = {"sin": Fraction(0), "cos": Fraction(1), "exp": Fraction(1)}


@lru_cache(maxsize=4096)
def _to_poly(node):
    if isinstance(node, Const):
        return {(): node.value} if node.value != 0 else {}
    if isinstance(node, (Var, Param)):
        return {((node, 1),): Fraction(1)}
    if isinstance(node, Add):
        out = {}
        for t in node.terms:
            out = _poly_add(out, _to_poly(t))
        return out
    if isinstance(node, Mul):
        out = {(): Fraction(1)}
        for f in node.factors:
            out = _poly_mul(out, _to_poly(f))
            if not out:
                return {}
        return out
    if isinstance(node, Pow):
        base = _to_poly(node.base)
        k = node.exp
        if k >= 0:
            return _poly_pow(base, k)
        if not base:
            raise EvaluationError("division by an expression that is identically zero")
        if len(base) == 1:
            (mono, c), = base.items()
            return {tuple((a, e * k) for a, e in mono): c ** k}
        # reciprocal of a sum: normalise the leading coefficient to 1
        lead = base[min(base, key=_mono_key)]
        atom = _from_poly({m: c / lead for m, c in base.items()})
        return {((atom, k),): lead ** k}
    if isinstance(node, Func):
        arg = simplify_node(node.arg)
        if isinstance(arg, Const) and arg.value == 0:
            v = _EXACT_AT_ZERO[node.name]
            return {(): v} if v != 0 else {}
        return {((Func(node.name, arg), 1),): Fraction(1)}
    raise TypeError(f"not an expression node: {node!r}")


def _from_poly(poly):
    if not poly:
        return ZERO
    terms = []
    for mono in sorted(poly, key=_mono_key):
        c = poly[mono]
        factors = [a if e == 1 else Pow(a, e) for a, e in mono]
        if not factors:
            terms.append(Const(c))
        elif c == 1:
            terms.append(factors[0] if len(factors) == 1 else Mul(tuple(factors)))
        else:
            terms.append(Mul((Const(c),) + tuple(factors)))
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


def simplify_node(node):
    """Rewrite ``node`` into canonical sum-of-products form."""
    return _from_poly(_to_poly(node))


# --------------------------------------------------------------------------
# printing

def _fmt_const(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _prec(node):
    if isinstance(node, Add):
        return 1
    if isinstance(node, Mul):
        return 2
    if isinstance(node, Const):
        if node.value < 0:
            return 1
        return 4 if node.value.denominator == 1 else 2
    if isinstance(node, Pow):
        return 3
    return 4


def _wrap(node, min_prec):
    s = to_string(node)
    return f"({s})" if _prec(node) < min_prec else s


def _split_sign(node):
    """Return (negative, magnitude_node) for pretty printing of sums."""
    if isinstance(node, Const) and node.value < 0:
        return True, Const(-node.value)
    if isinstance(node, Mul) and node.factors and isinstance(node.factors[0], Const) \
            and node.factors[0].value < 0:
        c = -node.factors[0].value
        rest = node.factors[1:]
        if c == 1:
            return True, rest[0] if len(rest) == 1 else Mul(rest)
        return True, Mul((Const(c),) + rest)
    return False, node


def to_string(node) -> str:
    if isinstance(node, Const):
        return _fmt_const(node.value)
    if isinstance(node, Var):
        return str(node)
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Func):
        return f"{node.name}({to_string(node.arg)})"
    if isinstance(node, Pow):
        e = node.exp
        return f"{_wrap(node.base, 4)}^{e}" if e >= 0 else f"{_wrap(node.base, 4)}^({e})"
    if isinstance(node, Mul):
        neg, mag = _split_sign(node)
        if neg:
            return "-" + _wrap(mag, 2)
        num = [f for f in node.factors if not (isinstance(f, Pow) and f.exp < 0)]
        den = [f.base if f.exp == -1 else Pow(f.base, -f.exp)
               for f in node.factors if isinstance(f, Pow) and f.exp < 0]
        top = "*".join(_wrap(f, 3) for f in num) or "1"
        if not den:
            return top
        if len(den) == 1:
            return f"{top}/{_wrap(den[0], 4)}"
        return f"{top}/(" + "*".join(_wrap(f, 3) for f in den) + ")"
    if isinstance(node, Add):
        parts = []
        for i, t in enumerate(node.terms):
            neg, mag = _split_sign(t)
            s = _wrap(mag, 2)
            if i == 0:
                parts.append("-" + s if neg else s)
            else:
                parts.append(("- " if neg else "+ ") + s)
        return " ".join(parts)
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# differentiation

def _diff(node, var: Var):
    if isinstance(node, (Const, Param)):
        return ZERO
    if isinstance(node, Var):
        return ONE if node == var else ZERO
    if isinstance(node, Add):
        return Add(tuple(_diff(t, var) for t in node.terms))
    if isinstance(node, Mul):
        terms = []
        fs = node.factors
        for i, f in enumerate(fs):
            d = _diff(f, var)
            if d == ZERO:
                continue
            terms.append(Mul(fs[:i] + (d,) + fs[i + 1:]))
        return Add(tuple(terms)) if terms else ZERO
    if isinstance(node, Pow):
        if node.exp == 0:
            return ZERO
        return Mul((_const(node.exp), Pow(node.base, node.exp - 1), _diff(node.base, var)))
    if isinstance(node, Func):
        d = _diff(node.arg, var)
        if node.name == "sin":
            outer = Func("cos", node.arg)
        elif node.name == "cos":
            outer = Mul((_const(-1), Func("sin", node.arg)))
        else:
            outer = node
        return Mul((outer, d))
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# code generation for vectorised evaluation

def _inv(x):
    if np.any(np.asarray(x) == 0):
        raise EvaluationError("division by zero while evaluating observable")
    return 1.0 / x


def _ipow(x, k):
    # repeated squaring: much faster than the generic power on float arrays
    result = None
    while k:
        if k & 1:
            result = x if result is None else result * x
        k >>= 1
        if k:
            x = x * x
    return result


def _code(node, params):
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}[{node.index - 1}]"
    if isinstance(node, Param):
        if node.name not in params:
            raise UnboundParameterError(f"unbound parameter {node.name!r}")
        return f"({float(params[node.name])!r})"
    if isinstance(node, Add):
        return "(" + " + ".join(_code(t, params) for t in node.terms) + ")"
    if isinstance(node, Mul):
        return "(" + " * ".join(_code(f, params) for f in node.factors) + ")"
    if isinstance(node, Pow):
        if node.exp == 0:
            return "1.0"
        if node.exp > 0:
            return f"_ipow({_code(node.base, params)}, {node.exp})"
        return f"_ipow(_inv({_code(node.base, params)}), {-node.exp})"
    if isinstance(node, Func):
        return f"_np.{node.name}({_code(node.arg, params)})"
    raise TypeError(f"not an expression node: {node!r}")


@lru_cache(maxsize=2048)
def _compile(node, params_items):
    src = "lambda q, p: " + _code(node, dict(params_items))
    return eval(src, {"_np": np, "_inv": _inv, "_ipow": _ipow})  # noqa: S307 - generated from a validated tree


@lru_cache(maxsize=1024)
def _compile_many(nodes, params_items):
    params = dict(params_items)
    src = "lambda q, p: (" + ", ".join(_code(nd, params) for nd in nodes) + ",)"
    return eval(src, {"_np": np, "_inv": _inv, "_ipow": _ipow})  # noqa: S307


def compile_many(exprs, params: Mapping[str, float] | None = None) -> Callable:
    """Compile several observables into one ``f(q, p) -> tuple`` call."""
    params = dict(params or {})
    names = set().union(*(e.params for e in exprs)) if exprs else set()
    fn = _compile_many(tuple(e.root for e in exprs),
                       tuple(sorted((k, float(v)) for k, v in params.items() if k in names)))
    missing = names - set(params)
    if missing:
        raise UnboundParameterError(f"unbound parameter {sorted(missing)[0]!r}")
    return fn


def _walk(node):
    yield node
    if isinstance(node, Add):
        for t in node.terms:
            yield from _walk(t)
    elif isinstance(node, Mul):
        for f in node.factors:
            yield from _walk(f)
    elif isinstance(node, Pow):
        yield from _walk(node.base)
    elif isinstance(node, Func):
        yield from _walk(node.arg)


# --------------------------------------------------------------------------
# public type

@dataclass(frozen=True)
class ObservableExpr:
    """A phase-space function A(q, p) in ``dim`` degrees of freedom."""

    root: object
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError("dim must be >= 1")
        for node in _walk(self.root):
            if isinstance(node, Var) and not 1 <= node.index <= self.dim:
                raise DimensionError(f"variable {node} out of range for n={self.dim}")

    def __str__(self):
        return to_string(self.root)

    def __repr__(self):
        return f"ObservableExpr({str(self)!r}, dim={self.dim})"

    # arithmetic -----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, ObservableExpr):
            if other.dim != self.dim:
                raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other.root
        if isinstance(other, (int, Fraction)):
            return _const(other)
        if isinstance(other, float):
            return Const(Fraction(repr(other)))
        return NotImplemented

    def _bin(self, other, build):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return ObservableExpr(build(self.root, o), self.dim)

    def __add__(self, other):
        return self._bin(other, lambda a, b: Add((a, b)))

    __radd__ = __add__

    def __sub__(self, other):
        return self._bin(other, lambda a, b: Add((a, Mul((_const(-1), b)))))

    def __rsub__(self, other):
        return self._bin(other, lambda a, b: Add((b, Mul((_const(-1), a)))))

    def __mul__(self, other):
        return self._bin(other, lambda a, b: Mul((a, b)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._bin(other, lambda a, b: Mul((a, Pow(b, -1))))

    def __rtruediv__(self, other):
        return self._bin(other, lambda a, b: Mul((b, Pow(a, -1))))

    def __neg__(self):
        return ObservableExpr(Mul((_const(-1), self.root)), self.dim)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("only integer exponents are supported")
        return ObservableExpr(Pow(self.root, k), self.dim)

    # queries ----------------------------------------------------------------
    def simplify(self) -> "ObservableExpr":
        return ObservableExpr(simplify_node(self.root), self.dim)

    @property
    def params(self) -> frozenset:
        return frozenset(n.name for n in _walk(self.root) if isinstance(n, Param))

    @property
    def variables(self) -> frozenset:
        return frozenset(n for n in _walk(self.root) if isinstance(n, Var))

    @property
    def is_constant(self) -> bool:
        return not self.variables

    @property
    def has_division(self) -> bool:
        return any(isinstance(n, Pow) and n.exp < 0 for n in _walk(self.root))

    @property
    def is_polynomial(self) -> bool:
        """True if the canonical form is a polynomial in q, p (parameters may divide)."""
        for mono in _to_poly(self.root):
            for atom, e in mono:
                if isinstance(atom, Param):
                    continue
                if not isinstance(atom, Var) or e < 0:
                    return False
        return True

    def structurally_equal(self, other: "ObservableExpr") -> bool:
        return self.dim == other.dim and simplify_node(self.root) == simplify_node(other.root)

    def compile(self, params: Mapping[str, float] | None = None) -> Callable:
        """Return a vectorised ``f(q, p)`` with parameters bound.

        ``q`` and ``p`` are sequences of length ``dim`` whose items are floats or
        arrays of a common shape; the result broadcasts to that shape.
        """
        params = dict(params or {})
        fn = _compile(self.root, tuple(sorted((k, float(v)) for k, v in params.items()
                                              if k in self.params)))

        def wrapped(q, p):
            out = fn(q, p)
            shape = np.broadcast(*q, *p).shape if self.dim else ()
            if np.shape(out) != shape:
                out = np.broadcast_to(out, shape).astype(float)
            return out

        return wrapped

    def __call__(self, q, p, params=None):
        return self.compile(params)(q, p)


# --------------------------------------------------------------------------
# operations

def parse(text: str, n: int) -> ObservableExpr:
    """Parse an observable written in ``q1..qn, p1..pn``."""
    if n < 1:
        raise DimensionError("n must be >= 1")
    return ObservableExpr(_Parser(text, n).parse(), n)


def var(kind: str, index: int, n: int) -> ObservableExpr:
    return ObservableExpr(Var(kind, index), n)


def constant(value, n: int) -> ObservableExpr:
    return ObservableExpr(Const(Fraction(value)), n)


def _as_var(v, n) -> Var:
    if isinstance(v, ObservableExpr):
        v = v.root
    if isinstance(v, str):
        m = _VARIABLE.match(v)
        if not m:
            raise ValueError(f"not a canonical variable: {v!r}")
        v = Var(m.group(1), int(m.group(2)))
    if not isinstance(v, Var):
        raise ValueError(f"not a canonical variable: {v!r}")
    if not 1 <= v.index <= n:
        raise DimensionError(f"variable {v} out of range for n={n}")
    return v


def differentiate(a: ObservableExpr, variable) -> ObservableExpr:
    """Partial derivative of ``a`` with respect to ``variable`` ("q1", "p2", ...)."""
    v = _as_var(variable, a.dim)
    return ObservableExpr(simplify_node(_diff(a.root, v)), a.dim)


def gradient(a: ObservableExpr):
    """Return ``(dA/dq, dA/dp)`` as two lists of expressions."""
    n = a.dim
    dq = [differentiate(a, Var("q", k)) for k in range(1, n + 1)]
    dp = [differentiate(a, Var("p", k)) for k in range(1, n + 1)]
    return dq, dp


def poisson(a: ObservableExpr, b: ObservableExpr) -> ObservableExpr:
    """Poisson bracket {a, b} = sum_k da/dq_k db/dp_k - da/dp_k db/dq_k."""
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    n = a.dim
    terms = []
    for k in range(1, n + 1):
        q, p = Var("q", k), Var("p", k)
        terms.append(Mul((_diff(a.root, q), _diff(b.root, p))))
        terms.append(Mul((_const(-1), _diff(a.root, p), _diff(b.root, q))))
    return ObservableExpr(simplify_node(Add(tuple(terms))), n)


def associated_lagrangian(a: ObservableExpr) -> ObservableExpr:
    """L_A = sum_k p_k dA/dp_k - A."""
    n = a.dim
    terms = [Mul((Var("p", k), _diff(a.root, Var("p", k)))) for k in range(1, n + 1)]
    terms.append(Mul((_const(-1), a.root)))
    return ObservableExpr(simplify_node(Add(tuple(terms))), n)


def substitute(a: ObservableExpr, mapping: Mapping) -> ObservableExpr:
    """Replace variables (keys like "p1") by expressions or numbers."""
    n = a.dim
    repl = {}
    for key, value in mapping.items():
        v = _as_var(key, n)
        if isinstance(value, ObservableExpr):
            repl[v] = value.root
        else:
            repl[v] = Const(Fraction(value)) if not isinstance(value, float) \
                else Const(Fraction(repr(value)))

    def sub(node):
        if isinstance(node, Var):
            return repl.get(node, node)
        if isinstance(node, Add):
            return Add(tuple(sub(t) for t in node.terms))
        if isinstance(node, Mul):
            return Mul(tuple(sub(f) for f in node.factors))
        if isinstance(node, Pow):
            return Pow(sub(node.base), node.exp)
        if isinstance(node, Func):
            return Func(node.name, sub(node.arg))
        return node

    return ObservableExpr(simplify_node(sub(a.root)), n)


def evaluate(a: ObservableExpr, state, params: Mapping[str, float] | None = None) -> float:
    """Value of ``a`` at a phase point (a ``PhaseState`` or a ``(q, p)`` pair)."""
    q, p = (state.q, state.p) if hasattr(state, "q") else state
    if len(q) != a.dim or len(p) != a.dim:
        raise DimensionError(f"state has dim {len(q)}, observable has dim {a.dim}")
    with np.errstate(all="ignore"):
        value = float(a.compile(params)(tuple(map(float, q)), tuple(map(float, p))))
    if not math.isfinite(value):
        raise EvaluationError(f"non-finite value of {a} at q={tuple(q)}, p={tuple(p)}")
    return value


def is_zero(a: ObservableExpr, trials: int = 100, seed: int = 0, tol: float = 1e-9) -> bool:
    """Decide whether ``a`` vanishes identically.

    Polynomials are decided exactly on the canonical form.  Otherwise the
    expression is evaluated at ``trials`` random phase points with random
    positive parameter values.
    """
    poly = _to_poly(a.root)
    if not poly:
        return True
    if a.is_polynomial:
        return False
    rng = np.random.default_rng(seed)
    n = a.dim
    q = rng.uniform(-2.0, 2.0, size=(n, trials))
    p = rng.uniform(-2.0, 2.0, size=(n, trials))
    params = {name: rng.uniform(0.5, 2.0) for name in sorted(a.params)}
    try:
        with np.errstate(all="ignore"):
            vals = a.compile(params)(list(q), list(p))
    except EvaluationError:
        return False
    return bool(np.all(np.abs(vals) < tol))


def equal(a: ObservableExpr, b: ObservableExpr, **kw) -> bool:
    return is_zero(a - b, **kw)


def random_polynomial(rng, n: int, degree: int = 3, terms: int = 4,
                      coeff_range: int = 5) -> ObservableExpr:
    """Random polynomial with small integer coefficients, for property tests."""
    nodes = []
    for _ in range(terms):
        c = int(rng.integers(-coeff_range, coeff_range + 1)) or 1
        deg = int(rng.integers(0, degree + 1))
        factors = [_const(c)]
        for _ in range(deg):
            kind = "q" if rng.random() < 0.5 else "p"
            factors.append(Var(kind, int(rng.integers(1, n + 1))))
        nodes.append(Mul(tuple(factors)))
    return ObservableExpr(simplify_node(Add(tuple(nodes))), n)
