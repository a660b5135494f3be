"""Closed-form expressions in x over a small fixed grammar.

Grammar: decimal/scientific numbers, the variable ``x``, the constants ``pi``
and ``i``, binary ``+ - * / ^``, unary minus, parentheses and the functions
``sin cos exp log abs step``.  ``step(t)`` is the Heaviside function with
``step(0) = 0``.

Internally the tree may also carry the spectral parameter ``lam``, ``conj``
nodes (for conjugated coefficient entries) and :class:`Native` nodes wrapping
vectorized Python callables.  The smart constructors (:func:`add`, :func:`mul`
and friends) do constant folding and drop neutral elements; nothing more.
"""

from __future__ import annotations

import math
import re
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

GRAMMAR_FUNCTIONS = ("sin", "cos", "exp", "log", "abs", "step")
INTERNAL_FUNCTIONS = ("conj",)


class ExpressionError(ValueError):
    """Malformed expression text; ``column`` is 1-based."""

    def __init__(self, message: str, column: int | None = None, text: str | None = None):
        self.column = column
        self.text = text
        where = f" at column {column}" if column is not None else ""
        super().__init__(f"{message}{where}" + (f" in {text!r}" if text else ""))


def _clean(value: complex) -> complex | float:
    value = complex(value)
    if value.imag == 0.0:
        return float(value.real)
    return value


class Expr:
    """Base class of expression nodes (immutable, structurally comparable)."""

    precedence = 100

    def evaluate(self, x, lam=None):
        raise NotImplementedError

    def children(self) -> tuple[Expr, ...]:
        return ()

    def rebuild(self, children: tuple[Expr, ...]) -> Expr:
        return self

    def walk(self):
        yield self
        for c in self.children():
            yield from c.walk()

    @property
    def is_constant(self) -> bool:
        return isinstance(self, Const)

    def depends_on(self, name: str) -> bool:
        return any(isinstance(node, Var) and node.name == name for node in self.walk())

    def map(self, fn: Callable[[Expr], Expr | None]) -> Expr:
        """Bottom-up rewrite: ``fn`` may return a replacement or None."""
        kids = self.children()
        node = self.rebuild(tuple(k.map(fn) for k in kids)) if kids else self
        out = fn(node)
        return node if out is None else out

    def subs(self, name: str, value: Expr | complex) -> Expr:
        repl = value if isinstance(value, Expr) else Const(_clean(value))

        def fn(node):
            if isinstance(node, Var) and node.name == name:
                return repl
            return None

        return self.map(fn)

    def __str__(self) -> str:
        return self.format()

    def format(self) -> str:
        raise NotImplementedError

    def _wrap(self, child: Expr, strict: bool = False) -> str:
        s = child.format()
        if child.precedence < self.precedence or (strict and child.precedence == self.precedence):
            return f"({s})"
        return s


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: complex | float

    def evaluate(self, x, lam=None):
        return self.value

    def format(self) -> str:
        v = complex(self.value)
        if v.imag == 0:
            return _fmt_real(v.real)
        if v.real == 0:
            return "i" if v.imag == 1 else f"{_fmt_real(v.imag)}*i"
        return f"({_fmt_real(v.real)}+{_fmt_real(v.imag)}*i)"

    @property
    def precedence(self):  # negative numbers print like a unary minus
        v = complex(self.value)
        if v.imag == 0 and v.real < 0:
            return 25
        if v.imag != 0 and v.real == 0:
            return 30
        return 100


def _fmt_real(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    if v == math.pi:
        return "pi"
    return repr(float(v))


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str = "x"
    precedence = 100

    def evaluate(self, x, lam=None):
        if self.name == "x":
            return x
        if lam is None:
            raise ValueError("expression depends on the spectral parameter; bind it first")
        return lam

    def format(self) -> str:
        return self.name


@dataclass(frozen=True, eq=True)
class Add(Expr):
    terms: tuple[Expr, ...]
    precedence = 10

    def children(self):
        return self.terms

    def rebuild(self, children):
        return add(*children)

    def evaluate(self, x, lam=None):
        out = self.terms[0].evaluate(x, lam)
        for t in self.terms[1:]:
            out = out + t.evaluate(x, lam)
        return out

    def format(self) -> str:
        parts = [self._wrap(self.terms[0])]
        for t in self.terms[1:]:
            if isinstance(t, Neg):
                parts.append(" - " + self._wrap(t.arg, strict=True))
            elif isinstance(t, Const) and complex(t.value).imag == 0 and complex(t.value).real < 0:
                parts.append(" - " + _fmt_real(-complex(t.value).real))
            else:
                parts.append(" + " + self._wrap(t))
        return "".join(parts)


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    factors: tuple[Expr, ...]
    precedence = 20

    def children(self):
        return self.factors

    def rebuild(self, children):
        return mul(*children)

    def evaluate(self, x, lam=None):
        out = self.factors[0].evaluate(x, lam)
        for f in self.factors[1:]:
            out = out * f.evaluate(x, lam)
        return out

    def format(self) -> str:
        return "*".join(self._wrap(f) for f in self.factors)


@dataclass(frozen=True, eq=True)
class Div(Expr):
    num: Expr
    den: Expr
    precedence = 20

    def children(self):
        return (self.num, self.den)

    def rebuild(self, children):
        return div(*children)

    def evaluate(self, x, lam=None):
        return self.num.evaluate(x, lam) / self.den.evaluate(x, lam)

    def format(self) -> str:
        return f"{self._wrap(self.num)}/{self._wrap(self.den, strict=True)}"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr
    precedence = 25

    def children(self):
        return (self.arg,)

    def rebuild(self, children):
        return neg(children[0])

    def evaluate(self, x, lam=None):
        return -self.arg.evaluate(x, lam)

    def format(self) -> str:
        return "-" + self._wrap(self.arg, strict=True)


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: Expr
    precedence = 30

    def children(self):
        return (self.base, self.exponent)

    def rebuild(self, children):
        return power(*children)

    def evaluate(self, x, lam=None):
        b = np.asarray(self.base.evaluate(x, lam))
        e = self.exponent.evaluate(x, lam)
        integral = np.isscalar(e) and complex(e).imag == 0 and float(complex(e).real).is_integer()
        if not integral and np.isrealobj(b) and np.any(b < 0):
            b = b.astype(complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            if np.isscalar(e) and complex(e).imag == 0:
                return np.power(b, float(complex(e).real))
            return np.power(b, e)

    def format(self) -> str:
        return f"{self._wrap(self.base, strict=True)}^{self._wrap(self.exponent, strict=True)}"


def _step(t):
    t = np.asarray(t)
    if np.iscomplexobj(t):
        t = t.real
    return (t > 0).astype(float)


_FUNCS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "step": _step,
    "conj": np.conj,
}


def _log(t):
    t = np.asarray(t)
    if np.isrealobj(t) and np.any(t < 0):
        t = t.astype(complex)
    with np.errstate(divide="ignore"):
        return np.log(t)


_FUNCS["log"] = _log


@dataclass(frozen=True, eq=True)
class Func(Expr):
    name: str
    arg: Expr
    precedence = 100

    def children(self):
        return (self.arg,)

    def rebuild(self, children):
        return func(self.name, children[0])

    def evaluate(self, x, lam=None):
        return _FUNCS[self.name](self.arg.evaluate(x, lam))

    def format(self) -> str:
        return f"{self.name}({self.arg.format()})"


@dataclass(frozen=True, eq=False)
class Native(Expr):
    """A vectorized numeric function of x (used for inverse-function data)."""

    name: str
    fn: Callable = field(repr=False)
    real: bool = False
    precedence = 100

    def evaluate(self, x, lam=None):
        return self.fn(np.asarray(x, dtype=float))

    def format(self) -> str:
        return f"{self.name}(x)"


X = Var("x")
LAM = Var("lam")
ZERO = Const(0.0)
ONE = Const(1.0)


def const(value) -> Const:
    return Const(_clean(value))


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and complex(e.value) == 0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Const) and complex(e.value) == 1


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    c = 0j
    for t in terms:
        parts = t.terms if isinstance(t, Add) else (t,)
        for p in parts:
            if isinstance(p, Const):
                c += complex(p.value)
            else:
                flat.append(p)
    if c != 0 or not flat:
        flat.append(Const(_clean(c)))
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(_clean(-complex(a.value)))
    if isinstance(a, Neg):
        return a.arg
    if isinstance(a, Mul) and isinstance(a.factors[0], Const):
        return mul(Const(_clean(-complex(a.factors[0].value))), *a.factors[1:])
    return Neg(a)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    c = 1 + 0j
    for f in factors:
        if isinstance(f, Neg):
            c = -c
            f = f.arg
        parts = f.factors if isinstance(f, Mul) else (f,)
        for p in parts:
            if isinstance(p, Const):
                c *= complex(p.value)
            elif isinstance(p, Neg):
                c = -c
                flat.append(p.arg)
            else:
                flat.append(p)
    if c == 0:
        return ZERO
    if not flat:
        return Const(_clean(c))
    if c == -1:
        body = flat[0] if len(flat) == 1 else Mul(tuple(flat))
        return Neg(body)
    if c != 1:
        flat.insert(0, Const(_clean(c)))
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def div(a: Expr, b: Expr) -> Expr:
    if _is_zero(b):
        raise ZeroDivisionError("division by the zero expression")
    if _is_zero(a):
        return ZERO
    if _is_one(b):
        return a
    if isinstance(b, Const):
        return mul(Const(_clean(1 / complex(b.value))), a)
    if a == b:
        return ONE
    return Div(a, b)


def power(a: Expr, e: Expr | float) -> Expr:
    if not isinstance(e, Expr):
        e = Const(_clean(e))
    if _is_zero(e):
        return ONE
    if _is_one(e):
        return a
    if isinstance(a, Const) and isinstance(e, Const):
        v = np.asarray(Pow(a, e).evaluate(0.0)).item()
        if np.isfinite(v):
            return Const(_clean(v))
    if isinstance(a, Pow) and isinstance(a.exponent, Const) and isinstance(e, Const):
        inner = complex(a.exponent.value)
        outer = complex(e.value)
        # (b^p)^q = b^(pq) only for integer q or a nonnegative base; keep it to real p, q
        if inner.imag == 0 and outer.imag == 0 and float(outer.real).is_integer():
            return power(a.base, Const(_clean(inner * outer)))
    return Pow(a, e)


def func(name: str, a: Expr) -> Expr:
    if name not in _FUNCS:
        raise ExpressionError(f"unknown function {name!r}")
    if isinstance(a, Const):
        with np.errstate(all="ignore"):
            v = np.asarray(_FUNCS[name](np.asarray(a.value))).item()
        if np.isfinite(v):
            return Const(_clean(v))
    if name == "conj" and isinstance(a, Func) and a.name == "conj":
        return a.arg
    if name == "abs" and isinstance(a, Func) and a.name == "abs":
        return a
    return Func(name, a)


def conj(a: Expr) -> Expr:
    if is_real_valued(a):
        return a
    return func("conj", a)


def is_real_valued(e: Expr) -> bool:
    """Conservative syntactic test that ``e`` is real for real x."""
    for node in e.walk():
        if isinstance(node, Const) and complex(node.value).imag != 0:
            return False
        if isinstance(node, Var) and node.name != "x":
            return False
        if isinstance(node, Native) and not node.real:
            return False
        if isinstance(node, Func) and node.name == "log":
            return False
        if isinstance(node, Pow):
            ex = node.exponent
            if not (isinstance(ex, Const) and complex(ex.value).imag == 0):
                return False
            if not float(complex(ex.value).real).is_integer():
                b = node.base
                if not (isinstance(b, Func) and b.name in ("abs", "exp")):
                    return False
    return True


def diff(e: Expr, var: str = "x") -> Expr:
    """Symbolic derivative; step and abs are differentiated almost everywhere."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Add):
        return add(*(diff(t, var) for t in e.terms))
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, Mul):
        terms = []
        for k, f in enumerate(e.factors):
            df = diff(f, var)
            if not _is_zero(df):
                terms.append(mul(*e.factors[:k], df, *e.factors[k + 1 :]))
        return add(*terms) if terms else ZERO
    if isinstance(e, Div):
        return div(sub(mul(diff(e.num, var), e.den), mul(e.num, diff(e.den, var))), power(e.den, 2))
    if isinstance(e, Pow):
        if not e.exponent.depends_on(var):
            return mul(e.exponent, power(e.base, add(e.exponent, Const(-1.0))), diff(e.base, var))
        return mul(e, add(mul(diff(e.exponent, var), func("log", e.base)),
                          div(mul(e.exponent, diff(e.base, var)), e.base)))
    if isinstance(e, Func):
        da = diff(e.arg, var)
        if e.name == "sin":
            return mul(func("cos", e.arg), da)
        if e.name == "cos":
            return neg(mul(func("sin", e.arg), da))
        if e.name == "exp":
            return mul(e, da)
        if e.name == "log":
            return div(da, e.arg)
        if e.name == "step":
            return ZERO
        if e.name == "abs":
            return mul(div(e, e.arg), da)
        if e.name == "conj":
            return conj(da)
    raise ValueError(f"cannot differentiate {e}")


# --- parsing ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)
_CONSTANTS = {"pi": Const(math.pi), "i": Const(1j)}


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise ExpressionError(f"unexpected character {text[col - 1]!r}", col, text)
        kind = m.lastgroup
        start = m.start(kind) + 1
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, allow_internal: bool):
        self.text = text
        self.tokens = _tokenize(text)
        self.k = 0
        self.allow_internal = allow_internal

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            raise ExpressionError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2], self.text)

    def parse(self) -> Expr:
        e = self.sum()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"unexpected token {tok[1]!r}", tok[2], self.text)
        return e

    def sum(self) -> Expr:
        e = self.product()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.product()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def product(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return neg(self.unary())
        if self.peek()[1] == "+" and self.peek()[0] == "op":
            self.take()
            return self.unary()
        return self.pow()

    def pow(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return power(base, self.unary())  # right associative, -x^2 = -(x^2)
        return base

    def atom(self) -> Expr:
        kind, value, col = self.take()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if value == "x":
                return X
            if value == "lam" and self.allow_internal:
                return LAM
            if value in _CONSTANTS:
                return _CONSTANTS[value]
            allowed = GRAMMAR_FUNCTIONS + (INTERNAL_FUNCTIONS if self.allow_internal else ())
            if value in allowed:
                self.expect("(")
                arg = self.sum()
                self.expect(")")
                return func(value, arg)
            raise ExpressionError(f"unknown identifier {value!r}", col, self.text)
        if value == "(":
            e = self.sum()
            self.expect(")")
            return e
        raise ExpressionError(f"unexpected token {value or 'end of input'!r}", col, self.text)


def parse(text: str, *, allow_internal: bool = False) -> Expr:
    """Parse grammar text into an expression tree.

    >>> str(parse("2*x^2 - sin(pi*x)"))
    '2*x^2 - sin(pi*x)'
    """
    if not isinstance(text, str):
        return const(text)
    return _Parser(text, allow_internal).parse()
