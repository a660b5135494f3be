"""Piecewise closed-form coefficient functions on [0, 1]."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .expr import Expr
from .quadrature import DEFAULT_TOL, gauss_kronrod

MONOTONE_RESOLUTION = 2.0**-20
_KINK_SAMPLES = 2049


class CoefficientDomainError(ValueError):
    """Evaluation at a declared singular endpoint or an atom."""


@dataclass(frozen=True)
class Piece:
    """One smooth piece ``expr`` on [a, b]; ``sing`` marks a blow-up end."""

    a: float
    b: float
    expr: Expr
    sing: str | None = None
    alpha: float = 0.0

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"empty piece [{self.a}, {self.b}]")
        if self.sing not in (None, "a", "b"):
            raise ValueError(f"singular end must be 'a' or 'b', got {self.sing!r}")

    def alpha_at(self, x: float) -> float:
        if self.sing == "a" and x == self.a:
            return self.alpha
        if self.sing == "b" and x == self.b:
            return self.alpha
        return 0.0


def _sing_for(a: float, b: float, alpha_a: float, alpha_b: float) -> list[tuple[float, float, str | None, float]]:
    """Sub-pieces carrying at most one singular end each."""
    if alpha_a < 0 and alpha_b < 0:
        m = 0.5 * (a + b)
        return [(a, m, "a", alpha_a), (m, b, "b", alpha_b)]
    if alpha_a < 0:
        return [(a, b, "a", alpha_a)]
    if alpha_b < 0:
        return [(a, b, "b", alpha_b)]
    return [(a, b, None, 0.0)]


def _innermost_kinks(e: Expr) -> list[ex.Func]:
    out = []
    for node in e.walk():
        if isinstance(node, ex.Func) and node.name in ("step", "abs"):
            inner = any(isinstance(n, ex.Func) and n.name in ("step", "abs") for n in node.arg.walk())
            if not inner and not node.arg.depends_on("lam"):
                out.append(node)
    return out


def _real_on(arg: Expr, xs: np.ndarray) -> np.ndarray | None:
    with np.errstate(all="ignore"):
        v = np.asarray(arg.evaluate(xs), dtype=complex) * np.ones_like(xs)
    if not np.all(np.isfinite(v)):
        v = np.where(np.isfinite(v), v, 0.0)
    scale = max(np.max(np.abs(v)), 1e-300)
    if np.max(np.abs(v.imag)) > 1e-12 * scale:
        return None
    return v.real


def _sign_roots(arg: Expr, a: float, b: float) -> list[float]:
    xs = np.linspace(a, b, _KINK_SAMPLES)
    v = _real_on(arg, xs)
    if v is None:
        return []
    roots = []
    s = np.sign(v)
    for k in range(len(xs) - 1):
        if s[k] == 0 and 0 < k:
            if s[k - 1] * s[k + 1] < 0 or (s[k - 1] != 0 and s[k + 1] != 0 and s[k - 1] != s[k + 1]):
                roots.append(float(xs[k]))
            continue
        if s[k] * s[k + 1] < 0:
            def g(t):
                return float(np.real(np.asarray(arg.evaluate(np.array([t])))).ravel()[0])
            roots.append(brentq(g, xs[k], xs[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return [r for r in roots if a < r < b]


def _specialize(e: Expr, a: float, b: float) -> Expr:
    """Replace innermost step/abs nodes by their (constant-sign) form on [a, b]."""
    probes = a + (b - a) * np.array([0.2763932, 0.5, 0.7236068])

    def fn(node):
        if isinstance(node, ex.Func) and node.name in ("step", "abs"):
            if any(isinstance(n, ex.Func) and n.name in ("step", "abs") for n in node.arg.walk()):
                return None
            if node.arg.depends_on("lam"):
                return None
            v = _real_on(node.arg, probes)
            if v is None:
                return None
            sgn = np.sign(v)
            s = 1.0 if np.sum(sgn) > 0 else (-1.0 if np.sum(sgn) < 0 else 0.0)
            if node.name == "step":
                return ex.ONE if s > 0 else ex.ZERO
            return ex.mul(ex.const(s), node.arg) if s != 0 else ex.ZERO
        return None

    return e.map(fn)


def _normalize_piece(p: Piece) -> list[Piece]:
    pieces = [p]
    for _ in range(32):
        out = []
        changed = False
        for q in pieces:
            kinks = [k for k in _innermost_kinks(q.expr) if _real_on(k.arg, np.linspace(q.a, q.b, 7)) is not None]
            if not kinks:
                out.append(q)
                continue
            cuts = sorted({r for k in kinks for r in _sign_roots(k.arg, q.a, q.b)})
            edges = [q.a, *cuts, q.b]
            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi - lo <= 0:
                    continue
                expr = _specialize(q.expr, lo, hi)
                alpha_lo = q.alpha_at(q.a) if lo == q.a else 0.0
                alpha_hi = q.alpha_at(q.b) if hi == q.b else 0.0
                for (s_lo, s_hi, sing, alpha) in _sing_for(lo, hi, alpha_lo, alpha_hi):
                    out.append(Piece(s_lo, s_hi, expr, sing, alpha))
            changed = True
        pieces = out
        if not changed:
            break
    return pieces


class CoefficientFunction:
    """A complex-valued integrable function on [0, 1] given piecewise in closed form.

    Pieces tile [0, 1]; each piece is smooth once ``step``/``abs`` kinks are
    split out (done at construction).  ``atoms`` are point masses
    ``(location, weight)`` used only in measure mode.
    """

    __slots__ = ("pieces", "atoms", "_bounds", "_cache")

    def __init__(self, pieces: Iterable[Piece], atoms: Iterable[tuple[float, Expr | complex]] = (),
                 normalize: bool = True):
        pieces = sorted(pieces, key=lambda p: p.a)
        if not pieces:
            raise ValueError("a coefficient function needs at least one piece")
        if pieces[0].a != 0.0 or pieces[-1].b != 1.0:
            raise ValueError("pieces must tile [0, 1]")
        for p, q in zip(pieces[:-1], pieces[1:]):
            if p.b != q.a:
                raise ValueError(f"pieces must tile [0, 1] without gaps or overlap (at {p.b} / {q.a})")
        for p in pieces:
            if p.sing is not None and not p.alpha > -1.0:
                raise ValueError(f"piece [{p.a}, {p.b}] has non-integrable exponent {p.alpha}")
        if normalize:
            pieces = [q for p in pieces for q in _normalize_piece(p)]
        cleaned = []
        for loc, w in atoms:
            if not 0.0 <= loc <= 1.0:
                raise ValueError(f"atom location {loc} outside [0, 1]")
            cleaned.append((float(loc), w if isinstance(w, Expr) else ex.const(w)))
        self.pieces: tuple[Piece, ...] = tuple(pieces)
        self.atoms: tuple[tuple[float, Expr], ...] = tuple(sorted(cleaned, key=lambda t: t[0]))
        self._bounds = np.array([p.b for p in self.pieces])
        self._cache: dict = {}

    # construction ---------------------------------------------------------

    @classmethod
    def from_expr(cls, e: Expr | str | complex, sing: dict | None = None) -> CoefficientFunction:
        if isinstance(e, str):
            e = ex.parse(e)
        elif not isinstance(e, Expr):
            e = ex.const(e)
        if sing:
            at = sing.get("at", "a")
            return cls([Piece(0.0, 1.0, e, at, float(sing["alpha"]))])
        return cls([Piece(0.0, 1.0, e)])

    parse = from_expr

    @classmethod
    def constant(cls, c: complex) -> CoefficientFunction:
        return cls([Piece(0.0, 1.0, ex.const(c))], normalize=False)

    @classmethod
    def zero(cls) -> CoefficientFunction:
        return cls.constant(0.0)

    @classmethod
    def piecewise(cls, blocks: Sequence[dict], atoms: Iterable = ()) -> CoefficientFunction:
        """Build from config-style blocks ``{"on": [a, b], "expr": "...", "sing": {...}}``."""
        pieces = []
        for blk in blocks:
            a, b = (float(t) for t in blk["on"])
            sing = blk.get("sing")
            e = blk["expr"]
            e = ex.parse(e) if isinstance(e, str) else (e if isinstance(e, Expr) else ex.const(e))
            if sing:
                pieces.append(Piece(a, b, e, sing.get("at", "a"), float(sing["alpha"])))
            else:
                pieces.append(Piece(a, b, e))
        return cls(pieces, atoms)

    @classmethod
    def native(cls, name: str, fn: Callable, breakpoints: Sequence[float] = (),
               real: bool = False) -> CoefficientFunction:
        node = ex.Native(name, fn, real)
        edges = [0.0, *sorted(b for b in breakpoints if 0 < b < 1), 1.0]
        return cls([Piece(lo, hi, node) for lo, hi in zip(edges[:-1], edges[1:])], normalize=False)

    # inspection -----------------------------------------------------------

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(p.b for p in self.pieces[:-1])

    @property
    def is_constant(self) -> bool:
        return not self.atoms and all(p.expr.is_constant and p.sing is None for p in self.pieces) and \
            len({complex(p.expr.value) for p in self.pieces}) == 1

    @property
    def constant_value(self) -> complex | None:
        return complex(self.pieces[0].expr.value) if self.is_constant else None

    @property
    def is_zero(self) -> bool:
        return self.is_constant and self.constant_value == 0 and not self.atoms

    @property
    def depends_on_lambda(self) -> bool:
        return any(p.expr.depends_on("lam") for p in self.pieces) or any(w.depends_on("lam") for _, w in self.atoms)

    @property
    def is_real(self) -> bool:
        return all(ex.is_real_valued(p.expr) for p in self.pieces) and \
            all(ex.is_real_valued(w) for _, w in self.atoms)

    def piece_index(self, x) -> np.ndarray:
        """Index of the piece used at x (a breakpoint belongs to the piece on its right)."""
        idx = np.searchsorted(self._bounds, np.asarray(x, dtype=float), side="right")
        return np.minimum(idx, len(self.pieces) - 1)

    def piece_at(self, x: float) -> Piece:
        return self.pieces[int(self.piece_index(x))]

    def __repr__(self) -> str:
        return f"CoefficientFunction({self.format()})"

    def format(self) -> str:
        if len(self.pieces) == 1 and not self.atoms:
            return str(self.pieces[0].expr)
        parts = [f"[{_num(p.a)}, {_num(p.b)}]: {p.expr}" for p in self.pieces]
        if self.atoms:
            parts.extend(f"atom@{_num(a)}: {w}" for a, w in self.atoms)
        return "piecewise{" + "; ".join(parts) + "}"

    __str__ = format

    # evaluation -----------------------------------------------------------

    def values(self, x, lam=None) -> np.ndarray:
        """Vectorized evaluation; with array ``lam`` the result broadcasts as lam[..., None] x x."""
        x = np.asarray(x, dtype=float)
        lam_arr = None if lam is None else np.asarray(lam)
        batched = lam_arr is not None and lam_arr.ndim > 0 and self.depends_on_lambda
        shape = (lam_arr.shape + x.shape) if batched else x.shape
        lam_b = lam_arr[..., None] if batched and x.ndim == 1 else lam_arr
        if len(self.pieces) == 1:
            with np.errstate(all="ignore"):
                v = self.pieces[0].expr.evaluate(x, lam_b)
            return np.broadcast_to(np.asarray(v, dtype=complex), shape)
        out = np.empty(shape, dtype=complex)
        idx = self.piece_index(x)
        flat_x = x.reshape(-1)
        flat_idx = np.asarray(idx).reshape(-1)
        out2 = out.reshape(lam_arr.shape + (-1,)) if batched else out.reshape(-1)
        for k in np.unique(flat_idx):
            sel = flat_idx == k
            with np.errstate(all="ignore"):
                v = self.pieces[k].expr.evaluate(flat_x[sel], lam_arr[..., None] if batched else lam_arr)
            if batched:
                out2[..., sel] = v
            else:
                out2[sel] = v
        return out

    def __call__(self, x, lam=None):
        return evaluate(self, x, lam)

    # algebra --------------------------------------------------------------

    def _unary(self, fn: Callable[[Expr], Expr], alpha_rule: Callable[[float], float],
               atom_fn: Callable[[Expr], Expr] | None = None) -> CoefficientFunction:
        pieces = []
        for p in self.pieces:
            e = fn(p.expr)
            for lo, hi, sing, alpha in _sing_for(p.a, p.b, _clip(alpha_rule(p.alpha_at(p.a))),
                                                 _clip(alpha_rule(p.alpha_at(p.b)))):
                pieces.append(Piece(lo, hi, e, sing, alpha))
        if self.atoms and atom_fn is None:
            raise ValueError("this operation is not defined for functions carrying atoms")
        atoms = [(a, atom_fn(w)) for a, w in self.atoms] if self.atoms else []
        return CoefficientFunction(pieces, atoms)

    def _binary(self, other: CoefficientFunction, fn: Callable[[Expr, Expr], Expr],
                alpha_rule: Callable[[float, float], float], atom_rule=None) -> CoefficientFunction:
        other = as_function(other)
        edges = sorted({0.0, 1.0, *self.breakpoints, *other.breakpoints})
        pieces = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            p, q = self.piece_at(mid), other.piece_at(mid)
            e = fn(p.expr, q.expr)
            a_lo = _clip(alpha_rule(p.alpha_at(lo), q.alpha_at(lo)))
            a_hi = _clip(alpha_rule(p.alpha_at(hi), q.alpha_at(hi)))
            for s_lo, s_hi, sing, alpha in _sing_for(lo, hi, a_lo, a_hi):
                pieces.append(Piece(s_lo, s_hi, e, sing, alpha))
        atoms = atom_rule(self, other) if atom_rule else _no_atoms(self, other)
        return CoefficientFunction(pieces, atoms)

    def __add__(self, other):
        return self._binary(other, lambda a, b: ex.add(a, b), min, _sum_atoms)

    __radd__ = __add__

    def __neg__(self):
        return self._unary(ex.neg, lambda a: a, ex.neg)

    def __sub__(self, other):
        return self + (-as_function(other))

    def __rsub__(self, other):
        return as_function(other) - self

    def __mul__(self, other):
        return self._binary(other, lambda a, b: ex.mul(a, b), lambda s, t: s + t, _scale_atoms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: ex.div(a, b), lambda s, t: s - t)

    def __rtruediv__(self, other):
        return as_function(other) / self

    def __pow__(self, e: float):
        return self._unary(lambda a: ex.power(a, e), lambda s: s * float(np.real(e)))

    def conj(self) -> CoefficientFunction:
        return self._unary(ex.conj, lambda a: a, ex.conj)

    def abs(self) -> CoefficientFunction:
        return self._unary(lambda a: ex.func("abs", a), lambda a: a)

    def bind(self, lam: complex) -> CoefficientFunction:
        """Substitute a numeric value for the spectral parameter."""
        if not self.depends_on_lambda:
            return self
        pieces = [replace(p, expr=p.expr.subs("lam", lam)) for p in self.pieces]
        atoms = [(a, w.subs("lam", lam)) for a, w in self.atoms]
        return CoefficientFunction(pieces, atoms, normalize=False)

    def compose(self, inner: CoefficientFunction, inverse: Callable[[float], float]) -> CoefficientFunction:
        """``self(inner(t))`` for an increasing ``inner`` mapping [0, 1] onto [0, 1].

        ``inverse`` maps a point of [0, 1] back to t; it places the breakpoints.
        """
        if self.atoms:
            raise ValueError("cannot compose a function carrying atoms")
        cuts = [inverse(b) for b in self.breakpoints]
        edges = sorted({0.0, 1.0, *inner.breakpoints, *(c for c in cuts if 0 < c < 1)})
        pieces = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            g = inner.piece_at(mid)
            outer_piece = self.piece_at(float(np.real(inner.values(np.array([mid]))[0])))
            e = outer_piece.expr.subs("x", g.expr)
            a_lo = outer_piece.alpha if outer_piece.sing == "a" and _close(inverse(outer_piece.a), lo) else 0.0
            a_hi = outer_piece.alpha if outer_piece.sing == "b" and _close(inverse(outer_piece.b), hi) else 0.0
            for s_lo, s_hi, sing, alpha in _sing_for(lo, hi, a_lo, a_hi):
                pieces.append(Piece(s_lo, s_hi, e, sing, alpha))
        return CoefficientFunction(pieces, normalize=False)

    def singular_points(self) -> list[tuple[float, float]]:
        out = []
        for p in self.pieces:
            if p.sing == "a":
                out.append((p.a, p.alpha))
            elif p.sing == "b":
                out.append((p.b, p.alpha))
        return out

    def integrate(self, a: float = 0.0, b: float = 1.0, tol: float = DEFAULT_TOL) -> complex:
        return integrate(self, a, b, tol=tol)

    def antiderivative(self) -> Primitive:
        return antiderivative(self)


def _num(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12


def _clip(alpha: float) -> float:
    return alpha if alpha < 0 else 0.0


def _no_atoms(f: CoefficientFunction, g: CoefficientFunction):
    if f.atoms or g.atoms:
        raise ValueError("this operation is not defined for functions carrying atoms")
    return []


def _sum_atoms(f: CoefficientFunction, g: CoefficientFunction):
    merged: dict[float, Expr] = {}
    for loc, w in (*f.atoms, *g.atoms):
        merged[loc] = ex.add(merged[loc], w) if loc in merged else w
    return list(merged.items())


def _scale_atoms(f: CoefficientFunction, g: CoefficientFunction):
    if f.atoms and g.atoms:
        raise ValueError("product of two measures is undefined")
    if not (f.atoms or g.atoms):
        return []
    meas, factor = (f, g) if f.atoms else (g, f)
    if len(factor.pieces) != 1 or factor.pieces[0].expr.depends_on("x"):
        raise ValueError("measures may only be scaled by x-independent factors")
    c = factor.pieces[0].expr
    return [(a, ex.mul(c, w)) for a, w in meas.atoms]


def as_function(v) -> CoefficientFunction:
    if isinstance(v, CoefficientFunction):
        return v
    if isinstance(v, Expr):
        return CoefficientFunction.from_expr(v)
    if isinstance(v, str):
        return CoefficientFunction.parse(v)
    return CoefficientFunction.constant(v)


LAMBDA = CoefficientFunction([Piece(0.0, 1.0, ex.LAM)], normalize=False)


# --- public operations -------------------------------------------------------

def evaluate(f: CoefficientFunction, x, lam=None):
    """Pointwise value; raises CoefficientDomainError at singular ends and atoms."""
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)):
        raise CoefficientDomainError(f"point outside [0, 1]: {x}")
    for loc, _ in f.atoms:
        if np.any(xa == loc):
            raise CoefficientDomainError(f"evaluation at atom location x = {loc}")
    for k, p in zip(np.atleast_1d(f.piece_index(xa)), np.atleast_1d(xa)):
        piece = f.pieces[int(k)]
        if (piece.sing == "a" and p == piece.a) or (piece.sing == "b" and p == piece.b):
            raise CoefficientDomainError(f"evaluation at singular endpoint x = {p}")
    v = f.values(np.atleast_1d(xa), lam)
    return complex(v[0]) if xa.ndim == 0 else v


def integrate(f: CoefficientFunction, a: float = 0.0, b: float = 1.0, *, tol: float = DEFAULT_TOL) -> complex:
    """Integral of f over [a, b], plus atom weights in (a, b]."""
    if not (0.0 <= a <= b <= 1.0):
        raise ValueError(f"need 0 <= a <= b <= 1, got a={a}, b={b}")
    f = as_function(f)
    if f.depends_on_lambda:
        raise ValueError("bind the spectral parameter before integrating")
    total = 0j
    for p in f.pieces:
        lo, hi = max(a, p.a), min(b, p.b)
        if hi <= lo:
            continue
        sing = None
        if p.sing == "a" and lo == p.a:
            sing = "a"
        elif p.sing == "b" and hi == p.b:
            sing = "b"
        if p.expr.is_constant and sing is None:
            total += complex(p.expr.value) * (hi - lo)
            continue
        e = p.expr
        val, _ = gauss_kronrod(lambda x, e=e: np.asarray(e.evaluate(x), dtype=complex) * np.ones_like(x),
                               lo, hi, sing=sing, alpha=p.alpha, tol=tol * (hi - lo))
        total += val
    for loc, w in f.atoms:
        if a < loc <= b:
            total += complex(w.evaluate(loc))
    return total


class Primitive:
    """``F(x) = integral of f over [0, x]``; absolutely continuous (jumps only at atoms)."""

    def __init__(self, f: CoefficientFunction, tol: float = DEFAULT_TOL):
        self.f = f
        self.tol = tol
        starts = [0j]
        for p in f.pieces:
            starts.append(starts[-1] + integrate(_without_atoms(f), p.a, p.b, tol=tol))
        self._starts = starts

    def __call__(self, x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty(xa.shape, dtype=complex)
        base = _without_atoms(self.f)
        for n, xv in enumerate(xa):
            k = int(self.f.piece_index(xv))
            p = self.f.pieces[k]
            if xv == p.a:
                val = self._starts[k]
            else:
                val = self._starts[k] + integrate(base, p.a, float(xv), tol=self.tol)
            val += sum(complex(w.evaluate(loc)) for loc, w in self.f.atoms if 0.0 < loc <= xv)
            out[n] = val
        return complex(out[0]) if np.ndim(x) == 0 else out


def _without_atoms(f: CoefficientFunction) -> CoefficientFunction:
    if not f.atoms:
        return f
    return CoefficientFunction(f.pieces, normalize=False)


def antiderivative(f: CoefficientFunction, tol: float = DEFAULT_TOL) -> Primitive:
    return Primitive(f, tol)


@dataclass(frozen=True)
class MonotoneCheck:
    """Outcome of the strict-monotonicity test; ``witness`` is an interval where |f| = 0."""

    monotone: bool
    witness: tuple[float, float] | None = None

    def __bool__(self) -> bool:
        return self.monotone


def is_strictly_monotone_primitive(f: CoefficientFunction, resolution: float = MONOTONE_RESOLUTION,
                                   zero_tol: float = 0.0) -> MonotoneCheck:
    """Decide whether the primitive of |f| is strictly increasing.

    |f| is sampled at three interior points of every cell of width ``resolution``;
    a cell whose samples all vanish witnesses a flat stretch of the primitive.
    """
    key = ("monotone", resolution, zero_tol)
    if key in f._cache:
        return f._cache[key]
    result = MonotoneCheck(True)
    for p in f.pieces:
        if p.expr.is_constant:
            if abs(complex(p.expr.value)) <= zero_tol:
                result = MonotoneCheck(False, (p.a, p.b))
                break
            continue
        w = _first_zero_run(p, resolution, zero_tol)
        if w is not None:
            result = MonotoneCheck(False, w)
            break
    f._cache[key] = result
    return result


def _first_zero_run(p: Piece, resolution: float, zero_tol: float, chunk: int = 1 << 16):
    ncells = max(1, int(math.ceil((p.b - p.a) / resolution)))
    h = (p.b - p.a) / ncells
    offsets = np.array([0.25, 0.5, 0.75])
    run_start = None
    for c0 in range(0, ncells, chunk):
        c1 = min(ncells, c0 + chunk)
        cells = np.arange(c0, c1)
        xs = p.a + h * (cells[:, None] + offsets[None, :])
        with np.errstate(all="ignore"):
            v = np.abs(np.asarray(p.expr.evaluate(xs.ravel()), dtype=complex) * np.ones(xs.size))
        zero = np.all(v.reshape(xs.shape) <= zero_tol, axis=1)
        if not zero.any() and run_start is None:
            continue
        for k, z in zip(cells, zero):
            if z and run_start is None:
                run_start = k
            elif not z and run_start is not None:
                return (p.a + h * run_start, p.a + h * k)
    if run_start is not None:
        return (p.a + h * run_start, p.b)
    return None
