"""Preset operator families: clamped fourth order, its measure-coefficient variant,
third-order periodic, second-order Dirichlet, and the Krein-Feller string."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _ode
from .coeffs import LAMBDA, CoefficientFunction, Piece, as_function
from .coeffs import expr as ex
from .operator import FunctionalData, OperatorSpec, SpecError
from .quasisystem import CoefficientSystem

_DENSE = 4097


def _dirichlet(n: int) -> np.ndarray:
    """Selectors of all 2n boundary values (every trace component vanishes)."""
    return np.eye(2 * n, dtype=complex)


def fourth_order_dirichlet(p=1.0, q=0.0, r=0.0) -> OperatorSpec:
    """Clamped fourth-order problem ``(p y'')'' - (q' y')' + r'' y - lam y = f``.

    q and r enter only through themselves (their derivatives are never formed).
    The spectral parameter sits in ``p_00 = -lam``.
    """
    p, q, r = as_function(p), as_function(q), as_function(r)
    S = CoefficientSystem.sobolev(2)
    table = {(2, 2): p, (1, 2): -q, (0, 2): r, (2, 1): -q, (1, 1): 2 * r, (2, 0): r, (0, 0): (0.0, -1.0)}
    return OperatorSpec(2, 2, 2.0, S, S, _dirichlet(2), _dirichlet(2), np.zeros((4, 4)), table,
                        metadata={"family": "beam4", "lambda_slot": "p_00 = -lam"})


def third_order_periodic(p=0.0, q=0.0) -> OperatorSpec:
    """Periodic problem ``-i y''' - (p y')' + q' y - lam y = f`` with s = 1."""
    p, q = as_function(p), as_function(q)
    U = np.zeros((4, 4), dtype=complex)
    U[0, [0, 2]] = [-1.0, 1.0]
    U[1, [1, 3]] = [-1.0, 1.0]
    V = np.array([[1.0, -1.0], [0.0, 0.0]], dtype=complex)
    table = {(2, 1): 1j, (1, 1): p, (0, 1): -q, (1, 0): -q, (0, 0): (0.0, -1.0)}
    return OperatorSpec(2, 1, 1.0, CoefficientSystem.sobolev(2), CoefficientSystem.sobolev(1),
                        U, V, np.zeros((2, 4)), table,
                        metadata={"family": "periodic3", "lambda_slot": "p_00 = -lam"})


def second_order_dirichlet(q=0.0) -> OperatorSpec:
    """Dirichlet problem ``-y'' + q' y - lam y = f`` with quasi-derivative ``y' - q y``."""
    q = as_function(q)
    S = CoefficientSystem.sobolev(1)
    table = {(1, 1): 1.0, (0, 1): -q, (1, 0): -q, (0, 0): (0.0, -1.0)}
    return OperatorSpec(1, 1, 2.0, S, S, _dirichlet(1), _dirichlet(1), np.zeros((2, 2)), table,
                        metadata={"family": "schrodinger2", "lambda_slot": "p_00 = -lam"})


# --- measure-coefficient fourth order ----------------------------------------

def _as_increasing(H) -> CoefficientFunction:
    """H as a coefficient function; an (xs, values) table becomes its piecewise-linear interpolant."""
    if isinstance(H, tuple) and len(H) == 2 and not isinstance(H[0], str):
        xs = np.asarray(H[0], dtype=float)
        hs = np.asarray(H[1], dtype=float)
        if xs.ndim != 1 or xs.shape != hs.shape or xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
            raise SpecError("H table needs strictly increasing nodes from 0 to 1")
        pieces = []
        for k in range(xs.size - 1):
            slope = (hs[k + 1] - hs[k]) / (xs[k + 1] - xs[k])
            e = ex.add(ex.const(hs[k]), ex.mul(ex.const(slope), ex.sub(ex.X, ex.const(xs[k]))))
            pieces.append(Piece(float(xs[k]), float(xs[k + 1]), e))
        return CoefficientFunction(pieces)
    return as_function(H)


def _derivative(H: CoefficientFunction) -> CoefficientFunction:
    return CoefficientFunction([Piece(p.a, p.b, ex.diff(p.expr), p.sing, p.alpha) for p in H.pieces],
                               normalize=False)


@dataclass(frozen=True, eq=False)
class ChangeOfVariable:
    """``phi(x) = (x + H(x) - H(0)) / c``, ``c = 1 + H(1) - H(0)``, and ``xi = phi^{-1}``, ``eta = H o xi - H(0)``."""

    H: CoefficientFunction
    dH: CoefficientFunction
    c: float
    h0: float
    xs: np.ndarray = field(repr=False)
    phis: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, H) -> ChangeOfVariable:
        H = _as_increasing(H)
        if H.depends_on_lambda or H.atoms:
            raise SpecError("H must be a plain function of x")
        xs = np.union1d(np.linspace(0.0, 1.0, _DENSE), H.breakpoints)
        hv = np.real(H.values(xs))
        if not np.all(np.isfinite(hv)) or np.any(np.diff(hv) <= 0):
            raise SpecError("H must be continuous and strictly increasing")
        c = 1.0 + hv[-1] - hv[0]
        phis = (xs + hv - hv[0]) / c
        return cls(H, _derivative(H), float(c), float(hv[0]), xs, phis)

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return (x + np.real(self.H.values(x)) - self.h0) / self.c

    def xi(self, t):
        """Inverse of phi by table lookup and safeguarded Newton steps."""
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        k = np.clip(np.searchsorted(self.phis, flat, side="right") - 1, 0, self.xs.size - 2)
        lo, hi = self.xs[k], self.xs[k + 1]
        x = np.interp(flat, self.phis, self.xs)
        for _ in range(40):
            with np.errstate(all="ignore"):
                g = self.phi(x) - flat
                dg = (1.0 + np.real(self.dH.values(x))) / self.c
            lo = np.where(g < 0, x, lo)
            hi = np.where(g > 0, x, hi)
            step = x - g / dg
            bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
            new = np.where(bad, 0.5 * (lo + hi), step)
            if np.all(np.abs(new - x) <= 4e-16 * np.maximum(1.0, np.abs(x))):
                x = new
                break
            x = new
        x = np.where(flat <= 0.0, 0.0, np.where(flat >= 1.0, 1.0, x))
        return x.reshape(t.shape)

    @property
    def affine(self) -> bool:
        return all(ex.diff(p.expr).is_constant for p in self.H.pieces)

    def breakpoints(self) -> list[float]:
        return [float(self.phi(b)) for b in self.H.breakpoints]

    def functions(self):
        """(xi, xi', eta') as coefficient functions of t."""
        if self.affine:
            return self._affine_functions()
        bps = self.breakpoints()
        xi = CoefficientFunction.native("xi", self.xi, bps, real=True)

        def dxi(t):
            return self.c / (1.0 + np.real(self.dH.values(self.xi(t))))

        def deta(t):
            d = np.real(self.dH.values(self.xi(t)))
            return self.c * d / (1.0 + d)

        return (xi, CoefficientFunction.native("dxi", dxi, bps, real=True),
                CoefficientFunction.native("deta", deta, bps, real=True))

    def _affine_functions(self):
        knots = [0.0, *self.H.breakpoints, 1.0]
        xi_p, dxi_p, deta_p = [], [], []
        for a, b in zip(knots[:-1], knots[1:]):
            ta, tb = float(self.phi(a)), float(self.phi(b))
            if tb <= ta:
                continue
            slope_h = complex(ex.diff(self.H.piece_at(0.5 * (a + b)).expr).value).real
            dxi = self.c / (1.0 + slope_h)
            xi_p.append(Piece(ta, tb, ex.add(ex.const(a), ex.mul(ex.const(dxi), ex.sub(ex.X, ex.const(ta))))))
            dxi_p.append(Piece(ta, tb, ex.const(dxi)))
            deta_p.append(Piece(ta, tb, ex.const(dxi * slope_h)))
        xi_p[0] = Piece(0.0, xi_p[0].b, xi_p[0].expr)
        xi_p[-1] = Piece(xi_p[-1].a, 1.0, xi_p[-1].expr)
        for lst in (dxi_p, deta_p):
            lst[0] = Piece(0.0, lst[0].b, lst[0].expr)
            lst[-1] = Piece(lst[-1].a, 1.0, lst[-1].expr)
        return CoefficientFunction(xi_p), CoefficientFunction(dxi_p), CoefficientFunction(deta_p)

    def compose(self, f: CoefficientFunction, xi: CoefficientFunction) -> CoefficientFunction:
        """``f o xi`` as a coefficient function of t."""
        f = as_function(f)
        if f.is_constant:
            return f
        if any(isinstance(node, ex.Native) for p in f.pieces for node in p.expr.walk()):
            raise SpecError("cannot compose a native function")
        return f.compose(xi, lambda x: float(self.phi(x)))


def fourth_order_measure(H, q=0.0, r=0.0) -> OperatorSpec:
    """Fourth-order problem whose leading coefficient is ``1/H'`` for a strictly increasing H.

    H may be an expression (piecewise allowed) or a table ``(xs, values)`` read
    as its piecewise-linear interpolant.  In the variable t with ``x = xi(t)``:
    ``A_01 = xi'``, ``A_12 = eta'``, ``sigma = q o xi``, ``rho = r o xi``.  The
    spectral term is ``-lam xi' Y_0 conj(Z_0)``; a density f transforms to
    ``xi' (f o xi)`` (see ``measure_rhs``).
    """
    cv = ChangeOfVariable.build(H)
    xi, dxi, deta = cv.functions()
    sigma = cv.compose(as_function(q), xi)
    rho = cv.compose(as_function(r), xi)
    A = CoefficientSystem(2, {(0, 1): dxi, (1, 2): deta})
    root = deta ** 0.5
    table = {(2, 2): 1.0, (1, 2): -sigma * root, (0, 2): rho * root, (2, 1): -sigma * root,
             (1, 1): 2 * dxi * rho, (2, 0): rho * root, (0, 0): (0.0, -dxi)}
    return OperatorSpec(2, 2, 2.0, A, A, _dirichlet(2), _dirichlet(2), np.zeros((4, 4)), table,
                        metadata={"family": "beam4-measure", "lambda_slot": "p_00 = -lam * xi'",
                                  "change_of_variable": cv, "xi": xi, "dxi": dxi})


def measure_rhs(spec: OperatorSpec, f) -> FunctionalData:
    """Right-hand side for a density f given in the original variable."""
    cv: ChangeOfVariable = spec.metadata["change_of_variable"]
    f0 = cv.compose(as_function(f), spec.metadata["xi"]) * spec.metadata["dxi"]
    return FunctionalData([f0, 0.0, 0.0])


# --- Krein-Feller string -----------------------------------------------------

class NoSpectrumError(ValueError):
    """The measure has zero total mass."""


@dataclass(frozen=True, eq=False)
class MeasureFunction:
    """Nonnegative measure on [0, 1]: absolutely continuous part plus point masses."""

    density: CoefficientFunction = field(default_factory=CoefficientFunction.zero)
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "density", as_function(self.density))
        atoms = tuple((float(a), float(w)) for a, w in self.atoms)
        locs = [a for a, _ in atoms]
        if any(w <= 0 for _, w in atoms):
            raise ValueError("atom weights must be positive")
        if any(not 0.0 < a < 1.0 for a in locs) or locs != sorted(set(locs)):
            raise ValueError("atom locations must be distinct, sorted and inside (0, 1)")
        if self.density.atoms or self.density.depends_on_lambda:
            raise ValueError("the density must be a plain function")
        if not self.density.is_zero:
            xs = np.linspace(0.0, 1.0, 1025)
            with np.errstate(all="ignore"):
                v = self.density.values(xs)
            ok = np.isfinite(v)
            if np.any(np.abs(v[ok].imag) > 1e-14) or np.any(v[ok].real < -1e-14):
                raise ValueError("the density must be nonnegative")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_mass(self) -> float:
        base = 0.0 if self.density.is_zero else float(np.real(self.density.integrate()))
        return base + sum(w for _, w in self.atoms)

    def distribution(self, x) -> np.ndarray:
        """``N(x) = measure of [0, x]`` (right-continuous), with N(0) = 0."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros(xs.shape)
        if not self.density.is_zero:
            F = self.density.antiderivative()
            out += np.real(F(xs))
        for a, w in self.atoms:
            out += np.where(xs >= a, w, 0.0)
        return out if np.ndim(x) else float(out[0])

    def as_coefficient(self) -> CoefficientFunction:
        return CoefficientFunction(self.density.pieces, [(a, w) for a, w in self.atoms], normalize=False)


@dataclass(eq=False)
class KreinFellerProblem:
    """``-d/dN (du/ds) = lam u`` on [0, 1] with u(0) = u(1) = 0, solved by transfer matrices.

    Between atoms ``(u, u')`` follows ``u'' = -lam * density * u``; at an atom of
    weight w the derivative jumps by ``-lam * w * u``.
    """

    H: CoefficientFunction
    N: MeasureFunction
    tol: float = 1e-12

    def __post_init__(self):
        if self.N.total_mass <= 0:
            raise NoSpectrumError("the measure has zero total mass; there is no spectrum")
        coef = -(LAMBDA * self.N.as_coefficient())
        self.system = _ode.LinearSystem(2, {(0, 1): CoefficientFunction.constant(1.0), (1, 0): coef})

    def transfer(self, lams) -> np.ndarray:
        """Monodromy matrices of ``(u, u')`` from 0 to 1, shape (L, 2, 2)."""
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        final, _ = _ode.integrate(self.system, np.eye(2), lams, tol=self.tol)
        return final

    def characteristic(self, lams) -> np.ndarray:
        """``u(1; lam)`` for ``u(0) = 0``, ``u'(0) = 1``."""
        return self.transfer(lams)[:, 0, 1]

    def eigenvalues(self, window: tuple[float, float] | None = None, grid: int = 200) -> np.ndarray:
        """Real eigenvalues in ``window`` by sign changes of ``u(1; lam)`` and bracketed secant."""
        if window is None:
            window = (0.0, self.default_upper())
        lo, hi = window
        lams = np.linspace(lo, hi, grid)
        vals = np.real(self.characteristic(lams))
        roots = [float(lams[k]) for k in np.nonzero(vals == 0.0)[0]]
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if idx.size:
            roots.extend(self._polish(lams[idx], lams[idx + 1], vals[idx], vals[idx + 1]))
        return np.array(sorted(r for r in roots if r > 0 or lo < 0))

    def default_upper(self) -> float:
        """Scan bound: covers every atom-supported eigenvalue, plus 400 when a density is present."""
        hi = 0.0 if self.N.density.is_zero else 400.0
        if self.N.atoms:
            edges = [0.0, *(a for a, _ in self.N.atoms), 1.0]
            gap = min(b - a for a, b in zip(edges[:-1], edges[1:]))
            hi += 6.0 / (gap * min(w for _, w in self.N.atoms))
        return hi

    def _polish(self, a, b, fa, fb, iters: int = 100):
        a, b, fa, fb = (np.array(v, dtype=float) for v in (a, b, fa, fb))
        side = np.zeros(a.size)
        prev = np.full(a.size, np.nan)
        for _ in range(iters):
            c = (a * fb - b * fa) / (fb - fa)
            c = np.where(np.isfinite(c) & (c > np.minimum(a, b)) & (c < np.maximum(a, b)), c, 0.5 * (a + b))
            fc = np.real(self.characteristic(c))
            left = np.sign(fc) == np.sign(fa)
            # Illinois modification keeps both ends moving
            fb = np.where(left & (side == 1), 0.5 * fb, fb)
            fa = np.where(~left & (side == -1), 0.5 * fa, fa)
            a, fa = np.where(left, c, a), np.where(left, fc, fa)
            b, fb = np.where(~left, c, b), np.where(~left, fc, fb)
            side = np.where(left, 1, -1)
            done = (np.abs(b - a) <= 1e-14 * np.maximum(1.0, np.abs(c))) | (fc == 0) | (np.abs(c - prev) <= 1e-14 * np.maximum(1.0, np.abs(c)))
            prev = c
            if np.all(done):
                return np.where(done & ~(np.abs(b - a) <= 1e-14 * np.maximum(1.0, np.abs(c))), c, 0.5 * (a + b)).tolist()
        return (0.5 * (a + b)).tolist()

    def form_spec(self) -> OperatorSpec:
        """The energy form ``<Tu, v> = int u' conj(v')`` on H^1_0, for sector diagnostics."""
        S = CoefficientSystem.sobolev(1)
        return OperatorSpec(1, 1, 2.0, S, S, _dirichlet(1), _dirichlet(1), np.zeros((2, 2)), {(1, 1): 1.0},
                            non_injective=True, metadata={"family": "krein"})

    def positivity(self, trials: int = 20, seed: int = 0):
        from .spectral import numerical_range_sector

        return numerical_range_sector(self.form_spec(), trials, seed=seed)


def krein_feller(H, N: MeasureFunction) -> KreinFellerProblem:
    """Krein-Feller problem ``-d/dG (dy/dH) = lam y`` with ``G = N o H``.

    With ``u = y o H^{-1}`` it becomes the string ``-u'' = lam u dN``, which no
    longer involves H; H is only checked to be continuous, nondecreasing and
    onto [0, 1].  A ``(xs, values)`` table is read as its piecewise-linear interpolant.
    """
    H = _as_increasing(H)
    xs = np.linspace(0.0, 1.0, 1025)
    hv = np.real(H.values(xs))
    if abs(hv[0]) > 1e-12 or abs(hv[-1] - 1.0) > 1e-12 or np.any(np.diff(hv) < 0):
        raise SpecError("H must be nondecreasing with H(0) = 0 and H(1) = 1")
    return KreinFellerProblem(H, N)


__all__ = [
    "ChangeOfVariable",
    "KreinFellerProblem",
    "MeasureFunction",
    "NoSpectrumError",
    "fourth_order_dirichlet",
    "fourth_order_measure",
    "krein_feller",
    "measure_rhs",
    "second_order_dirichlet",
    "third_order_periodic",
]
