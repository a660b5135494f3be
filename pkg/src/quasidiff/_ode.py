"""Adaptive embedded Runge-Kutta integration of linear systems with piecewise coefficients.

The default pair is the order-8 Dormand-Prince scheme (coefficients taken from
scipy); the order-5 pair is kept for comparison.  The engine solves ``y' = C(x, lam) y + G(x, lam)`` for a matrix-valued state
(one column per initial vector), batched over an array of spectral parameters
that share one step sequence.  Steps never cross a coefficient breakpoint.  On a
segment whose end carries an integrable power singularity the independent
variable is changed to ``u`` with ``x - a ~ u^k``, which makes the transformed
right-hand side bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoefficientFunction
from .coeffs.quadrature import PowerMap

DEFAULT_IVP_TOL = 1e-10
DEFAULT_MAX_STEPS = 200_000


@dataclass(frozen=True)
class _Tableau:
    """Explicit embedded pair; the last stage is evaluated at the accepted state (FSAL layout)."""

    name: str
    nodes: np.ndarray  # distinct abscissae
    node_of_stage: tuple  # stage -> abscissa index, including the final stage
    a_nz: tuple  # per stage, nonzero (j, a_sj)
    b_nz: tuple
    e_nz: tuple  # main error estimator weights, over all stages
    e2_nz: tuple | None  # secondary estimator (order-8 pair only)
    exponent: float

    @classmethod
    def build(cls, name, C, A, B, E, E2, order):
        nz = lambda row: tuple((j, float(v)) for j, v in enumerate(row) if v != 0.0)
        nodes, idx = np.unique(np.round(np.asarray(C, dtype=float), 15), return_inverse=True)
        return cls(name, nodes, tuple(int(i) for i in idx), tuple(nz(r) for r in A), nz(B), nz(E),
                   None if E2 is None else nz(E2), -1.0 / order)


_DP5_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_DP5_B = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
DOPRI5 = _Tableau.build(
    "dopri5", [0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0], _DP5_A, _DP5_B,
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40], None, 5)


def _dop853():
    from scipy.integrate._ivp import dop853_coefficients as c

    s = c.N_STAGES
    A = [c.A[i, :i] for i in range(s)]
    return _Tableau.build("dop853", list(c.C[:s]) + [1.0], A, c.B, c.E5, c.E3, 8)


DOP853 = _dop853()
DEFAULT_METHOD = DOP853

class IntegrationError(RuntimeError):
    """Step-size control failed; ``interval`` is the offending stretch of [0, 1]."""

    def __init__(self, message: str, interval: tuple[float, float]):
        super().__init__(f"{message} on [{interval[0]:.6g}, {interval[1]:.6g}]")
        self.interval = interval


@dataclass
class _Segment:
    a: float
    b: float
    pmap: PowerMap
    c_terms: list  # (i, j, Expr)
    g_terms: list  # (i, k, Expr)


def _term_list(table: dict, x_mid: float) -> list:
    out = []
    for (i, j), f in table.items():
        if f is None or f.is_zero:
            continue
        out.append((i, j, f.piece_at(x_mid).expr))
    return out


@dataclass
class LinearSystem:
    """``y' = C y + G`` with ``C`` a dim x dim table and ``G`` a dim x ncols table."""

    dim: int
    C: dict
    G: dict = field(default_factory=dict)
    ncols: int = 1
    extra_breakpoints: tuple = ()

    def __post_init__(self):
        self.C = {k: v for k, v in self.C.items() if v is not None and not v.is_zero}
        self.G = {k: v for k, v in self.G.items() if v is not None and not v.is_zero}
        self.segments = self._segments()
        self.c_atoms, self.g_atoms = self._atoms()

    def _functions(self) -> list[CoefficientFunction]:
        return [*self.C.values(), *self.G.values()]

    def _segments(self) -> list[_Segment]:
        fns = self._functions()
        edges = {0.0, 1.0, *(b for b in self.extra_breakpoints if 0.0 < b < 1.0)}
        for f in fns:
            edges.update(f.breakpoints)
            edges.update(loc for loc, _ in f.atoms if 0.0 < loc < 1.0)
        edges = sorted(edges)
        segs = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            alpha_lo = alpha_hi = 0.0
            for f in fns:
                p = f.piece_at(mid)
                if p.sing == "a" and p.a == lo:
                    alpha_lo = min(alpha_lo, p.alpha)
                if p.sing == "b" and p.b == hi:
                    alpha_hi = min(alpha_hi, p.alpha)
            parts = [(lo, hi, alpha_lo, alpha_hi)]
            if alpha_lo < 0 and alpha_hi < 0:
                parts = [(lo, mid, alpha_lo, 0.0), (mid, hi, 0.0, alpha_hi)]
            for a, b, al, bl in parts:
                if al < 0:
                    pm = PowerMap(a, b, "a", al)
                elif bl < 0:
                    pm = PowerMap(a, b, "b", bl)
                else:
                    pm = PowerMap(a, b)
                m = 0.5 * (a + b)
                segs.append(_Segment(a, b, pm, _term_list(self.C, m), _term_list(self.G, m)))
        return segs

    def _atoms(self):
        c_atoms: dict[float, list] = {}
        g_atoms: dict[float, list] = {}
        for (i, j), f in self.C.items():
            for loc, w in f.atoms:
                c_atoms.setdefault(loc, []).append((i, j, w))
        for (i, k), f in self.G.items():
            for loc, w in f.atoms:
                g_atoms.setdefault(loc, []).append((i, k, w))
        return c_atoms, g_atoms

    @property
    def depends_on_lambda(self) -> bool:
        return any(f.depends_on_lambda for f in self._functions())


def _lam_column(lam):
    if lam is None:
        return None, 1
    lam = np.atleast_1d(np.asarray(lam, dtype=complex))
    return lam[:, None], lam.size


def _eval_terms(terms, xs: np.ndarray, lam_col, L: int, rows: int, cols: int) -> np.ndarray:
    """Evaluate a term list at points ``xs`` (shape (T,)); returns (T, L, rows, cols)."""
    out = np.zeros((xs.size, L, rows, cols), dtype=complex)
    with np.errstate(all="ignore"):
        for i, j, e in terms:
            v = np.asarray(e.evaluate(xs, lam_col), dtype=complex)
            if v.ndim == 2:  # (L, T)
                out[:, :, i, j] = v.T
            else:
                out[:, :, i, j] = v.reshape(-1, 1) if v.ndim == 1 else v
    return out


def _jump_matrix(entries, lam_col, L: int, rows: int, cols: int, identity: bool) -> np.ndarray:
    out = np.zeros((L, rows, cols), dtype=complex)
    if identity:
        out[:] = np.eye(rows)
    for i, j, w in entries:
        v = np.asarray(w.evaluate(0.0, lam_col), dtype=complex)
        out[:, i, j] += v.reshape(-1) if v.ndim else v
    return out


def _combine(pairs, ks):
    acc = None
    for j, a in pairs:
        acc = ks[j] * a if acc is None else acc + ks[j] * a
    return acc


def _rk_step(seg: _Segment, system: LinearSystem, u0: np.ndarray, h: np.ndarray, y0: np.ndarray,
             lam_col, L: int, method: _Tableau = DEFAULT_METHOD):
    """One embedded Runge-Kutta step for T independent (u0, h, y0) triples.

    ``y0`` has shape (T, L, d, K).  Returns (y1, err) with the same shape, where
    ``err`` is the componentwise local error estimate.
    """
    d = system.dim
    T = u0.size
    nn = method.nodes.size
    us = seg.pmap.safe_u(u0[:, None] + h[:, None] * method.nodes[None, :])
    xs = seg.pmap.x(us).ravel()
    jac = seg.pmap.jac(us).reshape(T, nn)
    Cm = _eval_terms(seg.c_terms, xs, lam_col, L, d, d).reshape(T, nn, L, d, d)
    Gm = None
    if seg.g_terms:
        Gm = _eval_terms(seg.g_terms, xs, lam_col, L, d, system.ncols).reshape(T, nn, L, d, system.ncols)
    hb = h[:, None, None, None]

    def rhs(node, ys):
        k = Cm[:, node] @ ys
        if Gm is not None:
            k += Gm[:, node]
        k *= jac[:, node, None, None, None]
        return k

    ks: list = []
    for s, pairs in enumerate(method.a_nz):
        ys = y0 if not pairs else y0 + hb * _combine(pairs, ks)
        ks.append(rhs(method.node_of_stage[s], ys))
    y1 = y0 + hb * _combine(method.b_nz, ks)
    ks.append(rhs(method.node_of_stage[-1], y1))
    err = hb * _combine(method.e_nz, ks)
    if method.e2_nz is not None:
        e2 = hb * _combine(method.e2_nz, ks)
        a5 = np.abs(err) ** 2
        den = np.sqrt(a5 + 0.01 * np.abs(e2) ** 2)
        with np.errstate(all="ignore"):
            err = np.where(den > 0, a5 / den, 0.0)
    return y1, err


@dataclass
class StoredPath:
    """Accepted step grid of one integration, sufficient for re-integration sampling."""

    system: LinearSystem
    lam: np.ndarray | None
    u_grids: list  # per segment, (N_s,) accepted u values
    states: list  # per segment, (N_s, L, d, K)
    method: _Tableau = DEFAULT_METHOD

    @property
    def x_grid(self) -> np.ndarray:
        xs = [seg.pmap.x(u) for seg, u in zip(self.system.segments, self.u_grids)]
        return np.concatenate(xs)

    @property
    def grid_states(self) -> np.ndarray:
        return np.concatenate(self.states, axis=0)

    def sample(self, x) -> np.ndarray:
        """States at arbitrary points, by one integration step from the nearest stored point on the left.

        Returns an array of shape (T, L, d, K).  Interior segment ends return the
        left-limit value.
        """
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((xs < 0) | (xs > 1)):
            raise ValueError("sample points must lie in [0, 1]")
        segs = self.system.segments
        ends = np.array([s.b for s in segs])
        seg_idx = np.minimum(np.searchsorted(ends, xs, side="left"), len(segs) - 1)
        lam_col, L = _lam_column(self.lam)
        first = self.states[0]
        out = np.empty((xs.size, *first.shape[1:]), dtype=complex)
        for si in np.unique(seg_idx):
            sel = np.nonzero(seg_idx == si)[0]
            seg = segs[si]
            ugrid = self.u_grids[si]
            st = self.states[si]
            u = np.clip(seg.pmap.u(xs[sel]), 0.0, 1.0)
            u[xs[sel] >= seg.b] = 1.0
            u[xs[sel] <= seg.a] = 0.0
            j = np.clip(np.searchsorted(ugrid, u, side="right") - 1, 0, max(len(ugrid) - 2, 0))
            h = u - ugrid[j]
            exact = h == 0.0
            out[sel[exact]] = st[j[exact]]
            move = ~exact
            if move.any():
                y1, _ = _rk_step(seg, self.system, ugrid[j[move]], h[move], st[j[move]], lam_col, L, self.method)
                out[sel[move]] = y1
        return out


def integrate(system: LinearSystem, y0: np.ndarray, lam=None, *, tol: float = DEFAULT_IVP_TOL,
              max_steps: int = DEFAULT_MAX_STEPS, store: bool = False, x_start: float = 0.0,
              x_end: float = 1.0, method: _Tableau = DEFAULT_METHOD):
    """Integrate from ``x_start`` to ``x_end`` (sampling needs the full span [0, 1]).

    ``y0`` has shape (d, K) or (L, d, K).  Returns the final state (L, d, K) and,
    when ``store`` is set, a StoredPath for later sampling.
    """
    lam_col, L = _lam_column(lam)
    d = system.dim
    y = np.asarray(y0, dtype=complex)
    if y.ndim == 2:
        y = np.broadcast_to(y, (L, *y.shape)).copy()
    if y.shape[:2] != (L, d):
        raise ValueError(f"initial state shape {y.shape} does not match (L={L}, d={d}, K)")
    K = y.shape[-1]
    if system.G and system.ncols != K:
        raise ValueError(f"forcing has {system.ncols} columns but the state has {K}")
    u_grids, states = [], []
    h_x = 0.05
    steps = 0
    for seg in system.segments:
        if seg.a >= x_end:
            break
        if seg.b <= x_start:
            continue
        u_stop = 1.0 if seg.b <= x_end else float(seg.pmap.u(x_end))
        w = seg.b - seg.a
        u = 0.0 if seg.a >= x_start else float(seg.pmap.u(x_start))
        h = min(u_stop, max(h_x / w, 1e-6)) if seg.pmap.sing is None else min(u_stop, 0.05)
        ugrid, sgrid = [u], ([y.copy()] if store else None)
        while u < u_stop:
            h = min(h, u_stop - u)
            last = u + h >= u_stop * (1 - 1e-15)
            if last:
                h = u_stop - u
            y1, err = _rk_step(seg, system, np.array([u]), np.array([h]), y[None], lam_col, L, method)
            y1, err = y1[0], err[0]
            scale = tol + tol * np.maximum(np.abs(y), np.abs(y1))
            enorm = float(np.max(np.abs(err) / scale)) if err.size else 0.0
            if not np.isfinite(enorm):
                enorm = np.inf
            steps += 1
            if steps > max_steps:
                x0 = float(seg.pmap.x(u))
                raise IntegrationError("step limit exceeded", (x0, float(seg.pmap.x(min(u + h, 1.0)))))
            if enorm <= 1.0:
                u = u_stop if last else u + h
                y = y1
                if store:
                    ugrid.append(u)
                    sgrid.append(y.copy())
                fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** method.exponent))
                h = h * fac
            else:
                h = h * max(0.1, 0.9 * enorm ** method.exponent)
            if h < 1e-14 and u < u_stop:
                raise IntegrationError("step size underflow", (float(seg.pmap.x(u)), seg.b))
        if seg.pmap.sing is None:
            h_x = h * w
        if store:
            u_grids.append(np.array(ugrid))
            states.append(np.array(sgrid))
        if seg.b < x_end:
            y = _apply_jumps(system, seg.b, y, lam_col, L)
    path = StoredPath(system, None if lam is None else np.atleast_1d(np.asarray(lam, dtype=complex)),
                      u_grids, states, method) if store else None
    return y, path


def _apply_jumps(system: LinearSystem, loc: float, y: np.ndarray, lam_col, L: int) -> np.ndarray:
    if loc in system.c_atoms:
        J = _jump_matrix(system.c_atoms[loc], lam_col, L, system.dim, system.dim, True)
        y = J @ y
    if loc in system.g_atoms:
        y = y + _jump_matrix(system.g_atoms[loc], lam_col, L, system.dim, y.shape[-1], False)
    return y


__all__ = ["DEFAULT_IVP_TOL", "IntegrationError", "LinearSystem", "StoredPath", "integrate"]
