"""Quasi-derivative coefficient systems, fundamental matrices and reconstruction."""

from __future__ import annotations

import csv
import io
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _ode
from .coeffs import CoefficientFunction, as_function, is_strictly_monotone_primitive
from .coeffs.quadrature import composite_rule, singular_map

CONDITION_CAP = 1e12
INVERSE_TOL = 1e-10


class ConditioningError(ArithmeticError):
    """A sampled matrix is numerically singular."""


# --- validation reports ------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    kind: str
    message: str
    where: tuple | None = None

    def render(self) -> str:
        loc = f" at {self.where}" if self.where is not None else ""
        return f"[{self.kind}]{loc}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    """Violations (fatal) and notes (informational flags) found by a validator."""

    issues: tuple[Issue, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok

    @property
    def kinds(self) -> set[str]:
        return {i.kind for i in self.issues}

    def render(self) -> str:
        lines = ["valid" if self.ok else f"invalid ({len(self.issues)} issue(s))"]
        lines.extend("  " + i.render() for i in self.issues)
        lines.extend("  note: " + n for n in self.notes)
        return "\n".join(lines)

    def merged(self, other: ValidationReport, prefix: str = "") -> ValidationReport:
        issues = tuple(Issue(i.kind, prefix + i.message, i.where) for i in other.issues)
        return ValidationReport(self.issues + issues, self.notes + other.notes)


# --- systems -----------------------------------------------------------------

class CoefficientSystem:
    """Lower-Hessenberg table ``A[i, j]`` (j <= i + 1) of coefficient functions of order n.

    Entries may be given as CoefficientFunctions, expression strings or numbers;
    absent entries are identically zero.  Construction does not validate (see
    validate_system), so malformed tables can be inspected.
    """

    def __init__(self, n: int, entries: Mapping[tuple[int, int], object] | None = None):
        if int(n) != n or n < 1:
            raise ValueError(f"order must be a positive integer, got {n!r}")
        self.n = int(n)
        self.entries: dict[tuple[int, int], CoefficientFunction] = {
            (int(i), int(j)): as_function(v) for (i, j), v in (entries or {}).items()
        }

    @classmethod
    def sobolev(cls, n: int) -> CoefficientSystem:
        """The system whose quasi-derivatives are ordinary derivatives."""
        return cls(n, {(i, i + 1): 1.0 for i in range(n)})

    def __getitem__(self, key: tuple[int, int]) -> CoefficientFunction:
        return self.entries.get(key, _ZERO)

    def nonzero(self) -> dict[tuple[int, int], CoefficientFunction]:
        return {k: v for k, v in self.entries.items() if not v.is_zero}

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v}" for k, v in sorted(self.entries.items()))
        return f"CoefficientSystem(n={self.n}, {{{body}}})"

    def truncated(self) -> dict[tuple[int, int], CoefficientFunction]:
        """Entries of the n x n homogeneous part (the column j = n dropped)."""
        return {(i, j): f for (i, j), f in self.nonzero().items() if j < self.n}

    def same_rows(self, other: CoefficientSystem, rows: int, samples: int = 33) -> bool:
        """Whether rows 0..rows-1 coincide with ``other``'s, compared on sample points."""
        xs = (np.arange(samples) + 0.5) / samples
        keys = {k for k in (*self.entries, *other.entries) if k[0] < rows}
        for k in keys:
            a, b = self[k], other[k]
            if a is b:
                continue
            with np.errstate(all="ignore"):
                va, vb = a.values(xs), b.values(xs)
            if not np.allclose(va, vb, rtol=1e-13, atol=1e-13):
                return False
        return True


_ZERO = CoefficientFunction.zero()


def validate_system(A: CoefficientSystem) -> ValidationReport:
    """Check the Hessenberg shape, the absence of atoms and strict monotonicity of the |A[i, i+1]| primitives."""
    issues = []
    for (i, j), f in sorted(A.entries.items()):
        if not (0 <= i < A.n) or j < 0:
            issues.append(Issue("shape", f"entry index outside the order-{A.n} table", (i, j)))
        elif j > i + 1:
            issues.append(Issue("shape", "entry above the first superdiagonal", (i, j)))
        if f.atoms:
            issues.append(Issue("atoms", "point masses are only allowed in measure mode", (i, j)))
        if f.depends_on_lambda:
            issues.append(Issue("lambda", "system entries may not depend on the spectral parameter", (i, j)))
    for i in range(A.n):
        check = is_strictly_monotone_primitive(A[i, i + 1])
        if not check:
            lo, hi = check.witness
            issues.append(Issue("monotonicity",
                                f"|A[{i},{i + 1}]| vanishes on [{lo:.6g}, {hi:.6g}]", (i, i + 1)))
    return ValidationReport(tuple(issues))


# --- trajectories ------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True, eq=False)
class VectorTrajectory:
    """Sampled vector function on [0, 1].

    ``values[p, c]`` is component c at ``grid[p]``.  When a ``sampler`` is
    attached, values between grid points come from re-integration (never from
    interpolation); otherwise only grid points can be queried.
    """

    grid: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...] = ()
    sampler: Callable[[np.ndarray], np.ndarray] | None = None
    singular: Mapping[float, float] = field(default_factory=dict)
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"y{i}" for i in range(self.values.shape[1])))

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def at(self, x) -> np.ndarray:
        """Component values at points x, shape (len(x), k)."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if self.sampler is not None:
            return np.asarray(self.sampler(xs), dtype=complex).reshape(xs.size, self.k)
        idx = np.searchsorted(self.grid, xs)
        idx = np.minimum(idx, len(self.grid) - 1)
        if not np.all(self.grid[idx] == xs):
            raise ValueError("trajectory without a sampler can only be read on its grid")
        return self.values[idx]

    def component(self, i: int) -> np.ndarray:
        return self.values[:, i]

    def head(self, k: int) -> VectorTrajectory:
        """The first k components."""
        sampler = None if self.sampler is None else (lambda xs, s=self.sampler: s(xs)[:, :k])
        return VectorTrajectory(self.grid, self.values[:, :k], self.labels[:k], sampler,
                                self.singular, self.breakpoints)

    def scaled(self, c: complex) -> VectorTrajectory:
        sampler = None if self.sampler is None else (lambda xs, s=self.sampler: c * s(xs))
        return VectorTrajectory(self.grid, c * self.values, self.labels, sampler, self.singular,
                                self.breakpoints)

    def resampled(self, grid) -> VectorTrajectory:
        """Same function stored on a different grid (needs a sampler off the current grid)."""
        grid = np.unique(np.asarray(grid, dtype=float))
        return VectorTrajectory(grid, self.at(grid), self.labels, self.sampler, self.singular, self.breakpoints)

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["x"]
        for lab in self.labels:
            header += [f"re({lab})", f"im({lab})"]
        w.writerow(header)
        for x, row in zip(self.grid, self.values):
            w.writerow([_fmt(x), *(s for v in row for s in (_fmt(v.real), _fmt(v.imag)))])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_functions(cls, fns: Sequence[Callable], labels: Sequence[str] = (),
                       grid: np.ndarray | None = None, breakpoints: Sequence[float] = (),
                       singular: Mapping[float, float] | None = None) -> VectorTrajectory:
        """Trajectory given by vectorized callables (or CoefficientFunctions), one per component."""
        funcs = [(lambda xs, f=f: f.values(xs)) if isinstance(f, CoefficientFunction) else f for f in fns]
        if grid is None:
            grid = np.union1d(np.linspace(0.0, 1.0, 101), [b for b in breakpoints if 0 < b < 1])

        def sampler(xs):
            with np.errstate(all="ignore"):
                return np.stack([np.asarray(f(xs), dtype=complex) * np.ones(xs.shape) for f in funcs], axis=1)

        bps = set(breakpoints)
        sing = dict(singular or {})
        for f in fns:
            if isinstance(f, CoefficientFunction):
                bps.update(f.breakpoints)
                for x, a in f.singular_points():
                    sing[x] = min(a, sing.get(x, 0.0))
        grid = np.asarray(grid, dtype=float)
        return cls(grid, sampler(grid), tuple(labels), sampler, sing, tuple(sorted(bps)))


def boundary_trace(Y: VectorTrajectory, n: int) -> np.ndarray:
    """``(Y_0(0), ..., Y_{n-1}(0), Y_0(1), ..., Y_{n-1}(1))``."""
    if Y.k < n:
        raise ValueError(f"trajectory has {Y.k} components, need at least {n}")
    v = Y.at([0.0, 1.0])
    return np.concatenate([v[0, :n], v[1, :n]])


# --- fundamental matrices ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Samples of an n x n matrix function on a grid; off-grid values by re-integration."""

    n: int
    grid: np.ndarray
    values: np.ndarray  # (N, n, n)
    path: _ode.StoredPath | None = None
    inverse: bool = False
    max_condition: float = 1.0

    def at(self, x) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        if self.path is None:
            idx = np.minimum(np.searchsorted(self.grid, xs), len(self.grid) - 1)
            if not np.all(self.grid[idx] == xs):
                raise ValueError("matrix samples are only available on the grid")
            return self.values[idx]
        m = self.path.sample(xs)[:, 0]
        if self.inverse:
            m = np.linalg.solve(m, np.broadcast_to(np.eye(self.n), m.shape))
        return m


def _path_grid(path: _ode.StoredPath) -> tuple[np.ndarray, np.ndarray]:
    """Grid and states of a stored path with duplicated segment ends removed."""
    xs, ys = [], []
    for k, (seg, u, st) in enumerate(zip(path.system.segments, path.u_grids, path.states)):
        x = seg.pmap.x(u)
        if k > 0:
            x, st = x[1:], st[1:]
        xs.append(x)
        ys.append(st)
    return np.concatenate(xs), np.concatenate(ys, axis=0)


def _truncated_ode(A: CoefficientSystem) -> _ode.LinearSystem:
    return _ode.LinearSystem(A.n, A.truncated())


def fundamental_matrix(A: CoefficientSystem, tol: float = _ode.DEFAULT_IVP_TOL) -> FundamentalMatrix:
    """Solve ``M' = A_trunc M``, ``M(0) = I`` for the n x n truncation of A."""
    path = _ode.integrate(_truncated_ode(A), np.eye(A.n), tol=tol, store=True)[1]
    grid, states = _path_grid(path)
    values = states[:, 0]
    cond = float(np.max(np.linalg.cond(values)))
    if not np.isfinite(cond) or cond > CONDITION_CAP:
        raise ConditioningError(f"fundamental matrix condition number {cond:.3e} exceeds {CONDITION_CAP:.0e}")
    return FundamentalMatrix(A.n, grid, values, path, False, cond)


def invert_fundamental(M: FundamentalMatrix) -> FundamentalMatrix:
    """Pointwise inverse on the same grid, checked against the identity."""
    cond = float(np.max(np.linalg.cond(M.values)))
    if not np.isfinite(cond) or cond > CONDITION_CAP:
        raise ConditioningError(f"condition number {cond:.3e} exceeds {CONDITION_CAP:.0e}")
    eye = np.broadcast_to(np.eye(M.n), M.values.shape)
    inv = np.linalg.solve(M.values, eye)
    defect = float(np.max(np.abs(M.values @ inv - eye)))
    if defect >= INVERSE_TOL:
        raise ConditioningError(f"|M M^-1 - I| = {defect:.3e} exceeds {INVERSE_TOL:.0e}")
    return FundamentalMatrix(M.n, M.grid, inv, M.path, not M.inverse, cond)


def reconstruct(A: CoefficientSystem, init, Yn, tol: float = _ode.DEFAULT_IVP_TOL,
                order: int = 10) -> VectorTrajectory:
    """Components Y_0..Y_{n-1} from the top component via the fundamental matrix.

    ``Y(x) = M(x) [Y(0) + integral_0^x M^{-1}(t) e_{n-1} A[n-1, n](t) Yn(t) dt]``;
    the integral uses a composite Gauss rule on the matrix grid.  Component n of
    the result is ``Yn`` itself.
    """
    n = A.n
    init = np.asarray(init, dtype=complex).reshape(n)
    Yn = as_function(Yn)
    M = fundamental_matrix(A, tol)
    top = A[n - 1, n] * Yn
    edges = np.union1d(M.grid, [0.0, *top.breakpoints, 1.0])
    sing = singular_map([top, *A.nonzero().values()])
    nodes, weights, idx = composite_rule(edges, sing, order)

    def integrand(xs):
        m = M.at(xs)
        col = np.linalg.solve(m, np.broadcast_to(np.eye(n)[:, n - 1:], (m.shape[0], n, 1)))[..., 0]
        with np.errstate(all="ignore"):
            return col * top.values(xs)[:, None]

    contrib = integrand(nodes) * weights[:, None]
    per_interval = np.zeros((len(edges) - 1, n), dtype=complex)
    np.add.at(per_interval, idx, contrib)
    cumulative = np.vstack([np.zeros((1, n)), np.cumsum(per_interval, axis=0)])

    def sampler(xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        k = np.clip(np.searchsorted(edges, xs, side="right") - 1, 0, len(edges) - 2)
        acc = cumulative[k].copy()
        partial = xs > edges[k]
        for p in np.nonzero(partial)[0]:
            lo = edges[k[p]]
            sub = {lo: sing[lo]} if lo in sing else {}
            nd, wt, _ = composite_rule([lo, xs[p]], sub, order)
            acc[p] += (integrand(nd) * wt[:, None]).sum(axis=0)
        m = M.at(xs)
        comps = np.einsum("tij,tj->ti", m, init[None, :] + acc)
        with np.errstate(all="ignore"):
            last = top_values(xs)
        return np.concatenate([comps, last[:, None]], axis=1)

    def top_values(xs):
        return np.asarray(Yn.values(xs), dtype=complex) * np.ones(xs.shape)

    with np.errstate(all="ignore"):
        grid_vals = np.concatenate(
            [np.einsum("tij,tj->ti", M.values, init[None, :] + cumulative[np.searchsorted(edges, M.grid)]),
             top_values(M.grid)[:, None]], axis=1)
    bps = tuple(sorted({*top.breakpoints, *(b for f in A.nonzero().values() for b in f.breakpoints)}))
    labels = tuple(f"y{i}" for i in range(n + 1))
    return VectorTrajectory(M.grid, grid_vals, labels, sampler, sing, bps)


def forward_solution(A: CoefficientSystem, init, Yn, tol: float = _ode.DEFAULT_IVP_TOL) -> VectorTrajectory:
    """Components Y_0..Y_{n-1} by direct integration of ``Y' = A_trunc Y + e_{n-1} A[n-1, n] Yn``."""
    n = A.n
    Yn = as_function(Yn)
    system = _ode.LinearSystem(n, A.truncated(), {(n - 1, 0): A[n - 1, n] * Yn}, ncols=1)
    y0 = np.asarray(init, dtype=complex).reshape(n, 1)
    path = _ode.integrate(system, y0, tol=tol, store=True)[1]
    grid, states = _path_grid(path)

    def sampler(xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        with np.errstate(all="ignore"):
            top = np.asarray(Yn.values(xs), dtype=complex) * np.ones(xs.shape)
        return np.concatenate([path.sample(xs)[:, 0, :, 0], top[:, None]], axis=1)

    return VectorTrajectory(grid, sampler(grid), tuple(f"y{i}" for i in range(n + 1)), sampler)
