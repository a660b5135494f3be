"""The operator T: operator data, index, weak action and reduction to a first-order system."""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _ode
from .coeffs import LAMBDA, CoefficientFunction, as_function
from .coeffs import expr as ex
from .coeffs.quadrature import composite_rule, singular_map
from .quasisystem import (
    CoefficientSystem,
    Issue,
    ValidationReport,
    VectorTrajectory,
    _path_grid,
    boundary_trace,
    validate_system,
)

RANK_RTOL = 1e-10
PNM_FLOOR = 1e-12
_ZERO = CoefficientFunction.zero()


class SpecError(ValueError):
    """The operator data cannot be used for the requested construction."""


class UnsupportedSpecError(SpecError):
    """No trial-to-test conversion is available for this spec."""


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _matrix(M, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Complex matrix from nested lists of numbers or [re, im] pairs."""
    if isinstance(M, np.ndarray):
        return M.astype(complex)
    out = []
    for row in M:
        out.append([complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v) for v in row])
    arr = np.array(out, dtype=complex)
    if arr.size == 0 and rows is not None:
        arr = np.zeros((rows, cols), dtype=complex)
    return arr


def _pair(v) -> tuple[CoefficientFunction, CoefficientFunction]:
    if isinstance(v, tuple) and len(v) == 2:
        return as_function(v[0]), as_function(v[1])
    return as_function(v), _ZERO


@dataclass(eq=False)
class OperatorSpec:
    """Data of the operator T and of its pencil.

    ``p[(i, j)] = (p0, p1)`` encodes ``p_ij(x, lam) = p0(x) + lam * p1(x)`` for
    0 <= i <= n, 0 <= j <= m.  ``trial_to_test`` optionally overrides the
    default conversion of trial trajectories into test trajectories used by the
    symmetry and sector diagnostics.  ``non_injective`` marks embeddings for
    which pencil roots need not be operator eigenvalues.
    """

    n: int
    m: int
    s: float
    A: CoefficientSystem
    B: CoefficientSystem
    U: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    p: dict = field(default_factory=dict)
    trial_to_test: Callable | None = None
    non_injective: bool = False
    metadata: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.U = _matrix(self.U, 2 * self.n, 2 * self.n)
        self.V = _matrix(self.V, 2 * self.m, 2 * self.m)
        self.Q = _matrix(self.Q, 2 * self.m, 2 * self.n)
        self.p = {(int(i), int(j)): _pair(v) for (i, j), v in self.p.items()}

    def p_fn(self, i: int, j: int, lam=None) -> CoefficientFunction:
        """``p_ij`` at ``lam``; with ``lam=None`` the spectral parameter stays symbolic."""
        p0, p1 = self.p.get((i, j), (_ZERO, _ZERO))
        if p1.is_zero:
            return p0
        full = p0 + LAMBDA * p1
        return full if lam is None else full.bind(complex(lam))

    @property
    def weight_A(self) -> CoefficientFunction:
        """``|A[n-1, n]|^(1/s)``."""
        return self._weight("wA", self.A[self.n - 1, self.n], 1.0 / self.s)

    @property
    def weight_B(self) -> CoefficientFunction:
        """``|B[m-1, m]|^((s-1)/s)``; identically 1 when s = 1."""
        if self.s == 1:
            return CoefficientFunction.constant(1.0)
        return self._weight("wB", self.B[self.m - 1, self.m], (self.s - 1.0) / self.s)

    def _weight(self, key: str, f: CoefficientFunction, e: float) -> CoefficientFunction:
        if key not in self._cache:
            self._cache[key] = f.abs() ** e
        return self._cache[key]

    def with_boundary(self, U=None, V=None, Q=None) -> OperatorSpec:
        """Same coefficient data with replaced boundary matrices."""
        spec = OperatorSpec(self.n, self.m, self.s, self.A, self.B,
                            self.U if U is None else U, self.V if V is None else V,
                            self.Q if Q is None else Q, dict(self.p), self.trial_to_test,
                            self.non_injective, dict(self.metadata))
        for key in ("wA", "wB", "symbolic"):
            if key in self._cache:
                spec._cache[key] = self._cache[key]
        return spec

    def coefficient_functions(self) -> list[CoefficientFunction]:
        fns = [*self.A.nonzero().values(), *self.B.nonzero().values()]
        for p0, p1 in self.p.values():
            fns.extend([p0, p1])
        return fns


@dataclass(eq=False)
class FunctionalData:
    """Right-hand side F: densities f_0..f_m and the boundary vector mu (length m)."""

    components: list
    boundary: np.ndarray | None = None

    def __post_init__(self):
        self.components = [as_function(f) for f in self.components]
        m = len(self.components) - 1
        mu = np.zeros(m, dtype=complex) if self.boundary is None else np.asarray(self.boundary, dtype=complex)
        if mu.shape != (m,):
            raise ValueError(f"boundary vector must have length {m}")
        self.boundary = mu

    @classmethod
    def zero(cls, m: int) -> FunctionalData:
        return cls([_ZERO] * (m + 1))

    @property
    def m(self) -> int:
        return len(self.components) - 1

    def norm(self) -> float:
        """``sum of integrals of |f_j|`` plus the Euclidean norm of mu."""
        total = 0.0
        for f in self.components:
            if not f.is_zero:
                total += abs(f.abs().integrate())
        return total + float(np.linalg.norm(self.boundary))

    def scaled(self, c: complex) -> FunctionalData:
        return FunctionalData([f * c for f in self.components], c * self.boundary)


# --- validation and index ----------------------------------------------------

def _probe_points(fns: Sequence[CoefficientFunction], panels: int = 64, order: int = 8) -> np.ndarray:
    edges = np.union1d(np.linspace(0.0, 1.0, panels + 1), [b for f in fns for b in f.breakpoints])
    nodes, _, _ = composite_rule(edges, None, order)
    return nodes


def _piece_limits(f: CoefficientFunction) -> np.ndarray:
    """One-sided values of every piece at its non-singular ends."""
    vals = []
    with np.errstate(all="ignore"):
        for p in f.pieces:
            for end, tag in ((p.a, "a"), (p.b, "b")):
                if p.sing != tag:
                    vals.append(complex(np.asarray(p.expr.evaluate(np.array([end]))).ravel()[0]))
    return np.array(vals, dtype=complex)


def validate_spec(spec: OperatorSpec) -> ValidationReport:
    """Shapes, coefficient classes, boundedness of p_nm and its reciprocal, zero-set compatibility."""
    n, m, s = spec.n, spec.m, spec.s
    issues: list[Issue] = []
    notes: list[str] = []
    if not (isinstance(n, int) and isinstance(m, int) and n >= 1 and m >= 1):
        issues.append(Issue("shape", f"orders must be positive integers (n={n}, m={m})"))
        return ValidationReport(tuple(issues))
    if not s >= 1:
        issues.append(Issue("exponent", f"s must lie in [1, inf), got {s}"))
    if spec.A.n != n:
        issues.append(Issue("shape", f"A has order {spec.A.n}, expected n = {n}"))
    if spec.B.n != m:
        issues.append(Issue("shape", f"B has order {spec.B.n}, expected m = {m}"))
    for name, M, shape in (("U", spec.U, (2 * n, 2 * n)), ("V", spec.V, (2 * m, 2 * m)),
                           ("Q", spec.Q, (2 * m, 2 * n))):
        if M.shape != shape:
            issues.append(Issue("shape", f"{name} has shape {M.shape}, expected {shape}"))
    report = ValidationReport(tuple(issues), tuple(notes))
    report = report.merged(validate_system(spec.A), "A: ").merged(validate_system(spec.B), "B: ")
    issues = list(report.issues)
    for (i, j), (p0, p1) in sorted(spec.p.items()):
        if not (0 <= i <= n and 0 <= j <= m):
            issues.append(Issue("shape", "coefficient index outside 0..n x 0..m", (i, j)))
            continue
        for f in (p0, p1):
            if f.atoms:
                issues.append(Issue("atoms", "point masses are only allowed in measure mode", (i, j)))
            if f.depends_on_lambda:
                issues.append(Issue("lambda", "use the (p0, p1) pair for spectral dependence", (i, j)))
            for _, alpha in f.singular_points():
                if i < n and j == m and s > 1 and not alpha * s / (s - 1) > -1:
                    issues.append(Issue("integrability", f"p_{i}{m} is not in L^(s/(s-1))", (i, j)))
                if i == n and j < m and not alpha * s > -1:
                    issues.append(Issue("integrability", f"p_{n}{j} is not in L^s", (i, j)))
                if i == n and j == m:
                    issues.append(Issue("boundedness", "p_nm has a declared singularity", (i, j)))
    p0, p1 = spec.p.get((n, m), (_ZERO, _ZERO))
    if not p1.is_zero:
        issues.append(Issue("lambda", "the leading coefficient p_nm must not depend on lambda", (n, m)))
    probes = _probe_points([p0])
    with np.errstate(all="ignore"):
        vals = np.concatenate([p0.values(probes), _piece_limits(p0)])
    if not np.all(np.isfinite(vals)):
        issues.append(Issue("boundedness", "p_nm is not essentially bounded", (n, m)))
    elif np.min(np.abs(vals)) <= PNM_FLOOR * max(1.0, float(np.max(np.abs(vals)))):
        issues.append(Issue("boundedness", "the reciprocal of p_nm is not essentially bounded", (n, m)))
    if spec.A.n == n and spec.B.n == m:
        a, b = spec.A[n - 1, n], spec.B[m - 1, m]
        xs = _probe_points([a, b])
        with np.errstate(all="ignore"):
            za = np.abs(a.values(xs)) <= 1e-14
            zb = np.abs(b.values(xs)) <= 1e-14
        if np.any(za != zb):
            issues.append(Issue("zero-sets", "A[n-1,n] and B[m-1,m] vanish on different sets"))
        if not all(f.is_real for f in spec.B.nonzero().values()):
            notes.append("complex B system: formula-literal mode (conjugated B entries used as written)")
    if spec.non_injective:
        notes.append("non-injective embedding: pencil roots need not be operator eigenvalues")
    return ValidationReport(tuple(issues), report.notes + tuple(notes))


def fredholm_index(spec: OperatorSpec, rtol: float = RANK_RTOL) -> int:
    """``n - m - rank U + rank V``."""
    return spec.n - spec.m - numerical_rank(spec.U, rtol) + numerical_rank(spec.V, rtol)


# --- boundary conditions -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    """Boundary conditions of the reduced problem.

    ``rows_U @ Yhat = 0`` and ``N^H (Q Yhat - Ycheck) = N^H mu~`` where the
    columns of ``null_V`` span ker V and ``mu~ = (mu, 0)``.
    """

    n: int
    m: int
    rows_U: np.ndarray
    null_V: np.ndarray
    Q: np.ndarray

    @property
    def rows_V(self) -> np.ndarray:
        return self.null_V.conj().T

    @property
    def count(self) -> int:
        return self.rows_U.shape[0] + self.null_V.shape[1]

    def trace_maps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Matrices S0, S1, D0, D1 with ``Yhat = S0 y(0) + S1 y(1)`` and ``Ycheck = D0 y(0) + D1 y(1)``."""
        n, m = self.n, self.m
        d = n + m
        S0 = np.zeros((2 * n, d))
        S1 = np.zeros((2 * n, d))
        S0[np.arange(n), np.arange(n)] = 1.0
        S1[n + np.arange(n), np.arange(n)] = 1.0
        D0 = np.zeros((2 * m, d))
        D1 = np.zeros((2 * m, d))
        for k in range(m):
            D0[k, n + m - k - 1] = 1.0
        for k in range(m, 2 * m):
            D1[k, n + 2 * m - k - 1] = -1.0
        return S0, S1, D0, D1

    def linear_form(self) -> tuple[np.ndarray, np.ndarray]:
        """(L0, L1) such that the conditions read ``L0 y(0) + L1 y(1) = rhs``."""
        S0, S1, D0, D1 = self.trace_maps()
        NH = self.rows_V
        L0 = np.vstack([self.rows_U @ S0, NH @ (self.Q @ S0 - D0)])
        L1 = np.vstack([self.rows_U @ S1, NH @ (self.Q @ S1 - D1)])
        return L0, L1

    def rhs(self, mu) -> np.ndarray:
        mu_t = np.zeros(2 * self.m, dtype=complex)
        mu_t[: self.m] = np.asarray(mu, dtype=complex)
        return np.concatenate([np.zeros(self.rows_U.shape[0], dtype=complex), self.rows_V @ mu_t])

    def check_vector(self, y0: np.ndarray, y1: np.ndarray) -> np.ndarray:
        """``Ycheck`` from the state at both ends."""
        _, _, D0, D1 = self.trace_maps()
        return D0 @ y0 + D1 @ y1


def _row_basis(M: np.ndarray, rtol: float) -> np.ndarray:
    r = numerical_rank(M, rtol)
    if r == M.shape[0]:
        return M
    _, _, vh = np.linalg.svd(M)
    return vh[:r]


def null_space(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) of ker M by singular-value threshold."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    _, s, vh = np.linalg.svd(M)
    r = 0 if s.size == 0 or s[0] == 0 else int(np.sum(s > rtol * s[0]))
    return vh[r:].conj().T


def boundary_matrix(spec: OperatorSpec, rtol: float = RANK_RTOL) -> BoundaryOperator:
    return BoundaryOperator(spec.n, spec.m, _row_basis(spec.U, rtol), null_space(spec.V, rtol), spec.Q)


# --- first-order system ------------------------------------------------------

@dataclass(eq=False)
class FirstOrderSystem:
    """``y' = C y + g`` in the quasi-derivatives ``y^[0..n+m-1]``."""

    dim: int
    C: dict
    g: list
    labels: tuple[str, ...]
    lam: complex | None = None

    def entry(self, i: int, j: int) -> CoefficientFunction:
        return self.C.get((i, j), _ZERO)

    def ode(self, ncols: int = 1, forcing_column: int | None = 0) -> _ode.LinearSystem:
        G = {}
        if forcing_column is not None:
            G = {(i, forcing_column): f for i, f in enumerate(self.g) if not f.is_zero}
        return _ode.LinearSystem(self.dim, dict(self.C), G, ncols)

    def bind(self, lam: complex) -> FirstOrderSystem:
        return FirstOrderSystem(self.dim, {k: f.bind(lam) for k, f in self.C.items()},
                                [f.bind(lam) for f in self.g], self.labels, lam)

    def with_forcing(self, g: Sequence[CoefficientFunction]) -> FirstOrderSystem:
        return FirstOrderSystem(self.dim, self.C, list(g), self.labels, self.lam)

    def to_text(self) -> str:
        lines = []
        if self.lam is not None:
            lines.append(f"# lambda = {_fmt_complex(self.lam)}")
        for i in range(self.dim):
            terms = []
            for j in range(self.dim):
                f = self.C.get((i, j))
                if f is not None and not f.is_zero:
                    terms.append(f"({f}) * {self.labels[j]}")
            if not self.g[i].is_zero:
                terms.append(f"({self.g[i]})")
            lines.append(f"d/dx {self.labels[i]} = " + (" + ".join(terms) if terms else "0"))
        return "\n".join(lines) + "\n"


def _fmt_complex(z: complex) -> str:
    z = complex(z)
    return repr(z.real) if z.imag == 0 else f"{z.real!r}{z.imag:+}i"


def _check_pnm(spec: OperatorSpec) -> CoefficientFunction:
    p = spec.p_fn(spec.n, spec.m)
    probes = _probe_points([p])
    with np.errstate(all="ignore"):
        vals = np.concatenate([p.values(probes), _piece_limits(p)])
    if not np.all(np.isfinite(vals)) or np.min(np.abs(vals)) <= PNM_FLOOR * max(1.0, float(np.max(np.abs(vals)))):
        raise SpecError("p_nm is not bounded away from zero; cannot divide by it")
    return p


def _symbolic_system(spec: OperatorSpec) -> tuple[dict, list]:
    """Coefficient table and forcing templates with lambda symbolic.

    Forcing templates are lists of (coefficient, slot) meaning ``coefficient * f_slot``.
    """
    if "symbolic" in spec._cache:
        return spec._cache["symbolic"]
    n, m = spec.n, spec.m
    A, B = spec.A, spec.B
    pnm = _check_pnm(spec)
    pinv = 1 / pnm
    wA, wB = spec.weight_A, spec.weight_B
    a = A[n - 1, n]
    bbar = B[m - 1, m].conj()
    C: dict = {}
    forcing: list[list] = [[] for _ in range(n + m)]

    def put(i, j, f):
        if f is not None and not f.is_zero:
            C[(i, j)] = C[(i, j)] + f if (i, j) in C else f

    for i in range(n - 1):
        for j in range(i + 2):
            put(i, j, A[i, j])
    a_over_w = a / wA
    for i in range(n):
        term = A[n - 1, i]
        pim = spec.p_fn(i, m)
        if not pim.is_zero:
            term = term - pinv * pim * a_over_w
        put(n - 1, i, term)
    put(n - 1, n, pinv * a_over_w * bbar / wB)
    forcing[n - 1].append((pinv * a_over_w, m))
    b_over_w = bbar / wB
    for j in range(m):
        r = n + m - 1 - j
        pnj = spec.p_fn(n, j)
        for i in range(n):
            term = spec.p_fn(i, j)
            pim = spec.p_fn(i, m)
            if not (pim.is_zero or pnj.is_zero):
                term = term - pinv * pim * pnj
            put(r, i, term)
        coef = -B[m - 1, j].conj()
        if not pnj.is_zero:
            coef = coef + pinv * b_over_w * pnj
        put(r, n, coef)
        for k in range(max(j, 1), m):
            put(r, n + m - k, -B[k - 1, j].conj())
        forcing[r].append((CoefficientFunction.constant(-1.0), j))
        if not pnj.is_zero:
            forcing[r].append((pinv * pnj, m))
    C = {k: v for k, v in C.items() if not v.is_zero}
    spec._cache["symbolic"] = (C, forcing)
    return C, forcing


def _forcing(forcing: list, F: FunctionalData | None, lam) -> list:
    out = []
    for terms in forcing:
        g = _ZERO
        if F is not None:
            for coef, slot in terms:
                f = F.components[slot]
                if not f.is_zero:
                    g = g + coef * f
        out.append(g if lam is None else g.bind(complex(lam)))
    return out


def assemble_system(spec: OperatorSpec, lam: complex | None, F: FunctionalData | None = None) -> FirstOrderSystem:
    """Reduced first-order system at ``lam`` (symbolic in lambda when ``lam`` is None)."""
    if F is not None and F.m != spec.m:
        raise SpecError(f"functional has {F.m + 1} components, expected m + 1 = {spec.m + 1}")
    C, forcing = _symbolic_system(spec)
    labels = tuple(f"y[{i}]" for i in range(spec.n + spec.m))
    g = _forcing(forcing, F, lam)
    if lam is not None:
        C = {k: f.bind(complex(lam)) for k, f in C.items()}
    return FirstOrderSystem(spec.n + spec.m, dict(C), g, labels, None if lam is None else complex(lam))


# --- weak action ---------------------------------------------------------------

def top_component(spec: OperatorSpec, lam: complex, F: FunctionalData | None, y: VectorTrajectory) -> VectorTrajectory:
    """Operator-space vector ``(Y_0, ..., Y_n)`` from a solution in quasi-derivatives.

    ``Y_i = y^[i]`` for i < n and
    ``|A[n-1,n]|^(1/s) Y_n = p_nm^{-1} (conj(B[m-1,m]) / w_B y^[n] - sum_i p_im y^[i] + f_m)``.
    """
    n, m = spec.n, spec.m
    pinv = 1 / _check_pnm(spec)
    wA, wB = spec.weight_A, spec.weight_B
    b_over_w = spec.B[m - 1, m].conj() / wB
    pim = [spec.p_fn(i, m, lam) for i in range(n)]
    fm = F.components[m] if F is not None else _ZERO

    def sampler(xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        v = y.at(xs)
        with np.errstate(all="ignore"):
            acc = b_over_w.values(xs) * v[:, n] + fm.values(xs)
            for i in range(n):
                if not pim[i].is_zero:
                    acc = acc - pim[i].values(xs) * v[:, i]
            top = pinv.values(xs) * acc / wA.values(xs)
        return np.concatenate([v[:, :n], np.broadcast_to(top, xs.shape)[:, None]], axis=1)

    sing = dict(y.singular)
    for x, a in singular_map([fm, *spec.coefficient_functions()]).items():
        sing[x] = min(a, sing.get(x, 0.0))
    bps = tuple(sorted({*y.breakpoints, *fm.breakpoints}))
    labels = tuple(f"Y{i}" for i in range(n + 1))
    return VectorTrajectory(y.grid, sampler(y.grid), labels, sampler, sing, bps)


def _union_rule(trajectories: Sequence[VectorTrajectory], fns: Sequence[CoefficientFunction], order: int):
    edges = [0.0, 1.0]
    sing: dict[float, float] = singular_map(fns)
    for t in trajectories:
        edges.extend(t.grid.tolist())
        edges.extend(t.breakpoints)
        for x, a in t.singular.items():
            sing[x] = min(a, sing.get(x, 0.0))
    for f in fns:
        edges.extend(f.breakpoints)
    edges = np.unique(np.clip(edges, 0.0, 1.0))
    return composite_rule(edges, sing, order)


def apply_T(spec: OperatorSpec, lam: complex, Y: VectorTrajectory, Z: VectorTrajectory, order: int = 10) -> complex:
    """``<T Y, Z>`` at ``lam`` by quadrature of the weighted integral terms plus ``<Q Yhat, Zhat>``."""
    n, m = spec.n, spec.m
    if Y.k < n + 1 or Z.k < m + 1:
        raise ValueError(f"need trajectories with {n + 1} and {m + 1} components")
    wA, wB = spec.weight_A, spec.weight_B
    p = {(i, j): spec.p_fn(i, j, lam) for i in range(n + 1) for j in range(m + 1)}
    p = {k: v for k, v in p.items() if not v.is_zero}
    nodes, weights, _ = _union_rule([Y, Z], [wA, wB, *p.values()], order)
    y = Y.at(nodes)
    zc = Z.at(nodes).conj()
    with np.errstate(all="ignore"):
        wa, wb = wA.values(nodes), wB.values(nodes)
        total = np.zeros(nodes.shape, dtype=complex)
        for (i, j), f in p.items():
            w = f.values(nodes)
            if i == n:
                w = w * wa
            if j == m:
                w = w * wb
            total += w * y[:, i] * zc[:, j]
    value = complex(np.sum(total * weights))
    yhat = boundary_trace(Y, n)
    zhat = boundary_trace(Z, m)
    return value + complex(np.sum((spec.Q @ yhat) * zhat.conj()))


def pair_functional(spec: OperatorSpec, F: FunctionalData, Z: VectorTrajectory, order: int = 10) -> complex:
    """``<F, Z> = sum_{j<m} int f_j conj(Z_j) + int w_B f_m conj(Z_m) + sum_i mu_i conj(Z_i(0))``."""
    m = spec.m
    wB = spec.weight_B
    fns = [f for f in F.components if not f.is_zero]
    nodes, weights, _ = _union_rule([Z], [wB, *fns], order)
    zc = Z.at(nodes).conj()
    total = np.zeros(nodes.shape, dtype=complex)
    with np.errstate(all="ignore"):
        for j, f in enumerate(F.components):
            if f.is_zero:
                continue
            w = f.values(nodes)
            if j == m:
                w = w * wB.values(nodes)
            total += w * zc[:, j]
    z0 = Z.at([0.0])[0, :m]
    return complex(np.sum(total * weights)) + complex(np.sum(F.boundary * z0.conj()))


# --- trial and test spaces -----------------------------------------------------

def legendre_basis(count: int) -> list[CoefficientFunction]:
    """Shifted Legendre polynomials ``P_j(2x - 1)`` on [0, 1]."""
    out = []
    for j in range(count):
        coef = np.zeros(j + 1)
        coef[j] = 1.0
        fn = (lambda x, c=coef: np.polynomial.legendre.legval(2.0 * np.asarray(x, dtype=float) - 1.0, c))
        out.append(CoefficientFunction.native(f"P{j}", fn, real=True))
    return out


@dataclass(eq=False)
class SpaceSampler:
    """Random smooth elements ``(Y_0..Y_k)`` of a quasi-derivative space with ``bc @ Yhat = 0``.

    The top component ranges over a polynomial basis; lower components come from
    one integration of the truncated system with one column per basis direction.
    """

    system: CoefficientSystem
    bc: np.ndarray
    nbasis: int | None = None
    tol: float = _ode.DEFAULT_IVP_TOL

    def __post_init__(self):
        k = self.system.n
        nb = self.nbasis or 2 * k + 4
        self.basis = legendre_basis(nb)
        top = self.system[k - 1, k]
        G = {(k - 1, k + j): top * phi for j, phi in enumerate(self.basis)}
        ode = _ode.LinearSystem(k, self.system.truncated(), G, ncols=k + nb)
        init = np.zeros((k, k + nb), dtype=complex)
        init[:, :k] = np.eye(k)
        final, path = _ode.integrate(ode, init, tol=self.tol, store=True)
        self.path = path
        self.grid, states = _path_grid(path)
        self.grid_states = states[:, 0]
        trace = np.vstack([init, final[0]])  # (2k, k + nb)
        bc = np.asarray(self.bc, dtype=complex).reshape(-1, 2 * k)
        self.directions = null_space(bc @ trace) if bc.size else np.eye(k + nb, dtype=complex)
        if self.directions.shape[1] == 0:
            raise SpecError("the boundary conditions leave no admissible elements")
        self.singular = singular_map(self.system.nonzero().values())
        self.breakpoints = tuple(sorted({b for f in self.system.nonzero().values() for b in f.breakpoints}))

    @property
    def k(self) -> int:
        return self.system.n

    def element(self, coeffs: np.ndarray) -> VectorTrajectory:
        """Element with combination weights ``coeffs`` over the admissible directions."""
        w = self.directions @ np.asarray(coeffs, dtype=complex)
        k = self.k
        tw = w[k:]

        def sampler(xs):
            xs = np.atleast_1d(np.asarray(xs, dtype=float))
            low = self.path.sample(xs)[:, 0] @ w
            top = sum(c * phi.values(xs) for c, phi in zip(tw, self.basis))
            return np.concatenate([low, np.broadcast_to(top, xs.shape)[:, None]], axis=1)

        vals = sampler(self.grid)
        return VectorTrajectory(self.grid, vals, tuple(f"Y{i}" for i in range(k + 1)), sampler,
                                self.singular, self.breakpoints)

    def draw(self, count: int, rng: np.random.Generator) -> list[VectorTrajectory]:
        r = self.directions.shape[1]
        out = []
        for _ in range(count):
            c = rng.standard_normal(r) + 1j * rng.standard_normal(r)
            out.append(self.element(c / np.linalg.norm(c)))
        return out


def trial_space(spec: OperatorSpec, **kw) -> SpaceSampler:
    """Elements of the A-space satisfying ``U Yhat = 0``."""
    return SpaceSampler(spec.A, spec.U, **kw)


def dual_space(spec: OperatorSpec, **kw) -> SpaceSampler:
    """Elements of the B-space satisfying ``V Zhat = 0``."""
    return SpaceSampler(spec.B, spec.V, **kw)


def trial_to_test(spec: OperatorSpec) -> Callable[[VectorTrajectory], VectorTrajectory]:
    """The conversion used to pair a trial element with the test space.

    Defaults to component-wise inclusion ``Z_j = Y_j`` (j <= m), available when
    n >= m, the first m rows of B coincide with those of A, and every trace
    allowed by U satisfies the V-conditions after truncation.
    """
    if spec.trial_to_test is not None:
        return spec.trial_to_test
    n, m = spec.n, spec.m
    if n < m:
        raise UnsupportedSpecError(f"no default trial-to-test conversion for n = {n} < m = {m}")
    if not spec.B.same_rows(spec.A, m):
        raise UnsupportedSpecError("B differs from A in its first m rows")
    Pi = np.zeros((2 * m, 2 * n))
    Pi[np.arange(m), np.arange(m)] = 1.0
    Pi[m + np.arange(m), n + np.arange(m)] = 1.0
    NU = null_space(spec.U)
    if NU.size:
        defect = np.max(np.abs(spec.V @ Pi @ NU))
        if defect > 1e-10 * max(1.0, np.max(np.abs(spec.V))):
            raise UnsupportedSpecError("traces allowed by U violate the V-conditions")
    return lambda Y: Y.head(m + 1)


__all__ = [
    "BoundaryOperator",
    "FirstOrderSystem",
    "FunctionalData",
    "OperatorSpec",
    "SpaceSampler",
    "SpecError",
    "UnsupportedSpecError",
    "apply_T",
    "assemble_system",
    "boundary_matrix",
    "dual_space",
    "fredholm_index",
    "legendre_basis",
    "null_space",
    "numerical_rank",
    "pair_functional",
    "top_component",
    "trial_space",
    "trial_to_test",
    "validate_spec",
]
