"""Initial-value integration of the reduced systems and boundary-value solution by shooting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _ode
from .operator import (
    RANK_RTOL,
    FirstOrderSystem,
    FunctionalData,
    OperatorSpec,
    assemble_system,
    boundary_matrix,
)
from .quasisystem import VectorTrajectory, _path_grid

SOLVABLE_RTOL = 1e-8


@dataclass(frozen=True)
class IvpOptions:
    """Integrator settings: per-step error tolerance, step cap, extra breakpoints."""

    tol: float = _ode.DEFAULT_IVP_TOL
    max_steps: int = _ode.DEFAULT_MAX_STEPS
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


def _linear_system(system, ncols: int, forcing_column: int | None, options: IvpOptions) -> _ode.LinearSystem:
    if isinstance(system, _ode.LinearSystem):
        return system
    ode = system.ode(ncols, forcing_column)
    if options.breakpoints:
        ode = _ode.LinearSystem(ode.dim, ode.C, ode.G, ode.ncols, tuple(options.breakpoints))
    return ode


def _trajectory(path: _ode.StoredPath, weights: np.ndarray, labels) -> VectorTrajectory:
    grid, states = _path_grid(path)
    w = np.asarray(weights, dtype=complex)

    def sampler(xs):
        return path.sample(np.atleast_1d(np.asarray(xs, dtype=float)))[:, 0] @ w

    sing: dict[float, float] = {}
    for seg in path.system.segments:
        if seg.pmap.sing == "a":
            sing[seg.a] = min(seg.pmap.alpha, sing.get(seg.a, 0.0))
        elif seg.pmap.sing == "b":
            sing[seg.b] = min(seg.pmap.alpha, sing.get(seg.b, 0.0))
    bps = tuple(seg.b for seg in path.system.segments[:-1])
    return VectorTrajectory(grid, states[:, 0] @ w, tuple(labels), sampler, sing, bps)


def integrate_ivp(system: FirstOrderSystem, y0, options: IvpOptions | None = None,
                  x_start: float = 0.0, x_end: float = 1.0):
    """Solve ``y' = C y + g`` with ``y(x_start) = y0``.

    Over the full span the result is a VectorTrajectory; over a partial span only
    the end state is returned.
    """
    options = options or IvpOptions()
    d = system.dim
    y0 = np.asarray(y0, dtype=complex).reshape(d)
    ode = _linear_system(system, 1, 0, options)
    full = x_start == 0.0 and x_end == 1.0
    final, path = _ode.integrate(ode, y0.reshape(d, 1), tol=options.tol, max_steps=options.max_steps,
                                 store=full, x_start=x_start, x_end=x_end)
    if not full:
        return final[0, :, 0]
    labels = getattr(system, "labels", tuple(f"y[{i}]" for i in range(d)))
    return _trajectory(path, np.array([1.0]), labels)


@dataclass(frozen=True, eq=False)
class BvpSolution:
    """Solution of ``T Y = F`` in reduced form, with the Fredholm data of the boundary system."""

    trajectory: VectorTrajectory | None
    kernel_dim: int
    defect_dim: int
    residual: float
    solvable: bool
    singular_values: np.ndarray = field(repr=False, default=None)
    initial: np.ndarray | None = field(repr=False, default=None)
    conditioning: str | None = None
    lam: complex = 0j

    def summary_line(self) -> str:
        return f"{str(self.solvable).lower()},{self.kernel_dim},{self.defect_dim},{self.residual!r}"


def _normalized(Bm: np.ndarray, rhs: np.ndarray | None = None):
    norms = np.linalg.norm(Bm, axis=-1)
    norms = np.where(norms > 0, norms, 1.0)
    Bn = Bm / norms[..., None]
    return (Bn, None) if rhs is None else (Bn, rhs / norms)


def shooting_matrices(spec: OperatorSpec, lams, options: IvpOptions | None = None) -> np.ndarray:
    """Boundary matrices ``L0 + L1 Phi(1)`` for an array of lambda values (F = 0), shape (L, K, n+m)."""
    options = options or IvpOptions()
    system = assemble_system(spec, None)
    ode = _linear_system(system, spec.n + spec.m, None, options)
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    d = spec.n + spec.m
    final, _ = _ode.integrate(ode, np.eye(d), lams if ode.depends_on_lambda else None,
                              tol=options.tol, max_steps=options.max_steps)
    if final.shape[0] != lams.size:
        final = np.broadcast_to(final, (lams.size, d, d))
    L0, L1 = boundary_matrix(spec).linear_form()
    return L0[None] + L1[None] @ final


def solve_bvp(spec: OperatorSpec, lam: complex, F: FunctionalData | None = None,
              options: IvpOptions | None = None, rank_rtol: float = RANK_RTOL) -> BvpSolution:
    """Solve the reduced boundary-value problem at ``lam`` by shooting.

    The state ``y(x) = Phi(x) c + y_p(x)`` is integrated in one pass (fundamental
    columns plus the particular solution with zero initial data); ``c`` is the
    minimum-norm least-squares solution of the row-normalized boundary system.
    """
    options = options or IvpOptions()
    F = F if F is not None else FunctionalData.zero(spec.m)
    n, m = spec.n, spec.m
    d = n + m
    system = assemble_system(spec, lam, F)
    ode = _linear_system(system, d + 1, d, options)
    init = np.zeros((d, d + 1), dtype=complex)
    init[:, :d] = np.eye(d)
    final, path = _ode.integrate(ode, init, tol=options.tol, max_steps=options.max_steps, store=True)
    phi1, yp1 = final[0][:, :d], final[0][:, d]
    bop = boundary_matrix(spec)
    L0, L1 = bop.linear_form()
    Bm = L0 + L1 @ phi1
    rhs = bop.rhs(F.boundary) - L1 @ yp1
    K = Bm.shape[0]
    Bn, rn = _normalized(Bm, rhs)
    if K == 0:
        c = np.zeros(d, dtype=complex)
        s = np.zeros(0)
        rank = 0
        resid = 0.0
    else:
        Uu, s, Vh = np.linalg.svd(Bn)
        thr = rank_rtol * max(s[0], np.finfo(float).tiny) if s.size else 0.0
        rank = int(np.sum(s > thr))
        coef = (Uu[:, :rank].conj().T @ rn) / s[:rank]
        c = Vh[:rank].conj().T @ coef
        resid = float(np.linalg.norm(Bn @ c - rn))
    conditioning = None
    if s.size:
        thr = rank_rtol * s[0]
        close = s[(s > thr / 10) & (s < thr * 10)]
        if close.size:
            conditioning = (f"rank decision ambiguous: singular value(s) {', '.join(f'{v:.3e}' for v in close)} "
                            f"within a factor 10 of the threshold {thr:.3e}")
    fnorm = F.norm()
    solvable = resid < SOLVABLE_RTOL * (1.0 + fnorm)
    weights = np.concatenate([c, [1.0]])
    traj = _trajectory(path, weights, system.labels)
    return BvpSolution(traj, d - rank, K - rank, resid, bool(solvable), s, c, conditioning, complex(lam))


__all__ = ["BvpSolution", "IvpOptions", "integrate_ivp", "shooting_matrices", "solve_bvp"]
