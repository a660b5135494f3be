"""Eigenvalues of the pencil ``T - lam J I`` from the characteristic determinant, and form diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _ode
from .operator import (
    OperatorSpec,
    SpecError,
    apply_T,
    assemble_system,
    boundary_matrix,
    top_component,
    trial_space,
    trial_to_test,
)
from .quasisystem import VectorTrajectory
from .solver import IvpOptions, _linear_system, _trajectory, shooting_matrices

ROOT_TOL = 1e-10
DEDUP_RTOL = 1e-8
KERNEL_RTOL = 1e-7


class NotAnEigenvalueError(ValueError):
    """The boundary matrix has a trivial kernel at the requested point."""


@dataclass(frozen=True)
class ScanOptions:
    """Settings for find_eigenvalues.

    ``grid`` is the number of samples on a real window; ``complex_grid`` the
    (real, imaginary) sample counts on a rectangle.
    """

    grid: int = 400
    complex_grid: tuple[int, int] = (41, 11)
    root_tol: float = ROOT_TOL
    dedup_rtol: float = DEDUP_RTOL
    kernel_rtol: float = KERNEL_RTOL
    max_iter: int = 80
    contrast: float = 1e-3
    ivp: IvpOptions = field(default_factory=IvpOptions)
    eigenfunctions: bool = False


@dataclass(frozen=True)
class Eigenvalue:
    lam: complex
    multiplicity: int
    residual: float


@dataclass(frozen=True)
class Candidate:
    """A polished point that was not accepted as an eigenvalue."""

    lam: complex
    residual: float
    reason: str


@dataclass(eq=False)
class SpectralResult:
    eigenvalues: list[Eigenvalue]
    window: tuple
    grid: tuple[int, ...]
    tol: float
    rejected: list[Candidate] = field(default_factory=list)
    eigenfunctions: list[VectorTrajectory] | None = None

    @property
    def values(self) -> np.ndarray:
        return np.array([e.lam for e in self.eigenvalues], dtype=complex)

    def to_csv(self) -> str:
        lines = ["re(lambda),im(lambda),multiplicity,residual"]
        for e in self.eigenvalues:
            lines.append(f"{e.lam.real!r},{e.lam.imag!r},{e.multiplicity},{e.residual!r}")
        return "\n".join(lines) + "\n"


# --- characteristic determinant -------------------------------------------------

def _require_square(spec: OperatorSpec) -> None:
    if spec.non_injective:
        raise SpecError("the embedding is marked non-injective; pencil roots need not be eigenvalues "
                        "(use the family's dedicated solver)")
    count = boundary_matrix(spec).count
    if count != spec.n + spec.m:
        raise SpecError(f"the boundary system has {count} conditions for {spec.n + spec.m} unknowns; "
                        "the determinant is undefined, scan kernel_dim with solve_bvp instead")


def _boundary_batch(spec: OperatorSpec, lams, options: IvpOptions) -> np.ndarray:
    return shooting_matrices(spec, lams, options)


NORM_FLOOR = 1e-8


def _row_norms(Bm: np.ndarray) -> np.ndarray:
    """Row norms, floored relative to the largest row so that a vanishing row stays small."""
    norms = np.linalg.norm(Bm, axis=-1)
    floor = NORM_FLOOR * np.max(norms, axis=-1, keepdims=True)
    norms = np.maximum(norms, floor)
    return np.where(norms > 0, norms, 1.0)


def char_det(spec: OperatorSpec, lam, options: IvpOptions | None = None):
    """Determinant of the row-normalized boundary matrix at ``lam`` (scalar or array)."""
    _require_square(spec)
    options = options or IvpOptions()
    scalar = np.ndim(lam) == 0
    Bm = _boundary_batch(spec, np.atleast_1d(lam), options)
    d = np.linalg.det(Bm / _row_norms(Bm)[..., None])
    return complex(d[0]) if scalar else d


def _fixed_det(spec, lams, norms, options) -> np.ndarray:
    """Determinant with row scales frozen per candidate, which keeps it analytic in lam."""
    Bm = _boundary_batch(spec, lams, options)
    return np.linalg.det(Bm / norms[..., None])


def _singular_values(spec: OperatorSpec, lam: complex, options: IvpOptions, norms=None) -> np.ndarray:
    Bm = _boundary_batch(spec, [lam], options)[0]
    norms = _row_norms(Bm) if norms is None else norms
    return np.linalg.svd(Bm / norms[:, None], compute_uv=False)


def kernel_dim(spec: OperatorSpec, lam: complex, options: IvpOptions | None = None,
               rtol: float = KERNEL_RTOL) -> int:
    """Number of singular values of the normalized boundary matrix below ``rtol`` times the largest."""
    s = _singular_values(spec, complex(lam), options or IvpOptions())
    return int(np.sum(s <= rtol * s[0]))


# --- root polishing -------------------------------------------------------------

def _illinois(spec, a, b, norms, theta, options, max_iter):
    """Bracketed Illinois iteration on ``Re(exp(-i theta) Delta)`` for all brackets at once."""

    def g(x):
        return np.real(np.exp(-1j * theta) * _fixed_det(spec, x, norms, options))

    fa, fb = g(a), g(b)
    side = np.zeros(a.size)
    c = 0.5 * (a + b)
    for _ in range(max_iter):
        c = (a * fb - b * fa) / (fb - fa)
        ok = np.isfinite(c) & (c > np.minimum(a, b)) & (c < np.maximum(a, b))
        c = np.where(ok, c, 0.5 * (a + b))
        fc = g(c)
        left = np.sign(fc) == np.sign(fa)
        fb = np.where(left & (side == 1), 0.5 * fb, fb)
        fa = np.where(~left & (side == -1), 0.5 * fa, fa)
        a, fa = np.where(left, c, a), np.where(left, fc, fa)
        b, fb = np.where(~left, c, b), np.where(~left, fc, fb)
        side = np.where(left, 1, -1)
        exact = fc == 0
        a, b = np.where(exact, c, a), np.where(exact, c, b)
        if np.all(np.abs(b - a) <= 4e-16 * np.maximum(1.0, np.abs(c)) * 8):
            break
    return np.where(np.abs(fa) < np.abs(fb), a, b)


def _secant(spec, z0, norms, options, max_iter, scale):
    """Complex secant iteration from ``z0`` on the frozen-scale determinant."""
    h = 1e-4 * np.maximum(scale, np.abs(z0))
    z_prev, z = z0.astype(complex), z0 + h
    f_prev = _fixed_det(spec, z_prev, norms, options)
    f = _fixed_det(spec, z, norms, options)
    done = np.zeros(z.size, dtype=bool)
    for _ in range(max_iter):
        den = f - f_prev
        with np.errstate(all="ignore"):
            step = np.where(den != 0, f * (z - z_prev) / den, 0.0)
        step = np.where(np.isfinite(step) & ~done, step, 0.0)
        # limit wild steps to a fraction of the local scale
        big = np.abs(step) > 0.5 * scale
        step = np.where(big, step / np.abs(np.where(step == 0, 1, step)) * 0.5 * scale, step)
        z_new = z - step
        live = ~done
        if not live.any():
            break
        f_new = f.copy()
        f_new[live] = _fixed_det(spec, z_new[live], norms[live], options)
        z_prev, f_prev = np.where(live, z, z_prev), np.where(live, f, f_prev)
        z, f = np.where(live, z_new, z), f_new
        done |= (np.abs(step) <= 1e-14 * np.maximum(1.0, np.abs(z))) | (f == 0)
    return z, done


def _local_minima_1d(v: np.ndarray) -> np.ndarray:
    inner = np.nonzero((v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:]))[0] + 1
    ends = [i for i, ok in ((0, v.size > 1 and v[0] < v[1]), (v.size - 1, v.size > 1 and v[-1] < v[-2])) if ok]
    return np.unique(np.concatenate([inner, np.array(ends, dtype=int)]))


def _local_minima_2d(v: np.ndarray) -> list[tuple[int, int]]:
    padded = np.pad(v, 1, constant_values=np.inf)
    out = []
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            block = padded[i:i + 3, j:j + 3]
            if v[i, j] <= block.min():
                out.append((i, j))
    return out


# --- scans ----------------------------------------------------------------------

def _is_real_window(window) -> bool:
    return len(window) == 2 and all(np.isreal(w) for w in window)


def _smallest_sv(Bm: np.ndarray) -> np.ndarray:
    return np.linalg.svd(Bm / _row_norms(Bm)[..., None], compute_uv=False)[..., -1]


def _finalize(spec, candidates, inside, reference, opts: ScanOptions, window, grid):
    """Accept polished candidates ``(z, frozen row scales)`` and drop duplicates."""
    eigen, rejected = [], []
    cands = sorted(((complex(z), nm) for z, nm in candidates), key=lambda c: (c[0].real, c[0].imag))
    for z, nm in cands:
        if not inside(z):
            continue
        if any(abs(z - e.lam) <= opts.dedup_rtol * max(1.0, abs(z)) for e in eigen):
            continue
        # the seed's row scales keep a row that vanishes at the root from being blown up
        s = _singular_values(spec, z, opts.ivp, nm)
        resid = float(abs(np.prod(s)))
        mult = int(np.sum(s <= opts.kernel_rtol * s[0]))
        if resid >= opts.root_tol:
            rejected.append(Candidate(z, resid, "determinant above the root tolerance"))
        elif mult == 0:
            rejected.append(Candidate(z, resid, "boundary matrix has a trivial kernel"))
        elif s[-1] > opts.contrast * reference(z):
            rejected.append(Candidate(z, resid, "shallow minimum: no singular-value drop against the grid"))
        else:
            eigen.append(Eigenvalue(z, mult, resid))
    eigen.sort(key=lambda e: (e.lam.real, e.lam.imag))
    result = SpectralResult(eigen, tuple(window), grid, opts.root_tol, rejected)
    if opts.eigenfunctions:
        result.eigenfunctions = [eigenfunction(spec, e.lam, opts.ivp) for e in eigen]
    return result


def _scan_real(spec, lo, hi, opts: ScanOptions) -> SpectralResult:
    lams = np.linspace(lo, hi, opts.grid)
    Bm = _boundary_batch(spec, lams, opts.ivp)
    norms = _row_norms(Bm)
    D = np.linalg.det(Bm / norms[..., None])
    theta = 0.5 * np.angle(np.sum(D ** 2))
    Dr = np.exp(-1j * theta) * D
    real_valued = np.max(np.abs(Dr.imag)) <= 1e-6 * max(np.max(np.abs(Dr)), np.finfo(float).tiny)
    candidates: list = []
    spacing = (hi - lo) / max(opts.grid - 1, 1)
    if real_valued:
        g = Dr.real
        candidates.extend((lams[k], norms[k]) for k in np.nonzero(g == 0.0)[0])
        idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
        if idx.size:
            roots = _illinois(spec, lams[idx], lams[idx + 1], norms[idx], theta, opts.ivp, opts.max_iter)
            candidates.extend(zip(roots, norms[idx]))
    # minima of |Delta| also catch roots without a sign change
    mins = _local_minima_1d(np.abs(D))
    if mins.size:
        z, _ = _secant(spec, lams[mins].astype(complex), norms[mins], opts.ivp, opts.max_iter,
                       np.full(mins.size, spacing))
        candidates.extend(zip(z, norms[mins]))
    slack = opts.dedup_rtol * max(1.0, abs(lo), abs(hi))

    def inside(z):
        return lo - slack <= z.real <= hi + slack and abs(z.imag) <= 1e-6 * max(1.0, abs(z))

    smin = _smallest_sv(Bm)

    def reference(z):
        near = np.abs(lams - z.real) <= 1.5 * spacing
        return float(np.max(smin[near])) if near.any() else np.inf

    tiny = 1e-14 * max(1.0, abs(lo), abs(hi))
    cleaned = []
    for z, nm in candidates:
        z = complex(z)
        re = 0.0 if abs(z.real) <= tiny else z.real
        im = 0.0 if abs(z.imag) <= max(tiny, 1e-6 * abs(z)) else z.imag
        cleaned.append((complex(re, im), nm))
    return _finalize(spec, cleaned, inside, reference, opts, (lo, hi), (opts.grid,))


def _scan_rect(spec, re_lo, re_hi, im_lo, im_hi, opts: ScanOptions) -> SpectralResult:
    nr, ni = opts.complex_grid
    xr = np.linspace(re_lo, re_hi, nr)
    xi = np.linspace(im_lo, im_hi, ni)
    Z = xr[None, :] + 1j * xi[:, None]
    Bm = _boundary_batch(spec, Z.ravel(), opts.ivp)
    norms = _row_norms(Bm)
    D = np.abs(np.linalg.det(Bm / norms[..., None])).reshape(Z.shape)
    mins = _local_minima_2d(D)
    scale = max((re_hi - re_lo) / max(nr - 1, 1), (im_hi - im_lo) / max(ni - 1, 1))
    flat = np.array([i * nr + j for i, j in mins], dtype=int)
    z0 = Z.ravel()[flat]
    z, _ = _secant(spec, z0, norms[flat], opts.ivp, opts.max_iter, np.full(flat.size, scale))
    slack = opts.dedup_rtol * max(1.0, abs(re_lo), abs(re_hi), abs(im_lo), abs(im_hi))

    def inside(w):
        return re_lo - slack <= w.real <= re_hi + slack and im_lo - slack <= w.imag <= im_hi + slack

    smin = _smallest_sv(Bm).reshape(Z.shape)
    dr = (re_hi - re_lo) / max(nr - 1, 1)
    di = (im_hi - im_lo) / max(ni - 1, 1)

    def reference(w):
        near = (np.abs(Z.real - w.real) <= 1.5 * dr + 1e-300) & (np.abs(Z.imag - w.imag) <= 1.5 * di + 1e-300)
        return float(np.max(smin[near])) if near.any() else np.inf

    return _finalize(spec, list(zip(z, norms[flat])), inside, reference, opts,
                     (complex(re_lo, im_lo), complex(re_hi, im_hi)), (nr, ni))


def find_eigenvalues(spec: OperatorSpec, window, opts: ScanOptions | None = None) -> SpectralResult:
    """Eigenvalues in a real interval ``(lo, hi)`` or a rectangle ``(re_lo, re_hi, im_lo, im_hi)``.

    A rectangle may also be given as two complex corners.  Roots are located
    from a grid of determinant samples and polished; there is no argument-
    principle count, so roots between grid minima that share a basin can merge.
    """
    _require_square(spec)
    opts = opts or ScanOptions()
    if len(window) == 2 and _is_real_window(window):
        lo, hi = sorted(float(np.real(w)) for w in window)
        return _scan_real(spec, lo, hi, opts)
    if len(window) == 2:
        a, b = complex(window[0]), complex(window[1])
        window = (a.real, b.real, a.imag, b.imag)
    if len(window) != 4:
        raise ValueError("window must be (lo, hi) or (re_lo, re_hi, im_lo, im_hi)")
    re_lo, re_hi, im_lo, im_hi = (float(v) for v in window)
    re_lo, re_hi = sorted((re_lo, re_hi))
    im_lo, im_hi = sorted((im_lo, im_hi))
    return _scan_rect(spec, re_lo, re_hi, im_lo, im_hi, opts)


# --- eigenfunctions -------------------------------------------------------------

def eigenfunction(spec: OperatorSpec, lam: complex, options: IvpOptions | None = None,
                  rtol: float = KERNEL_RTOL) -> VectorTrajectory:
    """Reduced-system solution along the smallest right singular vector of the boundary matrix.

    Normalized so that the sample of component 0 with the largest modulus is 1.
    """
    options = options or IvpOptions()
    d = spec.n + spec.m
    lam = complex(lam)
    system = assemble_system(spec, lam)
    ode = _linear_system(system, d, None, options)
    final, path = _ode.integrate(ode, np.eye(d), tol=options.tol, max_steps=options.max_steps, store=True)
    L0, L1 = boundary_matrix(spec).linear_form()
    Bm = L0 + L1 @ final[0]
    Bn = Bm / _row_norms(Bm)[:, None]
    _, s, Vh = np.linalg.svd(Bn)
    full = np.zeros(d)
    full[: s.size] = s
    if not np.any(full <= rtol * max(full[0], np.finfo(float).tiny)):
        raise NotAnEigenvalueError(f"lambda = {lam} is not an eigenvalue (smallest singular value {full[-1]:.3e})")
    traj = _trajectory(path, Vh[-1].conj(), system.labels)
    return traj.scaled(1.0 / _peak(traj))


def _peak(traj: VectorTrajectory) -> complex:
    xs = np.unique(np.concatenate([traj.grid, np.linspace(0.0, 1.0, 2001)]))
    v = traj.at(xs)[:, 0]
    k = int(np.argmax(np.abs(v)))
    lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, xs.size - 1)]
    best_x, best = xs[k], v[k]
    if hi > lo:
        res = minimize_scalar(lambda x: -abs(traj.at([x])[0, 0]), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        val = traj.at([res.x])[0, 0]
        if abs(val) > abs(best):
            best_x, best = res.x, val
    if best == 0:
        raise NotAnEigenvalueError("component 0 of the kernel element vanishes identically")
    return complex(best)


def pencil_residual(spec: OperatorSpec, lam: complex, y: VectorTrajectory, tests) -> float:
    """``max |<(T - lam J I) Y, Z>|`` over test trajectories, for a reduced eigenfunction ``y``."""
    Y = top_component(spec, lam, None, y)
    return max(abs(apply_T(spec, lam, Y, Z)) for Z in tests)


# --- form diagnostics -----------------------------------------------------------

@dataclass(frozen=True)
class SymmetryReport:
    sigma: float
    trials: int
    pairs: np.ndarray = field(repr=False)  # (trials, 2): <TY, KZ> and <TZ, KY>

    def render(self) -> str:
        return f"symmetry residual sigma = {self.sigma:.3e} over {self.trials} pairs"


@dataclass(frozen=True)
class SectorEstimate:
    """Smallest sector with vertex 0 containing the sampled form values."""

    half_angle: float
    center: float
    values: np.ndarray = field(repr=False)

    @property
    def vertex(self) -> complex:
        return 0j

    @property
    def max_relative_imag(self) -> float:
        v = self.values
        scale = np.maximum(np.abs(v), np.finfo(float).tiny)
        return float(np.max(np.abs(v.imag) / scale)) if v.size else 0.0

    @property
    def arg_range(self) -> tuple[float, float]:
        return self.center - self.half_angle, self.center + self.half_angle

    def render(self) -> str:
        lo, hi = self.arg_range
        return (f"sector: vertex 0, arg in [{lo:.6g}, {hi:.6g}], half-angle {self.half_angle:.3e}, "
                f"{self.values.size} samples")


def _samples(spec: OperatorSpec, count: int, seed: int):
    K = trial_to_test(spec)
    sampler = trial_space(spec)
    rng = np.random.default_rng(seed)
    return K, sampler.draw(count, rng)


def check_symmetry(spec: OperatorSpec, trials: int = 10, seed: int = 0) -> SymmetryReport:
    """Largest relative defect of ``<TY, KZ> = conj <TZ, KY>`` over random trial pairs (lam = 0)."""
    K, ys = _samples(spec, 2 * trials, seed)
    pairs = []
    sigma = 0.0
    for Y, Z in zip(ys[::2], ys[1::2]):
        a = apply_T(spec, 0.0, Y, K(Z))
        b = apply_T(spec, 0.0, Z, K(Y))
        pairs.append((a, b))
        scale = abs(a) + abs(b)
        if scale > 0:
            sigma = max(sigma, abs(a - np.conj(b)) / scale)
    return SymmetryReport(float(sigma), trials, np.array(pairs, dtype=complex))


def numerical_range_sector(spec: OperatorSpec, trials: int = 20, seed: int = 0) -> SectorEstimate:
    """Sample ``<TY, KY>`` (lam = 0) and enclose the values in the narrowest sector with vertex 0."""
    K, ys = _samples(spec, trials, seed)
    values = np.array([apply_T(spec, 0.0, Y, K(Y)) for Y in ys], dtype=complex)
    nz = values[np.abs(values) > 0]
    if nz.size == 0:
        return SectorEstimate(0.0, 0.0, values)
    ang = np.sort(np.angle(nz))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    k = int(np.argmax(gaps))
    start = ang[(k + 1) % ang.size]
    width = 2 * np.pi - gaps[k]
    center = float(np.angle(np.exp(1j * (start + 0.5 * width))))
    return SectorEstimate(float(0.5 * width), center, values)


__all__ = [
    "Candidate",
    "Eigenvalue",
    "NotAnEigenvalueError",
    "ScanOptions",
    "SectorEstimate",
    "SpectralResult",
    "SymmetryReport",
    "char_det",
    "check_symmetry",
    "eigenfunction",
    "find_eigenvalues",
    "kernel_dim",
    "numerical_range_sector",
    "pencil_residual",
]
