"""Command-line driver: ``quasidiff --config run.toml [--action A] [--out DIR]``.

A run reads one TOML file with a ``[problem]`` table and one action among
assemble, solve, spectrum and verify, and writes ``system.txt``,
``trajectory.csv``, ``spectrum.csv`` or ``report.txt`` into the output directory.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .coeffs import CoefficientFunction, ExpressionError, parse
from .operator import (
    FunctionalData,
    OperatorSpec,
    apply_T,
    assemble_system,
    dual_space,
    fredholm_index,
    pair_functional,
    top_component,
    validate_spec,
)
from .problems import (
    MeasureFunction,
    fourth_order_dirichlet,
    fourth_order_measure,
    krein_feller,
    measure_rhs,
    second_order_dirichlet,
    third_order_periodic,
)
from .quasisystem import CoefficientSystem
from .solver import IvpOptions, solve_bvp
from .spectral import ScanOptions, check_symmetry, find_eigenvalues, numerical_range_sector

ACTIONS = ("assemble", "solve", "spectrum", "verify")
FAMILIES = ("beam4", "beam4-measure", "periodic3", "schrodinger2", "krein", "raw")
WEAK_FORM_RTOL = 1e-7
SYMMETRY_TOL = 1e-8
SECTOR_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid run configuration; ``line``/``column`` locate it in the file when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


@dataclass
class RunConfig:
    problem: dict
    action: str
    params: dict
    out: Path
    text: str = ""
    source: Path | None = None
    extra: dict = field(default_factory=dict)


# --- parsing --------------------------------------------------------------------

_TOML_POS = re.compile(r"\(at line (\d+), column (\d+)\)")


def load_config(path, action: str | None = None, out=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, action, out, path)


def parse_config(text: str, action: str | None = None, out=None, source: Path | None = None) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = _TOML_POS.search(str(exc))
        msg = _TOML_POS.sub("", str(exc)).strip()
        raise ConfigError(msg, int(m.group(1)) if m else None, int(m.group(2)) if m else None) from exc
    problem = data.get("problem")
    if not isinstance(problem, dict):
        raise ConfigError("missing [problem] table", *_locate(text, "problem"))
    act = action or data.get("action")
    if act is None:
        raise ConfigError("no action given (set action = ... or pass --action)")
    if act not in ACTIONS:
        raise ConfigError(f"unknown action {act!r}; expected one of {', '.join(ACTIONS)}", *_locate(text, "action"))
    family = problem.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}",
                          *_locate(text, "family"))
    params = data.get(act, {})
    if not isinstance(params, dict):
        raise ConfigError(f"[{act}] must be a table", *_locate(text, act))
    out_dir = Path(out if out is not None else data.get("out", "."))
    if source is not None and not out_dir.is_absolute() and out is None:
        out_dir = source.parent / out_dir
    return RunConfig(problem, act, params, out_dir, text, source)


def _locate(text: str, key: str, offset: int | None = None) -> tuple[int | None, int | None]:
    """Line and column of ``key = ...`` (or of a ``[key]`` header) in the config text."""
    pat = re.compile(rf'(^|[{{,\s])"?{re.escape(key)}"?\s*=\s*')
    for n, line in enumerate(text.splitlines(), start=1):
        if line.strip() == f"[{key}]":
            return n, line.index("[") + 1
        m = pat.search(line)
        if m:
            col = m.end() + 1
            if offset is not None and col - 1 < len(line) and line[col - 1] in "\"'":
                col += offset
            return n, col
    return None, None


class _Reader:
    """Typed accessors that attach file positions to errors."""

    def __init__(self, cfg: RunConfig):
        self.text = cfg.text

    def error(self, key: str, message: str, column: int | None = None) -> ConfigError:
        line, col = _locate(self.text, key, column)
        return ConfigError(f"{key}: {message}", line, col)

    def function(self, table: dict, key: str, default="0") -> CoefficientFunction:
        v = table.get(key, default)
        try:
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                return CoefficientFunction.constant(float(v))
            if isinstance(v, list) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
                return CoefficientFunction.constant(complex(v[0], v[1]))
            if isinstance(v, str):
                return CoefficientFunction.parse(v)
        except ExpressionError as exc:
            raise self.error(key, str(exc), exc.column) from exc
        raise self.error(key, f"expected an expression string or a number, got {v!r}")

    def number(self, table: dict, key: str, default=None) -> complex:
        v = table.get(key, default)
        if v is None:
            raise self.error(key, "missing value")
        if isinstance(v, bool):
            raise self.error(key, "expected a number")
        if isinstance(v, (int, float)):
            return complex(v)
        if isinstance(v, list) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
            return complex(v[0], v[1])
        if isinstance(v, str):
            try:
                e = parse(v)
            except ExpressionError as exc:
                raise self.error(key, str(exc), exc.column) from exc
            if e.depends_on("x") or e.depends_on("lam"):
                raise self.error(key, "a constant is required here")
            return complex(np.asarray(e.evaluate(np.zeros(1), None)).ravel()[0])
        raise self.error(key, f"expected a number, [re, im] or a constant expression, got {v!r}")

    def matrix(self, table: dict, key: str, shape: tuple[int, int]) -> np.ndarray:
        v = table.get(key)
        if v is None:
            raise self.error(key, "missing matrix")
        if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
            raise self.error(key, "expected a list of rows")
        rows = [[self.number({key: e}, key) for e in r] for r in v]
        M = np.zeros(shape, dtype=complex)
        if len(rows) > shape[0] or any(len(r) != shape[1] for r in rows):
            raise self.error(key, f"expected at most {shape[0]} rows of length {shape[1]}")
        for i, r in enumerate(rows):
            M[i] = r
        return M

    def index_table(self, table: dict, key: str) -> dict:
        v = table.get(key, {})
        if not isinstance(v, dict):
            raise self.error(key, 'expected a table like { "0,1" = "1" }')
        out = {}
        for k, val in v.items():
            try:
                i, j = (int(t) for t in k.split(","))
            except ValueError as exc:
                raise self.error(k, f"bad index pair {k!r}") from exc
            out[(i, j)] = val
        return out


def _h_argument(reader: _Reader, problem: dict, key: str = "H"):
    v = problem.get(key, "x")
    if isinstance(v, dict):
        try:
            xs, ys = np.asarray(v["x"], dtype=float), np.asarray(v["y"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise reader.error(key, "a table needs numeric arrays x and y") from exc
        return xs, ys
    return reader.function(problem, key, "x")


def build_problem(cfg: RunConfig):
    """The OperatorSpec (or Krein-Feller solver) described by the [problem] table."""
    reader = _Reader(cfg)
    pb = cfg.problem
    family = pb["family"]
    try:
        if family == "beam4":
            return fourth_order_dirichlet(reader.function(pb, "p", "1"), reader.function(pb, "q"),
                                          reader.function(pb, "r"))
        if family == "beam4-measure":
            return fourth_order_measure(_h_argument(reader, pb), reader.function(pb, "q"),
                                        reader.function(pb, "r"))
        if family == "periodic3":
            return third_order_periodic(reader.function(pb, "p"), reader.function(pb, "q"))
        if family == "schrodinger2":
            return second_order_dirichlet(reader.function(pb, "q"))
        if family == "krein":
            atoms = pb.get("atoms", [])
            if not isinstance(atoms, list) or not all(isinstance(a, list) and len(a) == 2 for a in atoms):
                raise reader.error("atoms", "expected a list of [location, weight] pairs")
            N = MeasureFunction(reader.function(pb, "density"), tuple((a[0], a[1]) for a in atoms))
            return krein_feller(_h_argument(reader, pb), N)
        return _raw_spec(reader, pb)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"problem: {exc}") from exc


def _raw_spec(reader: _Reader, pb: dict) -> OperatorSpec:
    try:
        n, m, s = int(pb["n"]), int(pb["m"]), float(pb.get("s", 2.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise reader.error("n", "raw problems need integers n, m and a number s") from exc

    def system(key, size):
        entries = reader.index_table(pb, key)
        if not entries:
            return CoefficientSystem.sobolev(size)
        return CoefficientSystem(size, {k: reader.function({key: v}, key) for k, v in entries.items()})

    A, B = system("A", n), system("B", m)
    p = {}
    for (i, j), v in reader.index_table(pb, "p").items():
        if isinstance(v, list) and len(v) == 2 and all(isinstance(t, str) for t in v):
            p[(i, j)] = (reader.function({"p": v[0]}, "p"), reader.function({"p": v[1]}, "p"))
        else:
            p[(i, j)] = reader.function({"p": v}, "p")
    U = reader.matrix(pb, "U", (2 * n, 2 * n))
    V = reader.matrix(pb, "V", (2 * m, 2 * m))
    Q = reader.matrix(pb, "Q", (2 * m, 2 * n)) if "Q" in pb else np.zeros((2 * m, 2 * n))
    return OperatorSpec(n, m, s, A, B, U, V, Q, p, metadata={"family": "raw"})


def _functional(reader: _Reader, spec: OperatorSpec, params: dict, default=None) -> FunctionalData:
    m = spec.m
    if "f" not in params and default is None:
        return FunctionalData.zero(m)
    v = params.get("f", default)
    mu = None
    if "mu" in params:
        mu = [reader.number({"mu": t}, "mu") for t in params["mu"]]
    if spec.metadata.get("family") == "beam4-measure":
        F = measure_rhs(spec, reader.function({"f": v}, "f"))
        return FunctionalData(F.components, mu)
    if isinstance(v, list) and not (len(v) == 2 and all(isinstance(t, (int, float)) for t in v)):
        if len(v) != m + 1:
            raise reader.error("f", f"expected {m + 1} components")
        comps = [reader.function({"f": t}, "f") for t in v]
    else:
        comps = [reader.function({"f": v}, "f")] + [CoefficientFunction.zero()] * m
    return FunctionalData(comps, mu)


# --- actions --------------------------------------------------------------------

def _ivp(reader: _Reader, params: dict) -> IvpOptions:
    return IvpOptions(tol=float(params.get("tol", IvpOptions().tol)))


def _check_spec(spec: OperatorSpec) -> None:
    report = validate_spec(spec)
    if not report.ok:
        raise ConfigError("the operator data failed validation:\n" + report.render())


def action_assemble(cfg: RunConfig, problem) -> int:
    out = cfg.out / "system.txt"
    if isinstance(problem, OperatorSpec):
        _check_spec(problem)
        lam = cfg.params.get("lambda")
        lam = None if lam is None else _Reader(cfg).number(cfg.params, "lambda")
        text = assemble_system(problem, lam).to_text()
    else:
        text = ("d/dx u = 1 * u'\n"
                f"d/dx u' = -lam * ({problem.N.density}) * u"
                + "".join(f"\njump at x = {a!r}: u' -> u' - lam * {w!r} * u" for a, w in problem.N.atoms) + "\n")
    out.write_text(text, encoding="utf-8")
    return 0


def action_solve(cfg: RunConfig, problem) -> int:
    if not isinstance(problem, OperatorSpec):
        raise ConfigError("solve is not available for the krein family (use spectrum)")
    _check_spec(problem)
    reader = _Reader(cfg)
    lam = reader.number(cfg.params, "lambda", 0.0)
    F = _functional(reader, problem, cfg.params)
    sol = solve_bvp(problem, lam, F, _ivp(reader, cfg.params))
    samples = int(cfg.params.get("samples", 101))
    traj = sol.trajectory.resampled(np.union1d(np.linspace(0.0, 1.0, samples), sol.trajectory.grid)
                                    if cfg.params.get("include_steps", False) else np.linspace(0.0, 1.0, samples))
    traj.to_csv(cfg.out / "trajectory.csv")
    lines = ["solvable,kernel_dim,defect_dim,residual", sol.summary_line()]
    if sol.conditioning:
        lines.append(f"# {sol.conditioning}")
    (cfg.out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0 if sol.solvable else 1


def _window(reader: _Reader, params: dict):
    if "window" not in params:
        return None
    w = params["window"]
    if not isinstance(w, list) or len(w) not in (2, 4):
        raise reader.error("window", "expected [lo, hi] or [re_lo, re_hi, im_lo, im_hi]")
    return tuple(float(reader.number({"window": t}, "window").real) for t in w)


def action_spectrum(cfg: RunConfig, problem) -> int:
    reader = _Reader(cfg)
    window = _window(reader, cfg.params)
    if not isinstance(problem, OperatorSpec):
        lams = problem.eigenvalues(None if window is None else window[:2])
        vals = np.abs(problem.characteristic(lams)) if lams.size else np.zeros(0)
        lines = ["re(lambda),im(lambda),multiplicity,residual"]
        lines += [f"{lam!r},{0.0!r},1,{float(r)!r}" for lam, r in zip(lams.tolist(), vals)]
        (cfg.out / "spectrum.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return 0
    _check_spec(problem)
    if window is None:
        raise reader.error("spectrum", "a window is required")
    opts = ScanOptions(grid=int(cfg.params.get("grid", 400)),
                       complex_grid=tuple(int(t) for t in cfg.params.get("complex_grid", (41, 11))),
                       ivp=_ivp(reader, cfg.params),
                       eigenfunctions=bool(cfg.params.get("eigenfunctions", False)))
    result = find_eigenvalues(problem, window, opts)
    (cfg.out / "spectrum.csv").write_text(result.to_csv(), encoding="utf-8")
    if result.eigenfunctions:
        xs = np.linspace(0.0, 1.0, int(cfg.params.get("samples", 101)))
        for k, y in enumerate(result.eigenfunctions):
            y.resampled(xs).to_csv(cfg.out / f"eigenfunction_{k}.csv")
    if result.rejected:
        lines = [f"rejected {c.lam!r}: {c.reason} (|det| = {c.residual:.3e})" for c in result.rejected]
        (cfg.out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


@dataclass
class Check:
    name: str
    status: str  # PASS, FAIL or INFO
    detail: str

    def line(self) -> str:
        return f"{self.status} {self.name}: {self.detail}"


def verify_spec(spec: OperatorSpec, lam: complex, F: FunctionalData, tests: int, trials: int, seed: int,
                expect_symmetric: bool | None, options: IvpOptions | None = None) -> list[Check]:
    """Validation, index identity, weak-form consistency and symmetry checks for one spec."""
    checks = []
    report = validate_spec(spec)
    checks.append(Check("validation", "PASS" if report.ok else "FAIL",
                        "no issues" if report.ok else report.render().replace("\n", "; ")))
    if not report.ok:
        return checks
    sol = solve_bvp(spec, lam, F, options)
    index = fredholm_index(spec)
    diff = sol.kernel_dim - sol.defect_dim
    checks.append(Check("index identity", "PASS" if diff == index else "FAIL",
                        f"kernel_dim - defect_dim = {sol.kernel_dim} - {sol.defect_dim} = {diff}, "
                        f"n - m - rank U + rank V = {index}"))
    if not sol.solvable:
        checks.append(Check("weak form", "FAIL", f"no solution at lambda = {lam} (residual {sol.residual:.3e})"))
    else:
        Y = top_component(spec, lam, F, sol.trajectory)
        Zs = dual_space(spec).draw(tests, np.random.default_rng(seed))
        bound = WEAK_FORM_RTOL * (1.0 + F.norm())
        worst = max(abs(apply_T(spec, lam, Y, Z) - pair_functional(spec, F, Z)) for Z in Zs)
        checks.append(Check("weak form", "PASS" if worst < bound else "FAIL",
                            f"max |<TY,Z> - <F,Z>| = {worst:.3e} over {tests} tests (bound {bound:.3e})"))
    sym = check_symmetry(spec, trials, seed)
    if expect_symmetric is None:
        checks.append(Check("symmetry", "INFO", f"sigma = {sym.sigma:.3e}"))
    elif expect_symmetric:
        checks.append(Check("symmetry", "PASS" if sym.sigma < SYMMETRY_TOL else "FAIL",
                            f"sigma = {sym.sigma:.3e} (bound {SYMMETRY_TOL:.0e})"))
    else:
        checks.append(Check("symmetry", "PASS" if sym.sigma > 0.1 else "FAIL",
                            f"sigma = {sym.sigma:.3e} (expected above 0.1)"))
    return checks


def action_verify(cfg: RunConfig, problem) -> int:
    reader = _Reader(cfg)
    p = cfg.params
    seed = int(p.get("seed", 0))
    trials = int(p.get("trials", 10))
    if isinstance(problem, OperatorSpec):
        lam = reader.number(p, "lambda", 0.5)
        F = _functional(reader, problem, p, default="1 + x^2")
        expect = p.get("expect_symmetric")
        checks = verify_spec(problem, lam, F, int(p.get("tests", 20)), trials, seed,
                             None if expect is None else bool(expect), _ivp(reader, p))
    else:
        sector = numerical_range_sector(problem.form_spec(), trials, seed)
        ok = sector.max_relative_imag < SECTOR_TOL and bool(np.all(sector.values.real >= 0))
        checks = [Check("positivity", "PASS" if ok else "FAIL", sector.render())]
        lams = problem.eigenvalues()
        checks.append(Check("spectrum sign", "PASS" if np.all(lams > 0) else "FAIL",
                            f"{lams.size} eigenvalues, smallest {float(lams.min()) if lams.size else float('nan')!r}"))
    text = "\n".join(c.line() for c in checks) + "\n"
    (cfg.out / "report.txt").write_text(text, encoding="utf-8")
    return 0 if all(c.status != "FAIL" for c in checks) else 1


_ACTIONS = {"assemble": action_assemble, "solve": action_solve, "spectrum": action_spectrum,
            "verify": action_verify}


def run(cfg: RunConfig) -> int:
    """Execute one configured action; returns the exit status."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    return _ACTIONS[cfg.action](cfg, problem)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quasidiff", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--action", choices=ACTIONS, help="override the action in the config")
    parser.add_argument("--out", help="output directory (default: config 'out' or the config's folder)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.action, args.out)
        return run(cfg)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical failures: report the originating module
        print(f"{type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
