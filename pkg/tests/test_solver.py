import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasidiff.coeffs import CoefficientFunction
from quasidiff.operator import (
    FirstOrderSystem,
    FunctionalData,
    apply_T,
    assemble_system,
    dual_space,
    fredholm_index,
    numerical_rank,
    pair_functional,
    top_component,
)
from quasidiff.problems import fourth_order_dirichlet, second_order_dirichlet, third_order_periodic
from quasidiff.solver import IvpOptions, integrate_ivp, solve_bvp

FINE = np.linspace(0, 1, 201)


def scalar_system(c, g="0"):
    return FirstOrderSystem(1, {(0, 0): CoefficientFunction.from_expr(c)},
                            [CoefficientFunction.from_expr(g)], ("y",))


# --- integrate_ivp -----------------------------------------------------------------

def test_exponential():
    traj = integrate_ivp(scalar_system("1"), [1.0])
    assert traj.at([1.0])[0, 0] == pytest.approx(np.e, abs=1e-10)


def test_step_forcing():
    traj = integrate_ivp(scalar_system("0", "step(x - 0.5)"), [0.0])
    assert traj.at([1.0])[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert traj.at([0.25])[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_beam_forcing_row():
    system = assemble_system(fourth_order_dirichlet(), 0.0, FunctionalData(["24", "0", "0"]))
    traj = integrate_ivp(system, np.zeros(4))
    assert traj.at([1.0])[0, 3] == pytest.approx(-24.0, abs=1e-10)


def test_partial_span_returns_state():
    state = integrate_ivp(scalar_system("1"), [1.0], x_start=0.0, x_end=0.5)
    assert state[0] == pytest.approx(np.exp(0.5), abs=1e-10)


def test_nonpositive_tolerance_rejected():
    with pytest.raises(ValueError):
        IvpOptions(tol=0.0)


# --- solve_bvp ---------------------------------------------------------------------

def test_forced_beam():
    sol = solve_bvp(fourth_order_dirichlet(), 0.0, FunctionalData(["24", "0", "0"]))
    assert sol.kernel_dim == 0 and sol.defect_dim == 0 and sol.solvable
    assert sol.trajectory.at([0.5])[0, 0] == pytest.approx(0.0625, abs=1e-12)


def test_second_order_dirichlet():
    sol = solve_bvp(second_order_dirichlet(), 0.0, FunctionalData(["1", "0"]))
    assert sol.trajectory.at([0.5])[0, 0] == pytest.approx(0.125, abs=1e-12)


def test_periodic_fredholm_data():
    sol = solve_bvp(third_order_periodic(), 0.0, FunctionalData(["cos(2*pi*x)", "0"]))
    assert sol.solvable and sol.kernel_dim == 1 and sol.defect_dim == 1


def test_periodic_nonzero_mean_not_solvable():
    sol = solve_bvp(third_order_periodic(), 0.0, FunctionalData(["1", "0"]))
    assert not sol.solvable


def test_summary_line():
    sol = solve_bvp(fourth_order_dirichlet(), 0.0, FunctionalData(["24", "0", "0"]))
    fields = sol.summary_line().split(",")
    assert fields[:3] == ["true", "0", "0"] and float(fields[3]) < 1e-8


def test_weak_form_of_beam_solution():
    spec = fourth_order_dirichlet("2 + x", "sin(x)", "x^2")
    F = FunctionalData(["1 + x^2", "0", "0"])
    sol = solve_bvp(spec, 0.5, F)
    Y = top_component(spec, 0.5, F, sol.trajectory)
    for Z in dual_space(spec).draw(5, np.random.default_rng(3)):
        assert abs(apply_T(spec, 0.5, Y, Z) - pair_functional(spec, F, Z)) < 1e-7 * (1 + F.norm())


# --- properties --------------------------------------------------------------------

@settings(max_examples=8)
@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_linearity(alpha):
    spec = fourth_order_dirichlet("1 + x", "x", "cos(x)")
    F = FunctionalData(["exp(x)", "0", "0"])
    base = solve_bvp(spec, 1.0, F).trajectory.at(FINE)
    scaled = solve_bvp(spec, 1.0, F.scaled(alpha)).trajectory.at(FINE)
    assert np.max(np.abs(scaled - alpha * base)) <= 1e-9 * max(1.0, abs(alpha))


def test_residual_against_finer_integration():
    spec = fourth_order_dirichlet("2 + sin(3*x)", "step(x - 0.5)", "x")
    F = FunctionalData(["1 + x", "0", "0"])
    sol = solve_bvp(spec, 2.0, F)
    y0 = sol.trajectory.at([0.0])[0]
    options = IvpOptions(tol=IvpOptions().tol / 2)
    again = integrate_ivp(assemble_system(spec, 2.0, F), y0, options)
    assert np.max(np.abs(again.at(FINE) - sol.trajectory.at(FINE))) < 1e-8


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_index_identity(seed):
    rng = np.random.default_rng(seed)
    ru, rv = rng.integers(0, 5, size=2)
    U = np.zeros((4, 4))
    U[:ru] = rng.standard_normal((ru, 4))
    V = np.zeros((4, 4))
    V[:rv] = rng.standard_normal((rv, 4))
    spec = fourth_order_dirichlet().with_boundary(U[rng.permutation(4)], V[rng.permutation(4)],
                                                 rng.standard_normal((4, 4)))
    sol = solve_bvp(spec, 0.0)
    assert sol.kernel_dim - sol.defect_dim == fredholm_index(spec)
    assert fredholm_index(spec) == numerical_rank(V) - numerical_rank(U)
