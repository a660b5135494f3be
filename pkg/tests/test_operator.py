import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasidiff.coeffs import CoefficientFunction
from quasidiff.operator import (
    FunctionalData,
    OperatorSpec,
    UnsupportedSpecError,
    apply_T,
    assemble_system,
    boundary_matrix,
    fredholm_index,
    numerical_rank,
    pair_functional,
    trial_space,
    trial_to_test,
    validate_spec,
)
from quasidiff.problems import fourth_order_dirichlet, second_order_dirichlet, third_order_periodic
from quasidiff.quasisystem import CoefficientSystem, VectorTrajectory

XS = np.linspace(0.01, 0.99, 57)


def values(f):
    return f.values(XS)


def beam_trajectory(y, dy, d2y):
    return VectorTrajectory.from_functions([y, dy, d2y])


def bump(x):
    return x**2 * (1 - x) ** 2


def dbump(x):
    return 2 * x * (1 - x) * (1 - 2 * x)


def d2bump(x):
    return 2 - 12 * x + 12 * x**2


# --- validation --------------------------------------------------------------------

def test_beam_valid():
    assert validate_spec(fourth_order_dirichlet()).ok


def test_unbounded_reciprocal():
    spec = fourth_order_dirichlet(p="x")
    report = validate_spec(spec)
    assert "boundedness" in report.kinds


def test_shape_mismatch():
    S = CoefficientSystem.sobolev(2)
    spec = OperatorSpec(2, 2, 2.0, S, S, np.eye(3), np.eye(4), np.zeros((4, 4)), {(2, 2): 1.0})
    assert "shape" in validate_spec(spec).kinds


def test_lambda_in_leading_coefficient_rejected():
    S = CoefficientSystem.sobolev(1)
    spec = OperatorSpec(1, 1, 2.0, S, S, np.eye(2), np.eye(2), np.zeros((2, 2)), {(1, 1): (1.0, 1.0)})
    assert "lambda" in validate_spec(spec).kinds


def test_complex_B_is_flagged():
    S = CoefficientSystem.sobolev(1)
    B = CoefficientSystem(1, {(0, 1): "1", (0, 0): CoefficientFunction.constant(1j)})
    spec = OperatorSpec(1, 1, 2.0, S, B, np.eye(2), np.eye(2), np.zeros((2, 2)), {(1, 1): 1.0})
    report = validate_spec(spec)
    assert report.ok and any("formula-literal" in n for n in report.notes)


# --- index -------------------------------------------------------------------------

def test_index_examples():
    assert fredholm_index(fourth_order_dirichlet()) == 0
    assert fredholm_index(third_order_periodic()) == 0
    spec = fourth_order_dirichlet().with_boundary(U=np.zeros((4, 4)))
    assert fredholm_index(spec) == 4


# --- weak action -------------------------------------------------------------------

def test_apply_T_bump_pair():
    spec = fourth_order_dirichlet()
    Y = beam_trajectory(bump, dbump, d2bump)
    assert apply_T(spec, 0.0, Y, Y) == pytest.approx(0.8, abs=1e-13)


def test_apply_T_zero_trial():
    spec = fourth_order_dirichlet(p="2 + x", q="sin(x)", r="x^2")
    zero = beam_trajectory(*(lambda x: np.zeros_like(x),) * 3)
    Z = beam_trajectory(bump, dbump, d2bump)
    assert apply_T(spec, 1.5, zero, Z) == 0


def test_apply_T_constant_test():
    spec = fourth_order_dirichlet()
    Y = beam_trajectory(bump, dbump, d2bump)
    Z = beam_trajectory(lambda x: np.ones_like(x), lambda x: np.zeros_like(x), lambda x: np.zeros_like(x))
    assert apply_T(spec, 0.0, Y, Z) == pytest.approx(0.0, abs=1e-15)


def test_apply_T_spectral_term():
    # p_00 = -lam: <(T - lam) Y, Y> = 0.8 - lam * int bump^2 = 0.8 - lam / 630
    spec = fourth_order_dirichlet()
    Y = beam_trajectory(bump, dbump, d2bump)
    assert apply_T(spec, 2.0, Y, Y) == pytest.approx(0.8 - 2.0 / 630, abs=1e-13)


def test_pair_functional_with_boundary_part():
    spec = second_order_dirichlet()
    Z = VectorTrajectory.from_functions([lambda x: 1 + x, lambda x: np.ones_like(x)])
    F = FunctionalData(["2", "0"], [3.0])
    # int 2 (1 + x) + 3 * conj(Z_0(0))
    assert pair_functional(spec, F, Z) == pytest.approx(3.0 + 3.0, abs=1e-13)


# --- assembled systems -------------------------------------------------------------

def test_beam_general_rows():
    p, q, r = "2 + sin(x)", "x", "cos(x)"
    system = assemble_system(fourth_order_dirichlet(p, q, r), 0.0)
    P, Qv, R = 2 + np.sin(XS), XS, np.cos(XS)
    row2 = [Qv * R / P, 2 * R - Qv**2 / P, -Qv / P, -np.ones_like(XS)]
    row3 = [-R**2 / P, Qv * R / P, R / P, np.zeros_like(XS)]
    for j in range(4):
        assert np.allclose(values(system.entry(2, j)), row2[j], rtol=0, atol=1e-14)
        assert np.allclose(values(system.entry(3, j)), row3[j], rtol=0, atol=1e-14)


def test_beam_trivial_rows_and_forcing():
    F = FunctionalData(["24", "0", "0"])
    system = assemble_system(fourth_order_dirichlet(), 0.0, F)
    C = np.array([[system.entry(i, j).values(np.array([0.3]))[0] for j in range(4)] for i in range(4)])
    assert np.array_equal(C, [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, -1], [0, 0, 0, 0]])
    assert [g.values(np.array([0.3]))[0] for g in system.g] == [0, 0, 0, -24]


def test_periodic_middle_row():
    system = assemble_system(third_order_periodic("1 + x", "x^2"), 0.0)
    P, Qv = 1 + XS, XS**2
    assert np.allclose(values(system.entry(1, 0)), -1j * Qv, atol=1e-15)
    assert np.allclose(values(system.entry(1, 1)), 1j * P, atol=1e-15)
    assert np.allclose(values(system.entry(1, 2)), -1j * np.ones_like(XS), atol=1e-15)
    assert np.allclose(values(system.entry(2, 1)), -Qv, atol=1e-15)


def test_system_text_labels():
    text = assemble_system(fourth_order_dirichlet(), None).to_text()
    lines = text.strip().splitlines()
    assert len(lines) == 4
    assert [ln.split(" = ")[0] for ln in lines] == [f"d/dx y[{i}]" for i in range(4)]
    assert "lam" in lines[3]


# --- boundary conditions -----------------------------------------------------------

def test_beam_dirichlet_conditions():
    bop = boundary_matrix(fourth_order_dirichlet())
    assert bop.null_V.shape[1] == 0
    L0, L1 = bop.linear_form()
    rows = np.hstack([L0, L1])
    assert np.linalg.matrix_rank(rows) == 4
    # the conditions only see y0 and y1 at each end
    assert np.allclose(L0[:, 2:], 0) and np.allclose(L1[:, 2:], 0)


def test_periodic_v_condition():
    bop = boundary_matrix(third_order_periodic())
    assert bop.null_V.shape[1] == 1
    L0, L1 = bop.linear_form()
    row0, row1 = L0[-1], L1[-1]
    # proportional to y2(1) - y2(0)
    scale = row1[2]
    assert abs(scale) > 0
    assert np.allclose(row1 / scale, [0, 0, 1]) and np.allclose(row0 / scale, [0, 0, -1])


def test_zero_V_gives_all_conditions():
    spec = fourth_order_dirichlet().with_boundary(V=np.zeros((4, 4)))
    assert boundary_matrix(spec).null_V.shape[1] == 4


# --- trial and test spaces ---------------------------------------------------------

def test_trial_elements_satisfy_conditions():
    spec = third_order_periodic()
    for Y in trial_space(spec).draw(3, np.random.default_rng(0)):
        v = Y.at([0.0, 1.0])
        assert np.allclose(v[0, :2], v[1, :2], atol=1e-10)


def test_trial_to_test_unsupported():
    S1, S2 = CoefficientSystem.sobolev(1), CoefficientSystem.sobolev(2)
    spec = OperatorSpec(1, 2, 2.0, S1, S2, np.eye(2), np.eye(4), np.zeros((4, 2)), {(1, 2): 1.0})
    with pytest.raises(UnsupportedSpecError):
        trial_to_test(spec)


# --- properties --------------------------------------------------------------------

@st.composite
def boundary_data(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    ru, rv = draw(st.integers(0, 4)), draw(st.integers(0, 4))
    U = np.zeros((4, 4), dtype=complex)
    U[:ru] = rng.standard_normal((ru, 4)) + 1j * rng.standard_normal((ru, 4))
    V = np.zeros((4, 4), dtype=complex)
    V[:rv] = rng.standard_normal((rv, 4))
    Q = rng.standard_normal((4, 4))
    return U[rng.permutation(4)], V[rng.permutation(4)], Q


@settings(max_examples=40)
@given(boundary_data())
def test_condition_count_and_index(data):
    U, V, Q = data
    spec = fourth_order_dirichlet().with_boundary(U, V, Q)
    count = boundary_matrix(spec).count
    assert count == numerical_rank(U) + 4 - numerical_rank(V)
    assert (spec.n + spec.m) - count == fredholm_index(spec)


@settings(max_examples=10)
@given(st.floats(-50, 50))
def test_real_data_gives_real_system(lam):
    system = assemble_system(fourth_order_dirichlet("2 + x", "sin(x)", "x^2"), lam)
    for f in system.C.values():
        assert np.max(np.abs(values(f).imag)) <= 1e-14
