import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasidiff.coeffs import CoefficientFunction
from quasidiff.quasisystem import (
    CoefficientSystem,
    ConditioningError,
    FundamentalMatrix,
    VectorTrajectory,
    boundary_trace,
    forward_solution,
    fundamental_matrix,
    invert_fundamental,
    reconstruct,
    validate_system,
)

XS = np.linspace(0.0, 1.0, 201)


# --- validation --------------------------------------------------------------------

def test_sobolev_is_valid():
    assert validate_system(CoefficientSystem.sobolev(3)).ok


def test_shape_violation():
    A = CoefficientSystem(2, {(0, 1): "1", (1, 2): "1", (0, 2): "1"})
    report = validate_system(A)
    assert "shape" in report.kinds
    assert any(i.where == (0, 2) for i in report.issues)


def test_monotonicity_violation():
    A = CoefficientSystem(1, {(0, 1): "step(x-0.5)"})
    report = validate_system(A)
    assert "monotonicity" in report.kinds
    assert any(i.where == (0, 1) for i in report.issues)


def test_atoms_rejected():
    f = CoefficientFunction(CoefficientFunction.constant(1.0).pieces, [(0.5, 1.0)])
    assert "atoms" in validate_system(CoefficientSystem(1, {(0, 1): "1", (0, 0): f})).kinds


# --- fundamental matrices ----------------------------------------------------------

def test_fundamental_trivial():
    M = fundamental_matrix(CoefficientSystem(1, {(0, 1): "1"}))
    assert np.allclose(M.at(XS)[:, 0, 0], 1.0, atol=0)


def test_fundamental_sobolev_two():
    M = fundamental_matrix(CoefficientSystem.sobolev(2))
    assert np.allclose(M.at([1.0])[0], [[1, 1], [0, 1]], atol=1e-14)
    assert np.allclose(M.at([0.0])[0], np.eye(2), atol=0)


def test_fundamental_exponential():
    M = fundamental_matrix(CoefficientSystem(1, {(0, 0): "1", (0, 1): "1"}))
    assert M.at([1.0])[0, 0, 0] == pytest.approx(np.e, rel=1e-10)


def test_inverse_examples():
    M = fundamental_matrix(CoefficientSystem.sobolev(2))
    Minv = invert_fundamental(M)
    assert np.allclose(Minv.at([1.0])[0], [[1, -1], [0, 1]], atol=1e-14)
    E = fundamental_matrix(CoefficientSystem(1, {(0, 0): "1", (0, 1): "1"}))
    assert invert_fundamental(E).at([1.0])[0, 0, 0] == pytest.approx(np.exp(-1), rel=1e-10)


def test_inverse_of_identity_samples():
    grid = np.linspace(0, 1, 5)
    I = FundamentalMatrix(2, grid, np.broadcast_to(np.eye(2, dtype=complex), (5, 2, 2)).copy())
    assert np.array_equal(invert_fundamental(I).values, I.values)


def test_conditioning_error():
    A = CoefficientSystem(2, {(0, 0): "40", (1, 1): "-40", (0, 1): "1", (1, 2): "1"})
    with pytest.raises(ConditioningError):
        fundamental_matrix(A)


# --- reconstruction ----------------------------------------------------------------

@pytest.mark.parametrize("A, init, Yn, expected", [
    (CoefficientSystem.sobolev(1), [0], "2*x", 1.0),
    (CoefficientSystem.sobolev(2), [0, 0], "1", 0.5),
    (CoefficientSystem(1, {(0, 0): "1", (0, 1): "1"}), [0], "1", np.e - 1),
])
def test_reconstruct_examples(A, init, Yn, expected):
    Y = reconstruct(A, init, Yn)
    assert Y.at([1.0])[0, 0] == pytest.approx(expected, abs=1e-10)


def test_reconstruct_top_component_is_input():
    Y = reconstruct(CoefficientSystem.sobolev(2), [0, 0], "cos(x)")
    assert np.allclose(Y.at(XS)[:, 2], np.cos(XS), atol=1e-15)


# --- boundary traces ---------------------------------------------------------------

def test_trace_linear():
    Y = VectorTrajectory.from_functions([lambda x: x, lambda x: np.ones_like(x)])
    assert np.allclose(boundary_trace(Y, 2), [0, 1, 1, 1])


def test_trace_zero():
    Y = VectorTrajectory.from_functions([lambda x: np.zeros_like(x)])
    assert np.allclose(boundary_trace(Y, 1), [0, 0])


def test_trace_clamped_polynomial():
    Y = VectorTrajectory.from_functions([lambda x: x**2 * (1 - x) ** 2, lambda x: 2 * x * (1 - x) * (1 - 2 * x)])
    assert np.allclose(boundary_trace(Y, 2), 0, atol=0)


def test_csv_header_and_rows():
    Y = VectorTrajectory.from_functions([lambda x: x, lambda x: 1j * x], grid=np.array([0.0, 0.5, 1.0]))
    lines = Y.to_csv().splitlines()
    assert lines[0] == "x,re(y0),im(y0),re(y1),im(y1)"
    assert lines[2] == "0.5,0.5,0.0,0.0,0.5"


# --- properties --------------------------------------------------------------------

SMOOTH = ["0.3*x", "cos(2*x)", "-0.5 + x^2", "sin(3*x)", "0.2", "exp(-x)", "0"]
POSITIVE = ["1", "1 + x", "2 + sin(x)", "exp(x)", "1.5 - x^2"]


@st.composite
def systems(draw, max_n=4):
    n = draw(st.integers(1, max_n))
    entries = {}
    for i in range(n):
        entries[(i, i + 1)] = draw(st.sampled_from(POSITIVE))
        for j in range(i + 1):
            entries[(i, j)] = draw(st.sampled_from(SMOOTH))
    init = draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n))
    top = draw(st.sampled_from(["sin(2*x) + 1", "x^3 - x", "exp(x)", "step(x-0.3)", "1"]))
    return CoefficientSystem(n, entries), np.array(init), top


@settings(max_examples=15)
@given(systems())
def test_roundtrip_forward_vs_reconstruct(data):
    A, init, top = data
    R = reconstruct(A, init, top)
    F = forward_solution(A, init, top)
    assert np.max(np.abs(R.at(XS) - F.at(XS))) < 1e-8
    trace = boundary_trace(R, A.n)
    assert np.array_equal(trace[: A.n], init.astype(complex))


@settings(max_examples=15)
@given(systems())
def test_matrix_times_inverse(data):
    A, _, _ = data
    M = fundamental_matrix(A)
    Minv = invert_fundamental(M)
    assert np.max(np.abs(M.values @ Minv.values - np.eye(A.n))) < 1e-10


@settings(max_examples=10)
@given(systems(), st.floats(0.1, 0.9))
def test_cocycle(data, b):
    A, init, top = data
    F = forward_solution(A, init, top)
    restart = F.at([b])[0, : A.n]
    from quasidiff import _ode
    from quasidiff.quasisystem import _truncated_ode

    ode = _truncated_ode(A)
    G = {(A.n - 1, 0): A[A.n - 1, A.n] * CoefficientFunction.parse(top)}
    ode = _ode.LinearSystem(A.n, ode.C, G, 1)
    end, _ = _ode.integrate(ode, restart.reshape(-1, 1), x_start=b, x_end=1.0)
    assert np.max(np.abs(end[0, :, 0] - F.at([1.0])[0, : A.n])) < 1e-9
