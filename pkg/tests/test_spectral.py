import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import clamped_beam_eigenvalues, clamped_beam_mode, periodic_fourier_eigenvalues

from quasidiff.operator import dual_space
from quasidiff.problems import (
    fourth_order_dirichlet,
    krein_feller,
    MeasureFunction,
    second_order_dirichlet,
    third_order_periodic,
)
from quasidiff.spectral import (
    ROOT_TOL,
    NotAnEigenvalueError,
    ScanOptions,
    char_det,
    check_symmetry,
    eigenfunction,
    find_eigenvalues,
    kernel_dim,
    numerical_range_sector,
    pencil_residual,
)

BEAM = clamped_beam_eigenvalues(3)
XS = np.linspace(0, 1, 401)


@pytest.fixture(scope="module")
def beam_scan():
    return find_eigenvalues(fourth_order_dirichlet(), (1.0, 20000.0))


@pytest.fixture(scope="module")
def periodic_scan():
    return find_eigenvalues(third_order_periodic(), (-300.0, 300.0))


# --- characteristic determinant ----------------------------------------------------

def test_beam_determinant_nonzero_at_zero():
    assert abs(char_det(fourth_order_dirichlet(), 0.0)) > 1e-3


def test_beam_determinant_vanishes_at_root():
    assert abs(char_det(fourth_order_dirichlet(), BEAM[0])) < ROOT_TOL


def test_periodic_determinant_vanishes_at_zero():
    assert abs(char_det(third_order_periodic(), 0.0)) < ROOT_TOL


def test_vectorized_determinant():
    d = char_det(second_order_dirichlet(), np.array([np.pi**2, 5.0]))
    assert d.shape == (2,) and abs(d[0]) < ROOT_TOL < abs(d[1])


def test_krein_embedding_refused():
    problem = krein_feller("x", MeasureFunction(atoms=((0.5, 1.0),)))
    with pytest.raises(ValueError):
        char_det(problem.form_spec(), 1.0)


# --- eigenvalue scans --------------------------------------------------------------

def test_beam_eigenvalues(beam_scan):
    lams = beam_scan.values
    assert lams.size == 3
    assert np.allclose(lams.real, BEAM, rtol=1e-6, atol=0) and np.all(lams.imag == 0)
    assert all(e.multiplicity == 1 for e in beam_scan.eigenvalues)


def test_periodic_eigenvalues(periodic_scan):
    expected = periodic_fourier_eigenvalues((-300.0, 300.0))
    assert np.allclose(periodic_scan.values.real, expected, rtol=1e-6, atol=1e-8)
    assert kernel_dim(third_order_periodic(), 0.0) == 1


def test_dirichlet_eigenvalues():
    # 9 pi^2 = 88.83 also lies in the window
    lams = find_eigenvalues(second_order_dirichlet(), (1.0, 100.0)).values
    assert np.allclose(lams.real, np.pi**2 * np.array([1, 4, 9]), rtol=1e-9)


def test_csv_layout(periodic_scan):
    lines = periodic_scan.to_csv().splitlines()
    assert lines[0] == "re(lambda),im(lambda),multiplicity,residual"
    assert len(lines) == 4 and lines[2].startswith("0.0,0.0,1,")


def test_complex_corners_window():
    spec = second_order_dirichlet()
    lams = find_eigenvalues(spec, (5 - 5j, 45 + 5j)).values
    assert np.allclose(lams, [np.pi**2, 4 * np.pi**2], rtol=1e-8)


# --- eigenfunctions ----------------------------------------------------------------

def test_first_beam_mode_has_no_sign_change():
    mode = eigenfunction(fourth_order_dirichlet(), BEAM[0]).at(XS)[:, 0]
    assert np.max(np.abs(mode.imag)) < 1e-8
    assert np.all(mode.real > -1e-9) and np.max(mode.real) == pytest.approx(1.0, abs=1e-9)
    oracle = clamped_beam_mode(BEAM[0] ** 0.25, XS)
    oracle = oracle / oracle[np.argmax(np.abs(oracle))]
    assert np.max(np.abs(mode.real - oracle)) < 1e-6


def test_dirichlet_mode_is_sine():
    mode = eigenfunction(second_order_dirichlet(), np.pi**2).at(XS)[:, 0]
    assert np.max(np.abs(mode - np.sin(np.pi * XS))) < 1e-7


def test_periodic_mode_at_zero_is_constant():
    mode = eigenfunction(third_order_periodic(), 0.0).at(XS)[:, 0]
    assert np.max(np.abs(mode - 1.0)) < 1e-9


def test_not_an_eigenvalue():
    with pytest.raises(NotAnEigenvalueError):
        eigenfunction(second_order_dirichlet(), 5.0)


# --- form diagnostics --------------------------------------------------------------

def test_symmetry_of_real_periodic_form():
    assert check_symmetry(third_order_periodic("step(x - 0.5)")).sigma < 1e-8


def test_symmetry_of_real_beam_form():
    assert check_symmetry(fourth_order_dirichlet("2 + x", "sin(x)", "x^2")).sigma < 1e-8


def test_imaginary_potential_breaks_symmetry():
    assert check_symmetry(third_order_periodic(0.0, "i*x")).sigma > 0.1


def test_sector_positive_axis():
    for spec in (second_order_dirichlet(), fourth_order_dirichlet()):
        sector = numerical_range_sector(spec)
        assert sector.max_relative_imag < 1e-9 and np.all(sector.values.real > 0)


def test_sector_report_for_step_r():
    sector = numerical_range_sector(fourth_order_dirichlet(1.0, 0.0, "10*step(x - 0.5)"))
    assert sector.half_angle >= 0 and "half-angle" in sector.render()


# --- properties --------------------------------------------------------------------

def test_reported_eigenvalues_are_pencil_roots(beam_scan):
    spec = fourth_order_dirichlet()
    tests = dual_space(spec).draw(10, np.random.default_rng(0))
    for e in beam_scan.eigenvalues:
        assert kernel_dim(spec, e.lam) >= 1
        assert pencil_residual(spec, e.lam, eigenfunction(spec, e.lam), tests) < 1e-6


@pytest.mark.parametrize("spec, window", [
    (fourth_order_dirichlet(), (1.0, 20000.0)),
    (third_order_periodic(), (-300.0, 300.0)),
    (second_order_dirichlet("step(x - 0.5)"), (1.0, 100.0)),
])
def test_grid_halving_stable(spec, window):
    coarse = find_eigenvalues(spec, window, ScanOptions(grid=400)).values
    fine = find_eigenvalues(spec, window, ScanOptions(grid=800)).values
    assert coarse.size == fine.size
    assert np.allclose(coarse, fine, rtol=1e-8, atol=1e-8)


@settings(max_examples=5)
@given(st.lists(st.floats(0.1, 10) | st.floats(-10, -0.1), min_size=4, max_size=4))
def test_boundary_row_scaling_invariance(scales):
    base = third_order_periodic()
    scaled = base.with_boundary(U=np.diag(scales) @ base.U)
    a = find_eigenvalues(base, (-300.0, 300.0)).values
    b = find_eigenvalues(scaled, (-300.0, 300.0)).values
    assert a.size == b.size and np.allclose(a, b, rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("spec, window", [
    (fourth_order_dirichlet("2 + x", "sin(x)", "x^2"), (1.0, 3000.0, -50.0, 50.0)),
    (third_order_periodic("1 + x", "x"), (-300.0, 300.0, -50.0, 50.0)),
])
def test_symmetric_forms_have_real_spectrum(spec, window):
    assert check_symmetry(spec).sigma < 1e-8
    lams = find_eigenvalues(spec, window).values
    assert lams.size > 0 and np.max(np.abs(lams.imag)) < 1e-6
