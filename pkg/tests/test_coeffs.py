import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasidiff.coeffs import (
    CoefficientDomainError,
    CoefficientFunction,
    ExpressionError,
    antiderivative,
    evaluate,
    integrate,
    is_strictly_monotone_primitive,
    parse,
)

TOL = 1e-12


def cf(text, **kw):
    return CoefficientFunction.parse(text, **kw)


def inv_sqrt():
    return cf("x^(-0.5)", sing={"at": "a", "alpha": -0.5})


# --- evaluation ------------------------------------------------------------------

def test_eval_constant():
    assert evaluate(cf("1"), 0.3) == 1


def test_eval_step_convention():
    f = cf("step(x-0.5)")
    assert evaluate(f, 0.25) == 0
    assert evaluate(f, 0.75) == 1


def test_eval_singular_piece():
    assert evaluate(inv_sqrt(), 0.25) == pytest.approx(2.0, abs=1e-15)


def test_eval_at_singular_end_is_a_domain_error():
    with pytest.raises(CoefficientDomainError, match="0"):
        evaluate(inv_sqrt(), 0.0)


def test_eval_at_atom_is_a_domain_error():
    f = CoefficientFunction(cf("1").pieces, [(0.5, 1.0)])
    with pytest.raises(CoefficientDomainError, match="0.5"):
        evaluate(f, 0.5)


def test_eval_outside_interval():
    with pytest.raises(CoefficientDomainError):
        evaluate(cf("x"), 1.5)


# --- grammar ---------------------------------------------------------------------

@pytest.mark.parametrize("text, x, value", [
    ("1e-3 * x", 0.5, 5e-4),
    ("2^3", 0.0, 8.0),
    ("-x^2", 0.5, -0.25),
    ("abs(x - 0.75)", 0.5, 0.25),
    ("exp(log(2))", 0.1, 2.0),
    ("cos(pi)", 0.0, -1.0),
])
def test_grammar_values(text, x, value):
    assert evaluate(cf(text), x) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["1 +", "sin(x", "x ** 2", "foo(x)", "2x", ""])
def test_grammar_errors_carry_column(text):
    with pytest.raises(ExpressionError) as info:
        parse(text)
    assert info.value.column is not None


# --- integration -----------------------------------------------------------------

def test_integrate_singular():
    assert integrate(inv_sqrt(), 0, 1) == pytest.approx(2.0, abs=TOL)


def test_integrate_step():
    assert integrate(cf("step(x-0.5)"), 0, 1) == pytest.approx(0.5, abs=TOL)


def test_integrate_sine():
    assert integrate(cf("sin(pi*x)"), 0, 1) == pytest.approx(2 / np.pi, abs=TOL)


def test_integrate_counts_atoms_in_half_open_interval():
    f = CoefficientFunction(cf("0").pieces, [(0.5, 2.0)])
    assert integrate(f, 0.0, 0.5) == pytest.approx(2.0)
    assert integrate(f, 0.5, 1.0) == pytest.approx(0.0)


def test_integrate_rejects_reversed_limits():
    with pytest.raises(ValueError):
        integrate(cf("1"), 0.7, 0.2)


# closed forms: (expression, antiderivative on [0, 1] evaluated at 1)
CATALOG = [
    ("1", 1.0),
    ("x", 0.5),
    ("x^2", 1 / 3),
    ("x^3 - x", -0.25),
    ("exp(x)", math.e - 1),
    ("exp(-2*x)", (1 - math.exp(-2)) / 2),
    ("sin(x)", 1 - math.cos(1)),
    ("cos(x)", math.sin(1)),
    ("sin(pi*x)^2", 0.5),
    ("cos(2*pi*x)", 0.0),
    ("1/(1+x)", math.log(2)),
    ("1/(1+x^2)", math.pi / 4),
    ("log(1+x)", 2 * math.log(2) - 1),
    ("abs(x-0.3)", (0.3 ** 2 + 0.7 ** 2) / 2),
    ("step(x-0.25)*x", (1 - 0.0625) / 2),
    ("x*exp(x)", 1.0),
    ("(1+x)^0.5", (2 ** 1.5 - 1) * 2 / 3),
    ("x^0.5", 2 / 3),
    ("exp(x)*sin(x)", (math.e * (math.sin(1) - math.cos(1)) + 1) / 2),
    ("2*step(0.5-x) - 1", 0.0),
]


@pytest.mark.parametrize("text, value", CATALOG)
def test_catalog_integrals(text, value):
    f = cf(text)
    assert integrate(f, 0, 1) == pytest.approx(value, abs=1e-12)
    assert antiderivative(f)(1.0) == pytest.approx(value, abs=1e-12)


@pytest.mark.parametrize("text, x, value", [
    ("x^2", 0.3, 0.09), ("exp(x)", 0.5, math.exp(0.5)), ("1/(1+x)", 0.5, 2 / 3),
    ("abs(x-0.3)", 0.1, 0.2), ("step(x-0.25)*x", 0.2, 0.0),
])
def test_catalog_values(text, x, value):
    assert evaluate(cf(text), x) == pytest.approx(value, rel=1e-15, abs=1e-16)


# --- primitives ------------------------------------------------------------------

def test_primitive_constant():
    F = antiderivative(cf("1"))
    assert F(0.3) == pytest.approx(0.3, abs=TOL)
    assert F(1.0) == pytest.approx(1.0, abs=TOL)


def test_primitive_step():
    F = antiderivative(cf("step(x-0.5)"))
    assert F(1.0) == pytest.approx(0.5, abs=TOL)
    assert F(0.5) == pytest.approx(0.0, abs=TOL)


def test_primitive_singular():
    assert antiderivative(inv_sqrt())(0.25) == pytest.approx(1.0, abs=TOL)


# --- monotonicity ----------------------------------------------------------------

def test_monotone_constant():
    assert is_strictly_monotone_primitive(cf("1"))


def test_monotone_step_has_witness():
    check = is_strictly_monotone_primitive(cf("step(x-0.5)"))
    assert not check
    lo, hi = check.witness
    assert 0.0 <= lo < hi <= 0.5


def test_monotone_isolated_zero():
    assert is_strictly_monotone_primitive(cf("x"))


# --- properties ------------------------------------------------------------------

FAMILY = ["sin(3*x) + x", "step(x-0.4) * exp(x)", "abs(x-0.6) - 0.2", "x^2 * cos(5*x)", "1/(2-x)"]
unit = st.floats(0.0, 1.0, allow_nan=False)


@given(st.sampled_from(FAMILY), unit, unit, unit)
def test_additivity(text, a, b, c):
    a, b, c = sorted((a, b, c))
    f = cf(text)
    assert abs(integrate(f, a, c) - integrate(f, a, b) - integrate(f, b, c)) <= 2 * TOL


@given(st.sampled_from(FAMILY), unit, unit)
def test_primitive_matches_integral(text, a, b):
    a, b = sorted((a, b))
    f = cf(text)
    F = antiderivative(f)
    assert abs(F(b) - F(a) - integrate(f, a, b)) <= 2 * TOL


rationals = st.fractions(min_value=-5, max_value=5, max_denominator=20)


@given(st.sampled_from(FAMILY), st.sampled_from(FAMILY), rationals, rationals, unit, unit)
def test_linearity(t1, t2, alpha: Fraction, beta: Fraction, a, b):
    a, b = sorted((a, b))
    f, g = cf(t1), cf(t2)
    al, be = float(alpha), float(beta)
    lhs = integrate(al * f + be * g, a, b)
    rhs = al * integrate(f, a, b) + be * integrate(g, a, b)
    assert abs(lhs - rhs) <= TOL * (1 + abs(al) + abs(be))
