import numpy as np
import pytest

from quasidiff import _ode
from quasidiff.coeffs import LAMBDA, CoefficientFunction


def cf(text, **kw):
    return CoefficientFunction.parse(text, **kw)


def scalar(c, g=None, **kw):
    G = {} if g is None else {(0, 0): g}
    return _ode.LinearSystem(1, {(0, 0): c} if c is not None else {}, G, **kw)


@pytest.mark.parametrize("method", [_ode.DOPRI5, _ode.DOP853])
def test_exponential(method):
    y, _ = _ode.integrate(scalar(cf("1")), np.ones((1, 1)), method=method)
    assert y[0, 0, 0] == pytest.approx(np.e, rel=1e-10)


def test_forcing_with_breakpoint():
    y, _ = _ode.integrate(scalar(None, cf("step(x-0.5)")), np.zeros((1, 1)))
    assert y[0, 0, 0] == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("at, expected", [("a", 2.0), ("b", 2.0)])
def test_integrable_singularities(at, expected):
    text = "x^(-0.5)" if at == "a" else "(1-x)^(-0.5)"
    g = cf(text, sing={"at": at, "alpha": -0.5})
    y, _ = _ode.integrate(scalar(None, g), np.zeros((1, 1)))
    assert y[0, 0, 0] == pytest.approx(expected, abs=1e-10)


def test_batched_lambda_matches_closed_form():
    # u'' = -lam u, u(0) = 0, u'(0) = 1  ->  u(1) = sin(k)/k
    system = _ode.LinearSystem(2, {(0, 1): cf("1"), (1, 0): -(LAMBDA * cf("1"))})
    lams = np.linspace(1.0, 400.0, 50)
    y, _ = _ode.integrate(system, np.eye(2), lams)
    k = np.sqrt(lams)
    assert np.max(np.abs(y[:, 0, 1] - np.sin(k) / k)) < 1e-10


def test_jump_at_atom():
    # u'' = 0 except a unit point mass at 1/2 with lam = 1: u' jumps by -u(1/2)
    N = CoefficientFunction(cf("0").pieces, [(0.5, 1.0)])
    system = _ode.LinearSystem(2, {(0, 1): cf("1"), (1, 0): -(LAMBDA * N)})
    y, _ = _ode.integrate(system, np.array([[0.0], [1.0]]), [1.0])
    # u = x before 1/2; slope 1 - 1/2 afterwards
    assert y[0, 0, 0] == pytest.approx(0.75, abs=1e-14)
    assert y[0, 1, 0] == pytest.approx(0.5, abs=1e-14)


def test_sampling_between_steps():
    system = scalar(cf("cos(7*x)"))
    _, path = _ode.integrate(system, np.ones((1, 1)), store=True)
    xs = np.linspace(0, 1, 37)
    exact = np.exp(np.sin(7 * xs) / 7)
    assert np.max(np.abs(path.sample(xs)[:, 0, 0, 0] - exact)) < 1e-10


def test_step_limit_reports_interval():
    with pytest.raises(_ode.IntegrationError) as info:
        _ode.integrate(scalar(cf("sin(400*x)")), np.ones((1, 1)), max_steps=5)
    lo, hi = info.value.interval
    assert 0.0 <= lo < hi <= 1.0


def test_order_eight_pair_takes_fewer_steps():
    system = scalar(cf("cos(20*x)"))
    _, p5 = _ode.integrate(system, np.ones((1, 1)), store=True, method=_ode.DOPRI5)
    _, p8 = _ode.integrate(system, np.ones((1, 1)), store=True, method=_ode.DOP853)
    assert p8.x_grid.size < p5.x_grid.size
