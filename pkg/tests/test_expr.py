import numpy as np
import pytest
from hypothesis import given, strategies as st

from dirichlet_lab.expr import Expression, ExpressionError, compile_coefficient


@pytest.mark.parametrize("text, fn", [
    ("x + t", lambda t, x: x + t),
    ("pow(x, 3) - 2*x", lambda t, x: x**3 - 2 * x),
    ("x^2", lambda t, x: x**2),
    ("exp(t)*sin(x)", lambda t, x: np.exp(t) * np.sin(x)),
    ("abs(x) + cos(t)", lambda t, x: np.abs(x) + np.cos(t)),
    ("min(x, 1) + max(x, -1)", lambda t, x: np.minimum(x, 1) + np.maximum(x, -1)),
    ("-x/2", lambda t, x: -x / 2),
])
def test_evaluation(text, fn):
    t = np.linspace(0, 1, 7)
    x = np.linspace(-2, 2, 7)
    np.testing.assert_allclose(Expression(text)(t, x), fn(t, x), rtol=1e-14)


def test_constant_broadcasts():
    out = Expression("2.5")(np.zeros(3), np.zeros((2, 3)))
    assert out.shape == (2, 3)
    assert np.all(out == 2.5)


def test_symbolic_derivative():
    e = Expression("sin(x)*exp(t)")
    np.testing.assert_allclose(e.diff("x")(0.3, 0.7), np.cos(0.7) * np.exp(0.3))
    np.testing.assert_allclose(e.diff("x", 2)(0.3, 0.7), -np.sin(0.7) * np.exp(0.3))
    np.testing.assert_allclose(e.diff("t")(0.3, 0.7), np.sin(0.7) * np.exp(0.3))


@pytest.mark.parametrize("bad", ["", "import os", "x.real", "__import__('os')", "y + 1", "foo(x)", "'a'",
                                 "x if t else 1", "sin(x, base=2)"])
def test_rejects_bad_syntax(bad):
    with pytest.raises(ExpressionError):
        Expression(bad)


def test_compile_passes_callables():
    f = lambda t, x: x
    assert compile_coefficient(f) is f
    assert compile_coefficient(3)(0.0, 1.0) == 3.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
def test_linear_combination(a, x, t):
    e = Expression(f"{a!r}*x + t")
    assert float(e(t, x)) == pytest.approx(a * x + t, abs=1e-12)
