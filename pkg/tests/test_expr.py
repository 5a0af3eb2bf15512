import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graflow.expr import Expression, ExpressionError, parse_vector


def ev(src, x=0.0, y=0.0, t=0.0, k=1, n=2):
    return float(Expression(src, k, n)(np.array([x, y]), t))


@pytest.mark.parametrize("src,expected", [
    ("1 + 2 * 3", 7.0),
    ("(1 + 2) * 3", 9.0),
    ("2 ^ 3 ^ 2", 512.0),
    ("2 ** 3", 8.0),
    ("-2 ^ 2", -4.0),
    ("pow(2, 10)", 1024.0),
    ("8 / 4 / 2", 1.0),
    ("1.5e2 - .5", 149.5),
    ("sqrt(16) + exp(0) + log(e)", 6.0),
    ("cos(pi)", -1.0),
    ("tan(0) + sin(0)", 0.0),
])
def test_constant_expressions(src, expected):
    assert ev(src) == pytest.approx(expected, rel=1e-15)


def test_variables():
    assert ev("x1 * y1 + t", x=2.0, y=3.0, t=0.5) == pytest.approx(6.5)


def test_grim_reaper_expression():
    e = Expression("t - log(cos(x1))", 1, 2)
    pts = np.array([[0.3, 0.0], [-1.1, 2.0]])
    assert np.allclose(e(pts, -0.1), -0.1 - np.log(np.cos(pts[:, 0])), rtol=1e-15)


@pytest.mark.parametrize("src,col", [
    ("1 +", 4),
    ("x1 + z", 6),
    ("foo(1)", 1),
    ("(1 + 2", 7),
    ("1 $ 2", 3),
    ("pow(1)", 1),
])
def test_errors_report_column(src, col):
    with pytest.raises(ExpressionError) as info:
        Expression(src, 1, 2)
    assert f"column {col}" in str(info.value)


def test_variable_out_of_range():
    with pytest.raises(ExpressionError):
        Expression("y2", 1, 2)


def test_vector_length_checked():
    with pytest.raises(ExpressionError):
        parse_vector(["0"], 1, 2, length=2)


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_matches_numpy(a, b):
    e = Expression("x1 * x1 - 3 * y1 + x1 / (1 + y1 ^ 2)", 1, 2)
    assert e(np.array([a, b]), 0.0) == pytest.approx(a * a - 3 * b + a / (1 + b**2), rel=1e-12,
                                                      abs=1e-12)
