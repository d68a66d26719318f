import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covfk import expr
from covfk.errors import ConfigError
from covfk.fk import FirstOrderOp, SectionFn
from covfk.geometry import Circle, FlatTorus, Sphere2

angles = st.floats(-10, 10)


def _on_circle(text, r=1.0):
    C = Circle(r)
    return lambda x: expr.trig_poly(text, C)(np.array([[x]]))[0, 0, 0]


@given(angles)
def test_circle_expressions_match_numpy(x):
    assert _on_circle("1 + cos(theta)")(x) == pytest.approx(1 + math.cos(x))
    assert _on_circle("0.5*sin(2*theta) - i*cos(3*theta + 1)")(x) == pytest.approx(0.5 * math.sin(2 * x) - 1j * math.cos(3 * x + 1))
    assert _on_circle("exp(-i*theta) / 2")(x) == pytest.approx(np.exp(-1j * x) / 2)
    assert _on_circle("cos(theta)**2")(x) == pytest.approx(math.cos(x) ** 2)


@given(angles)
def test_period_enters_through_the_angle(x):
    assert _on_circle("sin(theta)", r=3.0)(x) == pytest.approx(math.sin(x / 3.0))


@given(angles, angles)
def test_torus_angles(x, y):
    T = FlatTorus((2 * math.pi, 4.0))
    f = expr.trig_poly("cos(theta1 - 2*theta2)", T)
    assert f(np.array([[x, y]]))[0, 0, 0] == pytest.approx(math.cos(x - 2 * 2 * math.pi * y / 4.0))


def test_trig_coefficients():
    C = Circle()
    f = expr.trig_poly("3 + cos(2*theta) + 4j*sin(theta)", C)
    assert f.degree == 2
    assert expr.trig_poly("0", C).is_zero
    m = expr.trig_poly([["1", "cos(theta)"], ["0", "2"]], C)
    assert m.shape == (2, 2)
    v = expr.trig_poly(["1", "sin(theta)"], C)
    assert v.shape == (2, 1)
    ident = expr.trig_poly("2", C, rank=3)
    assert np.allclose(ident(np.zeros((1, 1)))[0], 2 * np.eye(3))


@pytest.mark.parametrize(
    "text",
    [
        "__import__('os')",
        "theta.real",
        "[1, 2]",
        "cos(theta, 1)",
        "log(theta)",
        "theta",
        "cos(theta*theta)",
        "cos(0.5*theta)",
        "exp(theta)",
        "cos(i*theta)",
        "1 / cos(theta)",
        "cos(theta)**-1",
        "cos(theta)**17",
        "cos(theta)**0.5",
        "phi",
        "1 +",
        "lambda: 1",
    ],
)
def test_grammar_rejections(text):
    with pytest.raises(ConfigError):
        expr.trig_poly(text, Circle())


def test_non_expression_inputs():
    for bad in (True, None, {"a": 1}):
        with pytest.raises(ConfigError):
            expr.parse(bad)
    assert expr.parse(2.5).value == 2.5
    for bad in ([], [["1"], ["1", "2"]], ["1", ["2"]]):
        with pytest.raises(ConfigError):
            expr.trig_poly(bad, Circle())


def test_sphere_functions():
    f = expr.embedded_fn("exp(z) * x**2 - 1/2")
    X = np.array([[0.6, 0.0, 0.8], [0.0, 1.0, 0.0]])
    assert np.allclose(f(X), np.exp(X[:, 2]) * X[:, 0] ** 2 - 0.5)
    with pytest.raises(ConfigError):
        expr.embedded_fn("theta")(X)
    with pytest.raises(ConfigError):
        expr.embedded_fn("x / y")(X)
    with pytest.raises(ConfigError):
        expr.angle_names(Sphere2())


def test_sphere_field_shapes():
    S = Sphere2()
    p = S.point([[0.2, 0.3], [0.0, 1.0]])
    fn, shape = expr.sphere_field("z", rank=2)
    assert shape == (2, 2)
    assert np.allclose(fn(p), p.embedded[:, 2, None, None] * np.eye(2))
    fn, shape = expr.sphere_field([["1", "x"], ["y", "0"]])
    assert shape == (2, 2) and np.allclose(fn(p)[:, 0, 1], p.embedded[:, 0])


def test_first_order_op_and_section_builders():
    C = Circle()
    Q = expr.first_order_op({"sigma1": ["0.3"], "q0": "0.5 + 0.4*cos(theta)"}, C, 1)
    assert isinstance(Q, FirstOrderOp)
    psi = expr.section("cos(theta)", C, 1)
    assert isinstance(psi, SectionFn)
    assert psi(C.point([0.0]))[0, 0] == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        expr.first_order_op({"sigma": ["1"]}, C, 1)
    with pytest.raises(ConfigError):
        expr.first_order_op({"sigma1": ["1", "2"]}, C, 1)
    with pytest.raises(ConfigError):
        expr.first_order_op({"q0": [["1", "0"], ["0", "1"]]}, C, 1)
    with pytest.raises(ConfigError):
        expr.first_order_op({"sigma1": ["1", "1"]}, Sphere2(), 1)
    with pytest.raises(ConfigError):
        expr.section(["1", "2"], C, 1)
    S = Sphere2()
    assert expr.first_order_op({}, S, 2).is_zero
    with pytest.raises(ConfigError):
        expr.first_order_op({"q0": ["1", "2"]}, S, 2)
    with pytest.raises(ConfigError):
        expr.section("z", S, 2)


def test_form_builders():
    assert expr.form(None).is_zero and expr.form("0").is_zero
    vol = expr.form("vol")
    assert vol.degrees == [2]
    f = expr.form({"f0": "z", "w1": ["-y", "x", "0"], "f2": "1"})
    assert f.degrees == [0, 1, 2]
    X = np.array([[1.0, 0.0, 0.0]])
    assert np.allclose(f.w1(X), [[0.0, 1.0, 0.0]])
    with pytest.raises(ConfigError):
        expr.form({"f3": "1"})
    with pytest.raises(ConfigError):
        expr.form({"w1": ["1", "2"]})
    t = expr.tform({"dt": "z"})
    assert t.prime.is_zero and t.dblprime.degrees == [0]
    assert expr.tform("z").dblprime.is_zero
