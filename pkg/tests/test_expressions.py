"""Grammar, precedence, and dual-safety of the expression compiler."""

import math

import numpy as np
import pytest

from comoving.dual import cos, seed, tangent, value
from comoving.errors import ConfigError
from comoving.expressions import parse_expression


@pytest.mark.parametrize("text, expected", [
    ("2", 2.0),
    ("2.5", 2.5),
    (".5", 0.5),
    ("25e-1", 2.5),
    ("1.5e2", 150.0),
    ("1 + 2*3", 7.0),
    ("(1 + 2)*3", 9.0),
    ("6/4", 1.5),
    ("2*3^2", 18.0),
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("2^-1", 0.5),
    ("+3 - -2", 5.0),
    ("pi", math.pi),
    ("2*pi", 2.0 * math.pi),
    ("e", math.e),
    ("sin(pi/2)", 1.0),
    ("sqrt(4)", 2.0),
    ("exp(log(5))", 5.0),
    ("cos(0) + tanh(0) + sinh(0)", 1.0),
    ("  1 +  2 ", 3.0),
])
def test_constant_expressions(text, expected):
    expr = parse_expression(text)
    assert expr.variables == frozenset()
    assert np.isclose(expr.evaluate({}), expected, atol=1e-14)


def test_variables_are_collected_and_resolved():
    expr = parse_expression("s0 + 2*s1 - u^2")
    assert expr.variables == frozenset({"s0", "s1", "u"})
    got = expr.evaluate({"s0": 1.0, "s1": 0.25, "u": 3.0})
    assert np.isclose(got, 1.0 + 0.5 - 9.0)


def test_functions_and_constants_are_not_variables():
    expr = parse_expression("sin(pi*x) + e")
    assert expr.variables == frozenset({"x"})


def test_duals_propagate_through_expressions():
    expr = parse_expression("u^2 + sin(u)")
    point = seed([0.7], 0)
    got = expr.evaluate({"u": point[0]})
    assert np.isclose(value(got), 0.49 + math.sin(0.7))
    assert np.isclose(tangent(got), 2 * 0.7 + math.cos(0.7))


def test_nested_duals_survive_two_layers():
    expr = parse_expression("u^3")
    inner = seed([0.5], 0)
    outer = seed(inner, 0)
    got = expr.evaluate({"u": outer[0]})
    assert np.isclose(value(got), 0.125)
    assert np.isclose(tangent(tangent(got)), 6 * 0.5)


def test_division_and_composition():
    expr = parse_expression("sin(2*x)/x")
    assert np.isclose(expr.evaluate({"x": 0.3}), math.sin(0.6) / 0.3)


@pytest.mark.parametrize("text", [
    "sin(",
    "2 +",
    "foo(3)",
    ")",
    "2 2",
    "",
    "   ",
    "1 $ 2",
    "(1 + 2",
])
def test_malformed_expressions_raise_config_error(text):
    with pytest.raises(ConfigError):
        parse_expression(text)


def test_missing_variable_raises_config_error():
    expr = parse_expression("a + b")
    with pytest.raises(ConfigError):
        expr.evaluate({"a": 1.0})


def test_expression_is_reusable_and_stateless():
    expr = parse_expression("k*x")
    assert expr.evaluate({"k": 2.0, "x": 3.0}) == 6.0
    assert expr.evaluate({"k": -1.0, "x": 0.5}) == -0.5
