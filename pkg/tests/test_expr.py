import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from hllk.errors import DimensionError, EvaluationError, ExprSyntaxError, UnboundParameterError, \
    UnknownFunctionError
from hllk.expr import associated_lagrangian, constant, differentiate, equal, evaluate, gradient, \
    is_zero, parse, poisson, random_polynomial, substitute, var
from hllk.flow import PhaseState

L3 = "q1*p2 - q2*p1"


def sym(a, n):
    """Independent oracle: the same text parsed by sympy."""
    names = {f"q{k}": sp.Symbol(f"q{k}") for k in range(1, n + 1)}
    names.update({f"p{k}": sp.Symbol(f"p{k}") for k in range(1, n + 1)})
    return sp.sympify(str(a).replace("^", "**"), locals=names), names


def sym_bracket(f, g, names, n):
    return sum(sp.diff(f, names[f"q{k}"]) * sp.diff(g, names[f"p{k}"])
               - sp.diff(f, names[f"p{k}"]) * sp.diff(g, names[f"q{k}"]) for k in range(1, n + 1))


# --- parsing ----------------------------------------------------------------

def test_parse_angular_momentum():
    a = parse(L3, 3)
    assert a.dim == 3
    assert {str(v) for v in a.variables} == {"q1", "q2", "p1", "p2"}
    assert evaluate(a, PhaseState((1, 0, 0), (0, 1, 0))) == 1.0


def test_parse_atom():
    a = parse("p1", 1)
    assert a.structurally_equal(var("p", 1, 1))


def test_unclosed_parenthesis_reports_position():
    with pytest.raises(ExprSyntaxError) as exc:
        parse("q1*(p1", 1)
    assert exc.value.position == len("q1*(p1")


@pytest.mark.parametrize("text", ["q1 +", "q1 ** q2", ")", "q1 $ 2", "3 4"])
def test_malformed(text):
    with pytest.raises(ExprSyntaxError):
        parse(text, 1)


def test_unknown_function():
    with pytest.raises(UnknownFunctionError):
        parse("tan(q1)", 1)


def test_index_out_of_range():
    with pytest.raises(ExprSyntaxError):
        parse("q3", 2)
    with pytest.raises(DimensionError):
        var("q", 3, 2)


def test_power_forms():
    a = parse("q1**2 + q1^(-1) + q1^-2", 1)
    assert evaluate(a, ((2.0,), (0.0,))) == pytest.approx(4 + 0.5 + 0.25)


# --- calculus ----------------------------------------------------------------

def test_derivative_examples():
    assert differentiate(parse(L3, 3), "q1").structurally_equal(parse("p2", 3))
    assert differentiate(parse("(p1^2 + p2^2)/2", 2), "p1").structurally_equal(parse("p1", 2))
    assert differentiate(parse("q1", 1), "p1").is_constant
    assert is_zero(differentiate(parse("q1", 1), "p1"))


def test_gradient_shape():
    dq, dp = gradient(parse(L3, 2))
    assert [str(x) for x in dq] == ["p2", "-p1"]
    assert [str(x) for x in dp] == ["-q2", "q1"]


def test_poisson_examples():
    assert equal(poisson(parse("q1", 1), parse("p1", 1)), constant(1, 1))
    a = parse("q1^3*p1 + sin(p1)", 1)
    assert is_zero(poisson(a, a))
    assert is_zero(poisson(parse(L3, 2), parse("(p1^2 + p2^2)/2", 2)))


def test_associated_lagrangian_examples():
    assert is_zero(associated_lagrangian(parse("p1", 1)))
    assert equal(associated_lagrangian(parse("q1", 1)), parse("-q1", 1))
    h = parse("p1^2/(2*m) + k*q1^4", 1)
    assert equal(associated_lagrangian(h), parse("p1^2/(2*m) - k*q1^4", 1))


def test_evaluate_examples():
    assert evaluate(parse("3", 2), ((0.3, 1.0), (2.0, -1.0))) == 3.0
    assert evaluate(parse("(p1^2 + q1^2)/2", 1), ((3.0,), (4.0,))) == 12.5


def test_parameters_bound_at_evaluation():
    a = parse("m*omega^2*q1^2/2", 1)
    assert a.params == {"m", "omega"}
    assert differentiate(a, "q1").params == {"m", "omega"}
    assert evaluate(a, ((2.0,), (0.0,)), {"m": 2.0, "omega": 3.0}) == 36.0
    with pytest.raises(UnboundParameterError):
        evaluate(a, ((2.0,), (0.0,)), {"m": 1.0})


def test_division_by_zero_is_reported():
    with pytest.raises(EvaluationError):
        evaluate(parse("1/q1", 1), ((0.0,), (1.0,)))


def test_substitute():
    a = substitute(parse("q1*p1 + p1^2", 1), {"p1": 0})
    assert is_zero(a)
    b = substitute(parse("q1*p1", 1), {"p1": parse("q1 + 1", 1)})
    assert equal(b, parse("q1^2 + q1", 1))


def test_vectorised_compile_broadcasts():
    f = parse("q1*p2 + 1", 2).compile()
    out = f([np.arange(3.0), 0.0], [0.0, np.ones(3)])
    assert out.shape == (3,)
    np.testing.assert_array_equal(out, [1.0, 2.0, 3.0])
    assert parse("2", 1).compile()([np.zeros(4)], [np.zeros(4)]).shape == (4,)


def test_transcendental_zero_test_is_numeric():
    assert is_zero(parse("sin(q1)^2 + cos(q1)^2 - 1", 1))
    assert not is_zero(parse("sin(q1)^2 - cos(q1)^2", 1))


# --- properties against an independent algebra system ------------------------

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 2))
def test_derivative_matches_sympy(seed, n):
    rng = np.random.default_rng(seed)
    a = random_polynomial(rng, n, degree=4, terms=5)
    f, names = sym(a, n)
    for k in range(1, n + 1):
        for v in ("q", "p"):
            ours, _ = sym(differentiate(a, f"{v}{k}"), n)
            assert sp.expand(ours - sp.diff(f, names[f"{v}{k}"])) == 0


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 2))
def test_bracket_matches_sympy(seed, n):
    rng = np.random.default_rng(seed)
    a, b = random_polynomial(rng, n), random_polynomial(rng, n)
    fa, names = sym(a, n)
    fb, _ = sym(b, n)
    ours, _ = sym(poisson(a, b), n)
    assert sp.expand(ours - sym_bracket(fa, fb, names, n)) == 0


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_antisymmetry(seed, n):
    rng = np.random.default_rng(seed)
    a, b = random_polynomial(rng, n), random_polynomial(rng, n)
    assert is_zero(poisson(a, b) + poisson(b, a))


def _random_points(rng, n, count=100):
    return list(rng.uniform(-1.5, 1.5, (n, count))), list(rng.uniform(-1.5, 1.5, (n, count)))


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 2))
def test_product_rule_pointwise(seed, n):
    rng = np.random.default_rng(seed)
    a, b, c = (random_polynomial(rng, n) for _ in range(3))
    q, p = _random_points(rng, n)
    lhs = poisson(a * b, c).compile()(q, p)
    rhs = (a * poisson(b, c) + poisson(a, c) * b).compile()(q, p)
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * max(1.0, np.max(np.abs(lhs)))


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 2))
def test_jacobi_pointwise(seed, n):
    rng = np.random.default_rng(seed)
    a, b, c = (random_polynomial(rng, n) for _ in range(3))
    q, p = _random_points(rng, n)
    total = poisson(poisson(a, b), c) + poisson(poisson(b, c), a) + poisson(poisson(c, a), b)
    assert np.max(np.abs(total.compile()(q, p))) < 1e-10
    assert is_zero(total)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_derivative_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = parse("q1^2*sin(p1) + exp(q1/3)*p1^3 - cos(q1*p1)", 1)
    q0, p0 = rng.uniform(-1.5, 1.5, 2)
    h = 1e-5
    f = a.compile()
    for name, dq, dp in (("q1", h, 0.0), ("p1", 0.0, h)):
        fd = (f([q0 + dq], [p0 + dp]) - f([q0 - dq], [p0 - dp])) / (2 * h)
        exact = evaluate(differentiate(a, name), ((q0,), (p0,)))
        if abs(exact) > 1e-3:
            assert abs(fd - exact) / abs(exact) < 1e-6


def test_random_polynomial_is_seeded():
    a = random_polynomial(np.random.default_rng(5), 2)
    b = random_polynomial(np.random.default_rng(5), 2)
    assert a.structurally_equal(b)
    assert math.isfinite(evaluate(a, ((0.1, 0.2), (0.3, 0.4))))


@pytest.mark.parametrize("text, shown", [
    ("p1^2/2", "p1^2/2"),
    ("(p1^2 + q1^2)/2", "(p1^2 + q1^2)/2"),
    ("q1/(2*m)", "q1/(2*m)"),
    ("sin(q1)/(q1*p1)", "sin(q1)/(q1*p1)"),
])
def test_quotients_print_as_written(text, shown):
    a = parse(text, 1)
    assert str(a) == shown
    assert parse(str(a), 1).structurally_equal(a)
