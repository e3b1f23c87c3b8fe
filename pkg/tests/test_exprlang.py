import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from issparabolic.exprlang import (
    Add,
    Call,
    Div,
    ExprDomainError,
    ExprEvalError,
    ExprNameError,
    ExprSyntaxError,
    Mul,
    Neg,
    Num,
    Pow,
    Sub,
    Var,
    derivative,
    evaluate,
    parse,
    to_text,
    variables,
)


class TestParse:
    def test_ast_shape(self):
        assert parse("u + u^3") == Add(Var("u"), Pow(Var("u"), Num(3.0)))
        assert parse("u*ln(1+u^2)") == Mul(
            Var("u"), Call("ln", Add(Num(1.0), Pow(Var("u"), Num(2.0))))
        )

    def test_precedence_and_associativity(self):
        assert parse("1 - 2 - 3") == Sub(Sub(Num(1.0), Num(2.0)), Num(3.0))
        assert parse("2^3^2") == Pow(Num(2.0), Pow(Num(3.0), Num(2.0)))
        assert parse("-u^2") == Neg(Pow(Var("u"), Num(2.0)))
        assert parse("(-u)^2") == Pow(Neg(Var("u")), Num(2.0))
        assert parse("1 + 2*3") == Add(Num(1.0), Mul(Num(2.0), Num(3.0)))
        assert parse("2*u/3") == Div(Mul(Num(2.0), Var("u")), Num(3.0))

    def test_whitespace_insensitive(self):
        assert parse(" u+u ^ 3 ") == parse("u + u^3")

    def test_scientific_notation(self):
        assert parse("1.5e-3") == Num(1.5e-3)
        assert parse(".5E+2") == Num(50.0)

    def test_syntax_error_offset(self):
        with pytest.raises(ExprSyntaxError) as err:
            parse("u + * 3")
        assert err.value.offset == 4

    def test_unknown_identifier(self):
        with pytest.raises(ExprNameError) as err:
            parse("x + 1")
        assert err.value.name == "x"
        assert err.value.offset == 0
        with pytest.raises(ExprNameError):
            parse("sinh(u)")

    def test_empty_and_trailing(self):
        with pytest.raises(ExprSyntaxError):
            parse("   ")
        with pytest.raises(ExprSyntaxError):
            parse("1 + 2)")

    def test_function_requires_parentheses(self):
        with pytest.raises(ExprNameError):
            parse("sin + 1")


class TestEvaluate:
    def test_literal_examples(self):
        assert evaluate(parse("u + u^3"), {"u": 1.0}) == 2.0
        assert evaluate(parse("u*ln(1+u^2)"), {"u": 0.0}) == 0.0
        assert evaluate(parse("(-2)^3"), {}) == -8.0

    def test_domain_errors(self):
        with pytest.raises(ExprDomainError):
            evaluate(parse("ln(u)"), {"u": 0.0})
        with pytest.raises(ExprDomainError):
            evaluate(parse("sqrt(u)"), {"u": -1.0})
        with pytest.raises(ExprDomainError):
            evaluate(parse("1/u"), {"u": 0.0})
        with pytest.raises(ExprDomainError):
            evaluate(parse("u^0.5"), {"u": -2.0})
        with pytest.raises(ExprDomainError):
            evaluate(parse("exp(u)"), {"u": 1e4})  # overflow is never a silent inf

    def test_unbound_variable(self):
        with pytest.raises(ExprEvalError):
            evaluate(parse("u + t"), {"u": 1.0})

    def test_array_bindings_broadcast(self):
        r = np.linspace(0.0, 1.0, 11)
        out = evaluate(parse("r^2 + t"), {"r": r, "t": 2.0})
        np.testing.assert_allclose(out, r**2 + 2.0, rtol=1e-15)

    def test_deterministic(self):
        expr = parse("sin(r)*exp(t) - u/3")
        binding = {"r": 0.3, "t": 0.7, "u": 1.1}
        assert evaluate(expr, binding) == evaluate(expr, binding)

    def test_variables(self):
        assert variables(parse("sin(r)*t + 1")) == frozenset({"r", "t"})


class TestDerivative:
    def test_literal_examples(self):
        d = derivative(parse("u + u^3"), "u")
        assert evaluate(d, {"u": 1.0}) == pytest.approx(4.0)
        d2 = derivative(parse("u*ln(1+u^2)"), "u")
        assert evaluate(d2, {"u": 0.0}) == 0.0
        assert derivative(parse("t"), "r") == Num(0.0)

    def test_chain_rules(self):
        cases = {
            "sin(u^2)": lambda u: 2 * u * math.cos(u**2),
            "exp(2*u)": lambda u: 2 * math.exp(2 * u),
            "sqrt(1+u^2)": lambda u: u / math.sqrt(1 + u**2),
            "tanh(u)": lambda u: 1.0 - math.tanh(u) ** 2,
            "abs(u)": lambda u: math.copysign(1.0, u),
            "1/u": lambda u: -1.0 / u**2,
        }
        for text, exact in cases.items():
            d = derivative(parse(text), "u")
            for u in (0.5, 1.3, -0.8):
                assert evaluate(d, {"u": u}) == pytest.approx(exact(u), rel=1e-12)

    def test_unknown_variable(self):
        with pytest.raises(ValueError):
            derivative(parse("u"), "x")


# --- Random expression machinery (shared with the acceptance suite) ---

_LEAF_FUNCS = ("sin", "cos", "exp", "tanh", "abs")


def random_expression(rng: random.Random, depth: int, protected: bool):
    """Random tree; with ``protected`` the ln/sqrt arguments and divisors
    are kept strictly positive so evaluation near a sample point is safe."""
    if depth <= 0 or rng.random() < 0.3:
        which = rng.random()
        if which < 0.4:
            return Num(round(rng.uniform(0.1, 2.5), 3))
        return Var(rng.choice(("r", "t", "u")))
    k = rng.randrange(8)
    child = lambda: random_expression(rng, depth - 1, protected)
    if k == 0:
        return Add(child(), child())
    if k == 1:
        return Sub(child(), child())
    if k == 2:
        return Mul(child(), child())
    if k == 3:
        den = Add(Num(round(rng.uniform(0.5, 1.5), 3)), Pow(child(), Num(2.0))) if protected else child()
        return Div(child(), den)
    if k == 4:
        return Pow(child(), Num(float(rng.choice((2, 3)))))
    if k == 5:
        return Neg(child())
    if k == 6:
        arg = Add(Num(round(rng.uniform(0.5, 1.5), 3)), Pow(child(), Num(2.0))) if protected else child()
        return Call(rng.choice(("ln", "sqrt")), arg)
    return Call(rng.choice(_LEAF_FUNCS), child())


def finite_difference(expr, var, binding, step=1e-6):
    hi = dict(binding)
    lo = dict(binding)
    hi[var] = binding[var] + step
    lo[var] = binding[var] - step
    return (evaluate(expr, hi) - evaluate(expr, lo)) / (2.0 * step)


class TestRandomizedProperties:
    def test_round_trip_structural_equality(self):
        rng = random.Random(20240811)
        for _ in range(300):
            tree = random_expression(rng, rng.randrange(1, 4), protected=False)
            text = to_text(tree)
            assert parse(text) == tree, text

    def test_derivative_matches_finite_difference(self):
        rng = random.Random(777)
        checked = 0
        attempts = 0
        while checked < 40 and attempts < 4000:
            attempts += 1
            tree = random_expression(rng, rng.randrange(1, 4), protected=True)
            var = rng.choice(("r", "t", "u"))
            binding = {v: rng.uniform(0.3, 1.2) for v in ("r", "t", "u")}
            try:
                sym = evaluate(derivative(tree, var), binding)
                fd = finite_difference(tree, var, binding)
            except ExprDomainError:
                continue
            assert abs(sym - fd) <= 1e-6 * (1.0 + abs(sym)), to_text(tree)
            checked += 1
        assert checked == 40


# Hypothesis variant of the round trip, over trees with nonnegative literals.
_exprs = st.deferred(
    lambda: st.one_of(
        st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(Num),
        st.sampled_from(("r", "t", "u")).map(Var),
        st.tuples(_exprs, _exprs).map(lambda p: Add(*p)),
        st.tuples(_exprs, _exprs).map(lambda p: Sub(*p)),
        st.tuples(_exprs, _exprs).map(lambda p: Mul(*p)),
        st.tuples(_exprs, _exprs).map(lambda p: Div(*p)),
        st.tuples(_exprs, _exprs).map(lambda p: Pow(*p)),
        _exprs.map(Neg),
        st.tuples(st.sampled_from(("sin", "cos", "exp", "ln", "abs", "sqrt", "tanh")), _exprs).map(
            lambda p: Call(*p)
        ),
    )
)


@settings(max_examples=200, deadline=None)
@given(_exprs)
def test_print_parse_round_trip(tree):
    assert parse(to_text(tree)) == tree
