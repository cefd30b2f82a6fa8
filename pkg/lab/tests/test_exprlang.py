import math

import numpy as np
import sympy
from django.test import SimpleTestCase
from hypothesis import HealthCheck, given, reject, settings, strategies as st

from lab import exprlang
from lab.exceptions import (
    ExprDomainError,
    ExprSyntaxError,
    NonDifferentiableError,
    UnboundVariableError,
    UnknownFunctionError,
)
from lab.exprlang import BinOp, Call, Neg, Num, Var

leaves = st.one_of(st.just(Var('t')), st.floats(0.5, 3.0).map(Num))


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from('+-*'), children, children).map(lambda c: BinOp(*c)),
        st.tuples(st.sampled_from(['sin', 'cos']), children).map(lambda c: Call(*c)),
        children.map(Neg),
    )


trees = st.recursive(leaves, _extend, max_leaves=10)


def _shifted(child, func='sin'):
    return BinOp('+', Num(2.0), Call(func, child))


def _extend_all(children):
    # every argument that could leave a domain is kept near 2 + sin(...)
    return st.one_of(
        st.tuples(st.sampled_from('+-*'), children, children).map(lambda c: BinOp(*c)),
        st.tuples(children, children).map(lambda c: BinOp('/', c[0], _shifted(c[1]))),
        st.tuples(children, st.sampled_from([Num(2.0), Num(3.0)])).map(lambda c: BinOp('^', c[0], c[1])),
        st.tuples(children, children).map(lambda c: BinOp('^', _shifted(c[0], 'cos'), Call('sin', c[1]))),
        st.tuples(st.sampled_from(['sin', 'cos']), children).map(lambda c: Call(*c)),
        children.map(lambda c: Call('exp', Call('sin', c))),
        st.tuples(st.sampled_from(['log', 'sqrt', 'abs']), children).map(lambda c: Call(c[0], _shifted(c[1]))),
        children.map(Neg),
    )


full_trees = st.recursive(leaves, _extend_all, max_leaves=10)
with_floor = st.recursive(leaves, lambda c: st.one_of(_extend_all(c), c.map(lambda a: Call('floor', a))), max_leaves=10)


class ParseTests(SimpleTestCase):
    def test_precedence(self):
        self.assertEqual(exprlang.evaluate(exprlang.parse("2+3*4")), 14.0)

    def test_power_binds_tighter_than_minus(self):
        self.assertEqual(exprlang.evaluate(exprlang.parse("-2^2")), -4.0)
        self.assertEqual(exprlang.evaluate(exprlang.parse("2^3^2")), 512.0)

    def test_free_variable(self):
        tree = exprlang.parse("log(1/t)")
        self.assertEqual(exprlang.free_variables(tree), frozenset({'t'}))

    def test_implicit_multiplication_rejected(self):
        with self.assertRaises(ExprSyntaxError) as caught:
            exprlang.parse("sin(2x)")
        self.assertEqual(caught.exception.offset, 5)

    def test_unknown_function(self):
        with self.assertRaises(UnknownFunctionError) as caught:
            exprlang.parse("1 + tan(x)")
        self.assertEqual(caught.exception.name, 'tan')
        self.assertEqual(caught.exception.offset, 4)

    def test_offsets_are_bytes(self):
        with self.assertRaises(ExprSyntaxError) as caught:
            exprlang.parse("α + $")
        self.assertEqual(caught.exception.offset, 5)

    def test_empty_source(self):
        with self.assertRaises(ExprSyntaxError):
            exprlang.parse("   ")

    def test_function_needs_argument(self):
        with self.assertRaises(ExprSyntaxError):
            exprlang.parse("sin + 1")

    @settings(max_examples=60, deadline=None)
    @given(trees)
    def test_printed_source_parses_back(self, tree):
        self.assertEqual(exprlang.parse(exprlang.to_source(tree)), tree)

    @settings(max_examples=300, deadline=None)
    @given(with_floor)
    def test_full_grammar_prints_and_parses_back(self, tree):
        self.assertEqual(exprlang.parse(exprlang.to_source(tree)), tree)

    def test_implicit_multiplication_is_named(self):
        with self.assertRaises(ExprSyntaxError) as caught:
            exprlang.parse("2 x")
        self.assertEqual(caught.exception.offset, 2)
        self.assertIn("explicit '*'", caught.exception.expected)

    def test_function_name_offset_points_past_name(self):
        with self.assertRaises(ExprSyntaxError) as caught:
            exprlang.parse("sin + 1")
        self.assertEqual(caught.exception.offset, 4)

    def test_unclosed_parenthesis(self):
        with self.assertRaises(ExprSyntaxError) as caught:
            exprlang.parse("(1 + t")
        self.assertEqual(caught.exception.offset, 6)


class EvaluateTests(SimpleTestCase):
    def test_exp_zero(self):
        self.assertEqual(exprlang.evaluate(exprlang.parse("exp(0)")), 1.0)

    def test_log_of_reciprocal(self):
        value = exprlang.evaluate(exprlang.parse("log(1/t)"), {'t': 0.1})
        self.assertAlmostEqual(value, 2.302585092994046, places=14)

    def test_division_by_zero(self):
        with self.assertRaises(ExprDomainError):
            exprlang.evaluate(exprlang.parse("1/t"), {'t': 0.0})

    def test_negative_base_fractional_power(self):
        with self.assertRaises(ExprDomainError):
            exprlang.evaluate(exprlang.parse("(0-2)^0.5"))

    def test_overflow(self):
        with self.assertRaises(ExprDomainError):
            exprlang.evaluate(exprlang.parse("exp(1000)"))

    def test_unbound_variable(self):
        with self.assertRaises(UnboundVariableError) as caught:
            exprlang.evaluate(exprlang.parse("x + y"), {'x': 1.0})
        self.assertEqual(caught.exception.name, 'y')

    def test_array_domain_error(self):
        with self.assertRaises(ExprDomainError):
            exprlang.evaluate_array(exprlang.parse("log(t)"), 't', [1.0, 0.0])

    def test_floor(self):
        self.assertEqual(exprlang.evaluate(exprlang.parse("floor(2.7)")), 2.0)

    @settings(max_examples=60, deadline=None)
    @given(trees, st.floats(0.5, 1.5))
    def test_three_evaluators_agree(self, tree, t):
        scalar = exprlang.evaluate(tree, {'t': t})
        compiled = exprlang.compile_scalar(tree, 't')(t)
        vector = exprlang.evaluate_array(tree, 't', np.array([t, t]))
        self.assertEqual(scalar, compiled)
        np.testing.assert_allclose(vector, scalar, rtol=1e-12, atol=1e-9)


class DifferentiateTests(SimpleTestCase):
    def test_square(self):
        derivative = exprlang.differentiate(exprlang.parse("t^2"), 't')
        for t in (0.3, 1.0, 2.5):
            self.assertAlmostEqual(exprlang.evaluate(derivative, {'t': t}), 2 * t, places=14)

    def test_log_of_reciprocal(self):
        derivative = exprlang.differentiate(exprlang.parse("log(1/t)"), 't')
        for t in (0.1, 0.5):
            self.assertAlmostEqual(exprlang.evaluate(derivative, {'t': t}), -1 / t, places=12)

    def test_variable_exponent(self):
        derivative = exprlang.differentiate(exprlang.parse("t^t"), 't')
        t = 1.7
        self.assertAlmostEqual(exprlang.evaluate(derivative, {'t': t}), t ** t * (math.log(t) + 1), places=12)

    def test_floor_rejected(self):
        with self.assertRaises(NonDifferentiableError):
            exprlang.differentiate(exprlang.parse("floor(t) + t"), 't')

    def test_constant_in_other_variable(self):
        derivative = exprlang.differentiate(exprlang.parse("sin(x) * 3"), 't')
        self.assertEqual(derivative, Num(0.0))

    @settings(max_examples=80, deadline=None)
    @given(trees, st.floats(0.5, 1.5))
    def test_matches_central_difference(self, tree, t):
        f = exprlang.compile_scalar(tree, 't')
        exact = exprlang.evaluate(exprlang.differentiate(tree, 't'), {'t': t})
        h = 1e-5
        approx = (f(t + h) - f(t - h)) / (2 * h)
        scale = max(1.0, abs(exact), abs(f(t)))
        self.assertLessEqual(abs(exact - approx), 1e-4 * scale)

    def test_abs_derivative_keeps_expression_form(self):
        derivative = exprlang.differentiate(exprlang.parse("abs(t)"), 't')
        self.assertEqual(derivative, BinOp('/', Var('t'), Call('abs', Var('t'))))
        self.assertEqual(exprlang.evaluate(derivative, {'t': -2.0}), -1.0)

    def test_sqrt_derivative(self):
        derivative = exprlang.differentiate(exprlang.parse("sqrt(t)"), 't')
        self.assertAlmostEqual(exprlang.evaluate(derivative, {'t': 4.0}), 0.25, places=15)

    @settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
    @given(full_trees, st.floats(0.5, 1.5))
    def test_full_grammar_matches_central_difference(self, tree, t):
        f = exprlang.compile_scalar(tree, 't')
        h = 1e-6
        try:
            exact = exprlang.evaluate(exprlang.differentiate(tree, 't'), {'t': t})
            approx = (f(t + h) - f(t - h)) / (2 * h)
            value = f(t)
        except ExprDomainError:
            reject()
        scale = max(1.0, abs(exact), abs(value))
        self.assertLessEqual(abs(exact - approx), 1e-5 * scale)


class SympyBridgeTests(SimpleTestCase):
    def test_constants_and_signs(self):
        self.assertEqual(exprlang.from_sympy(sympy.Integer(-3)), Neg(Num(3.0)))
        self.assertEqual(exprlang.from_sympy(sympy.pi), Num(math.pi))
        self.assertEqual(exprlang.to_sympy(exprlang.parse("2.5 - t")), sympy.Float(2.5) - sympy.Symbol('t', real=True))

    def test_reciprocal_is_a_division(self):
        t = sympy.Symbol('t', real=True)
        self.assertEqual(exprlang.from_sympy(1 / t), BinOp('/', Num(1.0), Var('t')))
        self.assertEqual(exprlang.from_sympy(-2 / t), Neg(BinOp('/', Num(2.0), Var('t'))))

    def test_domain_checks_use_the_written_tree(self):
        # sympy simplifies both of these to t and to 1
        with self.assertRaises(ExprDomainError):
            exprlang.evaluate(exprlang.parse("sqrt(t)^2"), {'t': -1.0})
        with self.assertRaises(ExprDomainError):
            exprlang.evaluate(exprlang.parse("t/t"), {'t': 0.0})
        self.assertAlmostEqual(exprlang.evaluate(exprlang.parse("sqrt(t)^2"), {'t': 4.0}), 4.0, places=14)

    def test_constant_broadcasts(self):
        values = exprlang.evaluate_array(exprlang.parse("3"), 't', [0.5, 1.0, 2.0])
        np.testing.assert_array_equal(values, [3.0, 3.0, 3.0])
