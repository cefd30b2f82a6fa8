"""Arithmetic expressions for potentials a(x), coefficients b(t) and custom nu(t).

Grammar (whitespace is insignificant, multiplication is always explicit)::

    expression := term (('+' | '-') term)*
    term       := unary (('*' | '/') unary)*
    unary      := '-' unary | power
    power      := atom ('^' unary)?
    atom       := NUMBER | FUNC '(' expression ')' | NAME | '(' expression ')'

``^`` binds tighter than unary minus and associates to the right, so
``-x^2`` is ``-(x^2)`` and ``2^3^2`` is ``2^(3^2)``.

Parsing is done by an arpeggio grammar; derivatives and compiled evaluators go
through sympy. Trees are frozen dataclasses and can be shared freely between
threads. Evaluation never returns NaN or an infinity: domain violations raise
:class:`ExprDomainError`.
"""
import functools
import math
import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Union

import numpy as np
import sympy
from arpeggio import EOF, NoMatch, ParserPython, PTNodeVisitor, ZeroOrMore, visit_parse_tree
from arpeggio import Optional as Maybe
from arpeggio import RegExMatch as _

from .exceptions import (
    ExprDomainError,
    ExprSyntaxError,
    NonDifferentiableError,
    UnboundVariableError,
    UnknownFunctionError,
)

FUNCTIONS = ('sin', 'cos', 'exp', 'log', 'sqrt', 'abs', 'floor')
BINARY_OPERATORS = ('+', '-', '*', '/', '^')


class _Node:
    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Num(_Node):
    """Non-negative literal; negative constants are ``Neg(Num(...))``."""
    value: float

    def __post_init__(self):
        value = float(self.value)
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"literal must be finite and non-negative, got {self.value!r}")
        object.__setattr__(self, 'value', value)


@dataclass(frozen=True)
class Var(_Node):
    name: str


@dataclass(frozen=True)
class Neg(_Node):
    operand: 'Expr'


@dataclass(frozen=True)
class BinOp(_Node):
    op: str
    left: 'Expr'
    right: 'Expr'

    def __post_init__(self):
        if self.op not in BINARY_OPERATORS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Call(_Node):
    func: str
    arg: 'Expr'

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")


Expr = Union[Num, Var, Neg, BinOp, Call]


# Grammar

def number():
    return _(r'\d+\.?\d*|\.\d+')


def identifier():
    return _(r'[^\W\d]\w*')


def add_op():
    return _(r'[+\-]')


def mul_op():
    return _(r'[*/]')


def pow_op():
    return _(r'\^')


def minus():
    return _(r'-')


def call():
    return identifier, '(', expression, ')'


def group():
    return '(', expression, ')'


def atom():
    # call before identifier, so "sin(" is never read as a variable
    return [number, call, identifier, group]


def power():
    return atom, Maybe(pow_op, unary)


def negation():
    return minus, unary


def unary():
    return [negation, power]


def term():
    return unary, ZeroOrMore(mul_op, unary)


def expression():
    return term, ZeroOrMore(add_op, term)


def formula():
    return expression, EOF


_PARSER = None
_PARSER_LOCK = threading.Lock()


def _parser():
    global _PARSER
    with _PARSER_LOCK:
        if _PARSER is None:
            _PARSER = ParserPython(formula, ignore_case=False)
    return _PARSER


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _byte_offset(source, pos):
    return len(source[:pos].encode('utf-8'))


def _parts(children):
    # bare string matches such as '(' may or may not reach the visitor
    return [child for child in children if isinstance(child, (_Node, _Token))]


def _fold(children):
    parts = _parts(children)
    tree = parts[0]
    for op, right in zip(parts[1::2], parts[2::2]):
        tree = BinOp(op.text, tree, right)
    return tree


class _TreeBuilder(PTNodeVisitor):
    """Turns the arpeggio parse tree into :data:`Expr` nodes."""

    def __init__(self, source):
        super().__init__()
        self.source = source

    def visit_number(self, node, children):
        return Num(float(node.value))

    def visit_identifier(self, node, children):
        return _Token('name', node.value, node.position)

    def _operator(self, node, children):
        return _Token('op', node.value, node.position)

    visit_add_op = visit_mul_op = visit_pow_op = visit_minus = _operator

    def visit_call(self, node, children):
        func, arg = _parts(children)
        if func.text not in FUNCTIONS:
            raise UnknownFunctionError(func.text, _byte_offset(self.source, func.position))
        return Call(func.text, arg)

    def visit_atom(self, node, children):
        item = _parts(children)[0]
        if not isinstance(item, _Token):
            return item
        if item.text in FUNCTIONS:
            pos = item.position + len(item.text)
            while pos < len(self.source) and self.source[pos].isspace():
                pos += 1
            raise ExprSyntaxError(_byte_offset(self.source, pos), f"'(' after function '{item.text}'", self.source)
        return Var(item.text)

    def visit_power(self, node, children):
        parts = _parts(children)
        if len(parts) == 1:
            return parts[0]
        return BinOp('^', parts[0], parts[-1])

    def visit_negation(self, node, children):
        return Neg(_parts(children)[-1])

    def _single(self, node, children):
        return _parts(children)[0]

    visit_unary = visit_group = visit_formula = _single

    def visit_term(self, node, children):
        return _fold(children)

    def visit_expression(self, node, children):
        return _fold(children)


def _expected(error):
    labels = sorted({rule.rule_name or repr(getattr(rule, 'to_match', '')) for rule in error.rules})
    return ' or '.join(labels) or 'an expression'


def _syntax_error(source, error):
    pos = min(error.position, len(source))
    before = source[:pos].rstrip()
    if before and pos < len(source) and (before[-1].isalnum() or before[-1] in '._)') \
            and (source[pos].isalnum() or source[pos] == '('):
        expected = "an explicit '*' between factors"
    else:
        expected = _expected(error)
    return ExprSyntaxError(_byte_offset(source, pos), expected, source)


def parse(source: str) -> Expr:
    if not source or not source.strip():
        raise ExprSyntaxError(0, 'an expression', source or '')
    parser = _parser()
    try:
        with _PARSER_LOCK:
            tree = parser.parse(source)
    except NoMatch as error:
        raise _syntax_error(source, error) from None
    return visit_parse_tree(tree, _TreeBuilder(source))


# Printing

def _format_number(value):
    return np.format_float_positional(value, trim='-')


def to_source(e: Expr) -> str:
    """Fully parenthesized source text; ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        return _format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expr) -> frozenset:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    return free_variables(e.arg)


def contains_function(e: Expr, func: str) -> bool:
    if isinstance(e, (Num, Var)):
        return False
    if isinstance(e, Neg):
        return contains_function(e.operand, func)
    if isinstance(e, BinOp):
        return contains_function(e.left, func) or contains_function(e.right, func)
    return e.func == func or contains_function(e.arg, func)


# sympy conversion

_SYMPY_FUNCTIONS = {
    'sin': sympy.sin,
    'cos': sympy.cos,
    'exp': sympy.exp,
    'log': sympy.log,
    'sqrt': sympy.sqrt,
    'abs': sympy.Abs,
    'floor': sympy.floor,
}

_FROM_SYMPY = {
    sympy.sin: 'sin',
    sympy.cos: 'cos',
    sympy.exp: 'exp',
    sympy.log: 'log',
    sympy.Abs: 'abs',
    sympy.floor: 'floor',
}


def _symbol(var):
    return sympy.Symbol(var, real=True)


def _sympy_number(value):
    if value.is_integer():
        return sympy.Integer(int(value))
    return sympy.Float(value)


def to_sympy(e: Expr) -> sympy.Expr:
    if isinstance(e, Num):
        return _sympy_number(e.value)
    if isinstance(e, Var):
        return _symbol(e.name)
    if isinstance(e, Neg):
        return -to_sympy(e.operand)
    if isinstance(e, BinOp):
        left, right = to_sympy(e.left), to_sympy(e.right)
        if e.op == '+':
            return left + right
        if e.op == '-':
            return left - right
        if e.op == '*':
            return left * right
        if e.op == '/':
            return left / right
        return left ** right
    return _SYMPY_FUNCTIONS[e.func](to_sympy(e.arg))


def _const(value):
    return Num(value) if value >= 0 else Neg(Num(-value))


def _negative(expr):
    if expr.is_Number:
        return bool(expr < 0)
    return bool(expr.is_Mul and expr.as_coeff_Mul()[0].is_negative)


def from_sympy(expr) -> Expr:
    """Expression tree for a sympy result built from the supported functions."""
    if expr.is_Number:
        value = float(expr)
        if not math.isfinite(value):
            raise NonDifferentiableError(f"'{expr}' is not a finite number")
        return _const(value)
    if isinstance(expr, sympy.NumberSymbol):
        return _const(float(expr))
    if expr.is_Symbol:
        return Var(expr.name)
    if expr.is_Add:
        terms = expr.as_ordered_terms()
        tree = from_sympy(terms[0])
        for item in terms[1:]:
            if _negative(item):
                tree = BinOp('-', tree, from_sympy(-item))
            else:
                tree = BinOp('+', tree, from_sympy(item))
        return tree
    if expr.is_Mul or (expr.is_Pow and expr.exp.is_negative):
        if _negative(expr):
            return Neg(from_sympy(-expr))
        numerator, denominator = sympy.fraction(expr, exact=True)
        if denominator != 1:
            return BinOp('/', from_sympy(numerator), from_sympy(denominator))
    if expr.is_Mul:
        factors = expr.as_ordered_factors()
        tree = from_sympy(factors[0])
        for item in factors[1:]:
            tree = BinOp('*', tree, from_sympy(item))
        return tree
    if expr.is_Pow:
        base, exponent = expr.as_base_exp()
        if exponent == sympy.Rational(1, 2):
            return Call('sqrt', from_sympy(base))
        return BinOp('^', from_sympy(base), from_sympy(exponent))
    if isinstance(expr, sympy.sign):
        inner = from_sympy(expr.args[0])
        return BinOp('/', inner, Call('abs', inner))
    if isinstance(expr, sympy.DiracDelta):
        # zero away from the kink of abs
        return Num(0.0)
    for func, func_name in _FROM_SYMPY.items():
        if isinstance(expr, func):
            return Call(func_name, from_sympy(expr.args[0]))
    raise NonDifferentiableError(f"'{expr}' has no expression form")


# Evaluation

def _check_log(x):
    if np.any(x <= 0):
        raise ExprDomainError("log of non-positive argument")


def _check_sqrt(x):
    if np.any(x < 0):
        raise ExprDomainError("sqrt of negative argument")


def _check_divisor(x):
    if np.any(x == 0):
        raise ExprDomainError("division by zero")


def _check_power(base, exponent):
    base, exponent = np.broadcast_arrays(base, exponent)
    if np.any((base < 0) & (exponent != np.floor(exponent))):
        raise ExprDomainError("negative base with non-integer exponent")
    if np.any((base == 0) & (exponent < 0)):
        raise ExprDomainError("zero raised to a negative power")


def _guards(e):
    """Domain checks of ``e`` in evaluation order, innermost first."""
    if isinstance(e, (Num, Var)):
        return []
    if isinstance(e, Neg):
        return _guards(e.operand)
    if isinstance(e, BinOp):
        found = _guards(e.left) + _guards(e.right)
        if e.op == '/':
            found.append((_check_divisor, (e.right,)))
        elif e.op == '^':
            found.append((_check_power, (e.left, e.right)))
        return found
    found = _guards(e.arg)
    if e.func == 'log':
        found.append((_check_log, (e.arg,)))
    elif e.func == 'sqrt':
        found.append((_check_sqrt, (e.arg,)))
    return found


def _real(value, source):
    value = np.asarray(value)
    if np.iscomplexobj(value):
        raise ExprDomainError(f"'{source}' is not real on the requested points")
    try:
        return value.astype(float)
    except (OverflowError, TypeError):
        raise ExprDomainError(f"'{source}' overflowed") from None


class _Compiled:
    """numpy evaluator of one tree with its domain guards."""

    def __init__(self, e, names):
        symbols = [_symbol(var) for var in names]
        self.source = to_source(e)
        self.function = sympy.lambdify(symbols, to_sympy(e), 'numpy')
        self.guards = [
            (check, [sympy.lambdify(symbols, to_sympy(part), 'numpy') for part in parts])
            for check, parts in _guards(e)
        ]

    def __call__(self, *args):
        with np.errstate(all='ignore'):
            for check, functions in self.guards:
                check(*(_real(function(*args), self.source) for function in functions))
            result = _real(self.function(*args), self.source)
        if not np.all(np.isfinite(result)):
            raise ExprDomainError(f"'{self.source}' is not finite on the requested points")
        return result


@functools.lru_cache(maxsize=512)
def _compiled(e, names):
    return _Compiled(e, names)


def _names(e, first, bindings):
    rest = sorted(free_variables(e) - set(first))
    for var in rest:
        if var not in bindings:
            raise UnboundVariableError(var)
    return tuple(first) + tuple(rest), [float(bindings[var]) for var in rest]


def evaluate(e: Expr, bindings: Optional[Mapping[str, float]] = None) -> float:
    names, values = _names(e, (), bindings or {})
    return float(_compiled(e, names)(*values))


def compile_scalar(e: Expr, var: str) -> Callable[[float], float]:
    """Closure evaluating ``e`` at one value of ``var``; used in integrator right-hand sides."""
    names, _ = _names(e, (var,), {})
    function = _compiled(e, names)
    return lambda x: float(function(x))


def evaluate_array(e: Expr, var: str, values, bindings: Optional[Mapping[str, float]] = None) -> np.ndarray:
    """Evaluate ``e`` at every entry of ``values`` (bound to ``var``)."""
    x = np.asarray(values, dtype=float)
    names, extra = _names(e, (var,), bindings or {})
    result = _compiled(e, names)(x, *extra)
    return np.array(np.broadcast_to(result, x.shape), dtype=float)


# Differentiation

def differentiate(e: Expr, var: str) -> Expr:
    if contains_function(e, 'floor'):
        raise NonDifferentiableError(f"'{to_source(e)}' contains floor, which has no derivative")
    return from_sympy(sympy.diff(to_sympy(e), _symbol(var)))
