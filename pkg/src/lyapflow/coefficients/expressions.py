"""Tiny expression language for coefficient fields.

Grammar: numeric literals, state variables x1..xd, time t, named parameters,
``+ - * /``, integer powers (``^`` or ``**``), and the calls sin, cos, exp,
tanh, min, max.  Strings are parsed by the Python ``ast`` machinery after
rewriting ``^`` to ``**``; only whitelisted node types are accepted so the
grammar stays closed.

Expressions support exact symbolic differentiation (min/max are rejected),
constant folding, and compilation to vectorized numpy evaluators.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..errors import (
    ExpressionNameError,
    ExpressionParseError,
    UnsupportedExpressionError,
)

_UNARY_FNS = ("sin", "cos", "exp", "tanh")
_BINARY_FNS = ("min", "max")


class Expr:
    """Base class for expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    """State variable x_{index+1} (index is 0-based)."""

    index: int


@dataclass(frozen=True)
class TimeVar(Expr):
    pass


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Sub(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Mul(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Div(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Neg(Expr):
    a: Expr


@dataclass(frozen=True)
class Call1(Expr):
    fn: str
    a: Expr


@dataclass(frozen=True)
class Call2(Expr):
    fn: str
    a: Expr
    b: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# parsing


def parse(text: str, dim: int, param_names: Iterable[str] = ()) -> Expr:
    """Parse ``text`` into an expression tree over x1..x{dim}, t and parameters."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionParseError("empty expression")
    params = set(param_names)
    source = text.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionParseError(
            f"syntax error in {text!r}: {exc.msg}", position=exc.offset
        ) from None
    return _convert(tree.body, text, dim, params)


def _pos(node: ast.AST) -> int | None:
    return getattr(node, "col_offset", None)


def _convert(node: ast.AST, text: str, dim: int, params: set) -> Expr:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionParseError(
                f"unsupported literal {node.value!r}", position=_pos(node)
            )
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        return _resolve_name(node.id, dim, params, _pos(node))
    if isinstance(node, ast.UnaryOp):
        operand = _convert(node.operand, text, dim, params)
        if isinstance(node.op, ast.USub):
            return Neg(operand)
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionParseError(
            f"unsupported unary operator in {text!r}", position=_pos(node)
        )
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            return _convert_pow(node, text, dim, params)
        a = _convert(node.left, text, dim, params)
        b = _convert(node.right, text, dim, params)
        if isinstance(node.op, ast.Add):
            return Add(a, b)
        if isinstance(node.op, ast.Sub):
            return Sub(a, b)
        if isinstance(node.op, ast.Mult):
            return Mul(a, b)
        if isinstance(node.op, ast.Div):
            return Div(a, b)
        raise ExpressionParseError(
            f"unsupported operator in {text!r}", position=_pos(node)
        )
    if isinstance(node, ast.Call):
        return _convert_call(node, text, dim, params)
    raise ExpressionParseError(
        f"unsupported syntax in {text!r}", position=_pos(node)
    )


def _resolve_name(name: str, dim: int, params: set, pos) -> Expr:
    if name == "t":
        return TimeVar()
    if name.startswith("x") and name[1:].isdigit():
        idx = int(name[1:])
        if not 1 <= idx <= dim:
            raise ExpressionNameError(
                f"variable {name} out of range for dimension {dim}", position=pos
            )
        return Var(idx - 1)
    if name in params:
        return Param(name)
    raise ExpressionNameError(f"unknown identifier {name!r}", position=pos)


def _convert_pow(node: ast.BinOp, text, dim, params) -> Expr:
    base = _convert(node.left, text, dim, params)
    exp_node = node.right
    sign = 1
    if isinstance(exp_node, ast.UnaryOp) and isinstance(exp_node.op, ast.USub):
        sign = -1
        exp_node = exp_node.operand
    if not (isinstance(exp_node, ast.Constant) and isinstance(exp_node.value, int)):
        raise ExpressionParseError(
            "exponent must be an integer literal", position=_pos(node.right)
        )
    return Pow(base, sign * exp_node.value)


def _convert_call(node: ast.Call, text, dim, params) -> Expr:
    if not isinstance(node.func, ast.Name):
        raise ExpressionParseError("only named calls are allowed", position=_pos(node))
    fn = node.func.id
    if node.keywords:
        raise ExpressionParseError(
            f"keyword arguments not allowed in {fn}()", position=_pos(node)
        )
    args = [_convert(a, text, dim, params) for a in node.args]
    if fn in _UNARY_FNS:
        if len(args) != 1:
            raise ExpressionParseError(
                f"{fn}() takes exactly one argument", position=_pos(node)
            )
        return Call1(fn, args[0])
    if fn in _BINARY_FNS:
        if len(args) != 2:
            raise ExpressionParseError(
                f"{fn}() takes exactly two arguments", position=_pos(node)
            )
        return Call2(fn, args[0], args[1])
    raise ExpressionNameError(f"unknown function {fn!r}", position=_pos(node))


# ---------------------------------------------------------------------------
# structural queries


def free_state_vars(expr: Expr) -> frozenset[int]:
    out: set[int] = set()
    _walk_vars(expr, out)
    return frozenset(out)


def _walk_vars(expr: Expr, out: set) -> None:
    if isinstance(expr, Var):
        out.add(expr.index)
    elif isinstance(expr, (Add, Sub, Mul, Div)):
        _walk_vars(expr.a, out)
        _walk_vars(expr.b, out)
    elif isinstance(expr, Pow):
        _walk_vars(expr.base, out)
    elif isinstance(expr, Neg):
        _walk_vars(expr.a, out)
    elif isinstance(expr, Call1):
        _walk_vars(expr.a, out)
    elif isinstance(expr, Call2):
        _walk_vars(expr.a, out)
        _walk_vars(expr.b, out)


def uses_time(expr: Expr) -> bool:
    if isinstance(expr, TimeVar):
        return True
    if isinstance(expr, (Add, Sub, Mul, Div)):
        return uses_time(expr.a) or uses_time(expr.b)
    if isinstance(expr, Pow):
        return uses_time(expr.base)
    if isinstance(expr, (Neg, Call1)):
        return uses_time(expr.a)
    if isinstance(expr, Call2):
        return uses_time(expr.a) or uses_time(expr.b)
    return False


def free_params(expr: Expr) -> frozenset[str]:
    out: set[str] = set()

    def walk(e: Expr) -> None:
        if isinstance(e, Param):
            out.add(e.name)
        elif isinstance(e, (Add, Sub, Mul, Div, Call2)):
            walk(e.a)
            walk(e.b)
        elif isinstance(e, Pow):
            walk(e.base)
        elif isinstance(e, (Neg, Call1)):
            walk(e.a)

    walk(expr)
    return frozenset(out)


def is_constant(expr: Expr) -> bool:
    """True when the expression depends neither on the state nor on time."""
    return not free_state_vars(expr) and not uses_time(expr)


# ---------------------------------------------------------------------------
# rewriting


def bind(expr: Expr, params: Mapping[str, float]) -> Expr:
    """Substitute parameter values, producing a parameter-free tree."""
    if isinstance(expr, Param):
        if expr.name not in params:
            raise ExpressionNameError(f"parameter {expr.name!r} has no value")
        return Const(float(params[expr.name]))
    if isinstance(expr, (Const, Var, TimeVar)):
        return expr
    if isinstance(expr, Add):
        return Add(bind(expr.a, params), bind(expr.b, params))
    if isinstance(expr, Sub):
        return Sub(bind(expr.a, params), bind(expr.b, params))
    if isinstance(expr, Mul):
        return Mul(bind(expr.a, params), bind(expr.b, params))
    if isinstance(expr, Div):
        return Div(bind(expr.a, params), bind(expr.b, params))
    if isinstance(expr, Pow):
        return Pow(bind(expr.base, params), expr.exponent)
    if isinstance(expr, Neg):
        return Neg(bind(expr.a, params))
    if isinstance(expr, Call1):
        return Call1(expr.fn, bind(expr.a, params))
    if isinstance(expr, Call2):
        return Call2(expr.fn, bind(expr.a, params), bind(expr.b, params))
    raise TypeError(f"unknown node {expr!r}")


def simplify(expr: Expr) -> Expr:
    """Bottom-up constant folding and identity elimination."""
    if isinstance(expr, (Const, Var, TimeVar, Param)):
        return expr
    if isinstance(expr, Neg):
        a = simplify(expr.a)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.a
        return Neg(a)
    if isinstance(expr, Add):
        a, b = simplify(expr.a), simplify(expr.b)
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value + b.value)
        if a == ZERO or (isinstance(a, Const) and a.value == 0.0):
            return b
        if b == ZERO or (isinstance(b, Const) and b.value == 0.0):
            return a
        return Add(a, b)
    if isinstance(expr, Sub):
        a, b = simplify(expr.a), simplify(expr.b)
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value - b.value)
        if isinstance(b, Const) and b.value == 0.0:
            return a
        if isinstance(a, Const) and a.value == 0.0:
            return simplify(Neg(b))
        return Sub(a, b)
    if isinstance(expr, Mul):
        a, b = simplify(expr.a), simplify(expr.b)
        if isinstance(a, Const) and isinstance(b, Const):
            return Const(a.value * b.value)
        for u, v in ((a, b), (b, a)):
            if isinstance(u, Const):
                if u.value == 0.0:
                    return ZERO
                if u.value == 1.0:
                    return v
                if u.value == -1.0:
                    return simplify(Neg(v))
        return Mul(a, b)
    if isinstance(expr, Div):
        a, b = simplify(expr.a), simplify(expr.b)
        if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
            return Const(a.value / b.value)
        if isinstance(a, Const) and a.value == 0.0:
            return ZERO
        if isinstance(b, Const) and b.value == 1.0:
            return a
        return Div(a, b)
    if isinstance(expr, Pow):
        base = simplify(expr.base)
        if expr.exponent == 0:
            return ONE
        if expr.exponent == 1:
            return base
        if isinstance(base, Const):
            return Const(float(base.value) ** expr.exponent)
        return Pow(base, expr.exponent)
    if isinstance(expr, Call1):
        a = simplify(expr.a)
        if isinstance(a, Const):
            fn = getattr(np, expr.fn)
            return Const(float(fn(a.value)))
        return Call1(expr.fn, a)
    if isinstance(expr, Call2):
        a, b = simplify(expr.a), simplify(expr.b)
        if isinstance(a, Const) and isinstance(b, Const):
            fn = min if expr.fn == "min" else max
            return Const(float(fn(a.value, b.value)))
        return Call2(expr.fn, a, b)
    raise TypeError(f"unknown node {expr!r}")


def differentiate(expr: Expr, var_index: int) -> Expr:
    """Exact partial derivative with respect to x_{var_index+1} (simplified)."""
    return simplify(_diff(expr, var_index))


def _diff(expr: Expr, i: int) -> Expr:
    if isinstance(expr, (Const, TimeVar, Param)):
        return ZERO
    if isinstance(expr, Var):
        return ONE if expr.index == i else ZERO
    if isinstance(expr, Add):
        return Add(_diff(expr.a, i), _diff(expr.b, i))
    if isinstance(expr, Sub):
        return Sub(_diff(expr.a, i), _diff(expr.b, i))
    if isinstance(expr, Mul):
        return Add(Mul(_diff(expr.a, i), expr.b), Mul(expr.a, _diff(expr.b, i)))
    if isinstance(expr, Div):
        num = Sub(Mul(_diff(expr.a, i), expr.b), Mul(expr.a, _diff(expr.b, i)))
        return Div(num, Pow(expr.b, 2))
    if isinstance(expr, Pow):
        inner = _diff(expr.base, i)
        return Mul(Mul(Const(float(expr.exponent)), Pow(expr.base, expr.exponent - 1)), inner)
    if isinstance(expr, Neg):
        return Neg(_diff(expr.a, i))
    if isinstance(expr, Call1):
        inner = _diff(expr.a, i)
        if expr.fn == "sin":
            outer: Expr = Call1("cos", expr.a)
        elif expr.fn == "cos":
            outer = Neg(Call1("sin", expr.a))
        elif expr.fn == "exp":
            outer = Call1("exp", expr.a)
        elif expr.fn == "tanh":
            outer = Sub(ONE, Pow(Call1("tanh", expr.a), 2))
        else:  # pragma: no cover
            raise UnsupportedExpressionError(f"cannot differentiate {expr.fn}")
        return Mul(outer, inner)
    if isinstance(expr, Call2):
        raise UnsupportedExpressionError(
            f"{expr.fn} is not differentiable; fields using min/max support "
            "simulation only, not tangent propagation"
        )
    raise TypeError(f"unknown node {expr!r}")


# ---------------------------------------------------------------------------
# evaluation and compilation


def evaluate(expr: Expr, x, t=0.0):
    """Reference tree-walking evaluator.  x has shape (..., d)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return x[..., expr.index]
    if isinstance(expr, TimeVar):
        return t
    if isinstance(expr, Param):
        raise ExpressionNameError(f"unbound parameter {expr.name!r}")
    if isinstance(expr, Add):
        return evaluate(expr.a, x, t) + evaluate(expr.b, x, t)
    if isinstance(expr, Sub):
        return evaluate(expr.a, x, t) - evaluate(expr.b, x, t)
    if isinstance(expr, Mul):
        return evaluate(expr.a, x, t) * evaluate(expr.b, x, t)
    if isinstance(expr, Div):
        return evaluate(expr.a, x, t) / evaluate(expr.b, x, t)
    if isinstance(expr, Pow):
        return evaluate(expr.base, x, t) ** expr.exponent
    if isinstance(expr, Neg):
        return -evaluate(expr.a, x, t)
    if isinstance(expr, Call1):
        return getattr(np, expr.fn)(evaluate(expr.a, x, t))
    if isinstance(expr, Call2):
        fn = np.minimum if expr.fn == "min" else np.maximum
        return fn(evaluate(expr.a, x, t), evaluate(expr.b, x, t))
    raise TypeError(f"unknown node {expr!r}")


def codegen(expr: Expr) -> str:
    """Render the expression as a numpy source fragment over ``x`` and ``t``."""
    if isinstance(expr, Const):
        return f"({expr.value!r})"
    if isinstance(expr, Var):
        return f"x[..., {expr.index}]"
    if isinstance(expr, TimeVar):
        return "t"
    if isinstance(expr, Param):
        raise ExpressionNameError(f"unbound parameter {expr.name!r}")
    if isinstance(expr, Add):
        return f"({codegen(expr.a)} + {codegen(expr.b)})"
    if isinstance(expr, Sub):
        return f"({codegen(expr.a)} - {codegen(expr.b)})"
    if isinstance(expr, Mul):
        return f"({codegen(expr.a)} * {codegen(expr.b)})"
    if isinstance(expr, Div):
        return f"({codegen(expr.a)} / {codegen(expr.b)})"
    if isinstance(expr, Pow):
        return f"({codegen(expr.base)} ** ({expr.exponent}))"
    if isinstance(expr, Neg):
        return f"(-{codegen(expr.a)})"
    if isinstance(expr, Call1):
        return f"np.{expr.fn}({codegen(expr.a)})"
    if isinstance(expr, Call2):
        fn = "np.minimum" if expr.fn == "min" else "np.maximum"
        return f"{fn}({codegen(expr.a)}, {codegen(expr.b)})"
    raise TypeError(f"unknown node {expr!r}")


def compile_assignments(
    entries: Sequence[tuple[tuple[int, ...], Expr]], name: str
) -> Callable:
    """Compile a list of (index-tuple, expr) into ``f(x, t, out)``.

    ``out`` must be pre-shaped so that ``out[..., *idx]`` broadcasts against
    ``x[..., i]``; batch dimensions lead.  Constant entries are assigned as
    scalars and broadcast.
    """
    lines = [f"def {name}(x, t, out):"]
    if not entries:
        lines.append("    pass")
    for idx, expr in entries:
        target = ", ".join(str(i) for i in idx)
        lines.append(f"    out[..., {target}] = {codegen(expr)}")
    source = "\n".join(lines)
    namespace = {"np": np}
    exec(compile(source, f"<lyapflow:{name}>", "exec"), namespace)
    fn = namespace[name]
    fn.__source__ = source
    return fn


def compile_vector(exprs: Sequence[Expr], name: str) -> Callable:
    """Compile per-coordinate expressions into ``f(x, t, out)`` with out[..., i]."""
    return compile_assignments([((i,), e) for i, e in enumerate(exprs)], name)


def canon(expr: Expr) -> str:
    """Stable s-expression serialization used in content hashes."""
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Var):
        return f"x{expr.index + 1}"
    if isinstance(expr, TimeVar):
        return "t"
    if isinstance(expr, Param):
        return f"param:{expr.name}"
    if isinstance(expr, Add):
        return f"(+ {canon(expr.a)} {canon(expr.b)})"
    if isinstance(expr, Sub):
        return f"(- {canon(expr.a)} {canon(expr.b)})"
    if isinstance(expr, Mul):
        return f"(* {canon(expr.a)} {canon(expr.b)})"
    if isinstance(expr, Div):
        return f"(/ {canon(expr.a)} {canon(expr.b)})"
    if isinstance(expr, Pow):
        return f"(^ {canon(expr.base)} {expr.exponent})"
    if isinstance(expr, Neg):
        return f"(neg {canon(expr.a)})"
    if isinstance(expr, Call1):
        return f"({expr.fn} {canon(expr.a)})"
    if isinstance(expr, Call2):
        return f"({expr.fn} {canon(expr.a)} {canon(expr.b)})"
    raise TypeError(f"unknown node {expr!r}")
