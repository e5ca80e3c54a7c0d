"""Tiny arithmetic expression language for coefficient functions.

Expressions are strings over the variables ``t`` and ``x`` (and optionally
extra named parameters) built from ``+ - * / **``, ``pow``, ``exp``, ``sin``,
``cos``, ``abs``, ``min``, ``max`` plus a few conveniences (``sqrt``, ``log``,
``tanh``, ``pi``).  They compile to numpy-vectorised callables ``f(t, x)``
and can be differentiated symbolically.
"""

from __future__ import annotations

import ast
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy

FUNCTIONS = {
    "pow": sympy.Pow,
    "exp": sympy.exp,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "abs": sympy.Abs,
    "min": sympy.Min,
    "max": sympy.Max,
    "sqrt": sympy.sqrt,
    "log": sympy.log,
    "tanh": sympy.tanh,
}
CONSTANTS = {"pi": sympy.pi}
VARIABLES = ("t", "x")

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class ExpressionError(ValueError):
    pass


def _check(text: str, extra: tuple[str, ...]) -> None:
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    names = set(VARIABLES) | set(CONSTANTS) | set(extra)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(
                f"unsupported syntax {type(node).__name__} in expression {text!r}"
            )
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(f"unknown function in expression {text!r}")
            if node.keywords:
                raise ExpressionError(f"keyword arguments not allowed in {text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in names and node.id not in FUNCTIONS:
                raise ExpressionError(f"unknown name {node.id!r} in expression {text!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"only numeric literals allowed in {text!r}")


@lru_cache(maxsize=512)
def parse(text: str, extra: tuple[str, ...] = ()) -> sympy.Expr:
    """Validate ``text`` and return the sympy expression."""
    text = str(text).strip()
    if not text:
        raise ExpressionError("empty expression")
    _check(text, extra)
    local = {name: sympy.Symbol(name, real=True) for name in VARIABLES + extra}
    local.update(FUNCTIONS)
    local.update(CONSTANTS)
    return sympy.sympify(text.replace("^", "**"), locals=local)


class Expression:
    """A compiled coefficient ``f(t, x)``.

    Calls broadcast over numpy arrays; the result always has the broadcast
    shape of the arguments (constants are expanded).
    """

    _t, _x = sympy.symbols("t x", real=True)

    def __init__(self, text: str | float | int, _sym: sympy.Expr | None = None):
        self.text = str(text)
        self.sym = parse(self.text) if _sym is None else _sym
        self._fn = sympy.lambdify((self._t, self._x), self.sym, modules="numpy")
        self.is_constant = not (self.sym.free_symbols & {self._t, self._x})
        self._const = float(self.sym) if self.is_constant and self.sym.is_real else None

    def __call__(self, t, x):
        shape = np.broadcast_shapes(np.shape(t), np.shape(x))
        if self._const is not None:
            return np.full(shape, self._const)
        out = np.asarray(self._fn(t, x), dtype=float)
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def diff(self, var: str, order: int = 1) -> "Expression":
        sym = sympy.diff(self.sym, self._t if var == "t" else self._x, order)
        return Expression(sympy.sstr(sym), _sym=sym)

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"


def compile_coefficient(value) -> Callable:
    """Return a vectorised ``f(t, x)`` from an expression string, number or callable."""
    if callable(value) and not isinstance(value, str):
        return value
    return Expression(value)
