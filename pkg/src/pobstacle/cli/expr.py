"""A small, safe expression language for fields over ``(x, y, t)``.

Grammar: numbers, the names ``x``, ``y`` (2D only), ``t``, ``pi``, ``e``;
``+ - * / **`` and unary minus; calls ``sin cos exp abs min max``.
"""

from __future__ import annotations

import ast
import math

import numpy as np

__all__ = ["ExpressionError", "compile_expression", "evaluate"]


class ExpressionError(ValueError):
    pass


_FUNCS = {
    "sin": (np.sin, 1),
    "cos": (np.cos, 1),
    "exp": (np.exp, 1),
    "abs": (np.abs, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def compile_expression(text: str, variables=("x", "t")):
    """Parse ``text`` and return a function of keyword arrays ``f(x=..., t=...)``."""
    if not isinstance(text, str):
        raise ExpressionError("expression must be a string")
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    allowed = set(variables)

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"unsupported literal {node.value!r}")
            return
        if isinstance(node, ast.Name):
            if node.id not in allowed and node.id not in _CONSTS:
                raise ExpressionError(f"unknown name {node.id!r}")
            return
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError("unsupported operator")
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError("unsupported unary operator")
            check(node.operand)
            return
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                name = node.func.id if isinstance(node.func, ast.Name) else "call"
                raise ExpressionError(f"unsupported function {name!r}; allowed: {', '.join(sorted(_FUNCS))}")
            if len(node.args) != _FUNCS[node.func.id][1]:
                raise ExpressionError(f"{node.func.id} takes {_FUNCS[node.func.id][1]} argument(s)")
            for a in node.args:
                check(a)
            return
        raise ExpressionError(f"unsupported syntax {type(node).__name__}")

    check(tree)

    def run(node, env):
        if isinstance(node, ast.Expression):
            return run(node.body, env)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](run(node.left, env), run(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = run(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        fn = _FUNCS[node.func.id][0]
        return fn(*[run(a, env) for a in node.args])

    def fn(**env):
        with np.errstate(all="ignore"):
            return run(tree, env)

    return fn


def evaluate(text: str, **env) -> np.ndarray:
    """Evaluate ``text`` on broadcast coordinate arrays; the result has their shape."""
    fn = compile_expression(text, tuple(env))
    shape = np.broadcast_shapes(*[np.shape(v) for v in env.values()]) if env else ()
    out = np.broadcast_to(np.asarray(fn(**env), dtype=float), shape).copy()
    if not np.all(np.isfinite(out)):
        raise ExpressionError(f"expression {text!r} is not finite on the lattice")
    return out
