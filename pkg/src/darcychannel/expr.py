"""Tiny arithmetic-expression grammar for config files.

Supported: ``+ - * / ^``, unary minus, ``sin``, ``cos``, ``exp``, numeric
constants, ``pi``/``e``, and the declared variables (``x``, and ``z`` for
fields on two-dimensional domains).  Compiled expressions are vectorized
over numpy arrays.
"""

import ast

import numpy as np

from .errors import ExpressionError

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.true_divide,
    ast.Pow: np.power,
}


def compile_expression(text, variables=("x",), key="expr"):
    """Compile an expression string into a vectorized callable.

    Parameters
    ----------
    text : str
        Expression in the grammar above; ``^`` means power.
    variables : tuple of str
        Allowed variable names, in the positional order of the returned
        callable.
    key : str
        Config key used in error messages.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError(key, "expected a non-empty expression string")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(key, f"cannot parse {text!r}: {exc.msg}") from None
    _validate(tree.body, variables, key)

    def evaluate(*args):
        if len(args) != len(variables):
            raise TypeError(f"expression takes {len(variables)} argument(s)")
        env = dict(zip(variables, (np.asarray(a, dtype=float) for a in args)))
        return _eval(tree.body, env)

    evaluate.source = text
    evaluate.variables = tuple(variables)
    return evaluate


def _validate(node, variables, key):
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(key, f"operator {type(node.op).__name__} not allowed")
        _validate(node.left, variables, key)
        _validate(node.right, variables, key)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError(key, f"operator {type(node.op).__name__} not allowed")
        _validate(node.operand, variables, key)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError(key, "only sin, cos, exp calls are allowed")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(key, f"{node.func.id} takes exactly one argument")
        _validate(node.args[0], variables, key)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTANTS:
            raise ExpressionError(key, f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError(key, f"constant {node.value!r} is not numeric")
    else:
        raise ExpressionError(key, f"syntax {type(node).__name__} not allowed")


def _eval(node, env):
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        value = _eval(node.operand, env)
        return -value if isinstance(node.op, ast.USub) else +value
    if isinstance(node, ast.Call):
        return _FUNCTIONS[node.func.id](_eval(node.args[0], env))
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else _CONSTANTS[node.id]
    return node.value
