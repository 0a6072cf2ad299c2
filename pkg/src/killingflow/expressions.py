"""Arithmetic expressions used in scenario files.

Grammar: numbers, ``+ - * / ^`` (``**`` also accepted), parentheses, the
variables ``x1 x2`` (aliases ``r = x1``, ``z = x2``), ``nu1 nu2`` for the
inward boundary normal, constants ``pi e`` and the functions
``sin cos tan exp log sqrt``.  Text is parsed with :mod:`ast` against that
whitelist, converted to sympy (for exact derivatives) and compiled with
``lambdify``.
"""

from __future__ import annotations

import ast

import numpy as np
import sympy

from .errors import ConfigError

FUNCTIONS = {"sin": sympy.sin, "cos": sympy.cos, "tan": sympy.tan, "exp": sympy.exp,
             "log": sympy.log, "sqrt": sympy.sqrt}
CONSTANTS = {"pi": sympy.pi, "e": sympy.E}
X1, X2, NU1, NU2 = sympy.symbols("x1 x2 nu1 nu2", real=True)
VARIABLES = {"x1": X1, "x2": X2, "r": X1, "z": X2, "nu1": NU1, "nu2": NU2}

_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
           ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a / b,
           ast.Pow: lambda a, b: a**b}


def _convert(node, text):
    if isinstance(node, ast.Expression):
        return _convert(node.body, text)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_convert(node.left, text), _convert(node.right, text))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        arg = _convert(node.operand, text)
        return -arg if isinstance(node.op, ast.USub) else arg
    if isinstance(node, ast.Constant) and type(node.value) in (int, float):
        return sympy.nsimplify(node.value) if isinstance(node.value, int) else sympy.Float(
            node.value, 17)
    if isinstance(node, ast.Name):
        if node.id in VARIABLES:
            return VARIABLES[node.id]
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        raise ConfigError(f"unknown name {node.id!r} in expression {text!r}")
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in FUNCTIONS:
            raise ConfigError(f"unknown function {node.func.id!r} in expression {text!r}")
        if len(node.args) != 1:
            raise ConfigError(f"{node.func.id} takes one argument in expression {text!r}")
        return FUNCTIONS[node.func.id](_convert(node.args[0], text))
    raise ConfigError(f"unsupported syntax at column {getattr(node, 'col_offset', 0) + 1} "
                      f"in expression {text!r}")


class Expression:
    """A parsed scalar expression.

    >>> Expression("-log(cos(x1))")(np.array([[0.0]]))
    array([0.])
    """

    def __init__(self, text, dim: int = 2, allow_normal: bool = False):
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            text = repr(float(text))
        if not isinstance(text, str):
            raise ConfigError(f"expression must be a string or number, got {type(text).__name__}")
        self.text = text
        self.dim = dim
        try:
            tree = ast.parse(text.replace("^", "**").strip(), mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {text!r}: {exc.msg} "
                              f"(column {exc.offset})") from None
        self.sym = _convert(tree, text)
        allowed = {X1, X2}.intersection({X1} if dim == 1 else {X1, X2})
        if allow_normal:
            allowed |= {NU1} if dim == 1 else {NU1, NU2}
        extra = self.sym.free_symbols - allowed
        if extra:
            names = ", ".join(sorted(str(s) for s in extra))
            raise ConfigError(f"expression {text!r} uses variables not available here: {names}")
        self._f = sympy.lambdify((X1, X2, NU1, NU2), self.sym, modules="numpy")

    @property
    def uses_normal(self) -> bool:
        return bool(self.sym.free_symbols & {NU1, NU2})

    def __call__(self, x, nu=None):
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        x2 = x[..., 1] if x.shape[-1] > 1 else np.zeros_like(x1)
        if nu is None:
            n1 = n2 = np.zeros_like(x1)
        else:
            nu = np.asarray(nu, dtype=float)
            n1 = nu[..., 0]
            n2 = nu[..., 1] if nu.shape[-1] > 1 else np.zeros_like(x1)
        with np.errstate(all="ignore"):
            val = self._f(x1, x2, n1, n2)
        return np.broadcast_to(np.asarray(val, dtype=float), x1.shape).copy()

    def diff(self, k: int) -> "Expression":
        """Exact partial derivative with respect to x_{k+1}."""
        out = Expression.__new__(Expression)
        out.text = f"d/dx{k + 1}({self.text})"
        out.dim = self.dim
        out.sym = sympy.diff(self.sym, (X1, X2)[k])
        out._f = sympy.lambdify((X1, X2, NU1, NU2), out.sym, modules="numpy")
        return out

    def __repr__(self):
        return f"Expression({self.text!r})"
