"""Arithmetic expression plugin format.

User models, costs, controls and drift right-hand sides can be given as
strings such as ``"-x[0]*(1+u/sqrt(ln(2+x*x)))/(2+x*x)"``.  Expressions are
parsed with :mod:`ast`, checked against a small whitelist and turned into
Python source for one of two backends:

* ``"math"``  scalar code using :mod:`math`, suitable for ``numba.njit``;
* ``"numpy"`` vectorised code using :mod:`numpy`.

Bare ``x`` / ``u`` mean ``x[0]`` / ``u[0]``.  Any other free name must be
supplied as a constant or declared as an array variable.
"""

import ast
import math

import numpy as np

from .errors import ExpressionError

FUNCTIONS = {
    # name: (math backend, numpy backend, arity)
    "ln": ("math.log", "np.log", 1),
    "log": ("math.log", "np.log", 1),
    "exp": ("math.exp", "np.exp", 1),
    "sqrt": ("math.sqrt", "np.sqrt", 1),
    "pow": ("math.pow", "np.power", 2),
    "abs": ("abs", "np.abs", 1),
    "tanh": ("math.tanh", "np.tanh", 1),
    "sin": ("math.sin", "np.sin", 1),
    "cos": ("math.cos", "np.cos", 1),
    "min": ("min", "np.minimum", 2),
    "max": ("max", "np.maximum", 2),
}

_BUILTIN_CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/", ast.Pow: "**"}


class _Translator:
    def __init__(self, backend, indexed, scalars, constants):
        self.backend = backend
        self.indexed = indexed  # names that may be subscripted, e.g. x, u
        self.scalars = scalars  # free names passed through untouched
        self.constants = {**_BUILTIN_CONSTANTS, **constants}
        self.used = set()

    def visit(self, node):
        if isinstance(node, ast.Expression):
            return self.visit(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"unsupported literal {node.value!r}")
            return repr(float(node.value))
        if isinstance(node, ast.BinOp):
            op = _BINOPS.get(type(node.op))
            if op is None:
                raise ExpressionError(f"unsupported operator {type(node.op).__name__}")
            return f"({self.visit(node.left)} {op} {self.visit(node.right)})"
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return f"(-{self.visit(node.operand)})"
            if isinstance(node.op, ast.UAdd):
                return self.visit(node.operand)
            raise ExpressionError("unsupported unary operator")
        if isinstance(node, ast.Name):
            return self._name(node.id)
        if isinstance(node, ast.Subscript):
            if not isinstance(node.value, ast.Name) or node.value.id not in self.indexed:
                raise ExpressionError("only x[i] and u[j] may be subscripted")
            idx = node.slice
            if not (isinstance(idx, ast.Constant) and isinstance(idx.value, int)):
                raise ExpressionError("subscripts must be integer literals")
            self.used.add(node.value.id)
            return self._index(node.value.id, idx.value)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                name = getattr(node.func, "id", "?")
                raise ExpressionError(f"unknown function {name!r}")
            if node.keywords:
                raise ExpressionError("keyword arguments are not supported")
            math_name, np_name, arity = FUNCTIONS[node.func.id]
            if len(node.args) != arity:
                raise ExpressionError(f"{node.func.id} takes {arity} argument(s)")
            fn = math_name if self.backend == "math" else np_name
            args = ", ".join(self.visit(a) for a in node.args)
            return f"{fn}({args})"
        raise ExpressionError(f"unsupported syntax: {type(node).__name__}")

    def _index(self, name, i):
        if self.backend == "math":
            return f"{name}[{i}]"
        return f"{name}[..., {i}]"

    def _name(self, name):
        if name in self.indexed:
            self.used.add(name)
            return self._index(name, 0)
        if name in self.scalars:
            self.used.add(name)
            return name
        if name in self.constants:
            return repr(float(self.constants[name]))
        raise ExpressionError(f"unknown name {name!r}")


def translate(expr, backend="math", indexed=("x", "u"), scalars=(), constants=None):
    """Translate ``expr`` to backend source; returns ``(source, used_names)``."""
    if backend not in ("math", "numpy"):
        raise ValueError(backend)
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {expr!r}: {exc.msg}") from None
    tr = _Translator(backend, set(indexed), set(scalars), constants or {})
    return tr.visit(tree), tr.used


def free_names(expr):
    """Names referenced by ``expr`` that are neither functions nor builtins."""
    tree = ast.parse(expr.strip(), mode="eval")
    out = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id not in FUNCTIONS:
            out.add(node.id)
    return out - set(_BUILTIN_CONSTANTS)


def _exec(source, fname):
    ns = {"math": math, "np": np}
    exec(compile(source, f"<expr:{fname}>", "exec"), ns)
    return ns[fname]


def numpy_function(expr, args, constants=None, indexed=("x", "u")):
    """Vectorised ``f(*args)`` evaluating ``expr`` with numpy broadcasting."""
    scalars = [a for a in args if a not in indexed]
    body, _ = translate(expr, "numpy", indexed=indexed, scalars=scalars, constants=constants)
    src = f"def _f({', '.join(args)}):\n    return {body}\n"
    return _exec(src, "_f")


def vector_source(exprs, target="out", constants=None, indexed=("x", "u")):
    """Source lines writing each expression into ``target[i]`` (math backend)."""
    lines = []
    for i, e in enumerate(exprs):
        body, _ = translate(e, "math", indexed=indexed, constants=constants)
        lines.append(f"    {target}[{i}] = {body}")
    return lines


def build_jit(source, fname):
    """Exec ``source`` and return the numba-compiled function ``fname``."""
    import numba

    return numba.njit(nogil=True)(_exec(source, fname))
