"""Built-in models, controls, costs and candidates, plus string parsers for them.

Control strings::

    const:1.5              precise constant action
    mix:0.5@1,0.5@2        relaxed mixture (weight@action)
    expr:1+0.5*tanh(x)     precise feedback law in x[i]

Cost strings: ``demo``, ``section3``, ``action``, ``unit``, ``lnx``, ``x2``,
or ``expr:<expression in x, u>``.
"""

import math

import numba as nb
import numpy as np

from . import expressions
from .candidates import LyapunovCandidate
from .errors import ControlError, ExpressionError
from .sde_core import ActionSet, Control, CostFunction, ModelSpec

SQRT2 = math.sqrt(2.0)


# ----------------------------------------------------------------------------
# example21: b(x,u) = -x (1 + u / sqrt(ln(2 + x^2))) / (2 + x^2), sigma = sqrt(2)


@nb.njit(nogil=True, cache=True)
def _ex21_drift(x, u, p, out):
    s = 2.0 + x[0] * x[0]
    out[0] = -x[0] * (1.0 + p[0] * u[0] / math.sqrt(math.log(s))) / s


@nb.njit(nogil=True, cache=True)
def _ex21_diffusion(x, p, out):
    out[0, 0] = 1.4142135623730951


def example21(sabotage=False):
    """One-dimensional model with a logarithmically weak restoring drift.

    ``sabotage=True`` flips the sign of the control term in the drift; it
    exists only to check that the verification suite notices a broken model.
    """
    sign = -1.0 if sabotage else 1.0
    return ModelSpec(
        name="example21" + ("-sabotaged" if sabotage else ""),
        dim=1,
        drift=_ex21_drift,
        diffusion=_ex21_diffusion,
        action_set=ActionSet.interval(1.0, 2.0),
        params=np.array([sign]),
        description="b(x,u) = -x(1 + u/sqrt(ln(2+x^2)))/(2+x^2), sigma = sqrt(2), U = [1, 2]",
    )


# ----------------------------------------------------------------------------
# Ornstein-Uhlenbeck: b(x,u) = -x + u, sigma = 1


@nb.njit(nogil=True, cache=True)
def _ou_drift(x, u, p, out):
    out[0] = -x[0] + u[0]


@nb.njit(nogil=True, cache=True)
def _unit_diffusion(x, p, out):
    out[0, 0] = 1.0


def ou():
    return ModelSpec(name="ou", dim=1, drift=_ou_drift, diffusion=_unit_diffusion,
                     action_set=ActionSet.interval(-2.0, 2.0),
                     description="b(x,u) = -x + u, sigma = 1, U = [-2, 2]")


# ----------------------------------------------------------------------------
# frozen dynamics b = 0, sigma = 0 (degenerate; for plumbing tests)


@nb.njit(nogil=True, cache=True)
def _zero_drift(x, u, p, out):
    for i in range(out.shape[0]):
        out[i] = 0.0


@nb.njit(nogil=True, cache=True)
def _zero_diffusion(x, p, out):
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = 0.0


def zero(dim=1, action_set=None):
    return ModelSpec(name="zero", dim=dim, drift=_zero_drift, diffusion=_zero_diffusion,
                     action_set=action_set or ActionSet.interval(0.0, 2.0), allow_degenerate=True)


# ----------------------------------------------------------------------------
# expression plugin


def model_from_expressions(drift, diffusion, action_set, name="plugin", constants=None,
                           allow_degenerate=False):
    """Model from expression strings.

    ``drift`` is a list of d expressions in ``x[i]`` and ``u`` (or ``u[j]``);
    ``diffusion`` is either a list of d expressions (diagonal sigma) or a
    d-by-d nested list.
    """
    if isinstance(drift, str):
        drift = [drift]
    d = len(drift)
    if isinstance(diffusion, str):
        diffusion = [diffusion]
    if all(isinstance(r, str) for r in diffusion):
        if len(diffusion) != d:
            raise ExpressionError("diagonal diffusion needs one entry per state coordinate")
        rows = [["0" if i != j else diffusion[i] for j in range(d)] for i in range(d)]
    else:
        rows = [list(r) for r in diffusion]
        if len(rows) != d or any(len(r) != d for r in rows):
            raise ExpressionError("diffusion must be d x d")
    for e in drift:
        _check_indices(e, d, action_set.dim)
    for r in rows:
        for e in r:
            if "u" in expressions.free_names(e):
                raise ExpressionError("diffusion may not depend on the action")
            _check_indices(e, d, action_set.dim)

    src = ["def _drift(x, u, p, out):"]
    src += expressions.vector_source(drift, "out", constants=constants)
    src.append("")
    src.append("def _diffusion(x, p, out):")
    flat = [e for r in rows for e in r]
    for k, line in enumerate(expressions.vector_source(flat, "out", constants=constants, indexed=("x",))):
        i, j = divmod(k, d)
        src.append(line.replace(f"out[{k}] =", f"out[{i}, {j}] ="))
    source = "\n".join(src) + "\n"
    fdrift = expressions.build_jit(source, "_drift")
    fdiff = expressions.build_jit(source, "_diffusion")
    return ModelSpec(name=name, dim=d, drift=fdrift, diffusion=fdiff, action_set=action_set,
                     allow_degenerate=allow_degenerate,
                     description=f"drift={drift}, diffusion={rows}")


def _check_indices(expr, d, m):
    import ast

    for node in ast.walk(ast.parse(expr.strip(), mode="eval")):
        if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Name):
            idx = node.slice.value if isinstance(node.slice, ast.Constant) else None
            bound = d if node.value.id == "x" else m
            if isinstance(idx, int) and not 0 <= idx < bound:
                raise ExpressionError(f"index {node.value.id}[{idx}] out of range in {expr!r}")


def action_set_from_config(spec):
    kind = spec.get("kind", "interval")
    if kind == "interval":
        return ActionSet.interval(spec["lo"], spec["hi"])
    if kind == "box":
        return ActionSet.box(spec["lo"], spec["hi"])
    if kind == "finite":
        return ActionSet.finite(spec["points"])
    raise ExpressionError(f"unknown action set kind {kind!r}")


BUILTIN_MODELS = {"example21": example21, "ou": ou, "zero": zero}


def get_model(spec, sabotage=False):
    """Model from a built-in name or a plugin dict.

    Plugin dicts have keys ``drift``, ``diffusion``, ``action_set`` and
    optionally ``name`` and ``constants``.
    """
    if isinstance(spec, ModelSpec):
        return spec
    if isinstance(spec, str):
        if spec not in BUILTIN_MODELS:
            raise KeyError(f"unknown model {spec!r}; built-ins are {sorted(BUILTIN_MODELS)}")
        if spec == "example21":
            return example21(sabotage=sabotage)
        return BUILTIN_MODELS[spec]()
    return model_from_expressions(spec["drift"], spec["diffusion"],
                                  action_set_from_config(spec["action_set"]),
                                  name=spec.get("name", "plugin"), constants=spec.get("constants"))


# ----------------------------------------------------------------------------
# controls


def feedback_control(expr, name=None, constants=None):
    """Precise feedback control u = expr(x) for a scalar action."""
    body, _ = expressions.translate(expr, "math", indexed=("x",), constants=constants)
    src = (
        "def _fill(x, cp, acts, wts):\n"
        f"    acts[0, 0] = {body}\n"
        "    wts[0] = 1.0\n"
        "    return 1\n"
    )
    fill = expressions.build_jit(src, "_fill")
    return Control.feedback(fill, action_dim=1, name=name or f"expr:{expr}")


def parse_control(text):
    """Control from a ``const:`` / ``mix:`` / ``expr:`` string."""
    if isinstance(text, Control):
        return text
    kind, _, rest = text.partition(":")
    if not rest:
        raise ControlError(f"malformed control {text!r}")
    if kind == "const":
        try:
            vals = [float(v) for v in rest.split("|")]
        except ValueError:
            raise ControlError(f"malformed control {text!r}") from None
        return Control.constant(vals, name=text)
    if kind == "mix":
        acts, wts = [], []
        for term in rest.split(","):
            w, sep, a = term.partition("@")
            if not sep:
                raise ControlError(f"mixture terms must be weight@action in {text!r}")
            try:
                wts.append(float(w))
                acts.append(float(a))
            except ValueError:
                raise ControlError(f"malformed control {text!r}") from None
        return Control.mixture(acts, wts, name=text)
    if kind == "expr":
        return feedback_control(rest, name=text)
    raise ControlError(f"unknown control kind {kind!r}")


def parse_control_list(text):
    """Split a comma-separated list of control strings (mixtures may contain commas)."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if out and not tok.startswith(("const:", "mix:", "expr:")):
            out[-1] = out[-1] + "," + tok
        else:
            out.append(tok)
    return [parse_control(t) for t in out]


# ----------------------------------------------------------------------------
# costs


@nb.njit(nogil=True, cache=True)
def _demo_cost(x, u, p):
    return math.log(2.0 + x[0] * x[0]) + u[0]


@nb.njit(nogil=True, cache=True)
def _section3_cost(x, u, p):
    # ln(2+x^2) on the set {|x| < p[0]}, plus the action
    c = u[0]
    if abs(x[0]) < p[0]:
        c += math.log(2.0 + x[0] * x[0])
    return c


@nb.njit(nogil=True, cache=True)
def _action_cost(x, u, p):
    return u[0]


@nb.njit(nogil=True, cache=True)
def _unit_cost(x, u, p):
    return 1.0


@nb.njit(nogil=True, cache=True)
def _lnx_cost(x, u, p):
    return math.log(2.0 + x[0] * x[0])


@nb.njit(nogil=True, cache=True)
def _x2_cost(x, u, p):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * x[i]
    return s


@nb.njit(nogil=True, cache=True)
def _outside_cost(x, u, p):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * x[i]
    return 1.0 if math.sqrt(s) > p[0] else 0.0


def outside_indicator(radius):
    """f(x) = 1{|x| > radius}, the cutoff used in tightness checks."""
    return CostFunction(_outside_cost, np.array([float(radius)]), name=f"out:{radius:g}")


def demo_cost():
    return CostFunction(_demo_cost, name="demo")


def section3_cost(radius=5.0):
    return CostFunction(_section3_cost, np.array([float(radius)]), name="section3")


def action_cost():
    return CostFunction(_action_cost, name="action")


def unit_cost():
    return CostFunction(_unit_cost, name="unit")


def lnx_cost():
    return CostFunction(_lnx_cost, name="lnx")


def x2_cost():
    return CostFunction(_x2_cost, name="x2")


def constant_cost(gamma):
    return expression_cost(repr(float(gamma)), name=f"const:{gamma:g}")


def expression_cost(expr, name=None, constants=None):
    body, _ = expressions.translate(expr, "math", constants=constants)
    src = f"def _cost(x, u, p):\n    return {body}\n"
    return CostFunction(expressions.build_jit(src, "_cost"), name=name or f"expr:{expr}")


COSTS = {"demo": demo_cost, "section3": section3_cost, "action": action_cost,
         "unit": unit_cost, "lnx": lnx_cost, "x2": x2_cost}


def parse_cost(text):
    if isinstance(text, CostFunction):
        return text
    if text.startswith("expr:"):
        return expression_cost(text[5:], name=text)
    if text not in COSTS:
        raise KeyError(f"unknown cost {text!r}; choose from {sorted(COSTS)} or expr:...")
    return COSTS[text]()


# ----------------------------------------------------------------------------
# Lyapunov candidates


def _v21_parts(X):
    x = X[:, 0]
    s = 2.0 + x * x
    L = np.log(s)
    q = x * x / s
    return x, s, L, q


def _v21_value(X):
    x, s, L, q = _v21_parts(X)
    return 1.0 + x * x * L * L


def _v21_gradient(X):
    x, s, L, q = _v21_parts(X)
    return (2.0 * x * L * (L + 2.0 * q))[:, None]


def _v21_hessian(X):
    x, s, L, q = _v21_parts(X)
    h = 2.0 * L * L + 8.0 * q * L + 4.0 * L * q * (1.0 + 4.0 / s) + 8.0 * q * q
    return h[:, None, None]


def v21():
    """V(x) = 1 + x^2 [ln(2 + x^2)]^2 with analytic derivatives."""
    return LyapunovCandidate(_v21_value, _v21_gradient, _v21_hessian, name="v21", positive=True)


CANDIDATES = {"v21": v21}


def parse_candidate(text):
    if isinstance(text, LyapunovCandidate):
        return text
    if text in CANDIDATES:
        return CANDIDATES[text]()
    if text.startswith("expr:"):
        from .candidates import from_expression

        return from_expression(text[5:], name=text)
    raise KeyError(f"unknown candidate {text!r}")
