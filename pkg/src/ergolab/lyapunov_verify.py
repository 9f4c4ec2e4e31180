"""Grid certification of drift inequalities L^u V <= rhs and related analytic helpers."""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .candidates import LyapunovCandidate
from .errors import (DomainError, DriftCheckError, GridTooSmallError, InfCompactnessError,
                     ModelEvaluationError, PreconditionError)
from .sde_core import generator_grid

DEFAULT_SLACK = 1e-6
QUAD_EPSABS = 1e-10
INVERSE_TOL = 1e-8
MARGIN_QUANTILES = (0.0, 0.01, 0.5, 0.99, 1.0)


# ----------------------------------------------------------------------------
# domains and grids


@dataclass(frozen=True)
class DomainSpec:
    """Open ball B(center, radius)."""

    center: tuple
    radius: float
    kind: str = "ball"

    def __post_init__(self):
        if self.kind != "ball":
            raise ValueError("only balls are supported")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @classmethod
    def ball(cls, center, radius):
        return cls(tuple(np.atleast_1d(np.asarray(center, dtype=float))), float(radius))

    @classmethod
    def parse(cls, text, dim=1):
        """``ball:<center>:<radius>``; the centre may be ``c1|c2|...`` or a scalar."""
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "ball":
            raise ValueError(f"malformed domain {text!r}; expected ball:<center>:<radius>")
        try:
            c = [float(v) for v in parts[1].split("|")]
            r = float(parts[2])
        except ValueError:
            raise ValueError(f"malformed domain {text!r}") from None
        if len(c) == 1 and dim > 1:
            c = c * dim
        return cls(tuple(c), r)

    @property
    def dim(self):
        return len(self.center)

    def distance(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.linalg.norm(X - np.asarray(self.center), axis=1)

    def contains(self, X):
        return self.distance(X) < self.radius

    def contains_closure(self, X):
        return self.distance(X) <= self.radius

    def describe(self):
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Grid:
    points: np.ndarray  # (n, d)
    description: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def outside(self, domain):
        """Grid points in the complement of the open ball ``domain``."""
        keep = ~domain.contains(self.points)
        desc = dict(self.description, outside=domain.describe())
        return Grid(self.points[keep], desc)

    def inside(self, domain):
        keep = domain.contains(self.points)
        desc = dict(self.description, inside=domain.describe())
        return Grid(self.points[keep], desc)

    def radii(self):
        return np.linalg.norm(self.points, axis=1)


def parse_range(text):
    """``a:b:h`` -> uniform points a, a+h, ..., b."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"malformed grid {text!r}; expected a:b:h")
    try:
        a, b, h = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"malformed grid {text!r}") from None
    if not (h > 0 and b >= a and math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"malformed grid {text!r}; need h > 0 and b >= a")
    n = int(round((b - a) / h))
    if abs(a + n * h - b) > 1e-9 * max(1.0, abs(b)):
        raise ValueError(f"grid {text!r}: (b - a) is not a multiple of h")
    return a + h * np.arange(n + 1)


def box_grid(spec):
    """Product grid from ``a:b:h`` per axis, axes separated by commas."""
    axes = [parse_range(s.strip()) for s in spec.split(",")]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return Grid(pts, {"kind": "box", "spec": spec, "n": int(pts.shape[0])})


def geometric_rays(r_start, r_max, ratio, dim=1):
    """Points +-r e_i with r = r_start * ratio^k up to r_max along every axis."""
    if not ratio > 1:
        raise ValueError("ratio must exceed 1")
    n = int(math.ceil(math.log(r_max / r_start) / math.log(ratio)))
    r = r_start * ratio ** np.arange(1, n + 1)
    r = r[r <= r_max * (1 + 1e-12)]
    pts = []
    for i in range(dim):
        for s in (-1.0, 1.0):
            p = np.zeros((r.shape[0], dim))
            p[:, i] = s * r
            pts.append(p)
    return np.concatenate(pts, axis=0)


def extended_grid(spec="-50:50:0.01", r_max=1e60, ratio=1.01):
    """Uniform grid plus a symmetric geometric extension out to ``r_max``.

    Inequalities meant to hold on the whole space are only meaningful on a
    grid that reaches the regime where the function under test has settled
    into its asymptotic behaviour; for logarithmic growth that is far
    beyond any uniform grid.
    """
    base = box_grid(spec)
    r0 = float(np.max(np.abs(base.points)))
    ext = geometric_rays(r0, r_max, ratio, dim=base.dim)
    pts = np.concatenate([base.points, ext], axis=0)
    if base.dim == 1:
        pts = np.unique(pts, axis=0)
    return Grid(pts, {"kind": "extended", "spec": spec, "r_max": r_max, "ratio": ratio,
                      "n": int(pts.shape[0])})


def action_mesh(action_set, actions=None, n=33):
    if actions is None:
        return action_set.grid(n)
    A = np.asarray(actions, dtype=float)
    return A.reshape(-1, action_set.dim)


# ----------------------------------------------------------------------------
# right-hand sides


def rhs_from_expression(expr, constants=None):
    """rhs(x, V, c) from an expression in ``x``, ``V``, ``c`` and named constants."""
    from .expressions import numpy_function

    f = numpy_function(expr, ("x", "V", "c"), constants=constants, indexed=("x",))

    def rhs(X, Vx, C):
        return f(X[:, None, :], Vx[:, None], C)

    rhs.expression = expr
    return rhs


def constant_rhs(value):
    def rhs(X, Vx, C):
        return np.full(C.shape, float(value))

    return rhs


def neg_ln_plus_rhs(V1):
    """rhs = -ln+(V1(x))."""
    def rhs(X, Vx, C):
        return -ln_plus(V1(X))[:, None] * np.ones_like(C)

    return rhs


# ----------------------------------------------------------------------------
# drift certificate


@dataclass
class DriftReport:
    grid: dict
    n_points: int
    n_actions: int
    slack: float
    max_violation: float
    passed: bool
    argmax_point: list
    argmax_action: list
    margin_quantiles: dict
    worst_action: np.ndarray = field(repr=False)
    point_violation: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "grid": self.grid, "n_points": self.n_points, "n_actions": self.n_actions,
            "slack": self.slack, "max_violation": self.max_violation, "pass": self.passed,
            "argmax_point": self.argmax_point, "argmax_action": self.argmax_action,
            "margin_quantiles": self.margin_quantiles,
        }


def _as_grid(region, dim):
    if isinstance(region, Grid):
        return region
    pts = np.asarray(region, dtype=float)
    return Grid(pts.reshape(-1, dim), {"kind": "points", "n": int(pts.size // dim)})


def check_drift(model, V: LyapunovCandidate, rhs: Callable, region, action_grid=None,
                slack=DEFAULT_SLACK, cost=None, control=None, chunk=200_000):
    """Certify L^u V(x) - rhs(x, V(x), c(x, u)) <= slack on a grid.

    ``rhs(X, Vx, C)`` receives points ``(n, d)``, values ``(n,)`` and costs
    ``(n, k)`` and returns something broadcastable to ``(n, k)``.  With a
    ``control`` the generator is taken along v(x), i.e. the mixture average
    sum_j w_j L^{a_j} V for a relaxed control, and the cost is averaged the
    same way; otherwise every action of ``action_grid`` is checked.

    The maximiser is the first maximal entry in (grid index, action index)
    order.
    """
    grid = _as_grid(region, model.dim)
    X = np.ascontiguousarray(grid.points)
    if X.shape[0] == 0:
        raise ValueError("empty grid")
    if control is None:
        A = action_mesh(model.action_set, action_grid)
        if A.shape[0] == 0:
            raise ValueError("action grid must be nonempty")
    n = X.shape[0]
    viol = []
    acts = []
    for s in range(0, n, chunk):
        Xc = X[s:s + chunk]
        if control is None:
            G = _generator_checked(model, V, Xc, A)
            Aall = np.broadcast_to(A, (Xc.shape[0],) + A.shape)
        else:
            G, Aall, (atoms, weights) = _generator_along(model, V, Xc, control)
        Vx = V(Xc)
        if cost is None:
            C = np.zeros(G.shape)
        else:
            C = cost.grid(Xc, A) if control is None else sum(
                weights[:, j] * cost.paired(Xc, atoms[:, j]) for j in range(atoms.shape[1]))[:, None]
        R = np.broadcast_to(rhs(Xc, Vx, C), G.shape)
        D = G - R
        D = np.where(np.isnan(R), np.inf, D)  # undefined bound counts as violated
        viol.append(D)
        acts.append(np.asarray(Aall))
    D = np.concatenate(viol, axis=0)
    Aall = np.concatenate(acts, axis=0)
    flat = int(np.argmax(D))
    i, j = divmod(flat, D.shape[1])
    per_point = D.max(axis=1)
    worst = Aall[np.arange(n), D.argmax(axis=1)]
    vmax = float(D[i, j])
    q = np.quantile(per_point, MARGIN_QUANTILES, method="lower")
    return DriftReport(
        grid=grid.description, n_points=n, n_actions=int(D.shape[1]), slack=float(slack),
        max_violation=vmax, passed=bool(vmax <= slack),
        argmax_point=X[i].tolist(), argmax_action=np.atleast_1d(Aall[i, j]).tolist(),
        margin_quantiles={f"q{p:g}": float(-v) for p, v in zip(MARGIN_QUANTILES, q[::-1])},
        worst_action=worst, point_violation=per_point,
    )


def _generator_checked(model, V, X, A):
    try:
        return generator_grid(model, V, X, A)
    except ModelEvaluationError as exc:
        idx = None
        if exc.x is not None:
            hits = np.where(np.all(X == exc.x, axis=1))[0]
            idx = int(hits[0]) if hits.size else None
        raise DriftCheckError(f"generator evaluation failed: {exc}", point=exc.x, index=idx) from exc


def _generator_along(model, V, X, control):
    """L^{v(x)} V(x) = sum_j w_j L^{a_j} V(x), as a single column."""
    acts, wts, ks = control.support(X)
    G = np.zeros((X.shape[0], 1))
    for j in range(acts.shape[1]):
        rows = ks > j
        if np.any(rows):
            G[rows, 0] += wts[rows, j] * _pairwise(model, V, X[rows], acts[rows, j])
    mean_action = np.einsum("nk,nkm->nm", wts, acts)[:, None, :]
    return G, mean_action, (acts, wts)


def _pairwise(model, V, X, U):
    from .sde_core import generator_values

    try:
        return generator_values(model, V, X, U)
    except ModelEvaluationError as exc:
        raise DriftCheckError(f"generator evaluation failed: {exc}", point=exc.x) from exc


# ----------------------------------------------------------------------------
# scalar helpers


def ln_plus(z):
    """max(ln z, 0) for z > 0; z <= 0 raises :class:`DomainError`."""
    arr = np.asarray(z, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("ln_plus is defined for z > 0 only")
    out = np.maximum(np.log(arr), 0.0)
    return float(out) if out.ndim == 0 else out


def _sli_integrand(w):
    # s = e^w turns ds / (1 + ln s) into e^w / (1 + w) dw
    return math.exp(w) / (1.0 + w)


def shifted_log_integral(z):
    """I(z) = int_1^z ds / (1 + ln s) by adaptive quadrature."""
    z = float(z)
    if not z >= 1.0:
        raise DomainError("shifted_log_integral needs z >= 1")
    if z == 1.0:
        return 0.0
    top = math.log(z)
    # split into unit pieces in w so each has a modest dynamic range
    edges = np.append(np.arange(0.0, top, 1.0), top)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(_sli_integrand, a, b, epsabs=QUAD_EPSABS, epsrel=1e-13, limit=200)
        total += val
    return total


def inverse_sli(y):
    """z >= 1 with I(z) = y, by bracketed root finding."""
    y = float(y)
    if not y >= 0.0:
        raise DomainError("inverse_sli needs y >= 0")
    if y == 0.0:
        return 1.0
    lo = 1.0 + y  # I(z) <= z - 1
    hi = lo
    while shifted_log_integral(hi) < y:
        hi *= 2.0 + math.log(hi)
    if hi == lo:
        return lo
    z = optimize.brentq(lambda t: shifted_log_integral(t) - y, lo, hi,
                        xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(shifted_log_integral(z) - y) > INVERSE_TOL * max(1.0, y):
        raise ArithmeticError(f"inverse_sli did not reach tolerance at y={y}")
    return z


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _sli_pieces(a, b):
    """Gauss-Legendre value of int_a^b e^w / (1 + w) dw, elementwise (b - a small)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    w = mid[..., None] + half[..., None] * _GL_NODES
    return half * np.sum(_GL_WEIGHTS * np.exp(w) / (1.0 + w), axis=-1)


def inverse_sli_many(y, step=0.01):
    """Vectorised inverse of I for many arguments.

    A table of I on a uniform grid in w = ln z gives the starting point;
    three Newton steps in w then polish each value.
    """
    y = np.asarray(y, dtype=float)
    if np.any(~(y >= 0.0)):
        raise DomainError("inverse_sli needs y >= 0")
    flat = y.ravel()
    if flat.size == 0:
        return np.ones_like(y)
    top = math.log(inverse_sli(float(flat.max()))) + step
    edges = np.arange(0.0, top + step, step)
    cum = np.concatenate([[0.0], np.cumsum(_sli_pieces(edges[:-1], edges[1:]))])
    w = np.interp(flat, cum, edges)
    for _ in range(3):
        idx = np.clip((w / step).astype(np.int64), 0, edges.size - 1)
        val = cum[idx] + _sli_pieces(edges[idx], w)
        w = np.maximum(w - (val - flat) * (1.0 + w) / np.exp(w), 0.0)
    return np.exp(w).reshape(y.shape)


def check_tlnt_inequality(T_grid):
    """Max over T of T ln+T - [int_0^T ln+(T - t) dt + T] (quadrature).

    Returns ``(max_violation, per_T)``.
    """
    T = np.asarray(T_grid, dtype=float).ravel()
    if np.any(~(T > 0)):
        raise DomainError("T must be positive")
    out = np.empty(T.shape[0])
    for i, t in enumerate(T):
        lhs = t * ln_plus(t)
        pts = [t - 1.0] if t > 1.0 else None
        integral, _ = integrate.quad(lambda s: max(math.log(t - s), 0.0) if t - s > 0 else 0.0,
                                     0.0, t, points=pts, epsabs=1e-12, epsrel=1e-12, limit=200)
        out[i] = lhs - (integral + t)
    return float(out.max()), out


# ----------------------------------------------------------------------------
# constants in drift inequalities


@dataclass
class ConstantScan:
    """max over grid x actions of L^u V(x) + g(x), with its maximiser."""

    value: float
    argmax_point: list
    argmax_action: list
    interior: bool
    eventually_decreasing: bool
    report: DriftReport = field(repr=False)


def _ray_groups(X):
    r = np.linalg.norm(X, axis=1)
    nz = r > 0
    dirs = np.round(X[nz] / r[nz, None], 9)
    keys, inv = np.unique(dirs, axis=0, return_inverse=True)
    idx = np.where(nz)[0]
    return [idx[inv.ravel() == k] for k in range(keys.shape[0])], r


def scan_constant(model, V, g, grid, action_grid=None, control=None):
    """Smallest K with L^u V <= K - g on the grid.

    Raises :class:`GridTooSmallError` when the maximiser sits on the outermost
    radius of the grid, since the supremum is then not captured.
    """
    grid = _as_grid(grid, model.dim)
    rep = check_drift(model, V, lambda X, Vx, C: -np.asarray(g(X, Vx))[:, None], grid,
                      action_grid=action_grid, slack=np.inf, control=control)
    X = grid.points
    r = np.linalg.norm(X, axis=1)
    i = int(np.argmax(rep.point_violation))
    interior = bool(r[i] < r.max() * (1 - 1e-12))
    if not interior:
        raise GridTooSmallError(
            f"maximiser at |x|={r[i]:.6g} lies on the grid boundary; extend the grid")
    decreasing = True
    groups, _ = _ray_groups(X)
    for grp in groups:
        order = grp[np.argsort(r[grp])]
        beyond = order[r[order] >= r[i]]
        f = rep.point_violation[beyond]
        if f.size > 1 and np.any(np.diff(f) > 1e-9 * np.maximum(1.0, np.abs(f[:-1]))):
            decreasing = False
    return ConstantScan(rep.max_violation, rep.argmax_point, rep.argmax_action, interior,
                        decreasing, rep)


def log_lyap_term(X, Vx):
    return np.log(Vx)


def example21_rhs_term(X, Vx):
    """(3/2) [ln(2 + x^2)]^{3/2}."""
    return 1.5 * np.log(2.0 + X[:, 0] ** 2) ** 1.5


def kappa_rhs(kappa):
    """rhs(x) = kappa - (3/2) [ln(2 + x^2)]^{3/2}."""
    def rhs(X, Vx, C):
        return (kappa - example21_rhs_term(X, Vx))[:, None]

    return rhs


def _covers_base(grid, lo=-50.0, hi=50.0, step=0.01):
    x = np.sort(grid.points[:, 0])
    if x[0] > lo or x[-1] < hi:
        return False
    inner = x[(x >= lo) & (x <= hi)]
    return bool(np.max(np.diff(inner)) <= step * (1 + 1e-9))


def example21_kappa(grid=None, action_grid=None, model=None, V=None, return_scan=False):
    """kappa* = max over grid x actions of L^u V(x) + (3/2)[ln(2+x^2)]^{3/2}.

    The default grid is [-50, 50] at step 0.01 extended geometrically to
    |x| = 1e60: on [-50, 50] alone the maximum sits on the boundary.
    """
    from .models import example21, v21

    model = model or example21()
    V = V or v21()
    grid = grid if grid is not None else extended_grid()
    grid = _as_grid(grid, 1)
    if not _covers_base(grid):
        raise PreconditionError("grid must cover [-50, 50] at step <= 0.01")
    scan = scan_constant(model, V, example21_rhs_term, grid, action_grid)
    return scan if return_scan else scan.value


def h02_constant(model, V, grid=None, action_grid=None, control=None):
    """Smallest C with L^u V <= C - ln V on the grid."""
    grid = grid if grid is not None else extended_grid()
    return scan_constant(model, V, log_lyap_term, grid, action_grid, control).value


# ----------------------------------------------------------------------------
# from the logarithmic drift condition to the pair (V1, V2)


@dataclass
class H01Construction:
    V1: LyapunovCandidate
    V2: LyapunovCandidate
    D: DomainSpec
    C: float
    threshold: float


def check_inf_compact(V, grid, min_tail=2):
    """Radius beyond which V strictly increases along every grid ray.

    Raises :class:`InfCompactnessError` if some ray with at least three
    points has no strictly increasing tail of ``min_tail`` steps.
    """
    X = grid.points
    vals = V(X)
    groups, r = _ray_groups(X)
    r0 = 0.0
    checked = 0
    for grp in groups:
        if grp.size < 3:
            continue
        checked += 1
        order = grp[np.argsort(r[grp])]
        v = vals[order]
        nonincr = np.where(np.diff(v) <= 0)[0]
        start = 0 if nonincr.size == 0 else nonincr[-1] + 1
        if order.size - 1 - start < min_tail:
            raise InfCompactnessError(f"{V.name} does not increase along the ray through {X[order[-1]]}")
        r0 = max(r0, r[order[start]])
    if checked == 0:
        raise InfCompactnessError("grid has no rays to check inf-compactness on")
    return r0


def derive_h01_from_h02(V, C, grid=None):
    """V1 = V, V2 = 2V and the smallest ball D with ln V >= 2C + 1 on the grid outside D."""
    if grid is None:
        grid = extended_grid()
    elif not isinstance(grid, Grid):
        grid = _as_grid(grid, 1 if np.ndim(grid) == 1 else np.shape(grid)[-1])
    vals = V(grid.points)
    if np.any(vals < 1.0):
        raise PreconditionError(f"{V.name} must be >= 1 on the grid")
    check_inf_compact(V, grid)
    threshold = 2.0 * C + 1.0
    r = grid.radii()
    bad = np.log(vals) < threshold
    pos = r[r > 0]
    if not np.any(bad):
        radius = float(pos.min())
    else:
        rb = r[bad].max()
        beyond = r[r > rb]
        if beyond.size == 0:
            raise InfCompactnessError(f"ln V < {threshold:g} up to the edge of the grid")
        radius = float(beyond.min())
    center = np.zeros(grid.dim)
    return H01Construction(V1=V, V2=V.scaled(2.0, name=f"2*{V.name}"),
                           D=DomainSpec.ball(center, radius), C=float(C), threshold=threshold)


def smallest_ball_outside(grid, point_violation, slack=0.0):
    """Smallest grid radius r with point_violation <= slack at every grid point with |x| >= r."""
    r = grid.radii()
    bad = point_violation > slack
    if np.any(bad & (r >= r.max() * (1 - 1e-12))):
        raise GridTooSmallError("inequality fails at the outermost grid radius")
    pos = r[r > 0]
    if not np.any(bad):
        return float(pos.min())
    rb = r[bad].max()
    return float(r[r > rb].min())


def verified_h01_ball(model, V1, V2, grid=None, action_grid=None, control=None, slack=DEFAULT_SLACK):
    """Smallest ball D outside of which L V1 <= -1 and L V2 <= -ln+ V1 hold on the grid.

    With ``control`` the inequalities are checked along v (the hitting-time setting),
    otherwise for every action in ``action_grid`` (the hypothesis setting).
    """
    grid = _as_grid(grid if grid is not None else extended_grid(), model.dim)
    ra = check_drift(model, V1, constant_rhs(-1.0), grid, action_grid, slack=np.inf, control=control)
    rb = check_drift(model, V2, neg_ln_plus_rhs(V1), grid, action_grid, slack=np.inf, control=control)
    viol = np.maximum(ra.point_violation, rb.point_violation)
    radius = smallest_ball_outside(grid, viol, slack)
    return DomainSpec.ball(np.zeros(model.dim), radius)


@dataclass
class FLlogConstants:
    C: float
    D: DomainSpec


def fllog_constants(model, V, grid=None, action_grid=None, control=None, slack=0.0):
    """D and C with L^u V <= C 1_D - (1 + ln V): D is the smallest grid ball outside of
    which L^u V + 1 + ln V <= 0, and C the largest L^u V + 1 + ln V inside it."""
    grid = _as_grid(grid if grid is not None else extended_grid(), model.dim)
    rep = check_drift(model, V, lambda X, Vx, C: -(1.0 + np.log(Vx))[:, None], grid,
                      action_grid, slack=np.inf, control=control)
    radius = smallest_ball_outside(grid, rep.point_violation, slack)
    D = DomainSpec.ball(np.zeros(model.dim), radius)
    inside = D.contains(grid.points)
    C = float(max(rep.point_violation[inside].max(), 0.0)) if np.any(inside) else 0.0
    return FLlogConstants(C, D)


# ----------------------------------------------------------------------------
# functions built from a concave phi


@dataclass(frozen=True, eq=False)
class ConcaveFunction:
    value: Callable
    derivative: Callable
    name: str = "phi"
    kinks: tuple = ()


def log_phi():
    """phi(y) = 1 + ln+(y): equal to 1 + ln y on [1, inf) and kept >= 1 below."""
    return ConcaveFunction(
        value=lambda y: 1.0 + np.log(np.maximum(y, 1.0)),
        derivative=lambda y: np.where(np.asarray(y) >= 1.0, 1.0 / np.maximum(y, 1.0), 0.0),
        name="1+ln",
        kinks=(1.0,),
    )


def zero_phi():
    return ConcaveFunction(lambda y: np.zeros_like(np.asarray(y, dtype=float)),
                           lambda y: np.zeros_like(np.asarray(y, dtype=float)), name="0")


@dataclass(frozen=True, eq=False)
class Section3Functions:
    psi_N: Callable
    phi_N: Callable
    h_N: Callable

    def __iter__(self):
        return iter((self.psi_N, self.phi_N, self.h_N))


def section3_test_functions(V, phi, N, model):
    """psi_N(z) = int_0^z dy / (N + phi(y)), phi_N = psi_N(V) and
    h_N = -phi'(V) |sigma' grad V|^2 / (N + phi(V))^2."""
    if N <= 0:
        raise ValueError("N must be positive")

    def integrand(y):
        return 1.0 / (N + float(phi.value(np.asarray(y))))

    def psi(z):
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        if np.any(flat < 0):
            raise DomainError("psi_N is defined on [0, inf)")
        order = np.argsort(flat)
        out = np.empty_like(flat)
        acc = 0.0
        prev = 0.0
        for k in order:
            b = flat[k]
            if b > prev:
                pts = [p for p in phi.kinks if prev < p < b] or None
                val, _ = integrate.quad(integrand, prev, b, points=pts, epsabs=QUAD_EPSABS,
                                        epsrel=1e-12, limit=200)
                if not math.isfinite(val):
                    raise ArithmeticError("psi_N quadrature failed")
                acc += val
                prev = b
            out[k] = acc
        return out.reshape(z.shape) if z.ndim else float(out[0])

    def phi_N(X):
        return psi(V(np.atleast_2d(X)))

    def h_N(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Vx = V(X)
        g = V.grad(X)
        S = model.sigma_batch(X)
        sg = np.einsum("nji,nj->ni", S, g)
        return -phi.derivative(Vx) * np.sum(sg * sg, axis=1) / (N + phi.value(Vx)) ** 2

    return Section3Functions(psi, phi_N, h_N)


@dataclass
class KA1Report:
    kappa0: float
    kappa1: float
    kappa2: float
    passed: bool
    notes: list
    gradient_ratio_sup: float

    def to_dict(self):
        return {"kappa0": self.kappa0, "kappa1": self.kappa1, "kappa2": self.kappa2,
                "pass": self.passed, "notes": self.notes,
                "gradient_ratio_sup": self.gradient_ratio_sup}


def check_ka1(model, V, phi, cost, K: DomainSpec, grid=None, action_grid=None, kappa1=1.0):
    """Find constants with L^u V <= kappa0 - kappa1 phi(V) off K and
    L^u V <= kappa2 (1 + c) on K, over the grid.

    Also reports sup |sigma' grad V| / (1 + phi(V)) on the grid, which the
    boundedness part of the assumption needs (informational only).
    """
    grid = _as_grid(grid if grid is not None else extended_grid(), model.dim)
    notes = []
    passed = True
    Vx = V(grid.points)
    if np.any(~(Vx > 0)):
        notes.append("V is not positive on the grid")
        passed = False
    ys = np.geomspace(1.0, 1e12, 400)
    f = phi.value(ys)
    if np.any(np.diff(f) < 0):
        notes.append("phi is not increasing")
        passed = False
    slopes = np.diff(f) / np.diff(ys)
    if np.any(np.diff(slopes) > 1e-12):
        notes.append("phi is not concave")
        passed = False
    outside = grid.outside(K)
    try:
        k0 = scan_constant(model, V, lambda X, Vx: kappa1 * phi.value(Vx), outside, action_grid).value
    except GridTooSmallError as exc:
        notes.append(f"off K: {exc}")
        k0 = float("inf")
        passed = False
    inside = grid.inside(K)
    k2 = 0.0
    if len(inside):
        A = action_mesh(model.action_set, action_grid)
        G = generator_grid(model, V, inside.points, A)
        C = cost.grid(inside.points, A)
        if np.any(1.0 + C <= 0):
            notes.append("1 + c must be positive on K")
            passed = False
        else:
            k2 = float(np.max(G / (1.0 + C)))
    k0 = max(k0, np.finfo(float).tiny)
    k2 = max(k2, np.finfo(float).tiny)
    g = V.grad(grid.points)
    S = model.sigma_batch(grid.points)
    sg = np.linalg.norm(np.einsum("nji,nj->ni", S, g), axis=1)
    ratio = float(np.max(sg / (1.0 + phi.value(Vx))))
    return KA1Report(float(k0), float(kappa1), float(k2), passed and math.isfinite(k0), notes, ratio)
