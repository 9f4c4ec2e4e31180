"""Controlled diffusions dX = b(X, U) dt + sigma(X) dW, controls, and EM paths."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from . import streams
from .candidates import LyapunovCandidate
from .errors import ControlError, ExplosionError, ModelEvaluationError

DEFAULT_EXPLOSION_BOUND = 1e12
DEFAULT_ACTION_GRID = 33
WEIGHT_TOL = 1e-12


# ----------------------------------------------------------------------------
# action sets


@dataclass(frozen=True, eq=False)
class ActionSet:
    """Compact action set: ``interval``, ``box`` or ``finite``.

    Actions are always handled as vectors of length :attr:`dim`; scalar
    actions of an interval are length-one vectors.
    """

    kind: str
    lo: np.ndarray
    hi: np.ndarray
    points: Optional[np.ndarray] = None

    @classmethod
    def interval(cls, lo, hi):
        if not lo <= hi:
            raise ValueError("interval needs lo <= hi")
        return cls("interval", np.array([float(lo)]), np.array([float(hi)]))

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs matching bounds with lo <= hi")
        return cls("box", lo, hi)

    @classmethod
    def finite(cls, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.size == 0:
            raise ValueError("finite action set must be nonempty")
        return cls("finite", pts.min(axis=0), pts.max(axis=0), pts)

    @property
    def dim(self):
        return self.lo.shape[0]

    def contains(self, u, tol=K.ACTION_TOL):
        u = np.asarray(u, dtype=float).ravel()
        if u.shape[0] != self.dim:
            return False
        if self.kind == "finite":
            return bool(np.any(np.all(np.abs(self.points - u) <= tol, axis=1)))
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def grid(self, n=DEFAULT_ACTION_GRID):
        """Finite mesh of the set, shape ``(k, dim)``; endpoints always included."""
        if self.kind == "finite":
            return self.points.copy()
        axes = [np.linspace(a, b, n) if b > a else np.array([a]) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def describe(self):
        if self.kind == "finite":
            return {"kind": "finite", "points": self.points.tolist()}
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


# ----------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A controlled diffusion.

    ``drift(x, u, params, out)`` and ``diffusion(x, params, out)`` are
    numba-jitted functions writing b(x, u) and sigma(x) into ``out``.
    """

    name: str
    dim: int
    drift: object
    diffusion: object
    action_set: ActionSet
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    explosion_bound: float = DEFAULT_EXPLOSION_BOUND
    allow_degenerate: bool = False
    description: str = ""

    def _x(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise ValueError(f"state must have dimension {self.dim}")
        return x

    def _u(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        if u.shape[0] != self.action_set.dim:
            raise ValueError(f"action must have dimension {self.action_set.dim}")
        return u

    def b(self, x, u):
        x, u = self._x(x), self._u(u)
        out = np.empty(self.dim)
        self.drift(x, u, self.params, out)
        if not np.all(np.isfinite(out)):
            raise ModelEvaluationError(f"{self.name}: non-finite drift", x=x, u=u)
        return out

    def sigma(self, x):
        x = self._x(x)
        out = np.empty((self.dim, self.dim))
        self.diffusion(x, self.params, out)
        if not np.all(np.isfinite(out)):
            raise ModelEvaluationError(f"{self.name}: non-finite diffusion", x=x)
        return out

    def a(self, x):
        s = self.sigma(x)
        a = s @ s.T
        if not self.allow_degenerate:
            _check_spd(a[None], np.asarray(x, dtype=float).reshape(1, -1), self.name)
        return a

    # batched evaluators used by the verification modules

    def drift_batch(self, X, U):
        """b at paired rows of X (n, d) and U (n, m)."""
        X = np.ascontiguousarray(X, dtype=float)
        U = np.ascontiguousarray(U, dtype=float).reshape(X.shape[0], -1)
        B = K.paired_drift(self.drift, self.params, X, U)
        _check_batch(B, X, U, self.name, "drift")
        return B

    def drift_grid(self, X, actions):
        """b at every (x, u) pair: shape (n, k, d)."""
        X = np.ascontiguousarray(X, dtype=float)
        A = np.ascontiguousarray(actions, dtype=float).reshape(-1, self.action_set.dim)
        B = K.batch_drift(self.drift, self.params, X, A)
        if not np.all(np.isfinite(B)):
            i, j = np.argwhere(~np.isfinite(B))[0][:2]
            raise ModelEvaluationError(f"{self.name}: non-finite drift", x=X[i], u=A[j])
        return B

    def sigma_batch(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        S = K.batch_diffusion(self.diffusion, self.params, X)
        _check_batch(S.reshape(X.shape[0], -1), X, None, self.name, "diffusion")
        return S

    def a_batch(self, X, check=True):
        S = self.sigma_batch(X)
        A = S @ np.swapaxes(S, 1, 2)
        if check and not self.allow_degenerate:
            _check_spd(A, X, self.name)
        return A

    def describe(self):
        return {"name": self.name, "dim": self.dim, "params": self.params.tolist(),
                "action_set": self.action_set.describe()}


def _check_batch(arr, X, U, name, what):
    bad = ~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ModelEvaluationError(f"{name}: non-finite {what} at x={X[i]}", x=X[i],
                                   u=None if U is None else U[i])


def _check_spd(A, X, name):
    if A.shape[1] == 1:
        lam = A[:, 0, 0]
    else:
        lam = np.linalg.eigvalsh(A)[:, 0]
    bad = ~(lam > 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ModelEvaluationError(f"{name}: diffusion matrix not positive definite at x={X[i]}", x=X[i])


# ----------------------------------------------------------------------------
# controls


@dataclass(frozen=True, eq=False)
class Control:
    """Stationary Markov control.

    ``fill(x, params, acts, wts) -> k`` writes the support and weights of
    v(x) into the first ``k`` rows.  ``kind`` is ``"precise"`` (k is always
    one) or ``"relaxed"``.
    """

    kind: str
    fill: object
    params: np.ndarray
    action_dim: int
    kmax: int = 1
    name: str = "control"

    @classmethod
    def constant(cls, u, name=None):
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        cp = np.concatenate([[1.0, u.shape[0]], u, [1.0]])
        return cls("precise", K.mixture_fill, cp, u.shape[0], 1,
                   name or "const:" + ",".join(f"{v:g}" for v in u))

    @classmethod
    def mixture(cls, actions, weights, name=None):
        acts = np.asarray(actions, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        w = np.asarray(weights, dtype=float).ravel()
        if acts.shape[0] != w.shape[0] or w.shape[0] == 0:
            raise ControlError("mixture needs one weight per action")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ControlError("mixture weights must be nonnegative and sum to 1")
        k, m = acts.shape
        cp = np.concatenate([[float(k), float(m)], acts.ravel(), w])
        label = name or "mix:" + ",".join(f"{w_:g}@{a[0]:g}" for a, w_ in zip(acts, w))
        return cls("relaxed", K.mixture_fill, cp, m, k, label)

    @classmethod
    def feedback(cls, fill, action_dim=1, params=None, kind="precise", kmax=1, name="feedback"):
        cp = np.zeros(1) if params is None else np.asarray(params, dtype=float)
        return cls(kind, fill, cp, action_dim, kmax, name)

    def support(self, X):
        """Mixtures at each row of X: (acts (n, kmax, m), wts (n, kmax), ks (n,))."""
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        return K.batch_fill(self.fill, self.params, X, self.kmax, self.action_dim)

    def evaluate(self, x):
        """A single action (precise) or a list of ``(action, weight)`` pairs."""
        acts, wts, ks = self.support(np.asarray(x, dtype=float).reshape(1, -1))
        k = int(ks[0])
        if self.kind == "precise":
            return acts[0, 0].copy()
        return [(acts[0, j].copy(), float(wts[0, j])) for j in range(k)]

    def validate(self, action_set, X):
        """Raise :class:`ControlError` if v(x) leaves the action set or has bad weights."""
        acts, wts, ks = self.support(X)
        for i in range(acts.shape[0]):
            k = int(ks[i])
            if k < 1 or k > self.kmax:
                raise ControlError(f"{self.name}: invalid support size {k}")
            w = wts[i, :k]
            if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ControlError(f"{self.name}: weights at x={X[i]} do not form a distribution")
            for j in range(k):
                if not action_set.contains(acts[i, j]):
                    raise ControlError(f"{self.name}: action {acts[i, j]} outside the action set")


# ----------------------------------------------------------------------------
# costs


@dataclass(frozen=True, eq=False)
class CostFunction:
    """Running cost ``c(x, u, params) -> float`` (numba-jitted)."""

    func: object
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    name: str = "cost"

    def evaluate(self, x, u):
        x = np.asarray(x, dtype=float).ravel()
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        return float(self.func(x, u, self.params))

    def paired(self, X, U):
        X = np.ascontiguousarray(X, dtype=float)
        U = np.ascontiguousarray(U, dtype=float).reshape(X.shape[0], -1)
        return K.paired_cost(self.func, self.params, X, U)

    def grid(self, X, actions):
        X = np.ascontiguousarray(X, dtype=float)
        A = np.ascontiguousarray(actions, dtype=float).reshape(len(actions), -1)
        return K.batch_cost(self.func, self.params, X, A)

    def relaxed(self, X, control):
        """x -> sum_j w_j c(x, a_j) under the mixture v(x)."""
        X = np.ascontiguousarray(X, dtype=float)
        acts, wts, ks = control.support(X)
        return K.relaxed_cost(self.func, self.params, X, acts, wts, ks)


UNIT_COST = CostFunction(K.unit_cost, name="unit")


# ----------------------------------------------------------------------------
# paths


@dataclass(eq=False)
class Trajectory:
    dt: float
    states: np.ndarray    # (n + 1, d)
    actions: np.ndarray   # (n, m) sampled actions
    dW: np.ndarray        # (n, d) Brownian increments
    seed: int
    path_index: int = 0

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("len(states) must equal len(actions) + 1")

    @property
    def n_steps(self):
        return len(self.actions)

    @property
    def t_final(self):
        return self.dt * self.n_steps

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)


def n_steps_for(horizon, dt):
    if not dt > 0 or not horizon >= dt:
        raise ValueError("need horizon >= dt > 0")
    return int(math.ceil(horizon / dt - 1e-9))


def em_step(model, x, u, dt, dW):
    """One Euler-Maruyama step x + b(x, u) dt + sigma(x) dW."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    dW = np.asarray(dW, dtype=float).ravel()
    if dW.shape[0] != model.dim:
        raise ValueError(f"dW must have dimension {model.dim}")
    x = model._x(x)
    b = model.b(x, u)
    s = model.sigma(x)
    if not model.allow_degenerate:
        model.a(x)
    return x + b * dt + s @ dW


def raise_status(status, index, model, control, path_index, states=None):
    if status == K.OK:
        return
    if status == K.EXPLODED:
        raise ExplosionError(
            f"{model.name}: state norm exceeded {model.explosion_bound:g} at step {index} (path {path_index})",
            time_index=int(index), path_index=int(path_index))
    if status == K.BAD_ACTION:
        raise ControlError(f"{control.name}: action outside the action set at step {index} (path {path_index})")
    x = None if states is None else states[index]
    raise ModelEvaluationError(f"{model.name}: non-finite drift/diffusion at step {index} (path {path_index})", x=x)


def _check_compatible(model, control):
    if control.action_dim != model.action_set.dim:
        raise ControlError(f"{control.name} has action dimension {control.action_dim}, "
                           f"model expects {model.action_set.dim}")


def _prepare(model, control, x0):
    _check_compatible(model, control)
    x0 = np.ascontiguousarray(model._x(x0))
    control.validate(model.action_set, x0[None])
    if not model.allow_degenerate:
        model.a(x0)
    return x0


def simulate(model, control, x0, horizon, dt, seed, path_index=0):
    """Euler-Maruyama path of ceil(horizon / dt) steps.

    Noise and mixture sampling use separate streams derived from
    ``(seed, path_index)``, so replays are bit-identical.
    """
    x0 = _prepare(model, control, x0)
    n = n_steps_for(horizon, dt)
    states = np.empty((n + 1, model.dim))
    actions = np.empty((n, control.action_dim))
    dws = np.empty((n, model.dim))
    status, k = K.simulate_path(
        model.drift, model.diffusion, control.fill, model.params, control.params,
        model.action_set.lo, model.action_set.hi, x0, float(dt), n,
        streams.path_generator(seed, path_index, streams.NOISE),
        streams.path_generator(seed, path_index, streams.ACTION),
        control.kmax, model.explosion_bound, states, actions, dws)
    raise_status(status, k, model, control, path_index, states)
    return Trajectory(float(dt), states, actions, dws, int(seed), int(path_index))


def simulate_batch(model, control, x0, n_steps, dt, seed, path_indices):
    """Paths for several path indices stacked: states (p, n+1, d), actions, dW."""
    x0 = _prepare(model, control, x0)
    p = len(path_indices)
    states = np.empty((p, n_steps + 1, model.dim))
    actions = np.empty((p, n_steps, control.action_dim))
    dws = np.empty((p, n_steps, model.dim))
    for r, i in enumerate(path_indices):
        status, k = K.simulate_path(
            model.drift, model.diffusion, control.fill, model.params, control.params,
            model.action_set.lo, model.action_set.hi, x0, float(dt), int(n_steps),
            streams.path_generator(seed, i, streams.NOISE),
            streams.path_generator(seed, i, streams.ACTION),
            control.kmax, model.explosion_bound, states[r], actions[r], dws[r])
        raise_status(status, k, model, control, i, states[r])
    return states, actions, dws


def record_states(model, control, x0, record_steps, dt, seed, path_index):
    """States at the given (sorted) step indices of one path."""
    steps = np.ascontiguousarray(record_steps, dtype=np.int64)
    out = np.empty((steps.shape[0], model.dim))
    status, k = K.record_path(
        model.drift, model.diffusion, control.fill, model.params, control.params,
        model.action_set.lo, model.action_set.hi, x0, float(dt), steps,
        streams.path_generator(seed, path_index, streams.NOISE),
        streams.path_generator(seed, path_index, streams.ACTION),
        control.kmax, model.explosion_bound, out)
    raise_status(status, k, model, control, path_index)
    return out


# ----------------------------------------------------------------------------
# generator and Dynkin check


def _as_points(model, x):
    X = np.asarray(x, dtype=float)
    single = X.ndim <= 1
    X = X.reshape(-1, model.dim)
    return np.ascontiguousarray(X), single


def apply_generator(model, f: LyapunovCandidate, x, u):
    """L^u f(x) = 1/2 tr(a(x) D^2 f(x)) + b(x, u) . grad f(x).

    ``x`` may be a single state or an ``(n, d)`` array; ``u`` a single
    action (broadcast) or one action per row.
    """
    X, single = _as_points(model, x)
    n = X.shape[0]
    U = np.atleast_1d(np.asarray(u, dtype=float))
    U = np.broadcast_to(U.reshape(-1, model.action_set.dim), (n, model.action_set.dim))
    U = np.ascontiguousarray(U)
    Lf = generator_values(model, f, X, U)
    return float(Lf[0]) if single else Lf


def generator_values(model, f, X, U, grad=None, hess=None, A=None):
    g = f.grad(X) if grad is None else grad
    H = f.hess(X) if hess is None else hess
    if A is None:
        A = model.a_batch(X)
    B = model.drift_batch(X, U)
    Lf = 0.5 * np.einsum("nij,nij->n", A, H) + np.einsum("ni,ni->n", B, g)
    if not np.all(np.isfinite(Lf)):
        i = int(np.argmax(~np.isfinite(Lf)))
        raise ModelEvaluationError(f"non-finite generator value at x={X[i]}", x=X[i], u=U[i])
    return Lf


def generator_grid(model, f, X, actions):
    """L^u f on every (x, u) pair: shape (n, k)."""
    X = np.ascontiguousarray(X, dtype=float)
    A = np.ascontiguousarray(actions, dtype=float).reshape(-1, model.action_set.dim)
    g = f.grad(X)
    H = f.hess(X)
    second = 0.5 * np.einsum("nij,nij->n", model.a_batch(X), H)
    B = model.drift_grid(X, A)
    Lf = second[:, None] + np.einsum("nkd,nd->nk", B, g)
    if not np.all(np.isfinite(Lf)):
        i, j = np.argwhere(~np.isfinite(Lf))[0]
        raise ModelEvaluationError(f"non-finite generator value at x={X[i]}", x=X[i], u=A[j])
    return Lf


@dataclass(frozen=True)
class DynkinResult:
    residual: float
    stderr: float
    signed: float
    dt: float
    n_paths: int

    def __iter__(self):
        return iter((self.residual, self.stderr))


def dynkin_residual(model, control, f, x0, t, n_paths, dt, seed, control_variate=True, chunk=500):
    """Monte Carlo check of E f(X_t) - f(x0) - E int_0^t L^{U_s} f(X_s) ds = 0.

    Both expectations use the same paths (left-point rule for the time
    integral, sampled actions U_s).  With ``control_variate`` the discrete
    martingale sum_k grad f(X_k) . sigma(X_k) dW_k, which has mean zero, is
    subtracted path by path; this leaves the estimator unbiased and removes
    most of its variance, so the O(dt) discretisation term becomes visible.

    Unpacks as ``(residual, stderr)``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if n_paths < 100:
        raise ValueError("dynkin_residual needs n_paths >= 100")
    n = n_steps_for(t, dt)
    x0 = np.asarray(x0, dtype=float).ravel()
    f0 = float(f(x0[None])[0])
    D = np.empty(n_paths)
    d = model.dim
    for start in range(0, n_paths, chunk):
        idx = list(range(start, min(start + chunk, n_paths)))
        states, actions, dws = simulate_batch(model, control, x0, n, dt, seed, idx)
        p = len(idx)
        left = states[:, :-1, :].reshape(-1, d)
        U = actions.reshape(-1, control.action_dim)
        g = f.grad(left)
        H = f.hess(left)
        S = model.sigma_batch(left)
        A = S @ np.swapaxes(S, 1, 2)
        Lf = generator_values(model, f, left, U, grad=g, hess=H, A=A).reshape(p, n)
        ft = f(states[:, -1, :])
        val = ft - f0 - Lf.sum(axis=1) * dt
        if control_variate:
            mart = np.einsum("ni,nij,nj->n", g, S, dws.reshape(-1, d)).reshape(p, n).sum(axis=1)
            val = val - mart
        D[start:start + p] = val
    if not np.all(np.isfinite(D)):
        raise ModelEvaluationError("non-finite Dynkin residual")
    mean = float(D.mean())
    se = float(D.std(ddof=1) / math.sqrt(n_paths))
    return DynkinResult(abs(mean), se, mean, float(dt), int(n_paths))


def dynkin_refinement(model, control, f, x0, t, n_paths, dt, seed, levels=3, **kw):
    """Residuals at dt, dt/2, dt/4, ... and a Richardson estimate of the O(dt) constant.

    ``c_disc`` solves signed(dt) - signed(dt/2) = c_disc * dt / 2.
    """
    results = [dynkin_residual(model, control, f, x0, t, n_paths, dt / 2**k, seed, **kw)
               for k in range(levels)]
    c_disc = abs(results[0].signed - results[1].signed) / (dt / 2)
    return results, c_disc
