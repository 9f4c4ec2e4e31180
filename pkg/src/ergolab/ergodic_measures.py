"""Occupation measures, pathwise and average costs, and long-run diagnostics."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import streams
from .errors import EstimationError, PreconditionError
from .lyapunov_verify import DomainSpec, check_ka1
from .models import outside_indicator
from .sde_core import (UNIT_COST, Control, CostFunction, Trajectory, _prepare, n_steps_for,
                       raise_status, record_states)

DEFAULT_BINS = 200
DEFAULT_BOX = (-20.0, 20.0)
DEFAULT_ACTION_BINS = 8
TAIL_FRACTION = 0.25
N_CHECKPOINTS = 14
POLICY_GRID = 9


# ----------------------------------------------------------------------------
# binning


@dataclass(frozen=True)
class Binning:
    """Uniform state bins on a box plus one overflow bin per tail and axis.

    Actions are binned on their first coordinate; the last action bin is
    closed on the right so the upper end of the action set is included.
    """

    lo: tuple
    hi: tuple
    nbins: int = DEFAULT_BINS
    action_edges: tuple = (1.0, 2.0)

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(not b > a for a, b in zip(lo, hi)):
            raise ValueError("need lo < hi on every axis")
        if self.nbins < 1:
            raise ValueError("nbins must be positive")
        edges = tuple(float(v) for v in self.action_edges)
        if len(edges) < 2 or any(not b > a for a, b in zip(edges[:-1], edges[1:])):
            raise ValueError("action edges must be increasing")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "action_edges", edges)

    @classmethod
    def for_model(cls, model, box=DEFAULT_BOX, nbins=DEFAULT_BINS, n_action_bins=DEFAULT_ACTION_BINS):
        d = model.dim
        lo = np.broadcast_to(np.asarray(box[0], dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(box[1], dtype=float), (d,))
        a_lo, a_hi = float(model.action_set.lo[0]), float(model.action_set.hi[0])
        if a_hi > a_lo:
            edges = np.linspace(a_lo, a_hi, n_action_bins + 1)
        else:
            edges = np.array([a_lo - 0.5, a_lo + 0.5])
        return cls(tuple(lo), tuple(hi), nbins, tuple(edges))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def width(self):
        return (np.asarray(self.hi) - np.asarray(self.lo)) / self.nbins

    @property
    def n_state(self):
        return (self.nbins + 2) ** self.dim

    @property
    def n_action(self):
        return len(self.action_edges) - 1

    def state_index(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = (X - np.asarray(self.lo)) / self.width
        bi = np.where(q < 0, 0, np.where(q >= self.nbins, self.nbins + 1, np.floor(np.clip(q, 0, self.nbins - 1)) + 1))
        bi = bi.astype(np.int64)
        stride = (self.nbins + 2) ** np.arange(self.dim)
        return bi @ stride

    def action_index(self, a0):
        edges = np.asarray(self.action_edges)
        idx = np.searchsorted(edges, np.asarray(a0, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_action - 1)

    def centers(self, axis=0):
        """Bin centres along one axis, overflow bins included (at +-inf)."""
        w = self.width[axis]
        mids = self.lo[axis] + w * (np.arange(self.nbins) + 0.5)
        return np.concatenate([[-np.inf], mids, [np.inf]])


# ----------------------------------------------------------------------------
# empirical measures


@dataclass
class EmpiricalMeasure:
    """Occupation measure zeta_t on state bins x action bins.

    ``masses[s, a]`` is the fraction of [0, t) spent in state bin s with the
    action in bin a; rows follow :meth:`Binning.state_index`.
    """

    binning: Binning
    masses: np.ndarray
    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")

    @property
    def state_masses(self):
        return self.masses.sum(axis=1)

    @property
    def action_masses(self):
        return self.masses.sum(axis=0)

    def total(self):
        return float(self.masses.sum())

    def integrate_state(self, f):
        """Integral of f over bin centres (overflow bins contribute f at the nearest finite edge)."""
        if self.binning.dim != 1:
            raise NotImplementedError("bin-centre integration is implemented for d = 1")
        c = self.binning.centers()
        c[0] = self.binning.lo[0]
        c[-1] = self.binning.hi[0]
        return float(np.dot(self.state_masses, f(c)))

    def tv_distance(self, other):
        """Half the l1 distance between the state marginals."""
        if other.binning != self.binning:
            raise ValueError("measures use different binnings")
        return 0.5 * float(np.abs(self.state_masses - other.state_masses).sum())


def empirical_measure(trajectory: Trajectory, control: Control, binning: Binning):
    """zeta_t from a stored path (left-point rule).

    Precise controls put all of the step's time on the recorded action;
    relaxed controls split it over the mixture v(X_k) by weight.
    """
    n = trajectory.n_steps
    if n == 0:
        raise ValueError("empty trajectory")
    X = trajectory.states[:-1]
    sidx = binning.state_index(X)
    masses = np.zeros((binning.n_state, binning.n_action))
    if control.kind == "precise":
        aidx = binning.action_index(trajectory.actions[:, 0])
        np.add.at(masses, (sidx, aidx), 1.0)
    else:
        acts, wts, ks = control.support(X)
        for j in range(control.kmax):
            aidx = binning.action_index(acts[:, j, 0])
            np.add.at(masses, (sidx, aidx), np.where(j < ks, wts[:, j], 0.0))
    masses /= n
    return EmpiricalMeasure(binning, masses, trajectory.t_final)


@dataclass
class OccupationRun:
    """Streamed occupation statistics of one path at checkpoint times."""

    times: np.ndarray
    hist: np.ndarray           # (ncheck, n_state, n_action) time spent, not normalised
    cost_integrals: np.ndarray  # (ncheck,)
    outside: np.ndarray        # (ncheck, nradii) time spent with |X| > radius
    radii: np.ndarray
    final_state: np.ndarray
    binning: Binning

    def measure(self, k=-1):
        return EmpiricalMeasure(self.binning, self.hist[k] / self.times[k], float(self.times[k]))

    @property
    def running_costs(self):
        return self.cost_integrals / self.times


def geometric_checkpoints(horizon, n=N_CHECKPOINTS, dt=None):
    """t_k = t_0 2^k, k = 0..n-1, with the last checkpoint at the horizon.

    Given ``dt``, times are snapped to whole steps and those that would
    collide or fall below one step are dropped.
    """
    t = float(horizon) * 2.0 ** (np.arange(n) - (n - 1))
    if dt is None:
        return t
    steps = np.unique(np.rint(t / dt).astype(np.int64))
    return steps[steps >= 1] * float(dt)


def _check_steps(times, dt):
    steps = np.array([int(round(t / dt)) for t in np.atleast_1d(times)], dtype=np.int64)
    if np.any(steps < 1) or np.any(np.diff(steps) <= 0):
        raise ValueError("checkpoints must be increasing and at least one step apart")
    return steps


def occupation(model, control, x0, times, dt, seed, path_index=0, binning=None, radii=(),
               cost=None):
    """Run one path and record zeta_t, the cost integral and tail times at each checkpoint."""
    x0 = _prepare(model, control, x0)
    binning = binning or Binning.for_model(model)
    if binning.dim != model.dim:
        raise ValueError("binning and model dimensions differ")
    steps = _check_steps(times, dt)
    cost = cost or UNIT_COST
    radii = np.ascontiguousarray(np.atleast_1d(np.asarray(radii, dtype=float)))
    nc = steps.shape[0]
    hist = np.zeros((nc, binning.n_state, binning.n_action))
    cint = np.zeros(nc)
    outside = np.zeros((nc, radii.shape[0]))
    final = np.empty(model.dim)
    status, k = K.occupation_path(
        model.drift, model.diffusion, control.fill, cost.func, model.params, control.params,
        cost.params, model.action_set.lo, model.action_set.hi, x0, float(dt), steps,
        streams.path_generator(seed, path_index, streams.NOISE),
        streams.path_generator(seed, path_index, streams.ACTION),
        control.kmax, model.explosion_bound,
        np.asarray(binning.lo), np.asarray(binning.width), binning.nbins,
        np.asarray(binning.action_edges), radii, hist, cint, outside, final)
    raise_status(status, k, model, control, path_index)
    return OccupationRun(steps * float(dt), hist, cint, outside, radii, final, binning)


# ----------------------------------------------------------------------------
# costs


@dataclass
class CostSeries:
    times: np.ndarray
    averages: np.ndarray

    def __len__(self):
        return self.times.shape[0]


def pathwise_cost(trajectory: Trajectory, control: Control, cost: CostFunction, checkpoints=None):
    """Running averages (1/t_k) int_0^t_k c(X_s, U_s) ds on a stored path.

    Relaxed controls contribute the mixture average of the cost.  The
    default checkpoints are geometric and end at the final time of the path.
    """
    if trajectory.n_steps == 0:
        raise ValueError("empty trajectory")
    times = geometric_checkpoints(trajectory.t_final, dt=trajectory.dt) if checkpoints is None \
        else np.asarray(checkpoints, float)
    steps = _check_steps(times, trajectory.dt)
    if steps[-1] > trajectory.n_steps:
        raise ValueError("checkpoint beyond the end of the trajectory")
    X = trajectory.states[:-1]
    if control.kind == "precise":
        c = cost.paired(X, trajectory.actions)
    else:
        c = cost.relaxed(X, control)
    if not np.all(np.isfinite(c)):
        raise EstimationError("cost is not finite along the path")
    cum = np.cumsum(c) * trajectory.dt
    return CostSeries(steps * trajectory.dt, cum[steps - 1] / (steps * trajectory.dt))


def cost_series(model, control, cost, x0, horizon, dt, seed, path_index=0, checkpoints=None):
    """Streaming version of :func:`pathwise_cost` (no path is stored)."""
    times = geometric_checkpoints(horizon, dt=dt) if checkpoints is None else np.asarray(checkpoints, float)
    run = occupation(model, control, x0, times, dt, seed, path_index,
                     binning=Binning.for_model(model, nbins=1), cost=cost)
    return CostSeries(run.times, run.running_costs)


def _tail(series, tail_fraction):
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must be in (0, 1]")
    k = max(1, int(math.ceil(tail_fraction * len(series))))
    return series.averages[-k:]


def limsup_estimate(series: CostSeries, tail_fraction=TAIL_FRACTION):
    """Max of the running averages over the last ``tail_fraction`` of the checkpoints."""
    return float(_tail(series, tail_fraction).max())


def liminf_estimate(series: CostSeries, tail_fraction=TAIL_FRACTION):
    return float(_tail(series, tail_fraction).min())


def average_cost(model, control, cost, x0, horizon, n_paths, dt, seed):
    """Mean over paths of (1/T) int_0^T c(X_t, U_t) dt, with its standard error."""
    if n_paths < 10:
        raise PreconditionError("average_cost needs at least 10 paths")
    n = n_steps_for(horizon, dt)
    vals = np.empty(n_paths)
    b1 = Binning.for_model(model, nbins=1)
    for i in range(n_paths):
        run = occupation(model, control, x0, [n * dt], dt, seed, i, binning=b1, cost=cost)
        vals[i] = run.running_costs[-1]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))


# ----------------------------------------------------------------------------
# tightness


@dataclass
class TightnessProfile:
    radii: np.ndarray
    times: np.ndarray
    mass_outside: np.ndarray   # (len(radii), len(times))

    def at(self, radius, t):
        i = int(np.flatnonzero(np.isclose(self.radii, radius))[0])
        j = int(np.flatnonzero(np.isclose(self.times, t))[0])
        return float(self.mass_outside[i, j])

    def nonincreasing_after(self, radius, burn_in, tol=0.0):
        """True when the mass outside B_radius does not increase over checkpoints after burn_in."""
        i = int(np.flatnonzero(np.isclose(self.radii, radius))[0])
        m = self.mass_outside[i, self.times > burn_in]
        return bool(np.all(np.diff(m) <= tol))

    def to_dict(self):
        return {"radii": self.radii.tolist(), "times": self.times.tolist(),
                "mass_outside": self.mass_outside.tolist()}


def tightness_profile(model, control, x0, horizon, checkpoints, radii, dt, seed, path_index=0):
    """Fraction of [0, t) spent outside B_l for each radius l and checkpoint t.

    The indicator of |x| > l is evaluated exactly on the path, not on bins.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be increasing")
    times = np.asarray(checkpoints if checkpoints is not None else geometric_checkpoints(horizon, dt=dt), float)
    if times[-1] > horizon * (1 + 1e-12):
        raise ValueError("checkpoints beyond the horizon")
    run = occupation(model, control, x0, times, dt, seed, path_index,
                     binning=Binning.for_model(model, nbins=1), radii=radii)
    return TightnessProfile(radii, run.times, (run.outside / run.times[:, None]).T)


def cycle_tightness(model, control, x0, inner, outer, radius, horizon, dt, seed, path_index=0):
    """Cycle-ratio estimate of the long-run fraction of time outside B_radius."""
    from .hitting_times import regenerative_cycles

    cyc = regenerative_cycles(model, control, x0, inner, outer, horizon, dt, seed,
                              test=outside_indicator(radius), path_index=path_index)
    return cyc.cycle_average(), cyc


# ----------------------------------------------------------------------------
# control comparison


@dataclass
class PolicySearch:
    actions: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray

    @property
    def best_index(self):
        return int(np.argmin(self.estimates))

    @property
    def winner(self):
        return Control.constant(self.actions[self.best_index])

    def to_dict(self):
        return {"actions": self.actions.tolist(), "estimates": self.estimates.tolist(),
                "stderrs": self.stderrs.tolist(), "winner": self.actions[self.best_index].tolist()}


def constant_bank(model, n=POLICY_GRID):
    acts = model.action_set.grid(n)
    return [Control.constant(a) for a in acts]


def policy_search(model, cost, x0, horizon, dt, seed, n_paths=10, n_grid=POLICY_GRID):
    """Average cost of each constant control on an n_grid-point mesh of the action set."""
    acts = model.action_set.grid(n_grid)
    est = np.empty(len(acts))
    se = np.empty(len(acts))
    for i, a in enumerate(acts):
        # shared seed: the constants are compared on common random numbers
        est[i], se[i] = average_cost(model, Control.constant(a), cost, x0, horizon, n_paths, dt,
                                     streams.child_seed(seed, "policy"))
    return PolicySearch(np.asarray(acts), est, se)


@dataclass
class Dominance:
    member: str
    fraction: float
    margins: np.ndarray    # liminf(member) - limsup(candidate), per replicate
    ties: np.ndarray       # replicates where both series coincide

    def to_dict(self):
        return {"member": self.member, "fraction": self.fraction,
                "margins": self.margins.tolist(), "ties": int(self.ties.sum())}


@dataclass
class DominanceReport:
    candidate: str
    results: list
    n_seeds: int
    horizon: float
    dt: float
    common_random_numbers: bool

    def min_fraction(self):
        return min(r.fraction for r in self.results)

    def to_dict(self):
        return {"candidate": self.candidate, "n_seeds": self.n_seeds, "horizon": self.horizon,
                "dt": self.dt, "common_random_numbers": self.common_random_numbers,
                "results": [r.to_dict() for r in self.results]}


def compare_controls(model, candidate: Control, bank, cost, x0, horizon, n_seeds, dt=1e-2, seed=0,
                     tail_fraction=TAIL_FRACTION, common_random_numbers=True):
    """Pathwise dominance of ``candidate`` over each bank member.

    A replicate counts as dominated when limsup(candidate) <= liminf(member)
    on the tail checkpoints, or when the two cost series coincide exactly
    (the tie rule).  With common random numbers every control in replicate r
    is driven by the same streams; otherwise each (control, replicate) pair
    gets its own seed.
    """
    def run(ctrl, r):
        s = streams.child_seed(seed, "replicate", r) if common_random_numbers else \
            streams.child_seed(seed, "replicate", r, ctrl.name)
        return cost_series(model, ctrl, cost, x0, horizon, dt, s)

    cand = [run(candidate, r) for r in range(n_seeds)]
    results = []
    for member in bank:
        margins = np.empty(n_seeds)
        ties = np.zeros(n_seeds, dtype=bool)
        for r in range(n_seeds):
            other = cand[r] if member is candidate else run(member, r)
            if np.array_equal(other.averages, cand[r].averages):
                ties[r] = True
                margins[r] = 0.0
            else:
                margins[r] = liminf_estimate(other, tail_fraction) - limsup_estimate(cand[r], tail_fraction)
        frac = float(np.mean(ties | (margins >= 0)))
        results.append(Dominance(member.name, frac, margins, ties))
    return DominanceReport(candidate.name, results, n_seeds, float(horizon), float(dt), common_random_numbers)


# ----------------------------------------------------------------------------
# convergence in total variation


@dataclass
class TVRate:
    times: np.ndarray
    tv: np.ndarray
    C0: float
    V_x0: float
    fit_times: np.ndarray
    noise_floor: float
    reference_horizon: float

    def scaled(self):
        """TV(t) ln(t + 1)."""
        return self.tv * np.log(self.times + 1.0)

    def bound(self, slack=0.25):
        return self.C0 * self.V_x0 * (1.0 + slack)

    def within_bound(self, slack=0.25):
        return bool(np.all(self.scaled() <= self.bound(slack)))

    def to_dict(self):
        return {"times": self.times.tolist(), "tv": self.tv.tolist(), "C0": self.C0,
                "V_x0": self.V_x0, "fit_times": self.fit_times.tolist(),
                "noise_floor": self.noise_floor, "reference_horizon": self.reference_horizon,
                "scaled": self.scaled().tolist()}


def tv_rate(model, control, x0, times, n_paths, V, binning=None, dt=1e-2, seed=0,
            reference_factor=10.0):
    """Binned TV distance between the law of X_t and a long-run reference histogram.

    The reference is the occupation measure of one path run for
    ``reference_factor`` times the largest t.  C0 is the least-squares fit
    of TV(t) = C0 V(x0) / ln(t + 1) on the upper half of the times.
    """
    times = np.sort(np.asarray(times, dtype=float))
    binning = binning or Binning.for_model(model)
    x0 = np.ascontiguousarray(np.atleast_1d(np.asarray(x0, dtype=float)))
    ref_h = reference_factor * times[-1]
    ref = occupation(model, control, x0, [ref_h], dt, streams.child_seed(seed, "reference"),
                     binning=binning)
    mu = ref.measure().state_masses
    steps = _check_steps(times, dt)
    counts = np.zeros((times.shape[0], binning.n_state))
    sub = streams.child_seed(seed, "marginals")
    _prepare(model, control, x0)
    for i in range(n_paths):
        states = record_states(model, control, x0, steps, dt, sub, i)
        idx = binning.state_index(states)
        counts[np.arange(times.shape[0]), idx] += 1.0
    P = counts / n_paths
    tv = 0.5 * np.abs(P - mu).sum(axis=1)
    Vx = float(V(x0[None])[0])
    tail = times >= np.median(times)
    inv = 1.0 / np.log(times[tail] + 1.0)
    C = float(np.dot(tv[tail], inv) / np.dot(inv, inv))
    floor = 0.5 * float(np.sum(np.sqrt(2.0 * mu * (1.0 - mu) / (math.pi * n_paths))))
    return TVRate(times, tv, C / Vx, Vx, times[tail], floor, ref_h)


# ----------------------------------------------------------------------------
# tail mass away from a compact set


@dataclass
class TailBoundReport:
    N: np.ndarray
    ratios: np.ndarray
    scaled: np.ndarray         # ratio * N
    C_hat: float
    precondition: object
    horizon: float

    def stable(self, tol=0.30):
        """All ratio * N within +-tol of their mean."""
        m = self.scaled.mean()
        return bool(np.all(np.abs(self.scaled - m) <= tol * m)) if m > 0 else True

    def to_dict(self):
        return {"N": self.N.tolist(), "ratios": self.ratios.tolist(), "scaled": self.scaled.tolist(),
                "C_hat": self.C_hat, "horizon": self.horizon, "stable": self.stable()}


def section3_tail_bound(model, control, V, phi, cost, K: DomainSpec, N_list, horizon, dt, seed,
                        x0=None, grid=None, action_grid=None):
    """int over (K^c x U) of phi(V)/(N + phi(V)) d zeta_t at the horizon, for each N.

    Refuses to run unless the drift inequality coupling V, phi and the cost
    holds on the verification grid.
    """
    pre = check_ka1(model, V, phi, cost, K, grid=grid, action_grid=action_grid)
    if not pre.passed:
        raise PreconditionError(f"drift inequality for (V, phi) fails: {pre.to_dict()}")
    from .sde_core import simulate

    x0 = np.zeros(model.dim) if x0 is None else x0
    traj = simulate(model, control, x0, horizon, dt, streams.child_seed(seed, "tail"))
    X = traj.states[:-1]
    outside = ~K.contains(X)
    f = phi.value(V(X))
    N = np.asarray(N_list, dtype=float)
    ratios = np.array([np.mean(np.where(outside, f / (n + f), 0.0)) for n in N])
    scaled = ratios * N
    return TailBoundReport(N, ratios, scaled, float(scaled.max()), pre, traj.t_final)
