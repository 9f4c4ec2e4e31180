"""Hitting times of balls, their moments and regenerative cycles."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import streams
from .candidates import LyapunovCandidate
from .errors import EstimationError, InsufficientCyclesError, PreconditionError
from .lyapunov_verify import (DEFAULT_SLACK, DomainSpec, Grid, check_drift, constant_rhs,
                              extended_grid, inverse_sli_many, neg_ln_plus_rhs)
from .sde_core import UNIT_COST, _prepare, n_steps_for, raise_status

DEFAULT_T_MAX = 1e5
CENSOR_FLAG = 0.01
MIN_FOR_STDERR = 1000
N_BOOT = 1000
HILL_FRACTIONS = (0.05, 0.025, 0.10)
STABILITY_THRESHOLD = 0.15


# ----------------------------------------------------------------------------
# sampling


@dataclass
class HittingSample:
    tau: float
    censored: bool
    x0: np.ndarray
    seed: int
    path_index: int
    steps: int
    modulated: float = float("nan")


@dataclass
class HittingBatch:
    """Independent copies of tau(D) from one starting point.

    Censored paths carry ``tau = t_max`` (a lower bound).  ``modulated``
    holds int_0^tau max_u |c(X_t, u)| dt when a cost was supplied.
    """

    taus: np.ndarray
    censored: np.ndarray
    x0: np.ndarray
    domain: DomainSpec
    dt: float
    t_max: float
    seed: int
    path_indices: np.ndarray
    modulated: np.ndarray = None

    def __len__(self):
        return self.taus.shape[0]

    @property
    def n_censored(self):
        return int(self.censored.sum())

    @property
    def censor_rate(self):
        return self.n_censored / max(len(self), 1)

    def sample(self, i):
        mod = float("nan") if self.modulated is None else float(self.modulated[i])
        return HittingSample(float(self.taus[i]), bool(self.censored[i]), self.x0,
                             self.seed, int(self.path_indices[i]),
                             int(round(self.taus[i] / self.dt)), mod)


def _mesh(model, action_grid):
    if action_grid is None:
        action_grid = model.action_set.grid()
    return np.ascontiguousarray(np.asarray(action_grid, dtype=float).reshape(-1, model.action_set.dim))


def sample_hitting_times(model, control, x0, domain: DomainSpec, dt, seed, n_paths,
                         t_max=DEFAULT_T_MAX, start_index=0, cost=None, action_grid=None,
                         bridge=True):
    """tau(D) = inf{t >= 0 : X_t in closure(D)} for ``n_paths`` paths from x0.

    Path ``start_index + i`` uses the noise, action and bridge streams of that
    index, so a batch can be extended later without changing earlier samples.
    """
    x0 = _prepare(model, control, x0)
    if domain.dim != model.dim:
        raise ValueError("domain and model dimensions differ")
    max_steps = n_steps_for(t_max, dt)
    with_cost = cost is not None
    cost = cost if with_cost else UNIT_COST
    ugrid = _mesh(model, action_grid)
    idx = np.arange(start_index, start_index + n_paths, dtype=np.int64)
    taus = np.empty(n_paths)
    cens = np.zeros(n_paths, dtype=bool)
    mods = np.full(n_paths, np.nan) if with_cost else None
    center = np.ascontiguousarray(domain.center, dtype=float)
    for r, i in enumerate(idx):
        status, steps, hit, integral = K.hit_path(
            model.drift, model.diffusion, control.fill, cost.func,
            model.params, control.params, cost.params,
            model.action_set.lo, model.action_set.hi, ugrid, x0, center, float(domain.radius),
            float(dt), max_steps,
            streams.path_generator(seed, int(i), streams.NOISE),
            streams.path_generator(seed, int(i), streams.ACTION),
            streams.path_generator(seed, int(i), streams.BRIDGE),
            control.kmax, model.explosion_bound, bool(bridge), with_cost)
        raise_status(status, steps, model, control, int(i))
        taus[r] = steps * dt if hit else max_steps * dt
        cens[r] = not hit
        if with_cost:
            mods[r] = integral
    return HittingBatch(taus, cens, x0, domain, float(dt), float(max_steps * dt), int(seed), idx, mods)


def sample_hitting_time(model, control, x0, domain, dt, t_max=DEFAULT_T_MAX, seed=0, path_index=0,
                        bridge=True):
    batch = sample_hitting_times(model, control, x0, domain, dt, seed, 1, t_max=t_max,
                                 start_index=path_index, bridge=bridge)
    return batch.sample(0)


def modulated_times(model, control, x0, domain, cost, dt, seed, n_paths,
                    t_max=DEFAULT_T_MAX, action_grid=None, start_index=0):
    """Samples of int_0^tau(D) max_u |c(X_t, u)| dt (trapezoid rule, max over the action mesh)."""
    return sample_hitting_times(model, control, x0, domain, dt, seed, n_paths, t_max=t_max,
                                start_index=start_index, cost=cost, action_grid=action_grid)


def modulated_time(model, control, x0, domain, cost, dt, t_max=DEFAULT_T_MAX, seed=0,
                   path_index=0, action_grid=None):
    batch = modulated_times(model, control, x0, domain, cost, dt, seed, 1, t_max=t_max,
                            action_grid=action_grid, start_index=path_index)
    return float(batch.modulated[0])


# ----------------------------------------------------------------------------
# moments


def tlnt(t):
    """t ln+ t, extended by 0 at t = 0."""
    t = np.asarray(t, dtype=float)
    return t * np.log(np.maximum(t, 1.0))


@dataclass
class Estimate:
    value: float
    stderr: float

    def interval(self, z=3.0):
        return self.value - z * self.stderr, self.value + z * self.stderr


@dataclass
class HillEstimate:
    fraction: float
    k: int
    alpha: float
    stderr: float


@dataclass
class MomentReport:
    n: int
    n_censored: int
    censor_rate: float
    censor_flagged: bool
    lower_bounds: bool           # censored paths enter at t_max
    mean: Estimate
    tlnt: Estimate
    moments: dict                # p -> Estimate of E[tau^p]
    hill: list                   # HillEstimate for each fraction, the first is the headline value
    degenerate: bool
    stderr_reliable: bool        # at least MIN_FOR_STDERR uncensored samples

    @property
    def hill_alpha(self):
        return self.hill[0].alpha

    def to_dict(self):
        return {
            "n": self.n, "n_censored": self.n_censored, "censor_rate": self.censor_rate,
            "censor_flagged": self.censor_flagged, "lower_bounds": self.lower_bounds,
            "mean": [self.mean.value, self.mean.stderr],
            "tlnt": [self.tlnt.value, self.tlnt.stderr],
            "moments": {str(p): [e.value, e.stderr] for p, e in self.moments.items()},
            "hill": [[h.fraction, h.k, h.alpha, h.stderr] for h in self.hill],
            "degenerate": self.degenerate, "stderr_reliable": self.stderr_reliable,
        }


def hill_estimator(x, fraction):
    """Hill tail index from the top ``fraction`` of the positive sample.

    Returns ``(alpha, stderr, k)``; alpha is NaN when the upper order
    statistics are all equal.
    """
    x = np.sort(np.asarray(x, dtype=float))[::-1]
    x = x[x > 0]
    k = int(math.floor(fraction * x.shape[0]))
    if k < 2 or k >= x.shape[0]:
        return float("nan"), float("nan"), k
    logs = np.log(x[:k]) - math.log(x[k])
    m = logs.mean()
    if not m > 0:
        return float("nan"), float("nan"), k
    alpha = 1.0 / m
    return alpha, alpha / math.sqrt(k), k


def _bootstrap_stderr(cols, n_boot, rng, chunk=50):
    """Bootstrap standard errors of the column means of ``cols`` (n, q)."""
    n = cols.shape[0]
    means = np.empty((n_boot, cols.shape[1]))
    done = 0
    while done < n_boot:
        b = min(chunk, n_boot - done)
        idx = rng.integers(0, n, size=(b, n))
        means[done:done + b] = cols[idx].mean(axis=1)
        done += b
    return means.std(axis=0, ddof=1)


def moment_estimators(samples, powers=(1.5, 2.0), n_boot=N_BOOT, seed=0,
                      hill_fractions=HILL_FRACTIONS):
    """Moment estimates of a hitting-time sample with bootstrap standard errors.

    ``samples`` is a :class:`HittingBatch`, a list of :class:`HittingSample`
    or an array of times (all treated as uncensored).  Censored times enter at t_max, so every estimate is then
    a lower bound; ``censor_flagged`` marks a censoring rate above 1%.
    """
    if isinstance(samples, HittingBatch):
        taus, cens = samples.taus, samples.censored
    elif len(samples) and isinstance(samples[0], HittingSample):
        taus = np.array([h.tau for h in samples], dtype=float)
        cens = np.array([h.censored for h in samples], dtype=bool)
    else:
        taus = np.asarray(samples, dtype=float).ravel()
        cens = np.zeros(taus.shape[0], dtype=bool)
    n = taus.shape[0]
    if n == 0:
        raise EstimationError("empty sample")
    n_cens = int(cens.sum())
    if n_cens == n:
        raise EstimationError("every sample is censored")
    if np.any(~np.isfinite(taus)) or np.any(taus < 0):
        raise EstimationError("hitting times must be finite and nonnegative")
    powers = tuple(float(p) for p in powers)
    cols = np.column_stack([taus, tlnt(taus)] + [taus**p for p in powers])
    est = cols.mean(axis=0)
    rng = streams.aux_generator(seed, "bootstrap")
    se = _bootstrap_stderr(cols, n_boot, rng)
    hill = []
    for f in hill_fractions:
        a, s, k = hill_estimator(taus[~cens], f)
        hill.append(HillEstimate(float(f), k, a, s))
    degenerate = bool(np.all(taus == taus[0])) or not math.isfinite(hill[0].alpha)
    return MomentReport(
        n=n, n_censored=n_cens, censor_rate=n_cens / n, censor_flagged=n_cens / n > CENSOR_FLAG,
        lower_bounds=n_cens > 0,
        mean=Estimate(float(est[0]), float(se[0])), tlnt=Estimate(float(est[1]), float(se[1])),
        moments={p: Estimate(float(est[2 + i]), float(se[2 + i])) for i, p in enumerate(powers)},
        hill=hill, degenerate=degenerate, stderr_reliable=(n - n_cens) >= MIN_FOR_STDERR)


# ----------------------------------------------------------------------------
# growth of sample moments along a doubling ladder


def doubling_ladder(n_max, n_min=1000):
    """n_max, n_max/2, ... down to the last size >= n_min, increasing."""
    sizes = []
    n = int(n_max)
    while n >= n_min:
        sizes.append(n)
        n //= 2
    if not sizes:
        raise ValueError("n_max must be at least n_min")
    return np.array(sizes[::-1], dtype=np.int64)


@dataclass
class StabilityReport:
    """Doubling-n diagnostic of a sample-mean statistic across replications.

    ``medians[k]`` is the median over replications of the estimate from the
    first ``sizes[k]`` samples, and ``slope`` the least-squares growth of
    log2(median) per doubling of n, with a bootstrap standard error over
    replications.  The statistic is stable when the slope is at most
    ``threshold``; the default 0.15 allows an 11% drift per doubling.
    """

    name: str
    sizes: np.ndarray
    medians: np.ndarray
    estimates: np.ndarray       # (replications, len(sizes))
    slope: float
    stderr: float
    threshold: float

    @property
    def stable(self):
        return bool(self.slope <= self.threshold)

    @property
    def margin_in_stderr(self):
        return (self.slope - self.threshold) / self.stderr if self.stderr > 0 else float("inf")

    def to_dict(self):
        return {"name": self.name, "sizes": self.sizes.tolist(), "medians": self.medians.tolist(),
                "slope": self.slope, "stderr": self.stderr, "threshold": self.threshold,
                "stable": self.stable}


def _ladder_slope(est, sizes):
    k = np.log2(sizes / sizes[0])
    med = np.median(est, axis=0)
    if np.any(~(med > 0)):
        return float("nan"), med
    return float(np.polyfit(k, np.log2(med), 1)[0]), med


def doubling_stability(replicates, statistic, sizes, name="statistic", threshold=STABILITY_THRESHOLD,
                       n_boot=N_BOOT, seed=0):
    """Growth per doubling of ``mean(statistic(tau))`` along ``sizes``.

    ``replicates`` is a (R, n) array (or list of batches) of independent
    samples.  A finite moment converges, so its median estimate flattens
    out; a divergent p-th moment of a tail of index alpha < p grows like
    n^(p/alpha - 1) per sample size, i.e. by a fixed factor per doubling.
    """
    reps = [r.taus if isinstance(r, HittingBatch) else np.asarray(r, dtype=float) for r in replicates]
    sizes = np.asarray(sizes, dtype=np.int64)
    if any(len(r) < sizes[-1] for r in reps):
        raise ValueError("every replicate needs at least max(sizes) samples")
    est = np.empty((len(reps), sizes.shape[0]))
    for i, r in enumerate(reps):
        c = np.cumsum(statistic(r[:sizes[-1]]))
        est[i] = c[sizes - 1] / sizes
    slope, med = _ladder_slope(est, sizes)
    rng = streams.aux_generator(seed, "stability", name)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        pick = rng.integers(0, est.shape[0], size=est.shape[0])
        boots[b], _ = _ladder_slope(est[pick], sizes)
    return StabilityReport(name, sizes, med, est, slope, float(np.nanstd(boots, ddof=1)), threshold)


# ----------------------------------------------------------------------------
# regenerative cycles


@dataclass
class CycleDecomposition:
    """Alternating stopping times tau_0 = 0 < tau_1 < tau_2 < ... of one path.

    Odd times are exits from the outer ball, even times entries into the
    inner one; ``integrals[m]`` is the integral of the test function over
    [tau_2m, tau_2m+2).
    """

    times: np.ndarray
    integrals: np.ndarray
    horizon: float
    inner: DomainSpec
    outer: DomainSpec
    dt: float

    @property
    def n_cycles(self):
        return self.integrals.shape[0]

    @property
    def entry_times(self):
        return self.times[0::2]

    @property
    def cycle_lengths(self):
        return np.diff(self.entry_times)[: self.n_cycles]

    def kappa(self, t):
        """Number of completed cycles before t: max{k : t > tau_2k}."""
        return int(np.searchsorted(self.entry_times, t, side="left")) - 1

    def cycle_average(self):
        """Ratio estimate sum of cycle integrals / sum of cycle lengths."""
        return float(self.integrals.sum() / self.cycle_lengths.sum())


def regenerative_cycles(model, control, x0, inner: DomainSpec, outer: DomainSpec, horizon, dt, seed,
                        test=None, path_index=0, min_gap=0.1, capacity=4_000_000):
    """Cycle decomposition of one path of length ``horizon`` around inner within outer."""
    x0 = _prepare(model, control, x0)
    gap = outer.radius - inner.radius - float(np.linalg.norm(np.subtract(outer.center, inner.center)))
    if gap < min_gap:
        raise PreconditionError(f"closure of the inner ball must sit inside the outer one with gap >= {min_gap}")
    n = n_steps_for(horizon, dt)
    test = test if test is not None else UNIT_COST
    cap = int(min(n + 1, capacity))
    times = np.empty(cap)
    integrals = np.empty(cap // 2 + 1)
    status, steps, nt = K.cycles_path(
        model.drift, model.diffusion, control.fill, test.func, model.params, control.params,
        test.params, model.action_set.lo, model.action_set.hi, x0, float(dt), n,
        streams.path_generator(seed, path_index, streams.NOISE),
        streams.path_generator(seed, path_index, streams.ACTION),
        control.kmax, model.explosion_bound,
        np.ascontiguousarray(inner.center, dtype=float), float(inner.radius),
        np.ascontiguousarray(outer.center, dtype=float), float(outer.radius), times, integrals)
    raise_status(status, steps, model, control, path_index)
    if steps < n:
        raise EstimationError("stopping-time buffer full before the horizon; raise capacity")
    completed = (nt - 1) // 2
    if completed < 2:
        raise InsufficientCyclesError(f"only {completed} completed cycle(s) before t = {horizon:g}")
    return CycleDecomposition(times[:nt].copy(), integrals[:completed].copy(), float(n * dt),
                              inner, outer, float(dt))


# ----------------------------------------------------------------------------
# bounds on E tau and E tau ln+ tau


@dataclass
class PointBound:
    x: np.ndarray
    trivial: bool               # x in the closure of D, tau = 0
    mean: Estimate
    tlnt: Estimate
    bound_mean: float           # V1(x)
    bound_tlnt: float           # 2 V1(x) + V2(x)
    n_censored: int

    @property
    def mean_ok(self):
        return self.mean.value - 3.0 * self.mean.stderr <= self.bound_mean

    @property
    def tlnt_ok(self):
        return self.tlnt.value - 3.0 * self.tlnt.stderr <= self.bound_tlnt

    @property
    def passed(self):
        return self.mean_ok and self.tlnt_ok

    def to_dict(self):
        return {"x": self.x.tolist(), "trivial": self.trivial,
                "mean": [self.mean.value, self.mean.stderr], "bound_mean": self.bound_mean,
                "tlnt": [self.tlnt.value, self.tlnt.stderr], "bound_tlnt": self.bound_tlnt,
                "n_censored": self.n_censored, "passed": self.passed}


def _stderr(v):
    return float(v.std(ddof=1) / math.sqrt(v.shape[0])) if v.shape[0] > 1 else float("nan")


def lemma_bounds(model, control, V1, V2, domain, points, dt, n_paths, seed, t_max=DEFAULT_T_MAX):
    """Monte Carlo E tau(D) and E tau ln+ tau against V1 and 2 V1 + V2 at each point.

    No drift condition is verified here; see :func:`lemma21_check`.
    Each point uses its own child seed.
    """
    out = []
    for i, x in enumerate(np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, model.dim)):
        v1 = float(V1(x[None])[0])
        v2 = float(V2(x[None])[0])
        if domain.contains_closure(x[None])[0]:
            z = Estimate(0.0, 0.0)
            out.append(PointBound(x, True, z, z, v1, 2 * v1 + v2, 0))
            continue
        batch = sample_hitting_times(model, control, x, domain, dt,
                                     streams.child_seed(seed, "point", i), n_paths, t_max=t_max)
        tl = tlnt(batch.taus)
        out.append(PointBound(x, False, Estimate(float(batch.taus.mean()), _stderr(batch.taus)),
                              Estimate(float(tl.mean()), _stderr(tl)), v1, 2 * v1 + v2, batch.n_censored))
    return out


def scale_pair(V1, V2, factor):
    """(s V1, V2 + ln(s) V1) for s >= 1: keeps both drift inequalities and makes s V1 >= 1."""
    if factor < 1.0:
        raise ValueError("scale factor must be >= 1")
    if factor == 1.0:
        return V1, V2
    from .candidates import combine
    return (V1.scaled(factor), combine([(1.0, V2), (math.log(factor), V1)], name=f"{V2.name}+ln{factor:g}*{V1.name}"))


@dataclass
class HittingBoundsReport:
    domain: DomainSpec
    precondition_a: object
    precondition_b: object
    scale: float
    points: list

    @property
    def passed(self):
        return all(p.passed for p in self.points)


def lemma21_check(model, control, V1: LyapunovCandidate, V2: LyapunovCandidate, domain: DomainSpec,
                         points, dt, n_paths, seed, t_max=DEFAULT_T_MAX, grid=None, slack=DEFAULT_SLACK):
    """Bounds on E tau(D) and E tau ln+ tau, guarded by the drift inequalities along v.

    L^v V1 <= -1 and L^v V2 <= -ln+ V1 are checked on the grid points outside
    D (closure excluded); a failure raises :class:`PreconditionError`.  V1 is
    rescaled to be at least 1 there before the bounds are evaluated.
    """
    grid = grid if grid is not None else extended_grid()
    if not isinstance(grid, Grid):
        grid = Grid(np.asarray(grid, dtype=float).reshape(-1, model.dim))
    X = grid.points[~domain.contains_closure(grid.points)]
    if X.shape[0] == 0:
        raise PreconditionError("no grid points outside the domain")
    region = Grid(X, dict(grid.description, outside=domain.describe()))
    v1min = float(V1(X).min())
    if not v1min > 0:
        raise PreconditionError("V1 must be positive outside D")
    s = max(1.0, 1.0 / v1min)
    V1s, V2s = scale_pair(V1, V2, s)
    ra = check_drift(model, V1s, constant_rhs(-1.0), region, slack=slack, control=control)
    rb = check_drift(model, V2s, neg_ln_plus_rhs(V1s), region, slack=slack, control=control)
    if not (ra.passed and rb.passed):
        bad = ra if not ra.passed else rb
        raise PreconditionError(
            f"drift inequality along {control.name} fails outside {domain.describe()}: "
            f"violation {bad.max_violation:.3g} at x={bad.argmax_point}")
    res = lemma_bounds(model, control, V1s, V2s, domain, points, dt, n_paths, seed, t_max=t_max)
    return HittingBoundsReport(domain, ra, rb, s, res)


@dataclass
class InverseBound:
    x: np.ndarray
    trivial: bool
    estimate: Estimate          # E I^{-1}(tau)
    bound: float                # V(x) - 1
    n_censored: int

    @property
    def passed(self):
        return self.estimate.value - 3.0 * self.estimate.stderr <= self.bound


def inverse_sli_bounds(model, control, V, domain, points, dt, n_paths, seed, t_max=DEFAULT_T_MAX):
    """Monte Carlo E[I^{-1}(tau(D))] against V(x) - 1 at each point (no guard)."""
    out = []
    for i, x in enumerate(np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, model.dim)):
        bound = float(V(x[None])[0]) - 1.0
        if domain.contains_closure(x[None])[0]:
            out.append(InverseBound(x, True, Estimate(1.0, 0.0), bound, 0))
            continue
        batch = sample_hitting_times(model, control, x, domain, dt,
                                     streams.child_seed(seed, "inverse", i), n_paths, t_max=t_max)
        z = inverse_sli_many(batch.taus)
        out.append(InverseBound(x, False, Estimate(float(z.mean()), _stderr(z)), bound, batch.n_censored))
    return out
