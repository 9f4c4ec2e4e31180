"""Strong-law experiments for martingale-difference sequences."""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from . import streams
from .errors import EstimationError, PreconditionError

MIN_N = 1000
BLOCK = 1 << 16
LN2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class MDSSpec:
    """A martingale-difference generator.

    ``sample(rng, size)`` draws a block of i.i.d. increments; history-dependent
    generators provide ``step(history, rng)`` instead, which is called once per
    increment with the increments so far.  ``llogl`` records whether
    E|Y| ln+|Y| is finite.
    """

    name: str
    llogl: bool
    sample: Optional[Callable] = None
    step: Optional[Callable] = None

    def draw(self, rng, n):
        if self.sample is not None:
            return np.asarray(self.sample(rng, n), dtype=float)
        hist = np.empty(n)
        for i in range(n):
            hist[i] = self.step(hist[:i], rng)
        return hist


def _heavy_abs(rng, size):
    # |Y| on [2, inf) with density proportional to y^-2 (ln y)^-2: Pareto(1)
    # proposals 2/U accepted with probability (ln 2 / ln y)^2
    out = np.empty(size)
    filled = 0
    while filled < size:
        m = int(1.6 * (size - filled)) + 16
        y = 2.0 / (1.0 - rng.random(m))
        keep = y[rng.random(m) < (LN2 / np.log(y)) ** 2]
        take = min(keep.shape[0], size - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def heavy_abs_sample(rng, size):
    return _heavy_abs(rng, size)


def _heavy(rng, size):
    return _heavy_abs(rng, size) * rng.choice((-1.0, 1.0), size=size)


def heavy_normaliser():
    """int_2^inf dy / (y^2 ln^2 y)."""
    val, _ = integrate.quad(lambda y: 1.0 / (y * y * math.log(y) ** 2), 2.0, np.inf, limit=200)
    return val


def heavy_tail_integrals(upper):
    """E|Y| and E|Y| ln+|Y| truncated at ``upper`` for the heavy generator.

    In w = ln y both integrands are explicit: the first tends to 1/ln 2 and
    the second grows like ln ln(upper).
    """
    z = heavy_normaliser()
    lu = math.log(upper)
    first = (1.0 / LN2 - 1.0 / lu) / z
    second = (math.log(lu) - math.log(LN2)) / z
    return first, second


GENERATORS = {
    "gaussian": MDSSpec("gaussian", True, sample=lambda rng, n: rng.standard_normal(n)),
    "exp": MDSSpec("exp", True, sample=lambda rng, n: rng.exponential(1.0, n) - 1.0),
    "heavy": MDSSpec("heavy", False, sample=_heavy),
    "zero": MDSSpec("zero", True, sample=lambda rng, n: np.zeros(n)),
}


def get_generator(name):
    try:
        return GENERATORS[name]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None


@dataclass
class MDSSeries:
    ks: np.ndarray
    values: np.ndarray     # S_k / k

    @property
    def final(self):
        return float(self.values[-1])

    def tail_max(self, tail_fraction=0.25):
        k = max(1, int(math.ceil(tail_fraction * self.values.shape[0])))
        return float(np.abs(self.values[-k:]).max())


def doubling_points(n, start=MIN_N):
    ks = []
    k = start
    while k < n:
        ks.append(k)
        k *= 2
    ks.append(n)
    return np.array(ks, dtype=np.int64)


def normalized_sums(Y, ks=None):
    """S_k / k of an increment array at the checkpoints (default: doublings and the end)."""
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise EstimationError("non-finite increment")
    ks = doubling_points(Y.shape[0], min(MIN_N, Y.shape[0])) if ks is None else np.asarray(ks, np.int64)
    S = np.cumsum(Y)
    return MDSSeries(ks, S[ks - 1] / ks)


def mds_average(spec: MDSSpec, n, seed):
    """S_k / k for k = 1000, 2000, ... and k = n, generated blockwise."""
    n = int(n)
    if n < MIN_N:
        raise PreconditionError(f"mds_average needs n >= {MIN_N}")
    rng = streams.aux_generator(seed, "mds", spec.name)
    ks = doubling_points(n)
    out = np.empty(ks.shape[0])
    total = 0.0
    done = 0
    j = 0
    if spec.sample is None:
        return normalized_sums(spec.draw(rng, n), ks)
    while done < n:
        b = min(BLOCK, n - done)
        y = spec.draw(rng, b)
        if not np.all(np.isfinite(y)):
            raise EstimationError(f"non-finite increment from {spec.name}")
        cs = total + np.cumsum(y)
        while j < ks.shape[0] and ks[j] <= done + b:
            out[j] = cs[ks[j] - done - 1] / ks[j]
            j += 1
        total = cs[-1]
        done += b
    return MDSSeries(ks, out)


def centered_cycle_increments(cycles):
    """Y_m = int_cycle f - rho * length_m with rho the ratio estimate over all cycles."""
    lengths = cycles.cycle_lengths
    rho = cycles.integrals.sum() / lengths.sum()
    return cycles.integrals - rho * lengths


@dataclass
class LLogLReport:
    estimate: float
    stderr: float
    stable: bool
    ladder: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray


def llogl_check(samples):
    """Plug-in E|Y| ln+|Y| with a doubling-n stability flag.

    Stable means that for every pair of consecutive ladder sizes (n, 2n)
    the estimate at 2n lies within three standard errors of the estimate at
    n, the standard error being that of the n-sample.  Taking it from the
    smaller sample keeps a single new extreme value from inflating its own
    tolerance.
    """
    y = np.abs(np.asarray(samples, dtype=float).ravel())
    if y.shape[0] < MIN_N:
        raise PreconditionError(f"llogl_check needs at least {MIN_N} samples")
    v = y * np.log(np.maximum(y, 1.0))
    n = v.shape[0]
    ladder = []
    k = n
    while k >= MIN_N // 2 and len(ladder) < 64:
        ladder.append(k)
        k //= 2
    ladder = np.array(ladder[::-1], dtype=np.int64)
    cs = np.cumsum(v)
    cs2 = np.cumsum(v * v)
    est = cs[ladder - 1] / ladder
    var = np.maximum(cs2[ladder - 1] / ladder - est**2, 0.0)
    se = np.sqrt(var / np.maximum(ladder - 1, 1))
    stable = bool(np.all(np.abs(np.diff(est)) <= 3.0 * se[:-1]))
    return LLogLReport(float(est[-1]), float(se[-1]), stable, ladder, est, se)
