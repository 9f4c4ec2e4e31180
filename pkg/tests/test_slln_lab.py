import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from ergolab import hitting_times as HT
from ergolab import models
from ergolab import slln_lab as SL
from ergolab import streams
from ergolab.errors import EstimationError, PreconditionError
from ergolab.lyapunov_verify import DomainSpec
from ergolab.sde_core import Control


def test_gaussian_average_within_clt_envelope():
    n = 10_000
    finals = [SL.mds_average(SL.get_generator("gaussian"), n, s).final for s in range(100)]
    assert np.mean(np.abs(finals) <= 4 / math.sqrt(n)) >= 0.95


def test_zero_series_is_identically_zero():
    s = SL.mds_average(SL.get_generator("zero"), 5000, 0)
    assert np.all(s.values == 0.0)
    assert list(s.ks) == [1000, 2000, 4000, 5000]


def test_heavy_average_much_larger_than_llogl_case():
    n = 100_000
    heavy = max(abs(SL.mds_average(SL.get_generator("heavy"), n, s).final) for s in range(30))
    exp = max(abs(SL.mds_average(SL.get_generator("exp"), n, s).final) for s in range(30))
    assert heavy > 10 * exp


def test_blockwise_sums_match_direct_cumsum():
    spec = SL.get_generator("exp")
    s = SL.mds_average(spec, 200_000, 3)
    direct = SL.normalized_sums(spec.draw(streams.aux_generator(3, "mds", "exp"), 200_000), s.ks)
    assert np.allclose(s.values, direct.values)


def test_mds_average_needs_enough_terms():
    with pytest.raises(PreconditionError):
        SL.mds_average(SL.get_generator("gaussian"), 10, 0)


def test_unknown_generator():
    with pytest.raises(KeyError):
        SL.get_generator("cauchy")


def test_history_dependent_generator():
    # fair signs with a predictable scale: 1.5 after a positive step, 1 otherwise
    spec = SL.MDSSpec("scaled", True, step=lambda h, rng: (1.0 + (0.5 if len(h) and h[-1] > 0 else 0.0))
                      * rng.choice((-1.0, 1.0)))
    s = SL.mds_average(spec, 4000, 1)
    assert abs(s.final) < 0.1


def test_non_finite_increments_are_rejected():
    with pytest.raises(EstimationError):
        SL.normalized_sums(np.array([1.0, np.inf]))


def test_heavy_sampler_matches_its_density(rng):
    z = SL.heavy_normaliser()

    def cdf(y):
        return np.array([integrate.quad(lambda t: 1 / (t * t * math.log(t) ** 2), 2, v)[0] / z for v in y])

    x = SL.heavy_abs_sample(rng, 4000)
    assert x.min() >= 2.0
    res = stats.kstest(np.minimum(x, 1e6), lambda y: cdf(np.atleast_1d(y)))
    assert res.pvalue > 0.01


def test_heavy_normaliser_closed_form():
    # substituting w = ln y: int_{ln 2}^inf e^{-w} / w^2 dw
    val, _ = integrate.quad(lambda w: math.exp(-w) / (w * w), math.log(2), np.inf)
    assert SL.heavy_normaliser() == pytest.approx(val, rel=1e-10)
    assert SL.heavy_normaliser() == pytest.approx(0.34267647737438084, rel=1e-10)


def test_heavy_truncated_integrals_against_quadrature():
    z = SL.heavy_normaliser()
    upper = 1e4
    a, _ = integrate.quad(lambda y: 1 / (y * math.log(y) ** 2), 2, upper, limit=200)
    b, _ = integrate.quad(lambda y: 1 / (y * math.log(y)), 2, upper, limit=200)
    first, second = SL.heavy_tail_integrals(upper)
    assert first == pytest.approx(a / z, rel=1e-8)
    assert second == pytest.approx(b / z, rel=1e-8)


def test_heavy_is_symmetric(rng):
    y = SL.get_generator("heavy").draw(rng, 20_000)
    assert abs(np.mean(y > 0) - 0.5) < 0.02


# L log L


def test_llogl_of_unit_magnitudes_is_zero():
    rep = SL.llogl_check(np.r_[np.ones(2000), -np.ones(2000)])
    assert rep.estimate == 0.0 and rep.stable


def test_llogl_exponential_oracle(rng):
    # Y = E - 1 with E ~ Exp(1): E|Y| ln+|Y| = int_1^inf y ln y e^{-(y+1)} dy
    exact, _ = integrate.quad(lambda y: y * math.log(y) * math.exp(-(y + 1)), 1, np.inf)
    rep = SL.llogl_check(rng.exponential(size=200_000) - 1.0)
    assert abs(rep.estimate - exact) <= 4 * rep.stderr
    assert rep.stable


def test_llogl_flags_the_heavy_generator_more_often_for_larger_n():
    spec = SL.get_generator("heavy")

    def rate(n):
        return np.mean([not SL.llogl_check(spec.draw(np.random.default_rng([n, s]), n)).stable
                        for s in range(40)])

    small, large = rate(2_000), rate(200_000)
    assert large > small
    assert large >= 0.3


def test_llogl_needs_enough_samples():
    with pytest.raises(PreconditionError):
        SL.llogl_check(np.ones(10))


@given(st.floats(0.1, 50.0))
def test_llogl_is_scale_monotone(c):
    y = np.random.default_rng(0).exponential(size=2000)
    assert SL.llogl_check(c * y).estimate <= SL.llogl_check((c + 1.0) * y).estimate


def test_cycle_increments_are_centred(ex21):
    cyc = HT.regenerative_cycles(ex21, Control.constant(1.0), [0.0], DomainSpec.ball([0.0], 1.0),
                                 DomainSpec.ball([0.0], 2.0), 500.0, 1e-2, 0,
                                 test=models.outside_indicator(5.0))
    y = SL.centered_cycle_increments(cyc)
    assert y.shape[0] == cyc.n_cycles
    assert abs(y.sum()) < 1e-8 * np.abs(y).sum()
