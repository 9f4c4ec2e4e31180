import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from ergolab import hitting_times as HT
from ergolab import models
from ergolab.errors import EstimationError, InsufficientCyclesError, PreconditionError
from ergolab.lyapunov_verify import DomainSpec
from ergolab.sde_core import Control


def expected_exit_time(x, u, r=1.0):
    """E_x tau([-r, r]) for the example model from the scale and speed densities.

    With a = 2 the generator is f'' + b f', so s'(y) = exp(-int_0^y b) and
    the speed density is 1 / s'.  For x > r and a recurrent right end,
    E_x tau = int_r^x s'(y) int_y^inf m(z) dz dy.
    """
    def log_s(lz):
        # lz = ln z; ln(2 + z^2) written to stay finite for huge z
        L = 2 * lz + math.log1p(2 * math.exp(-2 * lz)) if lz > 0 else math.log(2 + math.exp(2 * lz))
        return 0.5 * (L - math.log(2)) + u * (math.sqrt(L) - math.sqrt(math.log(2)))

    def tail_speed(y):
        # substitute z = y e^w to tame the slowly decaying tail
        ly = math.log(y)
        val, _ = integrate.quad(lambda w: math.exp(ly + w - log_s(ly + w)), 0.0, np.inf, limit=400)
        return val

    val, _ = integrate.quad(lambda y: math.exp(log_s(math.log(y))) * tail_speed(y), r, x, limit=200)
    return val


def test_speed_measure_oracle_values():
    assert expected_exit_time(3.0, 1.0) == pytest.approx(12.0, rel=0.02)
    assert expected_exit_time(3.0, 2.0) == pytest.approx(4.89, rel=0.02)


def test_start_inside_gives_zero(ex21, unit_ball):
    s = HT.sample_hitting_time(ex21, Control.constant(1.0), [0.5], unit_ball, 1e-2, seed=0)
    assert s.tau == 0.0 and not s.censored
    s = HT.sample_hitting_time(ex21, Control.constant(1.0), [1.0], unit_ball, 1e-2, seed=0)
    assert s.tau == 0.0


def test_start_outside_gives_positive_time(ex21, unit_ball):
    s = HT.sample_hitting_time(ex21, Control.constant(1.0), [1.5], unit_ball, 1e-2, seed=0)
    assert s.tau > 0


def test_censoring_at_t_max(ex21, unit_ball):
    b = HT.sample_hitting_times(ex21, Control.constant(1.0), [30.0], unit_ball, 1e-2, 0, 20, t_max=1.0)
    assert b.n_censored == 20
    assert np.all(b.taus == pytest.approx(1.0))
    with pytest.raises(EstimationError):
        HT.moment_estimators(b)


def test_batch_extension_keeps_earlier_samples(ex21, unit_ball):
    a = HT.sample_hitting_times(ex21, Control.constant(1.0), [2.0], unit_ball, 1e-2, 3, 10)
    b = HT.sample_hitting_times(ex21, Control.constant(1.0), [2.0], unit_ball, 1e-2, 3, 5, start_index=5)
    assert np.array_equal(a.taus[5:], b.taus)


# u = 1 is left out: its hitting time has a tail index close to 1, so the
# sample mean at this size sits far below the true value
@pytest.mark.parametrize("u,x", [(2.0, 3.0), (2.0, 5.0)])
def test_mean_hitting_time_against_speed_measure(ex21, unit_ball, u, x):
    b = HT.sample_hitting_times(ex21, Control.constant(u), [x], unit_ball, 1e-2, 17, 4000)
    se = b.taus.std(ddof=1) / math.sqrt(len(b))
    exact = expected_exit_time(x, u)
    # bridge-corrected Euler bias at dt = 1e-2 is a few percent
    assert abs(b.taus.mean() - exact) <= 4 * se + 0.05 * exact


@given(st.floats(1.1, 2.5), st.floats(0.05, 0.9))
def test_tau_is_monotone_in_the_domain(r_small, extra):
    ex = models.example21()
    small = DomainSpec.ball([0.0], r_small)
    large = DomainSpec.ball([0.0], r_small + extra)
    a = HT.sample_hitting_times(ex, Control.constant(1.5), [4.0], small, 1e-2, 5, 8)
    b = HT.sample_hitting_times(ex, Control.constant(1.5), [4.0], large, 1e-2, 5, 8)
    assert np.all(b.taus <= a.taus)


def test_bridge_correction_only_shortens(ex21, unit_ball):
    a = HT.sample_hitting_times(ex21, Control.constant(1.0), [2.0], unit_ball, 5e-2, 8, 50, bridge=False)
    b = HT.sample_hitting_times(ex21, Control.constant(1.0), [2.0], unit_ball, 5e-2, 8, 50, bridge=True)
    assert np.all(b.taus <= a.taus)


def test_modulated_time_with_unit_cost_is_tau(ex21, unit_ball):
    b = HT.modulated_times(ex21, Control.constant(1.0), [3.0], unit_ball, models.unit_cost(), 1e-2, 4, 20)
    assert b.modulated == pytest.approx(b.taus, rel=1e-9)
    v = HT.modulated_time(ex21, Control.constant(1.0), [3.0], unit_ball, models.action_cost(), 1e-2, seed=4)
    # max over actions of |u| is 2
    assert v == pytest.approx(2 * b.taus[0], rel=1e-9)


# estimators


def test_hill_recovers_pareto_index(rng):
    x = (1.0 - rng.random(10_000)) ** (-1 / 1.5)
    alpha, se, k = HT.hill_estimator(x, 0.05)
    assert k == 500
    assert 1.3 <= alpha <= 1.7


def test_moment_report_on_constant_sample_is_degenerate():
    rep = HT.moment_estimators(np.ones(2000), n_boot=50)
    assert rep.degenerate
    assert math.isnan(rep.hill_alpha)
    assert rep.tlnt.value == 0.0
    assert rep.mean.value == 1.0 and rep.mean.stderr == 0.0


def test_bootstrap_stderr_matches_analytic(rng):
    x = rng.exponential(size=4000)
    rep = HT.moment_estimators(x, powers=(2.0,), n_boot=400)
    assert rep.mean.stderr == pytest.approx(x.std() / math.sqrt(len(x)), rel=0.15)
    assert rep.stderr_reliable and not rep.censor_flagged


def test_moment_report_from_sample_list(ex21, unit_ball):
    b = HT.sample_hitting_times(ex21, Control.constant(2.0), [2.0], unit_ball, 1e-2, 1, 50)
    samples = [b.sample(i) for i in range(len(b))]
    rep = HT.moment_estimators(samples, n_boot=20)
    assert rep.n == 50 and not rep.stderr_reliable
    assert rep.mean.value == pytest.approx(b.taus.mean())


def test_censor_flag(rng):
    b = HT.HittingBatch(np.r_[rng.exponential(size=980), np.full(20, 50.0)],
                        np.r_[np.zeros(980, bool), np.ones(20, bool)], np.zeros(1),
                        DomainSpec.ball([0.0], 1.0), 0.01, 50.0, 0, np.arange(1000))
    rep = HT.moment_estimators(b, n_boot=20)
    assert rep.censor_flagged and rep.lower_bounds and rep.n_censored == 20


def test_tlnt_helper():
    assert HT.tlnt(np.array([0.0, 0.5, 1.0]))[:3] == pytest.approx([0.0, 0.0, 0.0])
    assert HT.tlnt(math.e) == pytest.approx(math.e)


def test_doubling_stability_separates_finite_from_infinite_moments(rng):
    # Pareto(1.2): the mean is finite, the second moment is not
    reps = [(1.0 - rng.random(64_000)) ** (-1 / 1.2) for _ in range(12)]
    sizes = HT.doubling_ladder(64_000)
    sq = HT.doubling_stability(reps, lambda t: t**2, sizes, name="t^2", n_boot=100)
    lin = HT.doubling_stability(reps, lambda t: t, sizes, name="t", n_boot=100)
    assert not sq.stable and lin.stable


def test_doubling_ladder():
    assert list(HT.doubling_ladder(8000)) == [1000, 2000, 4000, 8000]
    with pytest.raises(ValueError):
        HT.doubling_ladder(10)


# cycles


def test_regenerative_cycles_structure(ex21, unit_ball):
    outer = DomainSpec.ball([0.0], 2.0)
    cyc = HT.regenerative_cycles(ex21, Control.constant(1.0), [0.0], unit_ball, outer, 500.0, 1e-2, 3)
    assert cyc.times[0] == 0.0
    assert np.all(np.diff(cyc.times) > 0)
    assert cyc.n_cycles >= 2
    assert cyc.cycle_average() == pytest.approx(1.0)
    assert cyc.kappa(cyc.times[2] + 1e-9) == 1
    assert cyc.kappa(cyc.times[2]) == 0


def test_cycle_integrals_of_indicator(ex21, unit_ball):
    outer = DomainSpec.ball([0.0], 2.0)
    cyc = HT.regenerative_cycles(ex21, Control.constant(1.0), [0.0], unit_ball, outer, 300.0, 1e-2, 3,
                                 test=models.outside_indicator(3.0))
    assert np.all(cyc.integrals >= 0)
    assert np.all(cyc.integrals <= cyc.cycle_lengths + 1e-9)


def test_cycles_need_a_gap(ex21, unit_ball):
    with pytest.raises(PreconditionError):
        HT.regenerative_cycles(ex21, Control.constant(1.0), [0.0], unit_ball, DomainSpec.ball([0.0], 1.05),
                               10.0, 1e-2, 0)


def test_too_short_horizon_has_too_few_cycles(ex21, unit_ball):
    with pytest.raises(InsufficientCyclesError):
        HT.regenerative_cycles(ex21, Control.constant(1.0), [0.0], unit_ball, DomainSpec.ball([0.0], 5.0),
                               0.5, 1e-2, 0)


# bounds


def test_guarded_bounds_refuse_an_unverified_domain(ex21, V, unit_ball):
    with pytest.raises(PreconditionError):
        HT.lemma21_check(ex21, Control.constant(1.0), V, V.scaled(2.0), unit_ball, [[3.0]], 1e-2, 10, 0)


def test_guarded_bounds_on_verified_ball(ex21, V):
    from ergolab.lyapunov_verify import verified_h01_ball
    ctrl = Control.constant(2.0)
    D = verified_h01_ball(ex21, V, V.scaled(2.0), control=ctrl)
    rep = HT.lemma21_check(ex21, ctrl, V, V.scaled(2.0), D, [[3.0], [10.0]], 1e-2, 200, 1)
    assert rep.points[0].trivial and not rep.points[1].trivial
    assert rep.passed and rep.scale == 1.0


def test_scale_pair_makes_v1_at_least_one():
    from ergolab.candidates import constant
    V1, V2 = HT.scale_pair(constant(0.5), constant(1.0), 2.0)
    assert float(V1([[0.0]])[0]) == pytest.approx(1.0)
    assert float(V2([[0.0]])[0]) == pytest.approx(1.0 + math.log(2) * 0.5)


def test_inverse_sli_bound_trivial_inside(ex21, V, unit_ball):
    res = HT.inverse_sli_bounds(ex21, Control.constant(1.0), V, unit_ball, [[0.0], [3.0]], 1e-2, 200, 2)
    assert res[0].trivial and res[0].estimate.value == 1.0
    assert not res[1].trivial and res[1].passed
