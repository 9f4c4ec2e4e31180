import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expi

from ergolab import lyapunov_verify as LV
from ergolab import models
from ergolab.candidates import constant, squared_norm
from ergolab.errors import DomainError, GridTooSmallError, PreconditionError
from ergolab.sde_core import Control

# grid-scan oracles, frozen from the extended grid ([-50, 50] step 0.01 plus
# geometric rays to 1e60) with the 33-point action mesh
KAPPA_STAR = 269.2488413364558
H02_C = 27.73501626074244


@pytest.fixture(scope="module")
def kappa_scan():
    return LV.example21_kappa(return_scan=True)


def test_kappa_star_regression(kappa_scan):
    assert kappa_scan.value == pytest.approx(KAPPA_STAR, rel=1e-9)
    assert kappa_scan.argmax_action[0] == 1.0
    assert kappa_scan.eventually_decreasing


def test_kappa_star_is_stable_under_grid_halving(kappa_scan):
    half = LV.example21_kappa(grid=LV.extended_grid("-50:50:0.005"))
    assert abs(half - kappa_scan.value) <= 1e-3


def test_kappa_needs_the_base_grid():
    with pytest.raises(PreconditionError):
        LV.example21_kappa(grid=LV.extended_grid("-10:10:0.01"))


def test_drift_certificate_passes_with_kappa_star(ex21, V, kappa_scan):
    rep = LV.check_drift(ex21, V, LV.kappa_rhs(kappa_scan.value), LV.box_grid("-50:50:0.01"), slack=1e-6)
    assert rep.passed
    assert rep.max_violation < 0


def test_drift_certificate_fails_below_kappa_star(ex21, V, kappa_scan):
    grid = LV.extended_grid()
    rep = LV.check_drift(ex21, V, LV.kappa_rhs(kappa_scan.value - 1.0), grid, slack=1e-6)
    assert not rep.passed
    assert rep.max_violation == pytest.approx(1.0, rel=1e-6)


@given(st.floats(-300.0, 300.0), st.floats(-5.0, 5.0), st.floats(0.0, 5.0))
def test_passing_is_monotone_in_slack(kappa, s, extra):
    ex, V = models.example21(), models.v21()
    grid = LV.box_grid("-20:20:0.5")
    rep = LV.check_drift(ex, V, LV.kappa_rhs(kappa), grid, slack=s)
    if rep.passed:
        assert LV.check_drift(ex, V, LV.kappa_rhs(kappa), grid, slack=s + extra).passed


def test_negative_slack_forces_failure(ex21, V):
    rep = LV.check_drift(ex21, V, LV.constant_rhs(1e9), LV.box_grid("-1:1:0.5"), slack=-1.0)
    assert rep.passed
    rep = LV.check_drift(ex21, V, LV.kappa_rhs(KAPPA_STAR), LV.box_grid("-1:1:0.5"), slack=-1e6)
    assert not rep.passed


def test_nan_rhs_counts_as_violation(ex21, V):
    rep = LV.check_drift(ex21, V, LV.constant_rhs(float("nan")), LV.box_grid("-1:1:0.5"))
    assert not rep.passed


def test_sabotaged_model_breaks_the_kappa_scan(V):
    with pytest.raises(GridTooSmallError):
        LV.example21_kappa(model=models.example21(sabotage=True))


def test_drift_report_along_control_uses_only_that_action(ex21, V):
    X = LV.box_grid("-5:5:0.5")
    along = LV.check_drift(ex21, V, LV.constant_rhs(0.0), X, control=Control.constant(2.0), slack=np.inf)
    grid2 = LV.check_drift(ex21, V, LV.constant_rhs(0.0), X, action_grid=[[2.0]], slack=np.inf)
    assert along.max_violation == pytest.approx(grid2.max_violation)


def test_parse_range_rejects_malformed():
    for bad in ["1:2", "a:b:c", "2:1:0.1", "0:1:0", "0:1:-1"]:
        with pytest.raises(ValueError):
            LV.parse_range(bad)


def test_domain_parse_and_membership():
    D = LV.DomainSpec.parse("ball:0:1")
    assert D.contains([[0.5]])[0] and not D.contains([[1.0]])[0]
    assert D.contains_closure([[1.0]])[0]
    with pytest.raises(ValueError):
        LV.DomainSpec.parse("box:0:1")


# from the logarithmic drift condition to the pair (V1, V2)


@pytest.fixture(scope="module")
def h01():
    ex = models.example21()
    V = models.v21()
    grid = LV.extended_grid()
    C = LV.h02_constant(ex, V, grid)
    return C, LV.derive_h01_from_h02(V, C, grid), grid


def test_h02_constant_regression(h01):
    assert h01[0] == pytest.approx(H02_C, rel=1e-9)


def test_derived_pair_satisfies_both_inequalities(ex21, h01):
    _, con, grid = h01
    out = grid.outside(con.D)
    ra = LV.check_drift(ex21, con.V1, LV.constant_rhs(-1.0), out, slack=1e-6)
    rb = LV.check_drift(ex21, con.V2, LV.neg_ln_plus_rhs(con.V1), out, slack=1e-6)
    assert ra.passed and rb.passed
    # the threshold is where ln V exceeds C + 1
    r = con.D.radius
    assert math.log(float(con.V1([[r]])[0])) >= H02_C + 1 - 1e-6


def test_derive_h01_needs_v_at_least_one():
    with pytest.raises(PreconditionError):
        LV.derive_h01_from_h02(squared_norm(), 1.0, LV.box_grid("-5:5:0.5"))


def test_bounded_v_is_not_inf_compact():
    from ergolab.errors import InfCompactnessError
    with pytest.raises(InfCompactnessError):
        LV.derive_h01_from_h02(constant(2.0), 1.0, LV.extended_grid("-50:50:0.1", r_max=1e6))


def test_verified_ball_shrinks_with_stronger_control(ex21, V):
    r1 = LV.verified_h01_ball(ex21, V, V.scaled(2.0), control=Control.constant(1.0)).radius
    r2 = LV.verified_h01_ball(ex21, V, V.scaled(2.0), control=Control.constant(2.0)).radius
    assert r2 < r1


# ln+ and the shifted logarithmic integral


def test_ln_plus_values():
    assert LV.ln_plus(0.5) == 0.0
    assert LV.ln_plus(1.0) == 0.0
    assert LV.ln_plus(math.e) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        LV.ln_plus(0.0)
    with pytest.raises(DomainError):
        LV.ln_plus(-1.0)


def sli_oracle(z):
    # with w = ln s, the integral is e^{-1} (Ei(1 + ln z) - Ei(1))
    return (expi(1.0 + math.log(z)) - expi(1.0)) / math.e


def test_sli_at_e_matches_exponential_integral():
    assert LV.shifted_log_integral(math.e) == pytest.approx(1.1253860830832696, abs=1e-10)
    assert LV.shifted_log_integral(math.e) == pytest.approx(sli_oracle(math.e), abs=1e-10)


def test_sli_endpoints():
    assert LV.shifted_log_integral(1.0) == 0.0
    assert LV.inverse_sli(0.0) == 1.0
    with pytest.raises(DomainError):
        LV.shifted_log_integral(0.5)
    with pytest.raises(DomainError):
        LV.inverse_sli(-1.0)


@given(st.floats(1.0, 1e12))
def test_sli_matches_exponential_integral(z):
    assert LV.shifted_log_integral(z) == pytest.approx(sli_oracle(z), rel=1e-9, abs=1e-10)


@given(st.floats(0.0, 1e9))
def test_inverse_sli_round_trip(y):
    z = LV.inverse_sli(y)
    assert z >= 1.0
    assert abs(LV.shifted_log_integral(z) - y) <= 1e-8 * max(1.0, y)


def test_inverse_sli_growth_is_z_log_z():
    for y in np.geomspace(1e2, 1e6, 9):
        assert 0.5 <= LV.inverse_sli(y) / (y * math.log(y)) <= 2.0


def test_vectorised_inverse_matches_scalar():
    y = np.array([0.0, 1e-3, 0.7, 12.0, 3e3, 4e6])
    z = LV.inverse_sli_many(y)
    for yy, zz in zip(y, z):
        assert zz == pytest.approx(LV.inverse_sli(yy), rel=1e-11)


def test_tlnt_inequality_holds():
    worst, per = LV.check_tlnt_inequality(np.geomspace(0.1, 1e4, 100))
    assert worst <= 1e-9
    assert per.shape == (100,)


def test_tlnt_inequality_rejects_nonpositive():
    with pytest.raises(DomainError):
        LV.check_tlnt_inequality([0.0, 1.0])


# concave-function machinery


def test_psi_with_zero_phi_is_linear(ex21, V):
    psi, phi_N, h_N = LV.section3_test_functions(V, LV.zero_phi(), 4, ex21)
    z = np.array([0.0, 1.0, 10.0, 123.0])
    assert psi(z) == pytest.approx(z / 4)
    assert np.all(h_N(np.linspace(-5, 5, 11)[:, None]) == 0)


def test_psi_is_increasing_and_h_nonpositive(ex21, V):
    psi, phi_N, h_N = LV.section3_test_functions(V, LV.log_phi(), 2, ex21)
    z = np.geomspace(1e-3, 1e8, 60)
    vals = psi(z)
    assert np.all(np.diff(vals) > 0)
    assert np.all(h_N(np.linspace(-30, 30, 61)[:, None]) <= 0)


def test_ka1_for_the_demo_cost(ex21, V):
    rep = LV.check_ka1(ex21, V, LV.log_phi(), models.section3_cost(), LV.DomainSpec.ball([0.0], 5.0))
    assert rep.passed
    assert rep.kappa0 > 0 and rep.kappa2 > 0
    # sigma' grad V / (1 + phi(V)) is unbounded for this V: reported, not enforced
    assert rep.gradient_ratio_sup > 1e6
