"""End-to-end checks on the one-dimensional example model.

Each stage is a plain function returning ``{"stage", "passed", ...}`` so the
acceptance tests and the ``reproduce-example21`` subcommand share one
implementation.  ``SCALES`` holds the sample sizes: ``full`` is the size the
acceptance suite uses, ``quick`` a smoke-test version.
"""

import logging
import time

import numpy as np

from . import ergodic_measures as EM
from . import hitting_times as HT
from . import lyapunov_verify as LV
from . import models, streams
from .errors import ErgolabError, GridTooSmallError
from .sde_core import Control

log = logging.getLogger(__name__)

SCALES = {
    "full": {
        "bounds_paths": 10_000, "bounds_dt": 1e-3,
        "heavy_reps": 20, "heavy_paths": 100_000, "heavy_dt": 1e-2,
        "tight_seeds": 20, "tight_horizon": 1e4, "tight_dt": 1e-2,
        "dom_reps": 20, "dom_horizon": 1e4, "dom_dt": 1e-2, "dom_search_paths": 10,
        "tv_paths": 1000, "tv_times": [10.0, 100.0, 1000.0, 10000.0], "tv_dt": 1e-2,
    },
    "quick": {
        "bounds_paths": 500, "bounds_dt": 1e-2,
        "heavy_reps": 4, "heavy_paths": 4_000, "heavy_dt": 1e-2,
        "tight_seeds": 2, "tight_horizon": 1e3, "tight_dt": 1e-2,
        "dom_reps": 4, "dom_horizon": 1e3, "dom_dt": 1e-2, "dom_search_paths": 10,
        "tv_paths": 200, "tv_times": [10.0, 100.0, 1000.0], "tv_dt": 1e-2,
    },
}

BASE_GRID = "-50:50:0.01"
HALVED_GRID = "-50:50:0.005"
DRIFT_SLACK = 1e-6
KAPPA_TOL = 1e-3


def _stage(name, passed, **info):
    return {"stage": name, "passed": bool(passed), **info}


def stage_kappa(model=None, action_grid=None):
    """kappa* on the extended grid and on the grid with half the step."""
    model = model or models.example21()
    try:
        scan = LV.example21_kappa(model=model, action_grid=action_grid, return_scan=True)
        half = LV.example21_kappa(grid=LV.extended_grid(HALVED_GRID), model=model,
                                  action_grid=action_grid)
    except GridTooSmallError as exc:
        return _stage("kappa", False, error=str(exc))
    return _stage("kappa", abs(scan.value - half) <= KAPPA_TOL, kappa=scan.value, kappa_halved=half,
                  argmax_point=scan.argmax_point, argmax_action=scan.argmax_action)


def stage_drift_certificate(kappa, model=None, action_grid=None):
    """L^u V <= kappa - 3/2 [ln(2 + x^2)]^{3/2} on [-50, 50] for every action in the mesh."""
    model = model or models.example21()
    rep = LV.check_drift(model, models.v21(), LV.kappa_rhs(kappa), LV.box_grid(BASE_GRID),
                         action_grid, slack=DRIFT_SLACK)
    return _stage("drift_certificate", rep.passed, kappa=kappa, report=rep.to_dict())


def stage_h02_h01(model=None, action_grid=None):
    """Log-drift constant C, the derived (V1, V2, D) and both inequalities checked outside D."""
    model = model or models.example21()
    V = models.v21()
    grid = LV.extended_grid()
    C = LV.h02_constant(model, V, grid, action_grid)
    h01 = LV.derive_h01_from_h02(V, C, grid)
    outside = grid.outside(h01.D)
    ra = LV.check_drift(model, h01.V1, LV.constant_rhs(-1.0), outside, action_grid, slack=DRIFT_SLACK)
    rb = LV.check_drift(model, h01.V2, LV.neg_ln_plus_rhs(h01.V1), outside, action_grid, slack=DRIFT_SLACK)
    return _stage("h02_h01", ra.passed and rb.passed, C=C, D=h01.D.describe(),
                  rhs_minus_one=ra.to_dict(), rhs_ln_plus=rb.to_dict())


def stage_hitting_bounds(n_paths, dt, seed, points=(3.0, 5.0, 10.0), actions=(1.0, 2.0), model=None):
    """Guarded bounds on E tau and E tau ln+ tau for constant controls.

    D is the smallest grid ball outside of which both drift inequalities
    hold along the control, with V1 = V and V2 = 2 V.
    """
    model = model or models.example21()
    V = models.v21()
    V2 = V.scaled(2.0)
    out = []
    ok = True
    for a in actions:
        ctrl = Control.constant(a)
        D = LV.verified_h01_ball(model, V, V2, control=ctrl)
        res = HT.lemma21_check(model, ctrl, V, V2, D, np.asarray(points)[:, None], dt, n_paths,
                               streams.child_seed(seed, "bounds", ctrl.name))
        ok &= res.passed
        out.append({"control": ctrl.name, "D": D.describe(), "scale": res.scale,
                    "points": [p.to_dict() for p in res.points]})
    return _stage("hitting_bounds", ok, controls=out, n_paths=n_paths, dt=dt)


def heavy_tail_replicates(reps, n_paths, dt, seed, x0=2.0, action=1.0, radius=1.0, model=None):
    model = model or models.example21()
    ctrl = Control.constant(action)
    D = LV.DomainSpec.ball([0.0], radius)
    out = []
    for r in range(reps):
        out.append(HT.sample_hitting_times(model, ctrl, [x0], D, dt,
                                           streams.child_seed(seed, "heavy", r), n_paths))
    return out


def stage_heavy_tail(reps, n_paths, dt, seed, hill_range=(0.8, 1.3), model=None):
    """Hill index in range; E tau^1.5 unstable and E tau ln+ tau stable under doubling n."""
    batches = heavy_tail_replicates(reps, n_paths, dt, seed, model=model)
    hills = np.array([HT.hill_estimator(b.taus, HT.HILL_FRACTIONS[0])[0] for b in batches])
    hill = float(np.median(hills))
    sizes = HT.doubling_ladder(n_paths, min(1000, n_paths // 4))
    p15 = HT.doubling_stability(batches, lambda t: t**1.5, sizes, name="tau^1.5", seed=seed)
    tl = HT.doubling_stability(batches, HT.tlnt, sizes, name="tau ln+ tau", seed=seed)
    censored = int(sum(b.n_censored for b in batches))
    passed = hill_range[0] <= hill <= hill_range[1] and not p15.stable and tl.stable
    return _stage("heavy_tail", passed, hill_median=hill, hill_per_replicate=hills,
                  p15=p15.to_dict(), tlnt=tl.to_dict(), censored=censored, reps=reps,
                  n_paths=n_paths, dt=dt)


def stage_tightness(seeds, horizon, dt, seed, radius=10.0, level=0.05, burn_in=None, need=18, model=None):
    """Mass of zeta_t outside B_radius below ``level`` at the horizon and nonincreasing after burn-in."""
    model = model or models.example21()
    ctrl = Control.constant(1.0)
    times = EM.geometric_checkpoints(horizon)
    burn_in = burn_in if burn_in is not None else horizon / 16
    rows = []
    good = 0
    for s in range(seeds):
        prof = EM.tightness_profile(model, ctrl, [0.0], horizon, times, [5.0, radius, 20.0], dt,
                                    streams.child_seed(seed, "tight", s))
        m = prof.at(radius, times[-1])
        mono = prof.nonincreasing_after(radius, burn_in)
        good += (m < level) and mono
        rows.append({"mass_final": m, "nonincreasing": mono, "profile": prof.to_dict()})
    need = min(need, seeds)
    return _stage("tightness", good >= need, good=good, need=need, seeds=rows,
                  horizon=horizon, dt=dt, radius=radius)


def stage_dominance(reps, horizon, dt, seed, search_paths=10, need=0.9, model=None):
    """Policy-search winner against the constant bank under the demo cost."""
    model = model or models.example21()
    cost = models.demo_cost()
    search = EM.policy_search(model, cost, [0.0], horizon, dt, streams.child_seed(seed, "search"),
                              n_paths=search_paths)
    bank = EM.constant_bank(model)
    rep = EM.compare_controls(model, search.winner, bank, cost, [0.0], horizon, reps, dt=dt,
                              seed=streams.child_seed(seed, "compare"))
    return _stage("dominance", rep.min_fraction() >= need, search=search.to_dict(), report=rep.to_dict())


def stage_tv(n_paths, times, dt, seed, model=None):
    model = model or models.example21()
    rep = EM.tv_rate(model, Control.constant(1.0), [5.0], times, n_paths, models.v21(), dt=dt,
                     seed=streams.child_seed(seed, "tv"))
    return _stage("tv_rate", rep.within_bound(), report=rep.to_dict())


def reproduce_example21(scale="quick", seed=2024, dt=None, sabotage=False, keep_going=False):
    """Run every stage in order; by default the first failing stage ends the run."""
    p = dict(SCALES[scale])
    if dt is not None:
        for k in p:
            if k.endswith("_dt"):
                p[k] = float(dt)
    model = models.example21(sabotage=sabotage)
    stages = []

    def run(fn, *a, **kw):
        t0 = time.time()
        try:
            res = fn(*a, **kw)
        except ErgolabError as exc:
            res = _stage(fn.__name__.replace("stage_", ""), False, error=f"{type(exc).__name__}: {exc}")
        res["elapsed_s"] = time.time() - t0
        stages.append(res)
        log.info("stage %s: %s", res["stage"], "pass" if res["passed"] else "FAIL")
        return res

    plan = [
        lambda: run(stage_kappa, model),
        lambda: run(stage_drift_certificate, stages[0].get("kappa", np.nan), model),
        lambda: run(stage_h02_h01, model),
        lambda: run(stage_hitting_bounds, p["bounds_paths"], p["bounds_dt"], seed, model=model),
        lambda: run(stage_heavy_tail, p["heavy_reps"], p["heavy_paths"], p["heavy_dt"], seed, model=model),
        lambda: run(stage_tightness, p["tight_seeds"], p["tight_horizon"], p["tight_dt"], seed, model=model),
        lambda: run(stage_dominance, p["dom_reps"], p["dom_horizon"], p["dom_dt"], seed,
                    search_paths=p["dom_search_paths"], model=model),
        lambda: run(stage_tv, p["tv_paths"], p["tv_times"], p["tv_dt"], seed, model=model),
    ]
    aborted = None
    for step in plan:
        res = step()
        if not res["passed"] and not keep_going:
            aborted = res["stage"]
            break
    return {"scale": scale, "sabotage": sabotage, "parameters": p, "stages": stages, "aborted_at": aborted}
