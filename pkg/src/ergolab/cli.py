"""Command-line entry point.

Every subcommand reads its parameters from built-in defaults, then an
optional JSON ``--config`` file, then command-line flags (later sources
win).  Reports are JSON documents that embed the effective configuration,
its hash, the seed and the package version.  Exit codes: 0 when every
declared check passes, 1 when a check fails, 2 for usage errors.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from . import ergodic_measures as EM
from . import hitting_times as HT
from . import lyapunov_verify as LV
from . import models
from . import slln_lab as SL
from .errors import ErgolabError, GridTooSmallError, PreconditionError
from .sde_core import simulate

log = logging.getLogger("ergolab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# configuration


DEFAULTS = {
    "simulate": {"model": "example21", "control": "const:1", "x0": [0.0], "horizon": 10.0,
                 "dt": 1e-3, "seed": 0},
    "lyapunov-check": {"model": "example21", "candidate": "v21", "rhs": "example21",
                       "grid": "-50:50:0.01", "actions": 33, "slack": 1e-6, "domain": None},
    "hitting": {"model": "example21", "control": "const:1", "x0": [2.0], "domain": "ball:0:1",
                "dt": 1e-2, "t_max": 1e5, "n_paths": 1000, "seed": 0, "powers": [1.5, 2.0],
                "v1": None, "v2": None},
    "ergodic": {"model": "example21", "cost": "demo", "control": "const:1", "candidate": "const:1",
                "bank": None, "x0": [0.0], "horizon": 1e4, "dt": 1e-2, "seeds": 20, "seed": 0,
                "times": [10.0, 100.0, 1000.0, 10000.0], "n_paths": 1000, "radii": [5.0, 10.0, 20.0],
                "candidate_V": "v21"},
    "slln": {"generator": "gaussian", "n": 1e6, "seeds": 100, "seed": 0, "threshold": 0.05},
    "reproduce-example21": {"scale": "quick", "seed": 2024, "dt": None, "keep_going": False},
}


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


def effective_config(command, args):
    cfg = dict(DEFAULTS[command])
    file_cfg = _load_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(cfg) - {"command", "action"}
    if unknown:
        raise UsageError(f"unknown config fields for {command}: {sorted(unknown)}")
    cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    _validate_numbers(cfg)
    return cfg


def _validate_numbers(cfg):
    for key in ("dt", "horizon", "t_max", "n_paths", "seeds", "n"):
        if key in cfg and cfg[key] is not None:
            try:
                v = float(cfg[key])
            except (TypeError, ValueError):
                raise UsageError(f"{key} must be a number") from None
            if not v > 0:
                raise UsageError(f"{key} must be positive")


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def emit(report, cfg, command, out=None):
    doc = {"tool": "ergolab", "version": __version__, "command": command,
           "config": cfg, "config_hash": config_hash(cfg), "seed": cfg.get("seed"), **report}
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=False)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ----------------------------------------------------------------------------
# parsing helpers


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _model(spec, sabotage=False):
    try:
        return models.get_model(spec, sabotage=sabotage)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _control(text):
    try:
        return models.parse_control(text)
    except (ErgolabError, ValueError, SyntaxError) as exc:
        raise UsageError(f"bad control {text!r}: {exc}") from None


def _cost(text):
    try:
        return models.parse_cost(text)
    except (KeyError, ValueError, SyntaxError) as exc:
        raise UsageError(str(exc)) from None


def _candidate(text):
    try:
        return models.parse_candidate(text)
    except (KeyError, ValueError, SyntaxError) as exc:
        raise UsageError(str(exc)) from None


def _domain(text, dim):
    try:
        return LV.DomainSpec.parse(text, dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _grid(text):
    try:
        return LV.box_grid(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ----------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args):
    model = _model(cfg["model"])
    ctrl = _control(cfg["control"])
    traj = simulate(model, ctrl, _floats(cfg["x0"]), float(cfg["horizon"]), float(cfg["dt"]), int(cfg["seed"]))
    if args.csv:
        d, m = model.dim, ctrl.action_dim
        rows = []
        for k in range(traj.n_steps + 1):
            u = traj.actions[k] if k < traj.n_steps else [float("nan")] * m
            rows.append([traj.times[k], *traj.states[k], *u])
        write_csv(args.csv, ["t"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(m)], rows)
    report = {"n_steps": traj.n_steps, "t_final": traj.t_final,
              "final_state": traj.states[-1], "max_abs_state": float(np.abs(traj.states).max())}
    return report, []


def cmd_lyapunov_check(cfg, args):
    model = _model(cfg["model"], sabotage=args.sabotage)
    V = _candidate(cfg["candidate"])
    grid = _grid(cfg["grid"])
    A = model.action_set.grid(int(cfg["actions"])) if isinstance(cfg["actions"], (int, float)) \
        else np.asarray(_floats(cfg["actions"]))[:, None]
    report = {}
    if cfg["rhs"] == "example21":
        try:
            scan = LV.example21_kappa(model=model, V=V, action_grid=A, return_scan=True)
        except GridTooSmallError as exc:
            report["kappa"] = {"error": str(exc)}
            return report, ["kappa"]
        kappa = scan.value
        report["kappa"] = {"value": kappa, "argmax_point": scan.argmax_point,
                           "argmax_action": scan.argmax_action}
        rhs = LV.kappa_rhs(kappa)
    else:
        try:
            rhs = LV.rhs_from_expression(cfg["rhs"])
        except (ValueError, SyntaxError) as exc:
            raise UsageError(f"bad rhs: {exc}") from None
    region = grid
    if cfg["domain"]:
        region = grid.outside(_domain(cfg["domain"], model.dim))
    rep = LV.check_drift(model, V, rhs, region, A, slack=float(cfg["slack"]))
    report["drift"] = rep.to_dict()
    return report, ([] if rep.passed else ["drift"])


def cmd_hitting(cfg, args):
    model = _model(cfg["model"])
    ctrl = _control(cfg["control"])
    D = _domain(cfg["domain"], model.dim)
    pts = np.asarray(_floats(cfg["x0"])).reshape(-1, model.dim)
    out = {"points": []}
    for i, x in enumerate(pts):
        batch = HT.sample_hitting_times(model, ctrl, x, D, float(cfg["dt"]), int(cfg["seed"]) + i,
                                        int(cfg["n_paths"]), t_max=float(cfg["t_max"]))
        rep = HT.moment_estimators(batch, powers=_floats(cfg["powers"]), seed=int(cfg["seed"]))
        out["points"].append({"x0": x, **rep.to_dict()})
    failed = []
    if cfg["v1"]:
        V1 = _candidate(cfg["v1"])
        V2 = _candidate(cfg["v2"]) if cfg["v2"] else V1.scaled(2.0)
        try:
            res = HT.lemma21_check(model, ctrl, V1, V2, D, pts, float(cfg["dt"]), int(cfg["n_paths"]),
                                   int(cfg["seed"]), t_max=float(cfg["t_max"]))
            out["bounds"] = [p.to_dict() for p in res.points]
            if not res.passed:
                failed.append("bounds")
        except PreconditionError as exc:
            out["bounds"] = {"error": str(exc)}
            failed.append("bounds-precondition")
    return out, failed


def cmd_ergodic(cfg, args):
    model = _model(cfg["model"])
    action = args.action
    x0 = _floats(cfg["x0"])
    seed = int(cfg["seed"])
    if action == "compare":
        cost = _cost(cfg["cost"])
        cand = _control(cfg["candidate"])
        bank = models.parse_control_list(cfg["bank"]) if cfg["bank"] else EM.constant_bank(model)
        rep = EM.compare_controls(model, cand, bank, cost, x0, float(cfg["horizon"]), int(cfg["seeds"]),
                                  dt=float(cfg["dt"]), seed=seed)
        if args.csv:
            write_csv(args.csv, ["member", "replicate", "margin", "tie"],
                      [[r.member, k, m, bool(t)] for r in rep.results
                       for k, (m, t) in enumerate(zip(r.margins, r.ties))])
        failed = [r.member for r in rep.results if r.fraction < args.min_fraction]
        return rep.to_dict(), failed
    if action == "tv":
        ctrl = _control(cfg["control"])
        V = _candidate(cfg["candidate_V"])
        rep = EM.tv_rate(model, ctrl, x0, _floats(cfg["times"]), int(cfg["n_paths"]), V,
                         dt=float(cfg["dt"]), seed=seed)
        if args.csv:
            write_csv(args.csv, ["t", "tv", "tv_log"], zip(rep.times, rep.tv, rep.scaled()))
        return rep.to_dict(), ([] if rep.within_bound() else ["tv-bound"])
    ctrl = _control(cfg["control"])
    prof = EM.tightness_profile(model, ctrl, x0, float(cfg["horizon"]), None, _floats(cfg["radii"]),
                                float(cfg["dt"]), seed)
    if args.csv:
        write_csv(args.csv, ["t"] + [f"out_{r:g}" for r in prof.radii],
                  [[t, *prof.mass_outside[:, j]] for j, t in enumerate(prof.times)])
    return prof.to_dict(), []


def cmd_slln(cfg, args):
    gen = SL.GENERATORS.get(cfg["generator"])
    if gen is None:
        raise UsageError(f"unknown generator {cfg['generator']!r}")
    n = int(float(cfg["n"]))
    finals = []
    for s in range(int(cfg["seeds"])):
        finals.append(SL.mds_average(gen, n, SL.streams.child_seed(int(cfg["seed"]), "slln", s)).final)
    finals = np.abs(np.asarray(finals))
    thr = float(cfg["threshold"])
    frac = float(np.mean(finals <= thr))
    report = {"generator": gen.name, "llogl": gen.llogl, "n": n, "abs_final": finals,
              "max_abs_final": float(finals.max()), "fraction_below": frac}
    failed = [] if (not gen.llogl or frac >= 0.95) else ["slln"]
    return report, failed


def cmd_reproduce(cfg, args):
    from .reproduce import reproduce_example21

    report = reproduce_example21(scale=cfg["scale"], seed=int(cfg["seed"]), dt=cfg["dt"],
                                 sabotage=args.sabotage, keep_going=bool(cfg["keep_going"]))
    failed = [s["stage"] for s in report["stages"] if not s["passed"]]
    return report, failed


COMMANDS = {
    "simulate": cmd_simulate,
    "lyapunov-check": cmd_lyapunov_check,
    "hitting": cmd_hitting,
    "ergodic": cmd_ergodic,
    "slln": cmd_slln,
    "reproduce-example21": cmd_reproduce,
}


# ----------------------------------------------------------------------------
# argument parser


def _common(p):
    p.add_argument("--config", help="JSON file with parameters (flags override it)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--seed", type=int)


def build_parser():
    ap = argparse.ArgumentParser(prog="ergolab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ergolab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one Euler-Maruyama path")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--control")
    p.add_argument("--x0", type=_floats)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--csv", help="write the path as CSV")

    p = sub.add_parser("lyapunov-check", help="grid certificate for a drift inequality")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--candidate")
    p.add_argument("--rhs", help="'example21' (kappa from a grid scan) or an expression in x, V, c")
    p.add_argument("--grid", help="lo:hi:step")
    p.add_argument("--actions", type=int, help="number of points in the action mesh")
    p.add_argument("--slack", type=float)
    p.add_argument("--domain", help="check only outside ball:<center>:<radius>")
    p.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("hitting", help="hitting-time moments and bounds")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--control")
    p.add_argument("--x0", type=_floats)
    p.add_argument("--domain")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--powers", type=_floats)
    p.add_argument("--v1", help="candidate for the mean bound (enables the guarded check)")
    p.add_argument("--v2", help="candidate for the t ln t bound (default 2*V1)")

    p = sub.add_parser("ergodic", help="long-run cost and occupation diagnostics")
    p.add_argument("action", choices=("compare", "tv", "tightness"))
    _common(p)
    p.add_argument("--model")
    p.add_argument("--cost")
    p.add_argument("--control")
    p.add_argument("--candidate")
    p.add_argument("--bank")
    p.add_argument("--x0", type=_floats)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seeds", type=int)
    p.add_argument("--times", type=_floats)
    p.add_argument("--n-paths", dest="n_paths", type=int)
    p.add_argument("--radii", type=_floats)
    p.add_argument("--min-fraction", dest="min_fraction", type=float, default=0.9)
    p.add_argument("--csv")

    p = sub.add_parser("slln", help="normalised sums of martingale differences")
    _common(p)
    p.add_argument("--generator", choices=sorted(SL.GENERATORS))
    p.add_argument("--n", type=float)
    p.add_argument("--seeds", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("reproduce-example21", help="run the full one-dimensional example suite")
    _common(p)
    p.add_argument("--scale", choices=("quick", "full"))
    p.add_argument("--dt", type=float, help="override every stage's step size")
    p.add_argument("--keep-going", dest="keep_going", action="store_true", default=None)
    p.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = effective_config(args.command, args)
        if args.command == "ergodic":
            cfg["action"] = args.action
        t0 = time.time()
        report, failed = COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"ergolab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ErgolabError as exc:
        print(f"ergolab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = dict(report, failed_checks=failed, passed=not failed, elapsed_s=time.time() - t0)
    emit(report, cfg, args.command, args.out)
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
