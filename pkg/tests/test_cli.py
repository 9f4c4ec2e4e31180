import csv
import json

import pytest

from ergolab import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out


def report(out):
    return json.loads(out.out)


def test_stock_certificate_passes(capsys):
    code, out = run(capsys, "lyapunov-check", "--grid=-50:50:0.05")
    assert code == cli.EXIT_OK
    doc = report(out)
    assert doc["kappa"]["value"] == pytest.approx(269.2488413364558, rel=1e-9)
    assert doc["passed"] and doc["tool"] == "ergolab"


def test_malformed_grid_is_a_usage_error(capsys):
    code, out = run(capsys, "lyapunov-check", "--grid", "0:1")
    assert code == cli.EXIT_USAGE
    assert "error" in out.err


TIGHT = ["lyapunov-check", "--model", "ou", "--candidate", "expr:x[0]*x[0]",
         "--rhs", "1 - 2*x[0]*x[0] + 4*abs(x[0])", "--grid=-5:5:0.1"]


def test_tight_bound_passes_with_default_slack(capsys):
    # for the OU model sup_u L^u x^2 = 1 - 2x^2 + 4|x| exactly
    code, out = run(capsys, *TIGHT)
    assert code == cli.EXIT_OK
    assert abs(report(out)["drift"]["max_violation"]) < 1e-6


def test_negative_slack_is_reported_as_failure(capsys):
    code, _ = run(capsys, *TIGHT, "--slack=-1")
    assert code == cli.EXIT_FAIL


def test_unknown_model_is_a_usage_error(capsys):
    code, _ = run(capsys, "simulate", "--model", "nope")
    assert code == cli.EXIT_USAGE


def test_missing_subcommand_is_a_usage_error(capsys):
    code, _ = run(capsys)
    assert code == cli.EXIT_USAGE


def test_nonpositive_dt_is_a_usage_error(capsys):
    code, _ = run(capsys, "simulate", "--dt", "0")
    assert code == cli.EXIT_USAGE


def test_sabotaged_model_fails_the_kappa_step(capsys):
    code, out = run(capsys, "lyapunov-check", "--sabotage")
    assert code == cli.EXIT_FAIL
    assert "error" in report(out)["kappa"]


def test_simulate_writes_csv(tmp_path, capsys):
    path = tmp_path / "path.csv"
    code, out = run(capsys, "simulate", "--horizon", "0.1", "--dt", "0.01", "--csv", str(path))
    assert code == 0
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "x0", "u0"]
    assert len(rows) == 1 + 11
    assert report(out)["n_steps"] == 10


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"horizon": 0.2, "dt": 0.01, "seed": 4}))
    _, out = run(capsys, "simulate", "--config", str(cfg), "--seed", "7")
    doc = report(out)
    assert doc["config"]["horizon"] == 0.2
    assert doc["seed"] == 7
    assert doc["config_hash"] == cli.config_hash(doc["config"])


def test_unknown_config_field(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"horizn": 1.0}))
    code, _ = run(capsys, "simulate", "--config", str(cfg))
    assert code == cli.EXIT_USAGE


def test_reports_are_reproducible(capsys):
    argv = ["simulate", "--horizon", "1", "--dt", "0.01", "--seed", "3"]
    a = report(run(capsys, *argv)[1])
    b = report(run(capsys, *argv)[1])
    a.pop("elapsed_s"), b.pop("elapsed_s")
    assert a == b


def test_hitting_subcommand(tmp_path, capsys):
    out_file = tmp_path / "h.json"
    code, _ = run(capsys, "hitting", "--control", "const:2", "--x0", "2", "--n-paths", "200",
                  "--out", str(out_file))
    assert code == 0
    doc = json.loads(out_file.read_text())
    assert doc["points"][0]["n"] == 200


def test_hitting_bounds_refuse_unverified_domain(capsys):
    code, out = run(capsys, "hitting", "--x0", "3", "--n-paths", "50", "--v1", "v21")
    assert code == cli.EXIT_FAIL
    assert "error" in report(out)["bounds"]


def test_slln_subcommand(capsys):
    code, out = run(capsys, "slln", "--generator", "gaussian", "--n", "10000", "--seeds", "20")
    assert code == 0
    assert report(out)["fraction_below"] == 1.0


def test_ergodic_compare_and_tightness(tmp_path, capsys):
    code, out = run(capsys, "ergodic", "compare", "--cost", "action", "--candidate", "const:1",
                    "--bank", "const:1.5,const:2", "--horizon", "20", "--seeds", "2",
                    "--csv", str(tmp_path / "m.csv"))
    assert code == 0
    assert len(report(out)["results"]) == 2
    code, out = run(capsys, "ergodic", "tightness", "--horizon", "50", "--radii", "1,2")
    assert code == 0
    assert report(out)["radii"] == [1.0, 2.0]
