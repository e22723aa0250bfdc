import csv
import json

import numpy as np
import pytest

from sparsebound.cli import main
from sparsebound.model import GroupStructure, make_problem, write_problem


def run_cli(tmp_path, text, *args):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    return main(["--config", str(cfg), "-q", *args])


def read_csv_body(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


SMALL = """[experiment]
n = 60, 240
p = 128
k_star = 2, 8
replications = 3
amplitude = 10
"""


def test_experiment_outputs(tmp_path):
    out = tmp_path / "o"
    assert run_cli(tmp_path, SMALL, "--out", str(out)) == 0
    names = {p.name for p in out.iterdir()}
    assert {"trials.jsonl", "aggregates.csv", "rate_plot.csv", "rate_plot.png", "cone_frequency.png"} <= names
    lines = (out / "trials.jsonl").read_text().splitlines()
    head = [ln for ln in lines if ln.startswith("#")]
    assert any("master_seed = 0" in ln for ln in head) and any("[experiment]" in ln for ln in head)
    records = [json.loads(ln) for ln in lines if not ln.startswith("#")]
    assert len(records) == 12
    assert list(records[0]) == ["shape", "estimator", "trial", "seed", "l2_error", "lambda", "cone_member",
                                "cone_lhs", "cone_rhs", "converged", "iterations", "kkt_residual"]
    header, rows = read_csv_body(out / "aggregates.csv")
    assert len(rows) == 4 and "mean_sq_l2" in header
    # %.17g keeps doubles exact
    j = header.index("mean_l2")
    recs = [r["l2_error"] for r in records[:3]]
    assert float(rows[0][j]) == np.mean(recs)
    header, rows = read_csv_body(out / "rate_plot.csv")
    assert header == ["estimator", "shape", "predictor", "mean_sq_l2", "fitted"] and len(rows) == 4


def test_figures_carry_provenance(tmp_path):
    from PIL import Image

    out = tmp_path / "o"
    assert run_cli(tmp_path, SMALL, "--out", str(out)) == 0
    desc = Image.open(out / "rate_plot.png").text["Description"]
    assert "master_seed = 0" in desc and "[experiment]" in desc and "shapes = 60/128/2" in desc


def test_no_figures_flag(tmp_path):
    out = tmp_path / "o"
    assert run_cli(tmp_path, SMALL, "--out", str(out), "--no-figures") == 0
    assert not list(out.glob("*.png"))


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(tmp_path, SMALL, "--out", str(a)) == 0
    assert run_cli(tmp_path, SMALL, "--out", str(b), "--threads", "3") == 0
    assert (a / "trials.jsonl").read_bytes() == (b / "trials.jsonl").read_bytes()
    assert (a / "aggregates.csv").read_bytes() == (b / "aggregates.csv").read_bytes()


def test_seed_override_changes_trials(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(tmp_path, SMALL, "--out", str(a), "--no-figures")
    run_cli(tmp_path, SMALL, "--out", str(b), "--no-figures", "--seed", "77")
    assert (a / "trials.jsonl").read_bytes() != (b / "trials.jsonl").read_bytes()
    assert "master_seed = 77" in (b / "trials.jsonl").read_text()


def test_failed_slope_check_exits_2(tmp_path):
    text = SMALL + "slope_range = 5, 6\n"
    assert run_cli(tmp_path, text, "--out", str(tmp_path / "o"), "--no-figures") == 2


def test_failed_cone_check_exits_2(tmp_path):
    # far below the theoretical level the error is dense and leaves the cone
    text = SMALL + "[theory]\nlambda_constant = 0.001\n"
    assert run_cli(tmp_path, text, "--out", str(tmp_path / "o"), "--no-figures") == 2


def test_config_errors_exit_1(tmp_path):
    assert run_cli(tmp_path, "[experiment]\n[theory]\nalpha = 1.5\n") == 1
    assert main(["--config", str(tmp_path / "missing.cfg"), "-q"]) == 1
    assert run_cli(tmp_path, f"[solve]\nproblem = {tmp_path / 'nope.txt'}\n", "--out", str(tmp_path / "o")) == 1


def test_unwritable_output_exits_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run_cli(tmp_path, SMALL, "--out", str(blocker / "sub")) == 1


def test_aborted_experiment_exits_1(tmp_path):
    text = SMALL.replace("amplitude = 10", "amplitude = 100") + "[solver]\nmax_iter = 1\n"
    assert run_cli(tmp_path, text, "--out", str(tmp_path / "o"), "--no-figures") == 1


def test_solve_least_squares(tmp_path):
    prob = make_problem(12, 5, 2, seed=3, amplitude=2.0)
    path = tmp_path / "prob.txt"
    write_problem(prob, path)
    out = tmp_path / "o"
    assert run_cli(tmp_path, f"[solve]\nproblem = {path}\nlambda = 0\n", "--out", str(out)) == 0
    _, rows = read_csv_body(out / "solution.csv")
    beta = np.array([float(r[1]) for r in rows])
    ls = np.linalg.lstsq(prob.X.values, prob.y, rcond=None)[0]
    np.testing.assert_allclose(beta, ls, atol=1e-6)


def test_solve_group_theory_lambda(tmp_path):
    groups = GroupStructure.equal(24, 4)
    prob = make_problem(40, 24, 4, seed=1, amplitude=6.0, groups=groups, s_star=1)
    path = tmp_path / "prob.txt"
    write_problem(prob, path)
    out = tmp_path / "o"
    assert run_cli(tmp_path, f"[solve]\nproblem = {path}\nestimator = group\n", "--out", str(out)) == 0
    text = (out / "solution.csv").read_text()
    assert "converged = true" in text and "lambda = " in text


def test_solve_not_converged_exits_2(tmp_path):
    prob = make_problem(30, 60, 3, seed=1, amplitude=5.0)
    path = tmp_path / "prob.txt"
    write_problem(prob, path)
    text = f"[solve]\nproblem = {path}\nlambda = 0.01\n[solver]\nmax_iter = 2\n"
    assert run_cli(tmp_path, text, "--out", str(tmp_path / "o")) == 2


def test_group_solve_without_groups_exits_1(tmp_path):
    prob = make_problem(10, 5, 2, seed=1)
    path = tmp_path / "prob.txt"
    write_problem(prob, path)
    assert run_cli(tmp_path, f"[solve]\nproblem = {path}\nestimator = group\n", "--out", str(tmp_path / "o")) == 1


def test_verify_lemma(tmp_path):
    out = tmp_path / "o"
    text = "[verify-lemma]\nr = 10, 1000\ndeltas = 0.05\ntrials = 2000\n"
    assert run_cli(tmp_path, text, "--out", str(out)) == 0
    header, rows = read_csv_body(out / "lemma_report.csv")
    assert len(rows) == 6
    freq = header.index("violation_frequency")
    assert all(float(r[freq]) <= 0.05 for r in rows)
    assert (out / "lemma.png").exists()


def test_verify_lemma_zero_sigma_exits_1(tmp_path):
    assert run_cli(tmp_path, "[verify-lemma]\n[noise]\nsigma = 0\n", "--out", str(tmp_path / "o")) == 1


def test_verify_cone(tmp_path):
    out = tmp_path / "o"
    text = "[verify-cone]\nn = 100\np = 200\nk_star = 5\nreplications = 40\n"
    assert run_cli(tmp_path, text, "--out", str(out), "--no-figures") == 0
    header, rows = read_csv_body(out / "cone_report.csv")
    assert rows[0][header.index("pass")] == "true"


def test_estimate_re(tmp_path):
    out = tmp_path / "o"
    text = "[estimate-re]\nn = 30\np = 5\nk = 1\nbudget = 2\n"
    assert run_cli(tmp_path, text, "--out", str(out)) == 0
    body = (out / "re_estimate.csv").read_text()
    kappa = float(body.split("kappa_lower_estimate = ")[1].split()[0])
    assert 0 < kappa <= 1.5


def test_compare(tmp_path):
    out = tmp_path / "o"
    text = "[compare]\nshapes = 100/64/8/1/8\nreplications = 6\nmax_median_ratio = 1\n"
    assert run_cli(tmp_path, text, "--out", str(out), "--no-figures") == 0
    assert (out / "comparison.csv").exists() and (out / "trials.jsonl").exists()
    text = text.replace("max_median_ratio = 1", "max_median_ratio = 0.01")
    assert run_cli(tmp_path, text, "--out", str(out), "--no-figures") == 2


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    cfg = tmp_path / "c.cfg"
    cfg.write_text("[verify-lemma]\nr = 5\nfamilies = gaussian\ndeltas = 0.05\ntrials = 50\n")
    res = subprocess.run([sys.executable, "-m", "sparsebound", "--config", str(cfg), "--out", str(tmp_path / "o"),
                          "--no-figures", "-q"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
