"""Command-line entry point: ``sparsebound --config run.cfg [--seed N] [--threads N] [--out DIR]``.

Exit status is 0 on success, 2 when an acceptance check fails (cone
frequency, lemma frequency, rate slope, comparison ratio, solver convergence)
and 1 on operational errors (bad config, I/O, aborted experiments).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, serialize
from .mc import (
    ExperimentAborted,
    ExperimentResult,
    ExperimentSpec,
    LassoShape,
    RateFit,
    compare_lasso_group,
    cone_threshold,
    fit_rate,
    lemma_threshold,
    run_experiment,
    verify_order_statistics_lemma,
)
from .model import Normalization, generate_design, read_problem
from .seeding import derive_seed
from .solver import fit_group_lasso, fit_lasso
from .theory import estimate_re_constant, lambda_group, lambda_lasso

log = logging.getLogger("sparsebound")

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    if x is None:
        return ""
    return str(x)


class Artifacts:
    """Writes result files into ``out``, each opening with the provenance header."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.run.out)
        self.out.mkdir(parents=True, exist_ok=True)
        body = serialize(config, provenance=True)
        self.provenance = (
            f"sparsebound {__version__} command={config.command}\nmaster_seed = {config.run.master_seed}\n" + body
        )
        self.written: list[Path] = []

    def header(self, extra: str = "") -> str:
        text = self.provenance + (extra if not extra or extra.endswith("\n") else extra + "\n")
        return "".join(f"# {ln}".rstrip() + "\n" for ln in text.splitlines())

    def jsonl(self, name: str, rows) -> Path:
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.header())
            for row in rows:
                fh.write(json.dumps(row, separators=(", ", ": ")) + "\n")
        self.written.append(path)
        return path

    def csv(self, name: str, columns, rows, extra: str = "") -> Path:
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.header(extra))
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self.written.append(path)
        return path

    def figure(self, fn, name: str, *args):
        if not self.config.run.figures:
            return None
        path = fn(*args, self.out / name, self.provenance)
        self.written.append(path)
        return path


# -- commands ----------------------------------------------------------------


def _spec(config: RunConfig, estimator: str) -> ExperimentSpec:
    return ExperimentSpec(
        grid=config["grid"],
        estimator=estimator,
        params=config.theory,
        replications=config["replications"],
        master_seed=config.run.master_seed,
        noise=config.noise,
        solver=config.solver,
        amplitude=config["amplitude"],
    )


def _shape_fields(shape):
    if isinstance(shape, LassoShape):
        return [shape.n, shape.p, shape.k_star, None, None, None, None]
    return [shape.n, shape.p, shape.k_star, shape.G, shape.group_size, shape.s_star, shape.m_star]


AGG_COLUMNS = [
    "shape", "estimator", "n", "p", "k_star", "G", "group_size", "s_star", "m_star", "predictor",
    "n_trials", "n_failed", "mean_l2", "median_l2", "std_l2", "mean_sq_l2", "cone_frequency",
    "bound_expectation", "c_emp", "delta_flag",
]


def _write_experiment(art: Artifacts, result: ExperimentResult) -> None:
    art.jsonl("trials.jsonl", (r.as_dict() for r in result.records))
    shapes = {s.key: s for s in result.spec.grid}
    rows = []
    for a in result.aggregates:
        rows.append(
            [a.shape, a.estimator, *_shape_fields(shapes[a.shape]), a.predictor, a.n_trials, a.n_failed,
             a.mean_l2, a.median_l2, a.std_l2, a.mean_sq_l2, a.cone_frequency, a.bound_expectation,
             a.c_emp, a.delta_flag]
        )
    art.csv("aggregates.csv", AGG_COLUMNS, rows)


def _cone_failures(result: ExperimentResult, delta: float) -> list[str]:
    bad = []
    for a in result.aggregates:
        thr = cone_threshold(delta, a.n_trials) if a.n_trials else 1.0
        if not a.cone_frequency >= thr:
            bad.append(f"{a.estimator} {a.shape}: cone frequency {a.cone_frequency:.4f} < {thr:.4f}")
    return bad


def cmd_experiment(config: RunConfig, art: Artifacts) -> list[str]:
    spec = _spec(config, config["estimator"])
    result = run_experiment(spec, threads=config.run.threads)
    _write_experiment(art, result)
    failures = _cone_failures(result, config.theory.delta) if config["cone_check"] else []

    fits: dict[str, RateFit | None] = {}
    rows, extra = [], []
    for est in spec.estimators:
        aggs = result.for_estimator(est)
        try:
            fit = fit_rate(result, est)
        except ValueError as exc:
            if config["slope_range"] is not None or config["min_r_squared"] is not None:
                raise
            log.warning("no rate fit for %s: %s", est, exc)
            fit = None
        fits[est] = fit
        if fit is not None:
            extra.append(f"rate_fit {est}: slope = {fit.slope:.17g} intercept = {fit.intercept:.17g} "
                         f"r_squared = {fit.r_squared:.17g} points = {fit.n_points}")
            log.info("%s rate fit: slope %.4f, r^2 %.4f", est, fit.slope, fit.r_squared)
            lo_hi = config["slope_range"]
            if lo_hi is not None and not lo_hi[0] <= fit.slope <= lo_hi[1]:
                failures.append(f"{est} slope {fit.slope:.4f} outside [{lo_hi[0]}, {lo_hi[1]}]")
            r2 = config["min_r_squared"]
            if r2 is not None and fit.r_squared < r2:
                failures.append(f"{est} r^2 {fit.r_squared:.4f} < {r2}")
        for a in sorted(aggs, key=lambda a: a.predictor):
            fitted = math.exp(fit.intercept) * a.predictor**fit.slope if fit is not None else None
            rows.append([est, a.shape, a.predictor, a.mean_sq_l2, fitted])
    art.csv("rate_plot.csv", ["estimator", "shape", "predictor", "mean_sq_l2", "fitted"], rows, "\n".join(extra))

    from .plotting import cone_figure, rate_figure

    series = {}
    for est in spec.estimators:
        aggs = result.for_estimator(est)
        series[est] = ([a.predictor for a in aggs], [a.mean_sq_l2 for a in aggs], fits[est])
    art.figure(rate_figure, "rate_plot.png", series)
    thr = cone_threshold(config.theory.delta, spec.replications)
    art.figure(cone_figure, "cone_frequency.png", [f"{a.estimator[0]} {a.shape}" for a in result.aggregates],
               [a.cone_frequency for a in result.aggregates], thr)
    return failures


def cmd_verify_cone(config: RunConfig, art: Artifacts) -> list[str]:
    result = run_experiment(_spec(config, config["estimator"]), threads=config.run.threads)
    art.jsonl("trials.jsonl", (r.as_dict() for r in result.records))
    delta = config.theory.delta
    rows = []
    for a in result.aggregates:
        thr = cone_threshold(delta, a.n_trials)
        rows.append([a.shape, a.estimator, a.n_trials, a.cone_frequency, thr, a.cone_frequency >= thr])
    art.csv("cone_report.csv", ["shape", "estimator", "trials", "frequency", "threshold", "pass"], rows)
    from .plotting import cone_figure

    art.figure(cone_figure, "cone_frequency.png", [f"{a.estimator[0]} {a.shape}" for a in result.aggregates],
               [a.cone_frequency for a in result.aggregates], cone_threshold(delta, config["replications"]))
    return _cone_failures(result, delta)


def cmd_compare(config: RunConfig, art: Artifacts) -> list[str]:
    comparisons, result = compare_lasso_group(_spec(config, "both"), threads=config.run.threads)
    _write_experiment(art, result)
    rows, failures = [], []
    hi, lo = config["max_median_ratio"], config["min_median_ratio"]
    for c in comparisons:
        rows.append([c.shape, len(c.ratios), c.n_degenerate, c.median_ratio, c.lasso_median, c.group_median])
        log.info("%s: median group/lasso ratio %s", c.shape, c.median_ratio)
        if c.median_ratio is None:
            if hi is not None or lo is not None:
                failures.append(f"{c.shape}: every pair is degenerate")
            continue
        if hi is not None and not c.median_ratio < hi:
            failures.append(f"{c.shape}: median ratio {c.median_ratio:.4f} >= {hi}")
        if lo is not None and not c.median_ratio >= lo:
            failures.append(f"{c.shape}: median ratio {c.median_ratio:.4f} < {lo}")
    art.csv("comparison.csv", ["shape", "pairs", "degenerate", "median_ratio", "lasso_median_l2",
                               "group_median_l2"], rows)
    from .plotting import comparison_figure

    art.figure(comparison_figure, "comparison.png", comparisons)
    return failures


def cmd_verify_lemma(config: RunConfig, art: Artifacts) -> list[str]:
    if not config.noise.sigma > 0:
        raise ConfigError("verify-lemma needs noise sigma > 0")
    reports, rows, failures = [], [], []
    trials = config["trials"]
    for r in config["r"]:
        for family in config["families"]:
            for delta in config["deltas"]:
                seed = derive_seed(config.run.master_seed, "lemma", r, family, repr(delta))
                rep = verify_order_statistics_lemma(r, config.noise.sigma, delta, trials, family, seed)
                thr = lemma_threshold(delta, trials)
                ok = rep.violation_frequency <= thr
                reports.append(rep)
                rows.append([r, family, delta, trials, rep.violation_frequency, thr, rep.max_observed_ratio,
                             rep.bound, ok])
                if not ok:
                    failures.append(f"r={r} {family} delta={delta}: frequency {rep.violation_frequency} > {thr:.4f}")
    art.csv("lemma_report.csv", ["r", "family", "delta", "trials", "violation_frequency", "threshold",
                                 "max_observed_ratio", "bound", "pass"], rows)
    from .plotting import lemma_figure

    art.figure(lemma_figure, "lemma.png", reports)
    return failures


def cmd_solve(config: RunConfig, art: Artifacts) -> list[str]:
    problem = read_problem(config["problem"])
    lam = config["lambda"]
    est = config["estimator"]
    if est == "group" and problem.groups is None:
        raise ConfigError("estimator = group but the problem file has no groups")
    if lam == "theory":
        params = config.theory
        if problem.truth.k_star == 0:
            raise ConfigError("lambda = theory needs a nonzero beta_star in the problem file")
        if est == "lasso":
            lam = lambda_lasso(params, problem.n, problem.p, problem.truth.k_star)
        else:
            cover = problem.truth.group_cover
            if cover is None:
                raise ConfigError("lambda = theory needs beta_star covered by the groups")
            lam = lambda_group(params, problem.n, problem.groups.G, cover.s_star, cover.m_star)
    if est == "lasso":
        fit = fit_lasso(problem, lam, config.solver)
    else:
        fit = fit_group_lasso(problem, problem.groups, lam, config.solver)
    summary = (
        f"lambda = {fit.lambda_used:.17g}\nobjective = {fit.objective:.17g}\nkkt_residual = {fit.kkt_residual:.17g}\n"
        f"iterations = {fit.iterations}\nconverged = {fmt(fit.converged)}\n" + "".join(f"note: {n}\n" for n in fit.notes)
    )
    rows = zip(range(problem.p), fit.beta_hat, problem.truth.beta_star)
    art.csv("solution.csv", ["index", "beta_hat", "beta_star"], rows, summary)
    log.info("solved: %s", summary.replace("\n", "; "))
    return [] if fit.converged else [f"solver stopped with KKT residual {fit.kkt_residual:.3g}"]


def cmd_estimate_re(config: RunConfig, art: Artifacts) -> list[str]:
    if config["problem"] is not None:
        X = read_problem(config["problem"]).X
    else:
        norm = Normalization.NONE if config["normalization"] == "none" else Normalization.UNIT_COLUMNS
        X = generate_design(config["n"], config["p"], derive_seed(config.run.master_seed, "design"), norm)
    k = config["k"]
    if k > X.p:
        raise ConfigError(f"k = {k} exceeds p = {X.p}")
    a = config.theory.alpha
    g1 = config["gamma1"] if config["gamma1"] is not None else a / (a - 1)
    g2 = config["gamma2"] if config["gamma2"] is not None else math.sqrt(k) / (a - 1)
    est = estimate_re_constant(
        X, k=k, gamma1=g1, gamma2=g2, budget=config["budget"], seed=derive_seed(config.run.master_seed, "re"),
        mode=config["mode"], n_sampled=config["n_sampled"], iters=config["iters"], threads=config.run.threads,
    )
    extra = (
        f"kappa_lower_estimate = {est.kappa_lower_estimate:.17g}\nmode = {est.mode}\n"
        f"supports_examined = {est.supports_examined}\ncone support = {' '.join(map(str, est.cone.support))}\n"
        f"gamma1 = {g1:.17g}\ngamma2 = {g2:.17g}\n"
    )
    art.csv("re_estimate.csv", ["index", "witness"], zip(range(X.p), est.witness), extra)
    log.info("RE constant estimate %.6g (%s, %d supports)", est.kappa_lower_estimate, est.mode, est.supports_examined)
    return []


COMMANDS = {
    "solve": cmd_solve,
    "experiment": cmd_experiment,
    "verify-cone": cmd_verify_cone,
    "compare": cmd_compare,
    "verify-lemma": cmd_verify_lemma,
    "estimate-re": cmd_estimate_re,
}


def run(config: RunConfig) -> int:
    """Execute ``config`` and write its artifacts; returns the exit status."""
    try:
        if config.options.get("problem") is not None and not Path(config["problem"]).is_file():
            raise ConfigError(f"problem file {config['problem']} does not exist")
        art = Artifacts(config)
        (art.out / "config.resolved").write_text(serialize(config), encoding="utf-8")
        log.info("resolved configuration:\n%s", serialize(config))
        failures = COMMANDS[config.command](config, art)
    except (ConfigError, OSError, ValueError, ExperimentAborted, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    for path in art.written:
        log.info("wrote %s", path)
    if failures:
        for f in failures:
            log.error("check failed: %s", f)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsebound", description="Sparse regression error-bound experiments.")
    ap.add_argument("--config", required=True, metavar="PATH", help="run configuration file")
    ap.add_argument("--seed", type=int, metavar="N", help="override [run] master_seed")
    ap.add_argument("--threads", type=int, metavar="N", help="override [run] threads")
    ap.add_argument("--out", metavar="DIR", help="override [run] out")
    ap.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    ap.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        log.error("--seed must lie in [0, 2^64)")
        return EXIT_ERROR
    if args.threads is not None and args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_ERROR
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        log.error("%s: %s", args.config, exc)
        return EXIT_ERROR
    config = config.with_overrides(
        master_seed=args.seed, threads=args.threads, out=args.out, figures=False if args.no_figures else None
    )
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
