"""Seeded Monte-Carlo harness for the cone conditions and error rates.

A trial derives its seed from ``(master_seed, shape key, trial index)``,
generates a problem, fits it at the theoretical regularisation level and
records the L2 error together with the cone check of ``h = beta_hat - beta*``.
Trials never share state, so results are identical for any thread count.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .model import GroupStructure, NoiseModel, RegressionProblem, make_problem, standard_draws
from .seeding import derive_seed
from .solver import SolverConfig, fit_group_lasso, fit_lasso
from .theory import (
    ConeCheck,
    TheoryParams,
    bound_rhs,
    check_delta,
    cone_membership,
    lambda_group,
    lambda_lasso,
    order_stat_weights,
    group_error_cone,
    lasso_error_cone,
)

__all__ = [
    "LassoShape",
    "GroupShape",
    "ExperimentSpec",
    "TrialRecord",
    "ShapeAggregate",
    "ExperimentResult",
    "ExperimentAborted",
    "RateFit",
    "LemmaReport",
    "PairedComparison",
    "build_problem",
    "run_trial",
    "run_experiment",
    "fit_rate",
    "cone_threshold",
    "lemma_threshold",
    "verify_order_statistics_lemma",
    "compare_lasso_group",
    "signal_amplitude",
    "first_replications",
]

log = logging.getLogger(__name__)

ESTIMATORS = ("lasso", "group", "both")
MAX_FAILED_FRACTION = 0.01
DEGENERATE_ERROR = 1e-6


@dataclass(frozen=True)
class LassoShape:
    n: int
    p: int
    k_star: int

    def __post_init__(self):
        if not (self.n >= 1 and 1 <= self.k_star <= self.p):
            raise ValueError(f"invalid lasso shape {self}")

    @property
    def key(self) -> str:
        return f"lasso:n={self.n},p={self.p},k={self.k_star}"

    def predictor(self, params: TheoryParams) -> float:
        return self.k_star * math.log(self.p / self.k_star) / self.n


@dataclass(frozen=True)
class GroupShape:
    """Equal groups of ``group_size`` over ``p = G * group_size`` features.

    The truth has ``k_star`` nonzeros spread over ``s_star`` groups, so
    ``m* = s_star * group_size``.
    """

    n: int
    G: int
    group_size: int
    s_star: int
    k_star: int

    def __post_init__(self):
        if not (self.n >= 1 and self.group_size >= 1 and 1 <= self.s_star <= self.G):
            raise ValueError(f"invalid group shape {self}")
        if not self.s_star <= self.k_star <= self.m_star:
            raise ValueError(f"k_star={self.k_star} must lie in [s_star, m_star]=[{self.s_star}, {self.m_star}]")

    @property
    def p(self) -> int:
        return self.G * self.group_size

    @property
    def m_star(self) -> int:
        return self.s_star * self.group_size

    @property
    def groups(self) -> GroupStructure:
        return GroupStructure.equal(self.p, self.group_size)

    @property
    def key(self) -> str:
        return f"group:n={self.n},G={self.G},size={self.group_size},s={self.s_star},k={self.k_star}"

    def predictor(self, params: TheoryParams) -> float:
        return (self.s_star * math.log(self.G / self.s_star) + params.gamma * self.m_star) / self.n


Shape = LassoShape | GroupShape


@dataclass(frozen=True)
class ExperimentSpec:
    grid: tuple[Shape, ...]
    estimator: str = "lasso"
    params: TheoryParams = TheoryParams()
    replications: int = 50
    master_seed: int = 0
    noise: NoiseModel = NoiseModel()
    solver: SolverConfig = SolverConfig()
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        if not self.grid:
            raise ValueError("experiment grid is empty")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.estimator != "lasso" and not all(isinstance(s, GroupShape) for s in self.grid):
            raise ValueError(f"estimator {self.estimator!r} needs grouped shapes")
        keys = [s.key for s in self.grid]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate shapes in grid")

    @property
    def estimators(self) -> tuple[str, ...]:
        return ("lasso", "group") if self.estimator == "both" else (self.estimator,)


@dataclass(frozen=True)
class TrialRecord:
    shape: str
    estimator: str
    trial_index: int
    seed: int
    l2_error: float
    lambda_used: float
    cone: ConeCheck
    converged: bool
    iterations: int
    kkt_residual: float
    wall_time: float = field(compare=False)

    def as_dict(self) -> dict:
        """Deterministic fields in a fixed order (wall time excluded)."""
        return {
            "shape": self.shape,
            "estimator": self.estimator,
            "trial": self.trial_index,
            "seed": self.seed,
            "l2_error": self.l2_error,
            "lambda": self.lambda_used,
            "cone_member": self.cone.member,
            "cone_lhs": self.cone.lhs,
            "cone_rhs": self.cone.rhs,
            "converged": self.converged,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
        }


@dataclass(frozen=True)
class ShapeAggregate:
    shape: str
    estimator: str
    predictor: float
    n_trials: int
    n_failed: int
    mean_l2: float
    median_l2: float
    std_l2: float
    mean_sq_l2: float
    cone_frequency: float
    bound_expectation: float  # expectation bound at kappa = 1
    delta_flag: bool

    @property
    def c_emp(self) -> float:
        """Mean squared error divided by the squared expectation bound."""
        return self.mean_sq_l2 / self.bound_expectation**2


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    spec: ExperimentSpec
    records: tuple[TrialRecord, ...]
    aggregates: tuple[ShapeAggregate, ...]

    def aggregate(self, shape: Shape | str, estimator: str | None = None) -> ShapeAggregate:
        key = shape if isinstance(shape, str) else shape.key
        for a in self.aggregates:
            if a.shape == key and (estimator is None or a.estimator == estimator):
                return a
        raise KeyError(key)

    def for_estimator(self, estimator: str) -> list[ShapeAggregate]:
        return [a for a in self.aggregates if a.estimator == estimator]

    def c_emp_range(self, estimator: str) -> tuple[float, float]:
        vals = [a.c_emp for a in self.for_estimator(estimator)]
        return min(vals), max(vals)


class ExperimentAborted(RuntimeError):
    pass


def signal_amplitude(
    grid: Sequence[Shape], params: TheoryParams, estimator: str = "lasso", sigma: float | None = None
) -> float:
    """Smallest integer entry size that keeps every nonzero above half the regularisation level.

    Lasso: ``lambda / 2`` per coordinate. Group Lasso: the average block norm
    ``a sqrt(k*/s*)`` must reach ``lambda_G / 2``. The maximum is taken over the
    grid (and both estimators for ``"both"``).
    """
    if sigma is not None:
        params = replace(params, sigma=sigma)
    need = 0.0
    for shape in grid:
        if estimator in ("lasso", "both"):
            need = max(need, lambda_lasso(params, shape.n, shape.p, shape.k_star) / 2)
        if estimator in ("group", "both"):
            lam = lambda_group(params, shape.n, shape.G, shape.s_star, shape.m_star)
            need = max(need, lam / (2 * math.sqrt(shape.k_star / shape.s_star)))
    return float(max(1, math.ceil(need - 1e-9)))


def build_problem(spec: ExperimentSpec, shape: Shape, trial_index: int) -> RegressionProblem:
    seed = derive_seed(spec.master_seed, shape.key, trial_index)
    if isinstance(shape, LassoShape):
        return make_problem(shape.n, shape.p, shape.k_star, seed, spec.noise, spec.amplitude)
    return make_problem(
        shape.n,
        shape.p,
        shape.k_star,
        seed,
        spec.noise,
        spec.amplitude,
        groups=shape.groups,
        s_star=shape.s_star,
    )


def _theory_params(spec: ExperimentSpec) -> TheoryParams:
    # the regularisation level tracks the noise level actually simulated
    if spec.params.sigma == spec.noise.sigma:
        return spec.params
    return replace(spec.params, sigma=spec.noise.sigma)


def run_trial(
    spec: ExperimentSpec,
    shape: Shape,
    trial_index: int,
    estimator: str | None = None,
    problem: RegressionProblem | None = None,
) -> TrialRecord:
    estimator = estimator or spec.estimator
    if estimator not in ("lasso", "group"):
        raise ValueError("run_trial needs a single estimator")
    params = _theory_params(spec)
    t0 = time.perf_counter()
    if problem is None:
        problem = build_problem(spec, shape, trial_index)
    truth = problem.truth
    if estimator == "lasso":
        lam = lambda_lasso(params, shape.n, shape.p, truth.k_star)
        fit = fit_lasso(problem, lam, spec.solver)
        h = fit.beta_hat - truth.beta_star
        cone = cone_membership(h, lasso_error_cone(h, truth.k_star, params.alpha))
    else:
        cover = truth.group_cover
        lam = lambda_group(params, shape.n, problem.groups.G, cover.s_star, cover.m_star)
        fit = fit_group_lasso(problem, problem.groups, lam, spec.solver)
        h = fit.beta_hat - truth.beta_star
        cone = cone_membership(h, group_error_cone(h, problem.groups, cover.s_star, params.alpha))
    return TrialRecord(
        shape=shape.key,
        estimator=estimator,
        trial_index=trial_index,
        seed=problem.seed,
        l2_error=float(np.linalg.norm(h)),
        lambda_used=lam,
        cone=cone,
        converged=fit.converged,
        iterations=fit.iterations,
        kkt_residual=fit.kkt_residual,
        wall_time=time.perf_counter() - t0,
    )


def _run_cell(spec: ExperimentSpec, shape: Shape, trial_index: int) -> list[TrialRecord]:
    problem = build_problem(spec, shape, trial_index)
    return [run_trial(spec, shape, trial_index, est, problem) for est in spec.estimators]


def _aggregate(spec: ExperimentSpec, shape: Shape, estimator: str, recs: Sequence[TrialRecord]) -> ShapeAggregate:
    params = _theory_params(spec)
    ok = [r for r in recs if r.converged]
    err = np.array([r.l2_error for r in ok])
    if isinstance(shape, LassoShape) or estimator == "lasso":
        bound = bound_rhs(params, 1.0, n=shape.n, p=shape.p, k_star=shape.k_star, expectation=True)
        predictor = shape.k_star * math.log(shape.p / shape.k_star) / shape.n
    else:
        bound = bound_rhs(
            params, 1.0, n=shape.n, G=shape.G, s_star=shape.s_star, m_star=shape.m_star, expectation=True
        )
        predictor = shape.predictor(params)
    nan = float("nan")
    return ShapeAggregate(
        shape=shape.key,
        estimator=estimator,
        predictor=predictor,
        n_trials=len(ok),
        n_failed=len(recs) - len(ok),
        mean_l2=float(err.mean()) if err.size else nan,
        median_l2=float(np.median(err)) if err.size else nan,
        std_l2=float(err.std(ddof=1)) if err.size > 1 else 0.0,
        mean_sq_l2=float(np.mean(err**2)) if err.size else nan,
        cone_frequency=float(np.mean([r.cone.member for r in ok])) if ok else nan,
        bound_expectation=bound,
        delta_flag=params.delta >= 1.0 / shape.n,
    )


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    """Run ``replications`` trials at every grid shape and aggregate per shape.

    Trials that fail to converge are excluded from the aggregates; more than
    1% failures aborts the experiment.
    """
    for n in sorted({shape.n for shape in spec.grid}):
        check_delta(spec.params.delta, n)
    tasks = [(shape, t) for shape in spec.grid for t in range(spec.replications)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            cells = list(pool.map(lambda st: _run_cell(spec, *st), tasks))
    else:
        cells = [_run_cell(spec, shape, t) for shape, t in tasks]
    records = tuple(r for cell in cells for r in cell)
    failed = sum(not r.converged for r in records)
    if failed:
        log.warning("%d of %d fits did not converge and are excluded", failed, len(records))
    if failed > MAX_FAILED_FRACTION * len(records):
        worst = [r for r in records if not r.converged][:5]
        raise ExperimentAborted(
            f"{failed}/{len(records)} fits failed to converge (limit 1%); first: "
            + "; ".join(f"{r.shape} trial {r.trial_index} kkt={r.kkt_residual:.3g}" for r in worst)
        )
    aggregates = []
    for shape in spec.grid:
        for est in spec.estimators:
            recs = [r for r in records if r.shape == shape.key and r.estimator == est]
            aggregates.append(_aggregate(spec, shape, est, recs))
    return ExperimentResult(spec, records, tuple(aggregates))


def first_replications(result: ExperimentResult, replications: int) -> ExperimentResult:
    """The result a run with ``replications`` trials per shape would have produced.

    Trial seeds depend only on the trial index, so the first ``replications``
    trials of a longer run are exactly the trials of the shorter run.
    """
    if not 1 <= replications <= result.spec.replications:
        raise ValueError(f"replications must lie in [1, {result.spec.replications}]")
    spec = replace(result.spec, replications=replications)
    records = tuple(r for r in result.records if r.trial_index < replications)
    aggregates = []
    for shape in spec.grid:
        for est in spec.estimators:
            recs = [r for r in records if r.shape == shape.key and r.estimator == est]
            aggregates.append(_aggregate(spec, shape, est, recs))
    return ExperimentResult(spec, records, tuple(aggregates))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_rate(
    result: ExperimentResult | Iterable[tuple[float, float]],
    estimator: str | None = None,
    min_spread: float = 4.0,
) -> RateFit:
    """OLS of ``log(mean squared L2 error)`` on ``log(predictor)``.

    The predictor is ``k* log(p/k*)/n`` for the Lasso and
    ``(s* log(G/s*) + gamma m*)/n`` for the Group Lasso; ``result`` may also be
    an iterable of ``(predictor, mean_squared_error)`` pairs.
    """
    if isinstance(result, ExperimentResult):
        estimator = estimator or result.spec.estimators[0]
        pts = [(a.predictor, a.mean_sq_l2) for a in result.for_estimator(estimator)]
    else:
        pts = list(result)
    x = np.array([p for p, _ in pts], dtype=float)
    y = np.array([e for _, e in pts], dtype=float)
    if x.size < 3:
        raise ValueError(f"need at least 3 grid points, got {x.size}")
    if np.any(x <= 0) or np.any(~(y > 0)):
        raise ValueError("predictor and error values must be positive")
    if x.max() / x.min() < min_spread:
        raise ValueError(f"predictor spans only {x.max() / x.min():.3g}x (need >= {min_spread}x)")
    lx, ly = np.log(x), np.log(y)
    fit = stats.linregress(lx, ly)
    r2 = min(1.0, max(0.0, float(fit.rvalue) ** 2))
    return RateFit(float(fit.slope), float(fit.intercept), r2, int(x.size))


def cone_threshold(delta: float, trials: int) -> float:
    """``1 - delta - 3 sqrt(delta (1 - delta) / T)``."""
    return 1.0 - delta - 3.0 * math.sqrt(delta * (1.0 - delta) / trials)


def lemma_threshold(delta: float, trials: int) -> float:
    """``delta + 3 sqrt(delta / T)``."""
    return delta + 3.0 * math.sqrt(delta / trials)


@dataclass(frozen=True)
class LemmaReport:
    r: int
    family: str
    delta: float
    trials: int
    violation_frequency: float
    max_observed_ratio: float
    bound: float


def verify_order_statistics_lemma(
    r: int,
    sigma: float,
    delta: float,
    trials: int,
    family: str = "gaussian",
    seed: int = 0,
    chunk: int = 1 << 20,
) -> LemmaReport:
    """Frequency of ``sup_j g_(j) / (sigma lambda_j) > 12 sqrt(log(1/delta))``.

    ``g_(j)`` are the absolute values of ``r`` i.i.d. draws sorted descending
    and ``lambda_j = sqrt(log(2r/j))``.
    """
    if r < 1 or trials < 1:
        raise ValueError("r and trials must be >= 1")
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    weights = order_stat_weights(r)
    bound = 12.0 * math.sqrt(math.log(1.0 / delta))
    rng = np.random.default_rng(seed)
    rows = max(1, chunk // r)
    sups = []
    done = 0
    while done < trials:
        m = min(rows, trials - done)
        g = sigma * standard_draws(family, rng, (m, r))
        order = -np.sort(-np.abs(g), axis=1)
        sups.append(np.max(order / (sigma * weights), axis=1))
        done += m
    sup = np.concatenate(sups)
    return LemmaReport(r, family, delta, trials, float(np.mean(sup > bound)), float(sup.max()), bound)


@dataclass(frozen=True)
class PairedComparison:
    shape: str
    ratios: tuple[float | None, ...]  # None marks a degenerate pair
    median_ratio: float | None
    n_degenerate: int
    lasso_median: float
    group_median: float


def compare_lasso_group(spec: ExperimentSpec, threads: int = 1) -> tuple[list[PairedComparison], ExperimentResult]:
    """Paired error ratios ``||b_group - b*|| / ||b_lasso - b*||`` on identical data.

    A pair where both errors are at most 1e-6 is degenerate and carries no ratio.
    """
    if spec.estimator != "both":
        raise ValueError("comparison needs estimator='both'")
    result = run_experiment(spec, threads)
    out = []
    for shape in spec.grid:
        lasso = {r.trial_index: r for r in result.records if r.shape == shape.key and r.estimator == "lasso"}
        group = {r.trial_index: r for r in result.records if r.shape == shape.key and r.estimator == "group"}
        ratios: list[float | None] = []
        for t in sorted(lasso):
            a, b = lasso[t], group[t]
            if not (a.converged and b.converged):
                continue
            if a.l2_error <= DEGENERATE_ERROR and b.l2_error <= DEGENERATE_ERROR:
                ratios.append(None)
            elif a.l2_error == 0.0:
                ratios.append(math.inf)
            else:
                ratios.append(b.l2_error / a.l2_error)
        finite = [x for x in ratios if x is not None]
        out.append(
            PairedComparison(
                shape=shape.key,
                ratios=tuple(ratios),
                median_ratio=float(np.median(finite)) if finite else None,
                n_degenerate=sum(x is None for x in ratios),
                lasso_median=float(np.median([r.l2_error for r in lasso.values()])),
                group_median=float(np.median([r.l2_error for r in group.values()])),
            )
        )
    return out, result
