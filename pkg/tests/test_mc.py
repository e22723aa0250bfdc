import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from sparsebound.model import NoiseModel
from sparsebound.mc import (
    ExperimentAborted,
    ExperimentSpec,
    GroupShape,
    LassoShape,
    build_problem,
    compare_lasso_group,
    first_replications,
    cone_threshold,
    fit_rate,
    lemma_threshold,
    run_experiment,
    run_trial,
    signal_amplitude,
    verify_order_statistics_lemma,
)
from sparsebound.solver import SolverConfig
from sparsebound.theory import TheoryParams


def test_shape_keys_and_predictors():
    params = TheoryParams()
    s = LassoShape(100, 512, 8)
    assert s.key == "lasso:n=100,p=512,k=8"
    assert s.predictor(params) == pytest.approx(8 * math.log(64) / 100)
    g = GroupShape(200, 32, 8, 2, 16)
    assert (g.p, g.m_star) == (256, 16)
    assert g.predictor(params) == pytest.approx((2 * math.log(16) + 16) / 200)
    with pytest.raises(ValueError):
        GroupShape(100, 10, 4, 2, 9)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(grid=())
    with pytest.raises(ValueError):
        ExperimentSpec(grid=(LassoShape(10, 20, 2),), estimator="group")
    with pytest.raises(ValueError):
        ExperimentSpec(grid=(LassoShape(10, 20, 2), LassoShape(10, 20, 2)))


def test_noiseless_trial_recovers_truth():
    spec = ExperimentSpec(grid=(LassoShape(100, 50, 5),), noise=NoiseModel(sigma=0.0), amplitude=3.0)
    rec = run_trial(spec, spec.grid[0], 0)
    assert rec.lambda_used == 0.0 and rec.l2_error <= 1e-6 and rec.converged


def test_trial_is_deterministic():
    spec = ExperimentSpec(grid=(LassoShape(60, 120, 4),), amplitude=10.0, master_seed=42)
    a = run_trial(spec, spec.grid[0], 7)
    b = run_trial(spec, spec.grid[0], 7)
    assert a == b and a.as_dict() == b.as_dict()
    assert build_problem(spec, spec.grid[0], 8).seed != a.seed


def test_single_replication_aggregate():
    spec = ExperimentSpec(grid=(LassoShape(60, 120, 4),), replications=1, amplitude=10.0)
    res = run_experiment(spec)
    agg, rec = res.aggregates[0], res.records[0]
    assert agg.mean_l2 == agg.median_l2 == rec.l2_error
    assert agg.std_l2 == 0.0 and agg.cone_frequency == float(rec.cone.member)
    assert agg.c_emp == pytest.approx(rec.l2_error**2 / agg.bound_expectation**2)


def test_threads_do_not_change_results():
    grid = (LassoShape(50, 100, 3), GroupShape(50, 16, 4, 2, 8))
    spec = ExperimentSpec(grid=grid[1:], estimator="both", replications=4, amplitude=8.0, master_seed=5)
    a = run_experiment(spec, threads=1)
    b = run_experiment(spec, threads=4)
    assert [r.as_dict() for r in a.records] == [r.as_dict() for r in b.records]
    assert a.aggregates == b.aggregates


def test_abort_on_failed_fits():
    # a strong signal so the fits cannot stop at beta = 0
    spec = ExperimentSpec(grid=(LassoShape(40, 80, 3),), replications=3, amplitude=100.0,
                          solver=SolverConfig(max_iter=2))
    with pytest.raises(ExperimentAborted):
        run_experiment(spec)


def test_signal_amplitude_rule():
    params = TheoryParams()
    grid = [LassoShape(100, 1024, 4)]
    assert signal_amplitude(grid, params) == math.ceil(24 * 2 * math.sqrt(math.log(2048 * math.e / 4)
                                                                          * math.log(20) / 100) / 2)
    assert signal_amplitude(grid, TheoryParams(sigma=0.0)) == 1.0


def test_fit_rate_exact_line():
    x = np.geomspace(0.01, 1.0, 7)
    fit = fit_rate(zip(x, np.exp(0.3) * x))
    assert fit.slope == pytest.approx(1.0, abs=1e-12) and fit.r_squared == pytest.approx(1.0)
    fit = fit_rate(zip(x, 2.0 * x**0.5))
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(2.0), abs=1e-12)


@given(st.floats(0.2, 3.0), st.floats(-3, 3))
def test_fit_rate_recovers_any_slope(slope, c):
    x = np.geomspace(0.05, 2.0, 5)
    assert fit_rate(zip(x, np.exp(c) * x**slope)).slope == pytest.approx(slope, abs=1e-10)


def test_fit_rate_guards():
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.2, 2.0)])
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.15, 2.0), (0.2, 3.0)])
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (1.0, 0.0), (2.0, 3.0)])


def test_thresholds():
    assert cone_threshold(0.05, 200) == pytest.approx(1 - 0.05 - 3 * math.sqrt(0.05 * 0.95 / 200))
    assert lemma_threshold(0.05, 2000) == pytest.approx(0.05 + 3 * math.sqrt(0.05 / 2000))


def test_lemma_r1_against_normal_tail():
    delta = 0.05
    rep = verify_order_statistics_lemma(1, 1.0, delta, 5000, "gaussian", seed=1)
    exact = 2 * stats.norm.sf(12 * math.sqrt(math.log(1 / delta) * math.log(2)))
    assert exact < 1e-60
    assert rep.violation_frequency == 0.0
    # sup = |g| / sqrt(log 2): its mean is sqrt(2/pi) / sqrt(log 2)
    assert rep.max_observed_ratio < rep.bound


def test_lemma_sigma_scale_free():
    a = verify_order_statistics_lemma(50, 1.0, 0.05, 300, "uniform", seed=2)
    b = verify_order_statistics_lemma(50, 7.5, 0.05, 300, "uniform", seed=2)
    assert a.max_observed_ratio == pytest.approx(b.max_observed_ratio, rel=1e-12)


def test_lemma_chunking_invariant():
    a = verify_order_statistics_lemma(100, 1.0, 0.05, 500, seed=4)
    b = verify_order_statistics_lemma(100, 1.0, 0.05, 500, seed=4, chunk=700)
    assert a == b


def test_degenerate_pairs():
    shape = GroupShape(60, 10, 4, 2, 8)
    spec = ExperimentSpec(grid=(shape,), estimator="both", replications=3, noise=NoiseModel(sigma=0.0),
                          amplitude=2.0)
    comps, _ = compare_lasso_group(spec)
    assert comps[0].n_degenerate == 3 and comps[0].median_ratio is None
    assert all(r is None for r in comps[0].ratios)


def test_cone_frequency_small_shape():
    spec = ExperimentSpec(grid=(LassoShape(100, 200, 5),), replications=200, amplitude=10.0, master_seed=3)
    res = run_experiment(spec, threads=2)
    assert res.aggregates[0].cone_frequency >= 0.95


def test_error_decreases_with_n():
    grid = tuple(LassoShape(n, 512, 8) for n in (100, 200, 400))
    spec = ExperimentSpec(grid=grid, replications=50, amplitude=12.0, master_seed=11)
    res = run_experiment(spec, threads=2)
    means = [res.aggregate(s).mean_l2 for s in grid]
    assert means[0] > means[1] > means[2]


def test_first_replications_matches_short_run():
    grid = (LassoShape(50, 100, 3), LassoShape(80, 100, 3))
    long = run_experiment(ExperimentSpec(grid=grid, replications=6, amplitude=9.0, master_seed=2))
    short = run_experiment(ExperimentSpec(grid=grid, replications=4, amplitude=9.0, master_seed=2))
    cut = first_replications(long, 4)
    assert [r.as_dict() for r in cut.records] == [r.as_dict() for r in short.records]
    assert cut.aggregates == short.aggregates
