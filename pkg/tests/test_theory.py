import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import orthogonal_design
from sparsebound.model import GroupStructure, generate_design
from sparsebound.theory import (
    GroupCone,
    LassoCone,
    TheoryParams,
    bound_rhs,
    check_delta,
    cone_membership,
    estimate_re_constant,
    gamma_ratio,
    group_norms,
    lambda_group,
    lambda_lasso,
    order_stat_weights,
    rayleigh_quotient,
    stirling_bound_check,
    lasso_error_cone,
    top_k_support,
    top_s_groups,
)

# 30-digit evaluations of the closed forms (mpmath)
LAMBDA_LASSO_REF = 25.8509406052400310647917776518
LAMBDA_GROUP_REF = 20.2172132023817395749406874235
BOUND_REF = 2.34911531869962999576747260899


def test_lambda_lasso_value():
    params = TheoryParams(alpha=2, sigma=1, delta=0.01)
    assert lambda_lasso(params, 100, 1000, 10) == pytest.approx(LAMBDA_LASSO_REF, rel=1e-13)


def test_lambda_group_value():
    params = TheoryParams(alpha=2, sigma=1, delta=0.05, gamma=1)
    assert lambda_group(params, 100, 50, 5, 25) == pytest.approx(LAMBDA_GROUP_REF, rel=1e-13)


def test_noiseless_levels():
    params = TheoryParams(sigma=0.0)
    assert lambda_lasso(params, 100, 50, 5) == 0.0
    assert lambda_group(params, 100, 10, 2, 8) == 0.0
    assert bound_rhs(params, 1.0, n=100, p=50, k_star=5) == 0.0


def test_singleton_group_level_structure():
    params = TheoryParams()
    n, p, k = 200, 300, 6
    first = params.lambda_constant * params.alpha * math.sqrt(
        math.log(2 * p * math.e / k) * math.log(2 / params.delta) / n
    )
    assert lambda_group(params, n, p, k, k) == pytest.approx(first + 4 * params.alpha * math.sqrt(1 / n))
    ratio = math.sqrt(math.log(2 / params.delta) / math.log(1 / params.delta))
    assert first == pytest.approx(lambda_lasso(params, n, p, k) * ratio)


def test_alternative_constants():
    base = TheoryParams()
    alt = TheoryParams(lambda_constant=34, group_delta_numerator=1)
    assert lambda_lasso(alt, 100, 500, 5) == pytest.approx(lambda_lasso(base, 100, 500, 5) * 34 / 24)
    g = lambda_group(alt, 100, 50, 2, 10) - 4 * 2 * math.sqrt(10 / 200)
    assert g == pytest.approx(34 * 2 * math.sqrt(math.log(100 * math.e / 2) * math.log(20) / 100))


@pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(delta=0.5), dict(delta=0), dict(gamma=0.9),
                                dict(group_delta_numerator=3)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        TheoryParams(**kw)


def test_delta_flag():
    assert check_delta(0.05, 100)
    assert not check_delta(0.001, 100)


def test_order_stat_weights():
    np.testing.assert_allclose(order_stat_weights(1), [0.832554611157697756], rtol=1e-15)
    np.testing.assert_allclose(order_stat_weights(2), [1.17741002251547469, 0.832554611157697756], rtol=1e-15)


def test_stirling_examples():
    p = 37
    c = stirling_bound_check(1, p)
    assert c.holds and c.rhs == pytest.approx(c.lhs + 1)
    c = stirling_bound_check(2, 2)
    # log 4 + log 2 against 2 log(2e)
    assert c.lhs == pytest.approx(2.07944154167983593) and c.rhs == pytest.approx(3.38629436111989061)
    assert c.holds


def test_top_k_examples():
    assert top_k_support(np.array([3.0, -5.0, 1.0]), 2) == (0, 1)
    assert top_k_support(np.ones(6), 3) == (0, 1, 2)


@given(arrays(float, 12, elements=st.floats(-10, 10)), st.integers(1, 4))
def test_top_s_groups_brute_force(h, s):
    groups = GroupStructure.equal(12, 3)
    norms = group_norms(h, groups)
    got = top_s_groups(h, groups, s)
    best = max(sum(norms[list(c)]) for c in itertools.combinations(range(4), s))
    assert sum(norms[list(got)]) == pytest.approx(best)
    if s == 1:
        assert got == (int(np.argmax(norms)),)


def test_cone_inside_support():
    h = np.array([1.0, -2.0, 0.0, 0.0])
    chk = cone_membership(h, LassoCone((0, 1), 1.0, 1.0))
    assert chk.member and chk.lhs == 0 and chk.slack == chk.rhs >= 0


def test_cone_outside_support():
    h = np.array([0.0, 0.0, 0.5, 0.0])
    assert not cone_membership(h, LassoCone((0, 1), 1.0, 1.0)).member


@given(arrays(float, 10, elements=st.floats(-5, 5)), st.integers(1, 5))
def test_error_cone_matches_direct_norms(h, k):
    alpha = 2.0
    spec = lasso_error_cone(h, k, alpha)
    S = np.argsort(-np.abs(h), kind="stable")[:k]
    rest = np.setdiff1d(np.arange(10), S)
    lhs = np.abs(h[rest]).sum()
    rhs = alpha / (alpha - 1) * np.abs(h[S]).sum() + np.sqrt(k) / (alpha - 1) * np.linalg.norm(h[S])
    chk = cone_membership(h, spec)
    assert chk.lhs == pytest.approx(lhs) and chk.rhs == pytest.approx(rhs)
    if abs(lhs - rhs) > 1e-9:
        assert chk.member == (lhs <= rhs)


def test_group_cone_direct():
    groups = GroupStructure.equal(6, 2)
    h = np.array([3.0, 4.0, 0.0, 1.0, 0.0, 0.0])
    chk = cone_membership(h, GroupCone((0,), 1.0, 0.5, groups))
    assert chk.lhs == pytest.approx(1.0) and chk.rhs == pytest.approx(5.0 + 0.5 * 5.0)


def test_bound_value():
    params = TheoryParams(alpha=2, sigma=1, delta=0.05, bound_constant=1)
    assert bound_rhs(params, 1.0, n=100, p=1000, k_star=10) == pytest.approx(BOUND_REF, rel=1e-13)


def test_bound_expectation_drops_log_delta():
    params = TheoryParams()
    a = bound_rhs(params, 0.5, n=100, G=20, s_star=2, m_star=10, expectation=True)
    assert a == pytest.approx(2 * 2 * math.sqrt((2 * math.log(10) + 10) / 100))
    with pytest.raises(ValueError):
        bound_rhs(params, 0.0, n=100, p=10, k_star=1)


def test_gamma_ratio_examples():
    assert gamma_ratio(GroupStructure.equal(12, 3), 2, 6).gamma_attained == 1
    r = gamma_ratio([4, 2, 2], 1, 2)
    assert (r.m0, r.gamma_attained) == (4, 2)
    assert gamma_ratio([4, 2, 2], 3, 8).m0 == 8


def test_re_isotropic(rng):
    X = orthogonal_design(40, 8, rng)
    for cone in [(1.0, 1.0), (2.0, 1.5)]:
        est = estimate_re_constant(X, k=2, gamma1=cone[0], gamma2=cone[1], budget=3)
        assert abs(est.kappa_lower_estimate - 1.0) <= 1e-6
        assert rayleigh_quotient(X, est.witness) == pytest.approx(1.0, abs=1e-9)


def test_re_group_isotropic(rng):
    X = orthogonal_design(30, 9, rng)
    est = estimate_re_constant(X, groups=GroupStructure.equal(9, 3), s=1, eps1=1.0, eps2=1.0, budget=3)
    assert abs(est.kappa_lower_estimate - 1.0) <= 1e-6


def test_re_duplicated_column(rng):
    X = generate_design(30, 6, seed=4).values.copy()
    X[:, 5] = X[:, 0]
    est = estimate_re_constant(X, k=1, gamma1=1.0, gamma2=1.0, budget=4)
    assert est.kappa_lower_estimate <= 1e-6
    assert cone_membership(est.witness, est.cone).member


def test_re_witness_on_sphere():
    X = generate_design(20, 7, seed=9)
    est = estimate_re_constant(X, k=2, gamma1=2.0, gamma2=1.0, budget=2)
    assert np.linalg.norm(est.witness) == pytest.approx(1.0)
    assert est.mode == "exact" and est.supports_examined == 7 + 21
    # an upper bound on the cone minimum cannot beat the unrestricted minimum
    A = X.values.T @ X.values / 20
    assert est.kappa_lower_estimate >= np.linalg.eigvalsh(A).min() - 1e-12


def test_re_sampled_and_threads():
    X = generate_design(25, 30, seed=1)
    a = estimate_re_constant(X, k=3, gamma1=1.0, gamma2=1.0, mode="sampled", n_sampled=12, budget=2, seed=3)
    b = estimate_re_constant(X, k=3, gamma1=1.0, gamma2=1.0, mode="sampled", n_sampled=12, budget=2, seed=3,
                             threads=3)
    assert a.mode == "sampled" and a.supports_examined == 12
    assert a.kappa_lower_estimate == b.kappa_lower_estimate


def test_re_argument_errors():
    X = np.eye(4)
    with pytest.raises(ValueError):
        estimate_re_constant(X, k=2, gamma1=1.0, gamma2=1.0, budget=0)
    with pytest.raises(ValueError):
        estimate_re_constant(X, k=2, gamma1=1.0)
    with pytest.raises(ValueError):
        estimate_re_constant(np.eye(40), k=10, gamma1=1.0, gamma2=1.0, mode="exact")


def test_stirling_sweep_matches_pointwise():
    from sparsebound.theory import stirling_sweep

    sweep = stirling_sweep(40)
    assert sweep.pairs == 40 * 41 // 2 and sweep.violations == 0
    slack = min(c.rhs - c.lhs for p in range(1, 41) for k in range(1, p + 1)
                for c in [stirling_bound_check(k, p)])
    assert sweep.min_slack == pytest.approx(slack, abs=1e-9)


def test_l1_projection():
    from sparsebound.theory import _project_l1_ball

    v = np.array([3.0, -1.0, 0.5])
    w = _project_l1_ball(v, 2.0)
    assert np.abs(w).sum() == pytest.approx(2.0)
    np.testing.assert_allclose(w, [2.0, 0.0, 0.0])
    np.testing.assert_array_equal(_project_l1_ball(v, 10.0), v)
    # a radius lost in rounding against the largest entry
    w = _project_l1_ball(np.array([1.0, 0.5]), 1e-17)
    assert np.all(np.isfinite(w)) and np.abs(w).sum() <= 1e-15
