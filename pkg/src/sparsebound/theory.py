"""Closed-form quantities behind the Lasso / Group Lasso error bounds.

Regularisation levels, cone membership for the restricted-eigenvalue cones
``Lambda(S, g1, g2)`` and ``Omega(J, e1, e2)``, the order-statistic weights
``sqrt(log(2r/j))`` with their Stirling-type sum bound, a multi-start
estimator of the restricted-eigenvalue constant, and the right-hand sides of
the high-probability and in-expectation L2 bounds.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import DesignMatrix, GroupStructure
from .seeding import derive_seed

__all__ = [
    "TheoryParams",
    "LassoCone",
    "GroupCone",
    "ConeCheck",
    "lambda_lasso",
    "lambda_group",
    "check_delta",
    "order_stat_weights",
    "stirling_bound_check",
    "stirling_sweep",
    "top_k_support",
    "top_s_groups",
    "cone_membership",
    "lasso_error_cone",
    "group_error_cone",
    "REEstimate",
    "rayleigh_quotient",
    "estimate_re_constant",
    "bound_rhs",
    "gamma_ratio",
]

log = logging.getLogger(__name__)

CONE_RTOL = 1e-12
MAX_EXACT_SUPPORTS = 100_000


@dataclass(frozen=True)
class TheoryParams:
    """Constants of the theoretical regularisation and error bounds.

    ``lambda_constant`` multiplies the log term of both regularisation levels
    (24 by default, 34 is the other value in use);
    ``group_delta_numerator`` picks ``log(2/delta)`` (2) or ``log(1/delta)`` (1)
    in the group level. ``bound_constant`` stands in for the unspecified
    constant of the ``<~`` bounds.
    """

    alpha: float = 2.0
    delta: float = 0.05
    sigma: float = 1.0
    gamma: float = 1.0
    bound_constant: float = 1.0
    lambda_constant: float = 24.0
    group_size_constant: float = 4.0
    group_delta_numerator: float = 2.0

    def __post_init__(self):
        if not self.alpha >= 2:
            raise ValueError(f"alpha must be >= 2, got {self.alpha}")
        if not 0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.gamma >= 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if not self.bound_constant > 0:
            raise ValueError(f"bound_constant must be > 0, got {self.bound_constant}")
        if not (self.lambda_constant > 0 and self.group_size_constant >= 0):
            raise ValueError("lambda constants must be positive")
        if self.group_delta_numerator not in (1.0, 2.0):
            raise ValueError("group_delta_numerator must be 1 or 2")


def check_delta(delta: float, n: int) -> bool:
    """True (and a logged warning) when ``delta >= 1/n``.

    The cone conditions are stated for ``delta < 1/n``; the error bounds only
    need ``delta < 1/2``, which is all that is enforced.
    """
    if delta >= 1.0 / n:
        log.warning("delta=%g >= 1/n=%g: outside the range stated for the cone conditions", delta, 1.0 / n)
        return True
    return False


def lambda_lasso(params: TheoryParams, n: int, p: int, k_star: int) -> float:
    """``24 alpha sigma sqrt(log(2pe/k*) log(1/delta) / n)``."""
    if not 1 <= k_star <= p:
        raise ValueError(f"need 1 <= k_star <= p, got k_star={k_star}, p={p}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    c = params.lambda_constant * params.alpha * params.sigma
    return c * math.sqrt(math.log(2 * p * math.e / k_star) * math.log(1 / params.delta) / n)


def lambda_group(params: TheoryParams, n: int, G: int, s_star: int, m_star: int) -> float:
    """Two-term group level.

    ``24 alpha sigma sqrt(log(2Ge/s*) log(2/delta) / n) + 4 alpha sigma sqrt(gamma m* / (s* n))``
    """
    if not 1 <= s_star <= G:
        raise ValueError(f"need 1 <= s_star <= G, got s_star={s_star}, G={G}")
    if m_star < s_star:
        raise ValueError(f"m_star={m_star} must be at least s_star={s_star}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    a_s = params.alpha * params.sigma
    log_term = math.log(2 * G * math.e / s_star) * math.log(params.group_delta_numerator / params.delta)
    size_term = params.gamma * m_star / (s_star * n)
    return params.lambda_constant * a_s * math.sqrt(log_term / n) + params.group_size_constant * a_s * math.sqrt(
        size_term
    )


def order_stat_weights(r: int) -> np.ndarray:
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    j = np.arange(1, r + 1)
    return np.sqrt(np.log(2.0 * r / j))


@dataclass(frozen=True)
class StirlingCheck:
    lhs: float
    rhs: float
    holds: bool


def stirling_bound_check(k: int, p: int) -> StirlingCheck:
    """Compare ``sum_{j<=k} log(2p/j)`` against ``k log(2pe/k)``."""
    if not 1 <= k <= p:
        raise ValueError(f"need 1 <= k <= p, got k={k}, p={p}")
    j = np.arange(1, k + 1)
    lhs = float(np.sum(np.log(2.0 * p / j)))
    rhs = k * math.log(2 * p * math.e / k)
    return StirlingCheck(lhs, rhs, lhs <= rhs)


@dataclass(frozen=True)
class StirlingSweep:
    p_max: int
    pairs: int
    violations: int
    min_slack: float  # smallest rhs - lhs over the sweep


def stirling_sweep(p_max: int) -> StirlingSweep:
    """:func:`stirling_bound_check` for every ``1 <= k <= p <= p_max`` at once."""
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    k = np.arange(1, p_max + 1, dtype=float)[:, None]
    p = np.arange(1, p_max + 1, dtype=float)[None, :]
    log_fact = np.cumsum(np.log(k[:, 0]))[:, None]
    lhs = k * np.log(2.0 * p) - log_fact
    rhs = k * np.log(2.0 * p * math.e / k)
    valid = k <= p
    slack = np.where(valid, rhs - lhs, np.inf)
    return StirlingSweep(p_max, int(valid.sum()), int(np.sum(valid & (lhs > rhs))), float(slack.min()))


def top_k_support(h: np.ndarray, k: int) -> tuple[int, ...]:
    """Indices of the ``k`` largest ``|h_j|``, ties to the lowest index, ascending."""
    h = np.asarray(h, dtype=float)
    if not 1 <= k <= h.size:
        raise ValueError(f"need 1 <= k <= {h.size}, got {k}")
    order = np.lexsort((np.arange(h.size), -np.abs(h)))
    return tuple(sorted(int(i) for i in order[:k]))


def group_norms(h: np.ndarray, groups: GroupStructure) -> np.ndarray:
    return np.array([np.linalg.norm(h[idx]) for idx in groups.index_arrays()])


def top_s_groups(h: np.ndarray, groups: GroupStructure, s: int) -> tuple[int, ...]:
    """Indices of the ``s`` groups with largest ``||h_g||_2``, ties to the lowest index."""
    if not 1 <= s <= groups.G:
        raise ValueError(f"need 1 <= s <= {groups.G}, got {s}")
    norms = group_norms(np.asarray(h, dtype=float), groups)
    order = np.lexsort((np.arange(norms.size), -norms))
    return tuple(sorted(int(g) for g in order[:s]))


@dataclass(frozen=True)
class LassoCone:
    """``||z_{S^c}||_1 <= gamma1 ||z_S||_1 + gamma2 ||z_S||_2``."""

    support: tuple[int, ...]
    gamma1: float
    gamma2: float

    def __post_init__(self):
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError("cone parameters must be positive")
        object.__setattr__(self, "support", tuple(sorted(int(i) for i in self.support)))


@dataclass(frozen=True)
class GroupCone:
    """``sum_{g not in J} ||z_g||_2 <= eps1 sum_{g in J} ||z_g||_2 + eps2 ||z_T(J)||_2``.

    Indices outside every group are treated as singleton groups, never in ``J``.
    """

    groups_in: tuple[int, ...]
    eps1: float
    eps2: float
    groups: GroupStructure = field(repr=False)

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("cone parameters must be positive")
        inside = tuple(sorted(int(g) for g in self.groups_in))
        if any(not 0 <= g < self.groups.G for g in inside):
            raise ValueError("cone group index out of range")
        object.__setattr__(self, "groups_in", inside)


ConeSpec = LassoCone | GroupCone


@dataclass(frozen=True)
class ConeCheck:
    member: bool
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _decide(lhs: float, rhs: float) -> ConeCheck:
    return ConeCheck(rhs - lhs >= -CONE_RTOL * max(1.0, rhs), float(lhs), float(rhs))


def _cone_sides(h: np.ndarray, spec: ConeSpec) -> tuple[float, float]:
    if isinstance(spec, LassoCone):
        mask = np.zeros(h.size, dtype=bool)
        mask[list(spec.support)] = True
        hs = h[mask]
        lhs = np.abs(h[~mask]).sum()
        rhs = spec.gamma1 * np.abs(hs).sum() + spec.gamma2 * np.linalg.norm(hs)
        return float(lhs), float(rhs)
    full = spec.groups.completed()
    norms = group_norms(h, full)
    inside = np.zeros(full.G, dtype=bool)
    inside[list(spec.groups_in)] = True
    # ||z_T||_2 is the 2-norm of the inside group norms
    lhs = norms[~inside].sum()
    rhs = spec.eps1 * norms[inside].sum() + spec.eps2 * math.sqrt(float(np.sum(norms[inside] ** 2)))
    return float(lhs), float(rhs)


def cone_membership(h: np.ndarray, spec: ConeSpec) -> ConeCheck:
    h = np.asarray(h, dtype=float)
    p = spec.groups.p if isinstance(spec, GroupCone) else None
    if p is not None and h.size != p:
        raise ValueError(f"h has length {h.size}, group structure is over {p}")
    return _decide(*_cone_sides(h, spec))


def lasso_error_cone(h: np.ndarray, k_star: int, alpha: float) -> LassoCone:
    """Cone ``Lambda(S0, alpha/(alpha-1), sqrt(k*)/(alpha-1))`` with ``S0`` the top-``k*`` of ``h``."""
    return LassoCone(top_k_support(h, k_star), alpha / (alpha - 1), math.sqrt(k_star) / (alpha - 1))


def group_error_cone(h: np.ndarray, groups: GroupStructure, s_star: int, alpha: float) -> GroupCone:
    return GroupCone(
        top_s_groups(h, groups, s_star), alpha / (alpha - 1), math.sqrt(s_star) / (alpha - 1), groups
    )


# -- restricted eigenvalue estimation ----------------------------------------


def rayleigh_quotient(X: np.ndarray, z: np.ndarray) -> float:
    """``z^T X^T X z / (n ||z||^2)``."""
    Xz = X @ z
    return float(Xz @ Xz) / (X.shape[0] * float(z @ z))


def _project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{w : ||w||_1 <= radius}`` (sort-based)."""
    if radius <= 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    hits = np.nonzero(u * np.arange(1, u.size + 1) > css - radius)[0]
    rho = hits[-1] if hits.size else 0  # radius below rounding of u[0]: only the largest survives
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


class _ConeGeometry:
    """Block split of coordinates into an inside set and outside blocks.

    For the Lasso cone the outside blocks are single coordinates; for the
    group cone they are the groups not in ``J``. Projection keeps the inside
    part fixed and projects the outside block norms onto the L1 ball whose
    radius is the current right-hand side.
    """

    def __init__(self, spec: ConeSpec, p: int):
        self.spec = spec
        if isinstance(spec, LassoCone):
            inside = np.zeros(p, dtype=bool)
            inside[list(spec.support)] = True
            self.inside_idx = np.flatnonzero(inside)
            self.out_blocks = [np.array([j]) for j in np.flatnonzero(~inside)]
            self.inside_blocks = [np.array([j]) for j in self.inside_idx]
            self.c1, self.c2 = spec.gamma1, spec.gamma2
        else:
            full = spec.groups.completed()
            arrays = full.index_arrays()
            inside_set = set(spec.groups_in)
            self.inside_blocks = [arrays[g] for g in range(full.G) if g in inside_set]
            self.out_blocks = [arrays[g] for g in range(full.G) if g not in inside_set]
            self.inside_idx = np.concatenate(self.inside_blocks)
            self.c1, self.c2 = spec.eps1, spec.eps2

    def rhs(self, z: np.ndarray) -> float:
        s = sum(np.linalg.norm(z[b]) for b in self.inside_blocks)
        return self.c1 * s + self.c2 * float(np.linalg.norm(z[self.inside_idx]))

    def project(self, z: np.ndarray) -> np.ndarray:
        if not self.out_blocks:
            return z
        norms = np.array([np.linalg.norm(z[b]) for b in self.out_blocks])
        target = _project_l1_ball(norms, self.rhs(z))
        out = z.copy()
        for b, nrm, t in zip(self.out_blocks, norms, target):
            out[b] = z[b] * (t / nrm) if nrm > 0 else 0.0
        return out


@dataclass(frozen=True, eq=False)
class REEstimate:
    """Smallest quotient found over verified in-cone witnesses.

    ``kappa_lower_estimate`` is named for the role it plays in the bounds; as
    a minimum over finitely many candidates it is an upper estimate of the
    true infimum.
    """

    kappa_lower_estimate: float
    witness: np.ndarray
    cone: ConeSpec
    supports_examined: int
    mode: str


def _minimise_on_cone(A: np.ndarray, geom: _ConeGeometry, starts: list[np.ndarray], iters: int):
    """Projected gradient on the Rayleigh quotient, restricted to the cone, from each start."""
    mu_max = float(np.linalg.eigvalsh(A)[-1]) if A.shape[0] <= 64 else None
    if mu_max is None:
        from .solver import power_iteration

        mu_max = power_iteration(A)[0]
    base = 1.0 / max(mu_max, 1e-300)
    best_q, best_z = math.inf, None
    for z in starts:
        z = geom.project(z)
        nz = np.linalg.norm(z)
        if nz == 0:
            continue
        z = z / nz
        q = float(z @ A @ z)
        step = base
        for _ in range(iters):
            g = A @ z - q * z  # half the sphere gradient
            cand = geom.project(z - step * g)
            nc = np.linalg.norm(cand)
            q_new = float(cand @ A @ cand) / (nc * nc) if nc > 0 else math.inf
            if q_new < q:
                gain = q - q_new
                z, q = cand / nc, q_new
                step = min(2.0 * step, 8.0 * base)
                if gain <= 1e-15 * max(abs(q), 1e-300):
                    break
            else:
                step *= 0.5
                if step < 1e-10 * base:
                    break
        if q < best_q:
            best_q, best_z = q, z
    return best_q, best_z


def _cone_starts(A: np.ndarray, p: int, rng: np.random.Generator, budget: int, inside_idx: np.ndarray):
    eigvals, eigvecs = np.linalg.eigh(A)
    starts = [eigvecs[:, 0].copy(), -eigvecs[:, 0].copy()]
    # bias random starts towards the inside set so they survive projection
    for _ in range(budget):
        z = rng.standard_normal(p)
        z[inside_idx] *= 3.0
        starts.append(z)
    return starts


def _supports_for(p: int, k: int) -> int:
    return sum(math.comb(p, j) for j in range(1, k + 1))


def estimate_re_constant(
    X: DesignMatrix | np.ndarray,
    *,
    k: int | None = None,
    gamma1: float | None = None,
    gamma2: float | None = None,
    groups: GroupStructure | None = None,
    s: int | None = None,
    eps1: float | None = None,
    eps2: float | None = None,
    budget: int = 8,
    seed: int = 0,
    mode: str = "auto",
    n_sampled: int = 200,
    iters: int = 2000,
    threads: int = 1,
) -> REEstimate:
    """Multi-start search for the restricted-eigenvalue constant.

    Lasso form: pass ``k, gamma1, gamma2``; group form: ``groups, s, eps1, eps2``.
    ``exact`` enumerates every support (or group set) of size at most ``k``
    (``s``); ``sampled`` draws ``n_sampled`` of maximal size; ``auto`` picks
    exact when there are at most 100 000 candidates. Each candidate cone gets
    ``budget`` random starts plus the two bottom eigenvector starts. The
    returned witness is re-checked for cone membership and its quotient
    recomputed directly from ``X``.
    """
    values = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    n, p = values.shape
    if budget < 1:
        raise ValueError("budget must be >= 1")
    grouped = groups is not None
    if grouped:
        if s is None or eps1 is None or eps2 is None:
            raise ValueError("group form needs s, eps1 and eps2")
        universe, size = groups.G, s
    else:
        if k is None or gamma1 is None or gamma2 is None:
            raise ValueError("lasso form needs k, gamma1 and gamma2")
        universe, size = p, k
    if not 1 <= size <= universe:
        raise ValueError(f"need 1 <= {size} <= {universe}")
    count = _supports_for(universe, size)
    if mode == "auto":
        mode = "exact" if count <= MAX_EXACT_SUPPORTS else "sampled"
    if mode == "exact":
        if count > MAX_EXACT_SUPPORTS:
            raise ValueError(f"exact mode would enumerate {count} candidates (limit {MAX_EXACT_SUPPORTS})")
        candidates = [c for j in range(1, size + 1) for c in itertools.combinations(range(universe), j)]
    elif mode == "sampled":
        rng = np.random.default_rng(derive_seed(seed, "supports"))
        candidates = [tuple(sorted(rng.choice(universe, size=size, replace=False).tolist())) for _ in range(n_sampled)]
    else:
        raise ValueError(f"unknown mode {mode!r}")

    A = values.T @ values / n

    def make_spec(c):
        if grouped:
            return GroupCone(c, eps1, eps2, groups)
        return LassoCone(c, gamma1, gamma2)

    def search(ci: int):
        spec = make_spec(candidates[ci])
        geom = _ConeGeometry(spec, p)
        rng = np.random.default_rng(derive_seed(seed, "starts", ci))
        q, z = _minimise_on_cone(A, geom, _cone_starts(A, p, rng, budget, geom.inside_idx), iters)
        return q, z, spec

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(search, range(len(candidates))))
    else:
        results = [search(ci) for ci in range(len(candidates))]

    best = None
    for q, z, spec in results:
        if z is None or not cone_membership(z, spec).member:
            continue
        if best is None or q < best[0]:
            best = (q, z, spec)
    if best is None:
        raise RuntimeError("no in-cone witness found")
    q, z, spec = best
    return REEstimate(rayleigh_quotient(values, z), z, spec, len(candidates), mode)


# -- bound right-hand sides --------------------------------------------------


def bound_rhs(
    params: TheoryParams,
    kappa: float,
    *,
    n: int,
    p: int | None = None,
    k_star: int | None = None,
    G: int | None = None,
    s_star: int | None = None,
    m_star: int | None = None,
    expectation: bool = False,
) -> float:
    """Right-hand side of the L2 error bound.

    Lasso (``p, k_star``): ``C (alpha sigma / kappa) sqrt(k* log(p/k*) log(1/delta) / n)``.
    Group (``G, s_star, m_star``):
    ``C (alpha sigma / kappa) sqrt((s* log(G/s*) log(1/delta) + gamma m*) / n)``.
    ``expectation=True`` drops the ``log(1/delta)`` factor.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    ld = 1.0 if expectation else math.log(1 / params.delta)
    if p is not None and k_star is not None:
        inner = k_star * math.log(p / k_star) * ld
    elif G is not None and s_star is not None and m_star is not None:
        inner = s_star * math.log(G / s_star) * ld + params.gamma * m_star
    else:
        raise ValueError("pass either (p, k_star) or (G, s_star, m_star)")
    return params.bound_constant * params.alpha * params.sigma / kappa * math.sqrt(inner / n)


@dataclass(frozen=True)
class GammaRatio:
    m0: int
    gamma_attained: float


def gamma_ratio(groups: GroupStructure | Sequence[int], s_star: int, m_star: int) -> GammaRatio:
    """Total size ``m0`` of the ``s*`` largest groups and the ratio ``m0 / m*``."""
    if m_star <= 0:
        raise ValueError("m_star must be positive")
    sizes = groups.sizes if isinstance(groups, GroupStructure) else np.asarray(groups, dtype=int)
    if not 1 <= s_star <= sizes.size:
        raise ValueError(f"need 1 <= s_star <= G={sizes.size}")
    m0 = int(np.sort(sizes)[::-1][:s_star].sum())
    return GammaRatio(m0, m0 / m_star)
