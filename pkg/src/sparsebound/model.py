"""Synthetic sparse regression problems ``y = X beta* + eps``.

Designs are i.i.d. standard normal and then shrunk so that the column-norm
bound ``||X_j||_2 <= sqrt(n)`` or the group spectral bound
``mu_max(X_g^T X_g) <= n`` holds exactly. Ground truths are ``k*``-sparse with
random signs, optionally confined to ``s*`` groups. Noise is one of three
sub-Gaussian families with variance proxy ``sigma**2``.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .seeding import derive_seed

__all__ = [
    "Normalization",
    "GroupStructure",
    "DesignMatrix",
    "GroupCover",
    "GroundTruth",
    "NoiseModel",
    "RegressionProblem",
    "AssumptionReport",
    "generate_design",
    "check_assumptions",
    "generate_ground_truth",
    "group_cover",
    "synthesize_response",
    "make_problem",
    "write_problem",
    "read_problem",
]

ASSUMPTION_RTOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class Normalization(str, enum.Enum):
    NONE = "none"
    UNIT_COLUMNS = "unit-columns"
    UNIT_GROUP_SPECTRAL = "unit-group-spectral"


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Disjoint index groups over ``{0, ..., p-1}``.

    The groups need not cover every index; :meth:`completed` appends the
    uncovered indices as singleton groups.
    """

    groups: tuple[tuple[int, ...], ...]
    p: int

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if self.p < 1:
            raise ValueError(f"p must be positive, got {self.p}")
        seen: set[int] = set()
        for gi, g in enumerate(groups):
            if not g:
                raise ValueError(f"group {gi} is empty")
            for i in g:
                if not 0 <= i < self.p:
                    raise ValueError(f"group {gi} has index {i} outside [0, {self.p})")
                if i in seen:
                    raise ValueError(f"index {i} appears in more than one group")
                seen.add(i)

    @classmethod
    def equal(cls, p: int, size: int) -> GroupStructure:
        """Contiguous groups of ``size`` covering ``0..p-1``; the last may be short."""
        if size < 1:
            raise ValueError("group size must be positive")
        return cls(tuple(tuple(range(s, min(s + size, p))) for s in range(0, p, size)), p)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], p: int | None = None) -> GroupStructure:
        bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        p = int(bounds[-1]) if p is None else p
        return cls(tuple(tuple(range(a, b)) for a, b in zip(bounds[:-1], bounds[1:])), p)

    @classmethod
    def singletons(cls, p: int) -> GroupStructure:
        return cls.equal(p, 1)

    @property
    def G(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=int)

    @property
    def g_star(self) -> int:
        return int(self.sizes.max())

    @property
    def uncovered(self) -> tuple[int, ...]:
        covered = {i for g in self.groups for i in g}
        return tuple(i for i in range(self.p) if i not in covered)

    def completed(self) -> GroupStructure:
        rest = self.uncovered
        if not rest:
            return self
        return GroupStructure(self.groups + tuple((i,) for i in rest), self.p)

    def index_arrays(self) -> list[np.ndarray]:
        return [np.asarray(g, dtype=int) for g in self.groups]

    def permuted(self, perm: Sequence[int]) -> GroupStructure:
        """Groups after reordering columns so that new column ``j`` is old ``perm[j]``."""
        inv = np.empty(len(perm), dtype=int)
        inv[np.asarray(perm)] = np.arange(len(perm))
        return GroupStructure(tuple(tuple(sorted(int(inv[i]) for i in g)) for g in self.groups), self.p)

    def __eq__(self, other):
        return isinstance(other, GroupStructure) and self.p == other.p and self.groups == other.groups

    def __hash__(self):
        return hash((self.p, self.groups))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    values: np.ndarray
    normalization: Normalization = Normalization.NONE

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(f"design must be a non-empty 2-d array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("design has non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GroupCover:
    groups: tuple[int, ...]  # indices into GroupStructure.groups, ascending
    m_star: int

    @property
    def s_star(self) -> int:
        return len(self.groups)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    beta_star: np.ndarray
    group_cover: GroupCover | None = None
    support: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        beta = _frozen(self.beta_star)
        object.__setattr__(self, "beta_star", beta)
        object.__setattr__(self, "support", tuple(int(i) for i in np.flatnonzero(beta)))

    @property
    def p(self) -> int:
        return self.beta_star.shape[0]

    @property
    def k_star(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class NoiseModel:
    family: str = "gaussian"
    sigma: float = 1.0

    FAMILIES = ("gaussian", "rademacher", "uniform")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {self.FAMILIES}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.sigma * standard_draws(self.family, rng, size)


def standard_draws(family: str, rng: np.random.Generator, size) -> np.ndarray:
    """Unit variance-proxy draws from ``family``."""
    if family == "gaussian":
        return rng.standard_normal(size)
    if family == "rademacher":
        return 2.0 * rng.integers(0, 2, size=size) - 1.0
    if family == "uniform":
        r = math.sqrt(3.0)
        return rng.uniform(-r, r, size=size)
    raise ValueError(f"unknown noise family {family!r}")


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    X: DesignMatrix
    y: np.ndarray
    truth: GroundTruth
    noise: NoiseModel
    seed: int
    groups: GroupStructure | None = None

    def __post_init__(self):
        y = _frozen(self.y)
        if y.shape != (self.X.n,):
            raise ValueError(f"y has shape {y.shape}, expected ({self.X.n},)")
        if self.truth.p != self.X.p:
            raise ValueError(f"beta* has length {self.truth.p}, design has {self.X.p} columns")
        if self.groups is not None and self.groups.p != self.X.p:
            raise ValueError("group structure does not match the design width")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.n

    @property
    def p(self) -> int:
        return self.X.p


def _group_mu_max(Xg: np.ndarray) -> float:
    # eigvalsh on the smaller Gram matrix; both share the nonzero spectrum
    gram = Xg.T @ Xg if Xg.shape[1] <= Xg.shape[0] else Xg @ Xg.T
    return float(np.linalg.eigvalsh(gram)[-1])


def generate_design(
    n: int,
    p: int,
    seed: int,
    normalization: Normalization | str = Normalization.UNIT_COLUMNS,
    groups: GroupStructure | None = None,
) -> DesignMatrix:
    """Draw an ``n x p`` standard normal design and shrink it onto the normalisation constraint.

    Each column (or group block) is divided by ``max(1, ratio)`` where ratio is
    ``||X_j||_2 / sqrt(n)`` (or ``sqrt(mu_max(X_g^T X_g) / n)``), so the bound
    holds exactly and already-compliant blocks are left untouched.
    """
    if n < 1 or p < 1:
        raise ValueError(f"n and p must be positive, got n={n}, p={p}")
    normalization = Normalization(normalization)
    X = np.random.default_rng(seed).standard_normal((n, p))
    if normalization is Normalization.UNIT_COLUMNS:
        ratio = np.linalg.norm(X, axis=0) / math.sqrt(n)
        X /= np.maximum(1.0, ratio)
    elif normalization is Normalization.UNIT_GROUP_SPECTRAL:
        if groups is None:
            raise ValueError("unit-group-spectral normalization needs a GroupStructure")
        if groups.p != p:
            raise ValueError(f"group structure is over {groups.p} indices, design has {p}")
        for idx in groups.completed().index_arrays():
            X[:, idx] /= max(1.0, math.sqrt(_group_mu_max(X[:, idx]) / n))
    return DesignMatrix(X, normalization)


@dataclass(frozen=True)
class AssumptionReport:
    column_ok: bool
    group_ok: bool
    worst_column_norm: float
    worst_group_eig: float | None


def check_assumptions(X: DesignMatrix | np.ndarray, groups: GroupStructure | None = None) -> AssumptionReport:
    values = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    n = values.shape[0]
    worst_col = float(np.linalg.norm(values, axis=0).max())
    column_ok = worst_col <= math.sqrt(n) * (1 + ASSUMPTION_RTOL)
    if groups is None:
        return AssumptionReport(column_ok, True, worst_col, None)
    worst_eig = max(_group_mu_max(values[:, idx]) for idx in groups.index_arrays())
    return AssumptionReport(column_ok, worst_eig <= n * (1 + ASSUMPTION_RTOL), worst_col, worst_eig)


def group_cover(support: Iterable[int], groups: GroupStructure) -> GroupCover:
    """Smallest set of groups whose union contains ``support``.

    Groups are disjoint, so the minimum cover is exactly the set of groups that
    contain at least one support index.
    """
    owner = {i: gi for gi, g in enumerate(groups.groups) for i in g}
    chosen = set()
    for i in support:
        if i not in owner:
            raise ValueError(f"support index {i} is not in any group")
        chosen.add(owner[i])
    cover = tuple(sorted(chosen))
    return GroupCover(cover, int(sum(len(groups.groups[g]) for g in cover)))


def generate_ground_truth(
    p: int,
    k_star: int,
    amplitude: float = 1.0,
    seed: int = 0,
    groups: GroupStructure | None = None,
    s_star: int | None = None,
) -> GroundTruth:
    """A ``k_star``-sparse vector with entries ``+-amplitude`` at random positions.

    With ``groups`` and ``s_star``, ``s_star`` groups are drawn first; each gets
    one nonzero and the remaining ``k_star - s_star`` nonzeros are spread over
    the rest of their pooled indices, so every drawn group is needed in the cover.
    """
    if not 1 <= k_star <= p:
        raise ValueError(f"need 1 <= k_star <= p, got k_star={k_star}, p={p}")
    rng = np.random.default_rng(seed)
    if groups is None:
        if s_star is not None:
            raise ValueError("s_star given without a group structure")
        positions = rng.choice(p, size=k_star, replace=False)
    else:
        if groups.p != p:
            raise ValueError(f"group structure is over {groups.p} indices, expected {p}")
        if s_star is None or not 1 <= s_star <= groups.G:
            raise ValueError(f"need 1 <= s_star <= G={groups.G}, got {s_star}")
        chosen = np.sort(rng.choice(groups.G, size=s_star, replace=False))
        members = [np.asarray(groups.groups[g]) for g in chosen]
        pool_size = sum(len(m) for m in members)
        if not s_star <= k_star <= pool_size:
            raise ValueError(
                f"k_star={k_star} cannot be placed in {s_star} groups holding {pool_size} indices"
            )
        firsts = np.array([m[rng.integers(len(m))] for m in members], dtype=int)
        rest = np.setdiff1d(np.concatenate(members), firsts)
        extra = rng.choice(rest, size=k_star - s_star, replace=False)
        positions = np.concatenate([firsts, extra]).astype(int)
    beta = np.zeros(p)
    beta[positions] = amplitude * rng.choice([-1.0, 1.0], size=k_star)
    cover = None if groups is None else group_cover(np.flatnonzero(beta), groups)
    return GroundTruth(beta, cover)


def synthesize_response(
    X: DesignMatrix,
    truth: GroundTruth,
    noise: NoiseModel,
    seed: int,
    groups: GroupStructure | None = None,
) -> RegressionProblem:
    if truth.p != X.p:
        raise ValueError(f"beta* has length {truth.p}, design has {X.p} columns")
    eps = noise.sample(np.random.default_rng(seed), X.n)
    y = X.values @ truth.beta_star + eps
    return RegressionProblem(X, y, truth, noise, int(seed), groups)


def make_problem(
    n: int,
    p: int,
    k_star: int,
    seed: int,
    noise: NoiseModel = NoiseModel(),
    amplitude: float = 1.0,
    groups: GroupStructure | None = None,
    s_star: int | None = None,
    normalization: Normalization | str | None = None,
) -> RegressionProblem:
    """Generate design, truth and response from one seed.

    Sub-seeds are ``derive_seed(seed, "design" | "truth" | "noise")``. Grouped
    problems default to group-spectral normalization, others to unit columns.
    """
    if normalization is None:
        normalization = Normalization.UNIT_COLUMNS if groups is None else Normalization.UNIT_GROUP_SPECTRAL
    X = generate_design(n, p, derive_seed(seed, "design"), normalization, groups)
    truth = generate_ground_truth(p, k_star, amplitude, derive_seed(seed, "truth"), groups, s_star)
    prob = synthesize_response(X, truth, noise, derive_seed(seed, "noise"), groups)
    return RegressionProblem(prob.X, prob.y, truth, noise, int(seed), groups)


# -- text serialization ------------------------------------------------------

PROBLEM_MAGIC = "# sparsebound-problem v1"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_problem(problem: RegressionProblem, dest: str | Path | TextIO) -> None:
    """Write ``problem`` in the block text format documented in the README."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as fh:
            write_problem(problem, fh)
        return
    out = dest
    out.write(PROBLEM_MAGIC + "\n")
    out.write(f"n {problem.n}\np {problem.p}\n")
    out.write(f"sigma {_fmt(problem.noise.sigma)}\nfamily {problem.noise.family}\nseed {problem.seed}\n")
    out.write("X\n")
    for row in problem.X.values:
        out.write(" ".join(_fmt(v) for v in row) + "\n")
    out.write("y\n" + " ".join(_fmt(v) for v in problem.y) + "\n")
    out.write("beta_star\n" + " ".join(_fmt(v) for v in problem.truth.beta_star) + "\n")
    groups = problem.groups.groups if problem.groups is not None else ()
    out.write(f"groups {len(groups)}\n")
    for g in groups:
        out.write(" ".join(str(i) for i in g) + "\n")


def read_problem(src: str | Path | TextIO) -> RegressionProblem:
    if isinstance(src, (str, Path)):
        with open(src, encoding="utf-8") as fh:
            return read_problem(fh)
    lines = [ln.strip() for ln in src.read().splitlines()]
    lines = [ln for ln in lines if ln and not (ln.startswith("#") and ln != PROBLEM_MAGIC)]
    if not lines or lines[0] != PROBLEM_MAGIC:
        raise ValueError("not a sparsebound problem file (missing header line)")
    it = iter(lines[1:])

    def keyed(name: str) -> str:
        line = next(it, None)
        if line is None:
            raise ValueError(f"unexpected end of file, expected {name!r}")
        key, _, value = line.partition(" ")
        if key != name:
            raise ValueError(f"expected {name!r}, found {line!r}")
        return value

    def vector(name: str, length: int) -> np.ndarray:
        if keyed(name) != "":
            raise ValueError(f"section {name!r} takes no inline value")
        vals = np.array(next(it, "").split(), dtype=float)
        if vals.shape != (length,):
            raise ValueError(f"{name} has {vals.size} values, expected {length}")
        return vals

    n, p = int(keyed("n")), int(keyed("p"))
    sigma, family, seed = float(keyed("sigma")), keyed("family"), int(keyed("seed"))
    if keyed("X") != "":
        raise ValueError("section 'X' takes no inline value")
    X = np.array([next(it, "").split() for _ in range(n)], dtype=float)
    if X.shape != (n, p):
        raise ValueError(f"X block has shape {X.shape}, expected ({n}, {p})")
    y = vector("y", n)
    beta = vector("beta_star", p)
    G = int(keyed("groups"))
    groups = None
    if G:
        groups = GroupStructure(tuple(tuple(int(i) for i in next(it, "").split()) for _ in range(G)), p)
    cover = None
    if groups is not None and not set(np.flatnonzero(beta).tolist()) & set(groups.uncovered):
        cover = group_cover(np.flatnonzero(beta), groups)
    return RegressionProblem(
        DesignMatrix(X),
        y,
        GroundTruth(beta, cover),
        NoiseModel(family, sigma),
        seed,
        groups,
    )


def problem_to_text(problem: RegressionProblem) -> str:
    buf = io.StringIO()
    write_problem(problem, buf)
    return buf.getvalue()
