"""Population-level Pass@K objective and the greedy approximation check.

``F(A) = sum_x w(x) * (1 - prod_{s in A} (1 - p_s(x)))`` is monotone
submodular, so greedy selection by marginal gain reaches at least
``1 - 1/e`` of the best size-K bank. The functions below evaluate ``F``,
run greedy, brute-force the optimum on small matrices, and compare the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Optional

import numpy as np

TOL = 1e-12
ENUMERATION_CAP = 10**6
GREEDY_BOUND = 1 - 1 / math.e


class AlreadyInSet(ValueError):
    pass


class BadK(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PopulationMatrix:
    """Success probabilities indexed (skill, instance) plus instance weights."""

    p: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2:
            raise ValueError("p must be a 2-d (skills x instances) array")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (p.shape[1],):
            raise ValueError("one weight per instance required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, p) -> "PopulationMatrix":
        p = np.asarray(p, dtype=float)
        return cls(p, np.full(p.shape[1], 1.0 / p.shape[1]))

    @property
    def n_skills(self) -> int:
        return self.p.shape[0]

    @property
    def n_instances(self) -> int:
        return self.p.shape[1]

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.p == 0) | (self.p == 1)))


def _survival(pm: PopulationMatrix, A: Iterable[int]) -> np.ndarray:
    """Per-instance probability that every skill in A fails."""
    idx = list(A)
    if not idx:
        return np.ones(pm.n_instances)
    return np.prod(1.0 - pm.p[idx], axis=0)


def objective(pm: PopulationMatrix, A: Iterable[int], exact: bool = False) -> float | Fraction:
    """Weighted probability that at least one skill in ``A`` succeeds.

    With ``exact=True`` (0/1 matrices only) the value is the exact rational
    weighted coverage.
    """
    A = sorted(set(A))
    if exact:
        if not pm.is_binary:
            raise ValueError("exact evaluation needs a 0/1 matrix")
        covered = np.any(pm.p[A] == 1, axis=0) if A else np.zeros(pm.n_instances, bool)
        if np.all(pm.weights == pm.weights[0]):
            return Fraction(int(covered.sum()), pm.n_instances)
        return sum((Fraction(float(w)) for w, c in zip(pm.weights, covered) if c), Fraction(0))
    return float(pm.weights @ (1.0 - _survival(pm, A)))


def marginal_gain(pm: PopulationMatrix, s: int, A: Iterable[int]) -> float:
    A = list(A)
    if s in A:
        raise AlreadyInSet(f"skill {s} already in the bank")
    return float(pm.weights @ (pm.p[s] * _survival(pm, A)))


def greedy_select(pm: PopulationMatrix, K: int) -> list[int]:
    """Greedy bank of size K; gains within TOL of the best tie to the lowest index."""
    if not 0 <= K <= pm.n_skills:
        raise BadK(f"K={K} outside [0, {pm.n_skills}]")
    chosen: list[int] = []
    survival = np.ones(pm.n_instances)
    for _ in range(K):
        gains = (pm.p * survival) @ pm.weights
        gains[chosen] = -np.inf
        best = float(gains.max())
        s = int(np.flatnonzero(gains >= best - TOL)[0])
        chosen.append(s)
        survival = survival * (1.0 - pm.p[s])
    return chosen


def _subsets(n: int, K: int) -> Iterable[tuple[int, ...]]:
    for size in range(0, K + 1):
        yield from combinations(range(n), size)


def enumeration_size(n: int, K: int) -> int:
    return sum(math.comb(n, k) for k in range(0, K + 1))


def brute_force_best(pm: PopulationMatrix, K: int, cap: int = ENUMERATION_CAP) -> tuple[tuple[int, ...], float]:
    """Exhaustive maximum of F over subsets of size <= K.

    Ties resolve to the first subset in (size, lexicographic) order.
    """
    if not 0 <= K <= pm.n_skills:
        raise BadK(f"K={K} outside [0, {pm.n_skills}]")
    if enumeration_size(pm.n_skills, K) > cap:
        raise TooLarge(f"C({pm.n_skills}, <={K}) exceeds enumeration cap {cap}")
    best_set: tuple[int, ...] = ()
    best_val = 0.0
    for subset in _subsets(pm.n_skills, K):
        val = objective(pm, subset)
        if val > best_val + TOL:
            best_set, best_val = subset, val
    return best_set, best_val


@dataclass(frozen=True)
class GuaranteeReport:
    greedy_set: tuple[int, ...]
    greedy_value: float
    opt_set: tuple[int, ...]
    opt_value: float
    ratio: float
    holds: bool

    def to_json(self) -> dict:
        return {
            "greedy_set": list(self.greedy_set),
            "greedy_value": self.greedy_value,
            "opt_set": list(self.opt_set),
            "opt_value": self.opt_value,
            "ratio": self.ratio,
            "holds": self.holds,
        }


def check_guarantee(pm: PopulationMatrix, K: int, cap: int = ENUMERATION_CAP) -> GuaranteeReport:
    opt_set, opt_value = brute_force_best(pm, K, cap)
    greedy = greedy_select(pm, K)
    greedy_value = objective(pm, greedy)
    ratio = 1.0 if opt_value <= TOL else greedy_value / opt_value
    holds = greedy_value >= GREEDY_BOUND * opt_value - TOL
    return GuaranteeReport(tuple(greedy), greedy_value, opt_set, opt_value, ratio, holds)


def greedy_trajectory_values(pm: PopulationMatrix, K: int) -> list[float]:
    """F(A_0), F(A_1), ..., F(A_K) along the greedy path."""
    chosen = greedy_select(pm, K)
    return [objective(pm, chosen[:j]) for j in range(K + 1)]


def random_population(rng: np.random.Generator, n_skills: int, n_instances: int,
                      kind: Optional[str] = None) -> PopulationMatrix:
    """Random test matrix; ``kind`` is one of uniform, binary, sparse, skewed."""
    kind = kind or rng.choice(["uniform", "binary", "sparse", "skewed"])
    shape = (n_skills, n_instances)
    if kind == "uniform":
        p = rng.random(shape)
    elif kind == "binary":
        p = (rng.random(shape) < rng.uniform(0.1, 0.6)).astype(float)
    elif kind == "sparse":
        p = rng.random(shape) * (rng.random(shape) < 0.3)
    elif kind == "skewed":
        p = rng.beta(0.3, 0.3, shape)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    w = rng.dirichlet(np.ones(n_instances)) if rng.random() < 0.5 else np.full(n_instances, 1.0 / n_instances)
    w = w / w.sum()
    return PopulationMatrix(p, w)


def coverage_gadget(K: int) -> PopulationMatrix:
    """Max-coverage instance where greedy attains exactly 1 - (1 - 1/K)^K of optimum.

    Skills 0..K-1 are the greedy decoys, skills K..2K-1 the optimal columns.
    Each decoy ties the best remaining column at every round, and the
    lowest-index tie rule picks the decoy.
    """
    if K < 1:
        raise BadK("gadget needs K >= 1")
    n_elem = K * (K + 1)  # element (column c, row j), row K is decoy-free
    p = np.zeros((2 * K, n_elem))
    w = np.zeros(n_elem)
    for c in range(K):
        used = 0.0
        for j in range(K):
            e = c * (K + 1) + j
            w[e] = (1 / K) ** 2 * (1 - 1 / K) ** j
            used += w[e]
            p[j, e] = 1.0
            p[K + c, e] = 1.0
        e = c * (K + 1) + K
        w[e] = 1 / K - used
        p[K + c, e] = 1.0
    return PopulationMatrix(p, w / w.sum())


def guarantee_suite(trials: int, max_skills: int, max_instances: int, max_k: int, seed: int,
                    fixed_shape: bool = False) -> dict:
    """Run ``check_guarantee`` on random matrices; JSON-ready summary.

    With ``fixed_shape`` every trial uses exactly ``max_skills`` x
    ``max_instances`` and K = min(max_k, max_skills); otherwise all three are
    drawn per trial.
    """
    rng = np.random.default_rng(seed)
    ratios = []
    violations = []
    for trial in range(trials):
        if fixed_shape:
            n_s, n_x = max_skills, max_instances
        else:
            n_s = int(rng.integers(1, max_skills + 1))
            n_x = int(rng.integers(1, max_instances + 1))
        K = min(max_k, n_s) if fixed_shape else int(rng.integers(1, min(max_k, n_s) + 1))
        pm = random_population(rng, n_s, n_x)
        rep = check_guarantee(pm, K)
        ratios.append(rep.ratio)
        if not rep.holds:
            violations.append({"trial": trial, "K": K, **rep.to_json()})
    return {
        "trials": trials,
        "seed": seed,
        "bound": GREEDY_BOUND,
        "min_ratio": min(ratios) if ratios else None,
        "mean_ratio": float(np.mean(ratios)) if ratios else None,
        "ratios": ratios,
        "violations": violations,
    }

