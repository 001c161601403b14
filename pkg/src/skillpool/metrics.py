"""Success rates, Pass@k curves and selected accuracy.

Probabilities are exact ``Fraction`` values whenever the candidate pool has at
most ``EXACT_MAX_K`` entries, floats beyond that.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Hashable, Iterable, Mapping, Optional, Sequence

from .core import OutcomeMatrix, ResidualSet

EXACT_MAX_K = 16

Number = Fraction | float


class EmptyResidual(ValueError):
    pass


class BadK(ValueError):
    pass


class MissingSelection(ValueError):
    pass


def empirical_success_rate(matrix: OutcomeMatrix, skill_id: str, residual: ResidualSet | Iterable[str]) -> Fraction:
    """Mean over the residual of per-instance success ratios (unattempted counts as 0)."""
    ids = residual.instance_ids if isinstance(residual, ResidualSet) else frozenset(residual)
    if not ids:
        raise EmptyResidual("success rate is undefined on an empty residual")
    total = Fraction(0)
    for iid in ids:
        wins, n = matrix.success_count(skill_id, iid)
        if n:
            total += Fraction(wins, n)
    return total / len(ids)


def pass_at_k(successes: Sequence[bool], k: int) -> Number:
    """Probability that a uniformly random size-k subset holds at least one success."""
    n = len(successes)
    if not 1 <= k <= n:
        raise BadK(f"k={k} outside [1, {n}]")
    failures = n - sum(bool(s) for s in successes)
    if n <= EXACT_MAX_K:
        return 1 - Fraction(comb(failures, k), comb(n, k))
    # product form avoids huge binomials
    prob_all_fail = 1.0
    for i in range(k):
        prob_all_fail *= max(failures - i, 0) / (n - i)
    return 1.0 - prob_all_fail


@dataclass(frozen=True)
class PassKCurve:
    values: Mapping[int, Number]

    def __post_init__(self) -> None:
        prev = None
        for k in sorted(self.values):
            v = self.values[k]
            if not 0 <= v <= 1:
                raise ValueError(f"pass@{k}={v} outside [0, 1]")
            if prev is not None and v < prev - 1e-12:
                raise ValueError("pass@k must be non-decreasing in k")
            prev = v

    def __getitem__(self, k: int) -> Number:
        return self.values[k]

    def to_json(self) -> dict:
        return {str(k): float(v) for k, v in sorted(self.values.items())}


def _mean(values: Sequence[Number]) -> Number:
    if all(isinstance(v, Fraction) for v in values):
        return sum(values, Fraction(0)) / len(values)
    return sum(float(v) for v in values) / len(values)


def pass_curve(per_instance: Sequence[Sequence[bool]], ks: Optional[Iterable[int]] = None,
               first_candidate_pass1: bool = False) -> PassKCurve:
    """Dataset-level Pass@k: mean over instances of the per-instance estimator.

    Every instance must carry the same number of candidates K. Pass@1 is the
    mean candidate success unless ``first_candidate_pass1`` asks for the
    first candidate only.
    """
    if not per_instance:
        raise ValueError("no instances")
    sizes = {len(c) for c in per_instance}
    if len(sizes) != 1:
        raise ValueError(f"instances carry different candidate counts: {sorted(sizes)}")
    K = sizes.pop()
    ks = list(ks) if ks is not None else list(range(1, K + 1))
    values: dict[int, Number] = {}
    for k in ks:
        if k == 1 and first_candidate_pass1:
            values[k] = _mean([Fraction(int(bool(c[0]))) for c in per_instance])
        else:
            values[k] = _mean([pass_at_k(c, k) for c in per_instance])
    return PassKCurve(values)


def selected_accuracy(selections: Mapping[Hashable, Hashable],
                      verdicts: Mapping[tuple[Hashable, Hashable], bool],
                      instances: Optional[Iterable[Hashable]] = None) -> Fraction:
    """Fraction of instances whose selected candidate is execution-correct.

    ``verdicts`` maps (instance_id, candidate_ref) to correctness. When
    ``instances`` is omitted, the instances named in ``verdicts`` are used.
    """
    ids = list(instances) if instances is not None else sorted({i for i, _ in verdicts}, key=str)
    if not ids:
        raise MissingSelection("no instances to score")
    correct = 0
    for iid in ids:
        if iid not in selections:
            raise MissingSelection(f"instance {iid!r} has no selected candidate")
        correct += bool(verdicts.get((iid, selections[iid]), False))
    return Fraction(correct, len(ids))


def mean_and_std(values: Sequence[float]) -> tuple[float, float]:
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("no values")
    return statistics.fmean(vals), (statistics.stdev(vals) if len(vals) > 1 else 0.0)


def metrics_report(per_instance: Mapping[str, Sequence[bool]],
                   selections: Optional[Mapping[str, str]] = None,
                   verdicts: Optional[Mapping[tuple[str, str], bool]] = None,
                   candidate_refs: Optional[Mapping[str, Sequence[str]]] = None) -> dict:
    """JSON-ready report: pass curve, selected accuracy and per-instance rows."""
    ids = sorted(per_instance)
    curve = pass_curve([per_instance[i] for i in ids])
    means = [Fraction(sum(per_instance[i]), len(per_instance[i])) for i in ids]
    mean1, std1 = mean_and_std(means)
    report: dict = {
        "pass_curve": curve.to_json(),
        "pass1_mean": mean1,
        "pass1_std": std1,
        "n_instances": len(ids),
        "per_instance": [],
    }
    for i in ids:
        row = {"instance_id": i, "candidates": [bool(s) for s in per_instance[i]],
               "any_correct": any(per_instance[i])}
        if candidate_refs is not None:
            row["candidate_refs"] = list(candidate_refs[i])
        if selections is not None:
            row["selected"] = selections.get(i)
            row["selected_correct"] = bool(verdicts.get((i, selections.get(i)), False)) if verdicts else None
        report["per_instance"].append(row)
    if selections is not None and verdicts is not None:
        report["selected_accuracy"] = float(selected_accuracy(selections, verdicts, ids))
    return report
