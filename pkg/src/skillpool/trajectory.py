"""Behavioral diversity of agent runs via normalized edit distance over actions."""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Sequence

import numpy as np

ACTIONS = (
    "inspect_schema",
    "sample_rows",
    "draft_sql",
    "execute",
    "repair",
    "lookup_docs",
    "get_pattern",
    "get_template",
    "review",
    "submit",
)

_TOOL_SYMBOLS = {
    "lookup_docs": "lookup_docs",
    "get_sql_pattern": "get_pattern",
    "get_sql_templates": "get_template",
    "review_sql": "review",
    "submit_final_sql": "submit",
}

_METADATA_RE = re.compile(
    r"\b(sqlite_master|sqlite_schema|information_schema|pragma|table_info|describe|show\s+(tables|columns|schemas))\b",
    re.IGNORECASE,
)
_LIMIT_RE = re.compile(r"\blimit\s+(\d+)\s*;?\s*$", re.IGNORECASE)
_PROBE_SELECT_RE = re.compile(r"^\s*select\s+(distinct\b|\*)", re.IGNORECASE)
PROBE_LIMIT = 20


class UnknownTool(ValueError):
    pass


class TooFew(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    actions: tuple[str, ...]
    skill_id: str = ""
    instance_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))
        bad = [a for a in self.actions if a not in ACTIONS]
        if bad:
            raise ValueError(f"actions outside the alphabet: {bad}")

    @property
    def completed(self) -> bool:
        return bool(self.actions) and self.actions[-1] == "submit"

    def __len__(self) -> int:
        return len(self.actions)

    def to_json(self) -> dict:
        return {"skill_id": self.skill_id, "instance_id": self.instance_id, "actions": list(self.actions)}

    @classmethod
    def from_json(cls, data: Mapping) -> "Trajectory":
        return cls(tuple(data["actions"]), data.get("skill_id", ""), data.get("instance_id", ""))


def is_metadata_query(sql: str) -> bool:
    return _METADATA_RE.search(sql) is not None


def classify_execute(sql: str, previous_failed: bool) -> str:
    if is_metadata_query(sql):
        return "inspect_schema"
    if previous_failed:
        return "repair"
    m = _LIMIT_RE.search(sql)
    if m and int(m.group(1)) <= PROBE_LIMIT and _PROBE_SELECT_RE.match(sql):
        return "sample_rows"
    return "execute"


def extract_actions(log: Iterable[Mapping], skill_id: str = "", instance_id: str = "") -> Trajectory:
    """Map a raw tool-call log to action symbols, one symbol per event.

    Events are ``{"type": "draft", "sql": ...}`` for assistant drafts, or
    ``{"type": "tool", "name": ..., "arguments": {...}, "error": ...}`` for tool calls.
    """
    actions = []
    previous_failed = False
    for event in log:
        if event.get("type") == "draft":
            actions.append("draft_sql")
            continue
        name = event.get("name")
        if name == "execute_sql":
            sql = str((event.get("arguments") or {}).get("sql", ""))
            symbol = classify_execute(sql, previous_failed)
            previous_failed = bool(event.get("error"))
            actions.append(symbol)
        elif name in _TOOL_SYMBOLS:
            actions.append(_TOOL_SYMBOLS[name])
        else:
            raise UnknownTool(f"unknown tool {name!r}")
    return Trajectory(tuple(actions), skill_id, instance_id)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_similarity(a: Trajectory | Sequence[str], b: Trajectory | Sequence[str]) -> float:
    """1 - edit_distance / max length; two empty sequences are identical."""
    xa = a.actions if isinstance(a, Trajectory) else tuple(a)
    xb = b.actions if isinstance(b, Trajectory) else tuple(b)
    longest = max(len(xa), len(xb))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(xa, xb) / longest


@dataclass
class SimilarityReport:
    matrices: dict[str, np.ndarray]  # instance_id -> K x K
    skill_order: dict[str, list[str]]  # instance_id -> row labels
    pair_values: dict[tuple[str, str], list[float]]

    def off_diagonal(self) -> list[float]:
        return [v for vals in self.pair_values.values() for v in vals]

    def mean_off_diagonal(self) -> float:
        vals = self.off_diagonal()
        return float(np.mean(vals)) if vals else float("nan")

    def to_json(self, bin_width: float = 0.05) -> dict:
        n_bins = int(round(1 / bin_width))
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        pairs = []
        for (sa, sb), vals in sorted(self.pair_values.items()):
            counts, _ = np.histogram(vals, bins=edges)
            pairs.append({
                "skills": [sa, sb],
                "n": len(vals),
                "mean": float(np.mean(vals)),
                "histogram": counts.tolist(),
            })
        overall, _ = np.histogram(self.off_diagonal(), bins=edges)
        return {
            "bin_edges": [round(float(e), 10) for e in edges],
            "mean_off_diagonal": self.mean_off_diagonal(),
            "overall_histogram": overall.tolist(),
            "pairs": pairs,
            "instances": {
                iid: {"skills": self.skill_order[iid], "matrix": m.round(6).tolist()}
                for iid, m in sorted(self.matrices.items())
            },
        }


def similarity_matrix(groups: Mapping[str, Sequence[Trajectory]]) -> SimilarityReport:
    """Per-instance pairwise similarity matrices and per-skill-pair summaries."""
    matrices: dict[str, np.ndarray] = {}
    orders: dict[str, list[str]] = {}
    pair_values: dict[tuple[str, str], list[float]] = defaultdict(list)
    for iid, trajs in groups.items():
        if len(trajs) < 2:
            raise TooFew(f"instance {iid!r} has {len(trajs)} trajectories, need at least 2")
        n = len(trajs)
        m = np.eye(n)
        for i, j in combinations(range(n), 2):
            v = normalized_similarity(trajs[i], trajs[j])
            m[i, j] = m[j, i] = v
            key = tuple(sorted((trajs[i].skill_id, trajs[j].skill_id)))
            pair_values[key].append(v)
        matrices[iid] = m
        orders[iid] = [t.skill_id for t in trajs]
    return SimilarityReport(matrices, orders, dict(pair_values))


def group_by_instance(trajectories: Iterable[Trajectory]) -> dict[str, list[Trajectory]]:
    groups: dict[str, list[Trajectory]] = defaultdict(list)
    for t in trajectories:
        groups[t.instance_id].append(t)
    return {iid: sorted(ts, key=lambda t: t.skill_id) for iid, ts in groups.items()}
