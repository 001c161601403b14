"""Domain types shared by the optimizer, metrics and selection code.

Everything here is an immutable value: ``OutcomeMatrix.record`` returns a new
matrix rather than mutating in place, so matrices can be handed to parallel
evaluators without locking.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .table import ResultTable

logger = logging.getLogger(__name__)

DEFAULT_MAX_PROMPT_LEN = 12000


class UnknownId(KeyError):
    """A skill or instance id that was never registered with the run."""


class Origin(str, Enum):
    SEED = "seed"
    OPTIMIZED = "optimized"


@dataclass(frozen=True)
class Skill:
    skill_id: str
    prompt: str
    version: int = 0
    parent_version: Optional[int] = None
    origin: Origin = Origin.SEED

    def __post_init__(self) -> None:
        if not self.skill_id:
            raise ValueError("skill_id must be non-empty")
        if not self.prompt or not self.prompt.strip():
            raise ValueError(f"skill {self.skill_id!r}: prompt must be non-empty")
        if self.version < 0:
            raise ValueError("version must be non-negative")
        if self.parent_version is not None and self.parent_version >= self.version:
            raise ValueError("version must increase along the lineage")
        object.__setattr__(self, "origin", Origin(self.origin))

    def check_length(self, max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN) -> None:
        if len(self.prompt) > max_prompt_len:
            raise ValueError(
                f"skill {self.skill_id!r}: prompt has {len(self.prompt)} chars, limit {max_prompt_len}"
            )

    def evolve(self, prompt: str) -> "Skill":
        """Next version of this skill carrying ``prompt``."""
        return Skill(
            self.skill_id,
            prompt,
            version=self.version + 1,
            parent_version=self.version,
            origin=Origin.OPTIMIZED,
        )

    def to_json(self) -> dict:
        return {
            "skill_id": self.skill_id,
            "prompt": self.prompt,
            "version": self.version,
            "parent_version": self.parent_version,
            "origin": self.origin.value,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Skill":
        return cls(
            skill_id=data["skill_id"],
            prompt=data["prompt"],
            version=int(data.get("version", 0)),
            parent_version=data.get("parent_version"),
            origin=Origin(data.get("origin", "seed")),
        )


@dataclass(frozen=True)
class SkillPool:
    skills: tuple[Skill, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "skills", tuple(self.skills))
        if not self.skills:
            raise ValueError("a skill pool needs at least one skill")
        ids = [s.skill_id for s in self.skills]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate skill ids in pool: {ids}")

    @property
    def k(self) -> int:
        return len(self.skills)

    @property
    def ids(self) -> list[str]:
        return [s.skill_id for s in self.skills]

    def __iter__(self) -> Iterator[Skill]:
        return iter(self.skills)

    def __len__(self) -> int:
        return len(self.skills)

    def __getitem__(self, skill_id: str) -> Skill:
        for s in self.skills:
            if s.skill_id == skill_id:
                return s
        raise UnknownId(skill_id)

    def index_of(self, skill_id: str) -> int:
        try:
            return self.ids.index(skill_id)
        except ValueError:
            raise UnknownId(skill_id) from None

    def replace(self, skill: Skill) -> "SkillPool":
        idx = self.index_of(skill.skill_id)
        skills = list(self.skills)
        skills[idx] = skill
        return SkillPool(tuple(skills))

    def to_json(self) -> dict:
        return {"skills": [s.to_json() for s in self.skills], "k": self.k}

    @classmethod
    def from_json(cls, data: Mapping) -> "SkillPool":
        pool = cls(tuple(Skill.from_json(s) for s in data["skills"]))
        if "k" in data and int(data["k"]) != pool.k:
            raise ValueError(f"pool declares k={data['k']} but holds {pool.k} skills")
        return pool

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "SkillPool":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Instance:
    """One Text-to-SQL task.

    Exactly one of ``gold_sql`` and ``gold_result`` is set. ``db_ref`` is kept
    verbatim from the manifest; relative paths are resolved by the execution
    layer against the manifest's directory.
    """

    instance_id: str
    question: str
    db_ref: str
    gold_sql: Optional[str] = None
    gold_result: Optional[ResultTable] = None
    dialect: str = "sqlite"

    def __post_init__(self) -> None:
        if not self.instance_id:
            raise ValueError("instance_id must be non-empty")
        if (self.gold_sql is None) == (self.gold_result is None):
            raise ValueError(
                f"instance {self.instance_id!r}: exactly one of gold_sql / gold_result is required"
            )

    def to_json(self) -> dict:
        row = {"id": self.instance_id, "question": self.question, "db": self.db_ref}
        if self.gold_sql is not None:
            row["gold_sql"] = self.gold_sql
        else:
            row["gold_result"] = self.gold_result.to_json()
        row["dialect"] = self.dialect
        return row


@dataclass(frozen=True)
class Attempt:
    success: bool
    candidate_ref: Optional[str] = None
    batch: Optional[int] = None
    position: Optional[int] = None
    version: Optional[int] = None


@dataclass(frozen=True)
class OutcomeMatrix:
    """Append-only record of attempt outcomes per (skill_id, instance_id)."""

    skill_ids: frozenset[str]
    instance_ids: frozenset[str]
    records: Mapping[tuple[str, str], tuple[Attempt, ...]] = field(
        default_factory=lambda: MappingProxyType({})
    )

    @classmethod
    def empty(cls, skill_ids: Iterable[str], instance_ids: Iterable[str]) -> "OutcomeMatrix":
        return cls(frozenset(skill_ids), frozenset(instance_ids))

    def register(
        self, skill_ids: Iterable[str] = (), instance_ids: Iterable[str] = ()
    ) -> "OutcomeMatrix":
        return replace(
            self,
            skill_ids=self.skill_ids | frozenset(skill_ids),
            instance_ids=self.instance_ids | frozenset(instance_ids),
        )

    def record(self, skill_id: str, instance_id: str, success: bool, **meta) -> "OutcomeMatrix":
        if skill_id not in self.skill_ids:
            raise UnknownId(f"unknown skill id {skill_id!r}")
        if instance_id not in self.instance_ids:
            raise UnknownId(f"unknown instance id {instance_id!r}")
        key = (skill_id, instance_id)
        records = dict(self.records)
        records[key] = records.get(key, ()) + (Attempt(bool(success), **meta),)
        return replace(self, records=MappingProxyType(records))

    def attempts(self, skill_id: str, instance_id: str) -> tuple[Attempt, ...]:
        return self.records.get((skill_id, instance_id), ())

    def success_count(self, skill_id: str, instance_id: str) -> tuple[int, int]:
        """(successes, attempts) for one cell."""
        atts = self.attempts(skill_id, instance_id)
        return sum(a.success for a in atts), len(atts)

    def solved(self, skill_id: str, instance_id: str) -> bool:
        return any(a.success for a in self.attempts(skill_id, instance_id))

    def to_jsonl(self) -> str:
        lines = []
        for (sid, iid) in sorted(self.records):
            for n, a in enumerate(self.records[(sid, iid)]):
                lines.append(
                    json.dumps(
                        {
                            "skill_id": sid,
                            "instance_id": iid,
                            "attempt": n,
                            "success": a.success,
                            "candidate_ref": a.candidate_ref,
                            "batch": a.batch,
                            "position": a.position,
                            "version": a.version,
                        },
                        sort_keys=True,
                    )
                )
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "OutcomeMatrix":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        rows.sort(key=lambda r: (r["skill_id"], r["instance_id"], r["attempt"]))
        m = cls.empty({r["skill_id"] for r in rows}, {r["instance_id"] for r in rows})
        for r in rows:
            m = m.record(
                r["skill_id"],
                r["instance_id"],
                r["success"],
                candidate_ref=r.get("candidate_ref"),
                batch=r.get("batch"),
                position=r.get("position"),
                version=r.get("version"),
            )
        return m


def record_outcome(
    matrix: OutcomeMatrix, skill_id: str, instance_id: str, success: bool, **meta
) -> OutcomeMatrix:
    return matrix.record(skill_id, instance_id, success, **meta)


@dataclass(frozen=True)
class ResidualSet:
    instance_ids: frozenset[str]
    provenance: Optional[tuple[int, int]] = None  # (batch t, position j)

    def __len__(self) -> int:
        return len(self.instance_ids)

    def __contains__(self, instance_id: object) -> bool:
        return instance_id in self.instance_ids

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.instance_ids))

    def issubset(self, other: "ResidualSet") -> bool:
        return self.instance_ids <= other.instance_ids


def residual_of(
    matrix: OutcomeMatrix,
    instances: Iterable[str],
    skills: Sequence[str],
    provenance: Optional[tuple[int, int]] = None,
) -> ResidualSet:
    """Instances on which every listed skill failed all of its recorded attempts.

    An instance counts as solved by a skill if any attempt succeeded. Pairs with
    no attempts at all count as failures (and are logged).
    """
    remaining = set()
    for iid in instances:
        for sid in skills:
            if not matrix.attempts(sid, iid):
                logger.warning("no attempts for (%s, %s); treating as failure", sid, iid)
            elif matrix.solved(sid, iid):
                break
        else:
            remaining.add(iid)
    return ResidualSet(frozenset(remaining), provenance)
