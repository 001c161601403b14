"""Desk-scale stand-in for an LLM agent.

A synthetic skill is an ordinary prompt carrying ``cap:<name>`` tags; a
synthetic instance carries ``req:<name>`` tags in its question. A run succeeds
when the skill's capabilities cover the instance's requirements, and then
fails independently with the skill's noise probability.
"""

from __future__ import annotations

import hashlib
import random
import re
import threading
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from ..core import Instance, Skill, SkillPool
from ..execution import MEMORY_DB
from ..table import ResultTable
from ..trajectory import extract_actions
from .base import Budgets, RunResult

_CAP_RE = re.compile(r"(?<![\w:])cap:([A-Za-z0-9_]+)")
_REQ_RE = re.compile(r"(?<![\w:])req:([A-Za-z0-9_]+)")
_NOISE_RE = re.compile(r"(?<![\w:])noise:([0-9]*\.?[0-9]+)")

# tool events a capability contributes to the run log; picked by a stable hash
_CAP_BLOCKS: tuple[tuple[tuple[str, str], ...], ...] = (
    (("execute_sql", "SELECT * FROM facts LIMIT 5"),),
    (("lookup_docs", "date functions"),),
    (("get_sql_pattern", "top n"),),
    (("get_sql_templates", "aggregation"),),
    (("review_sql", ""),),
)


class NoFailures(ValueError):
    pass


def parse_capabilities(text: str) -> frozenset[str]:
    return frozenset(_CAP_RE.findall(text))


def parse_requirements(text: str) -> frozenset[str]:
    return frozenset(_REQ_RE.findall(text))


@dataclass(frozen=True)
class SyntheticSkill:
    capabilities: frozenset[str]
    noise: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.noise < 1:
            raise ValueError("noise must lie in [0, 1)")

    @classmethod
    def from_prompt(cls, prompt: str, default_noise: float = 0.0) -> "SyntheticSkill":
        m = _NOISE_RE.search(prompt)
        return cls(parse_capabilities(prompt), float(m.group(1)) if m else default_noise)


def _stable_int(text: str) -> int:
    return zlib.crc32(text.encode())


def _cap_block(cap: str) -> tuple[tuple[str, str], ...]:
    h = _stable_int(cap)
    first = _CAP_BLOCKS[h % len(_CAP_BLOCKS)]
    second = _CAP_BLOCKS[(h // len(_CAP_BLOCKS)) % len(_CAP_BLOCKS)]
    return first + second


def _tool(name: str, arg: str, error: Optional[str] = None) -> dict:
    key = "sql" if name in ("execute_sql", "review_sql", "submit_final_sql") else "query"
    event = {"type": "tool", "name": name, "arguments": {key: arg}}
    if error:
        event["error"] = error
    return event


def _answer(instance: Instance):
    gold = instance.gold_result
    if gold is None or len(gold.rows) != 1 or len(gold.columns) != 1:
        raise ValueError(f"synthetic instance {instance.instance_id!r} needs a single-cell gold_result")
    return gold.columns[0], gold.rows[0][0]


def simulated_execute(skill: Skill, instance: Instance, rng: random.Random,
                      default_noise: float = 0.0) -> RunResult:
    syn = SyntheticSkill.from_prompt(skill.prompt, default_noise)
    reqs = parse_requirements(instance.question)
    missing = sorted(reqs - syn.capabilities)
    lucky = rng.random() >= syn.noise
    success = not missing and lucky
    column, answer = _answer(instance)
    caps_key = ",".join(sorted(syn.capabilities))
    if success:
        value = answer
    else:
        value = -(1 + _stable_int(f"{caps_key}|{instance.instance_id}|{bool(missing)}") % 997)
    sql = f"SELECT {value!r} AS {column}"

    log = [_tool("execute_sql", "SELECT name FROM sqlite_master")]
    for cap in sorted(syn.capabilities):
        log.extend(_tool(name, arg) for name, arg in _cap_block(cap))
    log.append({"type": "draft", "sql": sql})
    if missing:
        log.append(_tool("execute_sql", sql, error=f"no such column: {missing[0]}"))
        log.append(_tool("execute_sql", sql))
    else:
        log.append(_tool("execute_sql", sql))
    log.append(_tool("submit_final_sql", sql))

    trajectory = extract_actions(log, skill.skill_id, instance.instance_id)
    result = ResultTable((column,), ((value,),))
    return RunResult(sql=sql, trajectory=trajectory, result=result, status="submitted", log=log)


class SimulatedExecutor:
    """Thread-safe synthetic executor with keyed, replayable noise.

    Each call draws from an RNG seeded by (seed, prompt, instance, n) where n
    counts earlier calls with the same prompt and instance, so results do not
    depend on scheduling order across different instances.
    """

    def __init__(self, noise: float = 0.0, seed: int = 0):
        if not 0 <= noise < 1:
            raise ValueError("noise must lie in [0, 1)")
        self.noise = noise
        self.seed = seed
        self._counts: Counter = Counter()
        self._lock = threading.Lock()

    def run(self, skill: Skill, instance: Instance, budgets: Optional[Budgets] = None) -> RunResult:
        digest = hashlib.sha256(skill.prompt.encode()).hexdigest()[:16]
        key = (digest, instance.instance_id)
        with self._lock:
            n = self._counts[key]
            self._counts[key] += 1
        rng = random.Random(f"{self.seed}|{digest}|{instance.instance_id}|{n}")
        return simulated_execute(skill, instance, rng, self.noise)


def unmet_requirements(prompt: str, instance: Instance) -> frozenset[str]:
    return parse_requirements(instance.question) - parse_capabilities(prompt)


def mutate_skill(prompt: str, failures: Sequence, rng: Optional[random.Random] = None) -> str:
    """Add one capability tag: the most common unmet requirement among failures.

    ``failures`` holds (instance, trajectory, error summary) triples. Ties go
    to the lexicographically smallest capability. When no failure has an
    unmet requirement (pure noise), the prompt is returned unchanged.
    """
    if not failures:
        raise NoFailures("mutation needs at least one failure")
    counts: Counter = Counter()
    for failure in failures:
        instance = failure[0]
        counts.update(unmet_requirements(prompt, instance))
    if not counts:
        return prompt
    best = max(counts.values())
    chosen = min(c for c, n in counts.items() if n == best)
    return f"{prompt} cap:{chosen}"


class MutationOptimizer:
    def optimize(self, prompt: str, failures: Sequence) -> str:
        return mutate_skill(prompt, failures)


def synthetic_family(n: int, capabilities: Sequence[str] = ("a", "b", "c"), seed: int = 0,
                     prefix: str = "x", max_requirements: int = 2, start: int = 0) -> list[Instance]:
    """Instances each requiring a random non-empty capability subset."""
    if not 1 <= max_requirements <= len(capabilities):
        raise ValueError("max_requirements must be in [1, len(capabilities)]")
    rng = random.Random(seed)
    caps = sorted(capabilities)
    instances = []
    for i in range(start, start + n):
        size = rng.randint(1, max_requirements)
        reqs = sorted(rng.sample(caps, size))
        question = f"synthetic task {i} " + " ".join(f"req:{r}" for r in reqs)
        instances.append(
            Instance(
                instance_id=f"{prefix}{i:04d}",
                question=question,
                db_ref=MEMORY_DB,
                gold_result=ResultTable(("answer",), ((i + 1,),)),
                dialect="sqlite",
            )
        )
    return instances


def seed_pool(capabilities: Iterable[str] = ("a", "b", "c"), filler: str = "") -> SkillPool:
    """One seed skill per capability: ``s_<cap>`` with a single ``cap:`` tag."""
    skills = []
    for cap in capabilities:
        prompt = f"Solve the task carefully.{(' ' + filler) if filler else ''} cap:{cap}"
        skills.append(Skill(f"s_{cap}", prompt))
    return SkillPool(tuple(skills))


def single_skill_pool(prompt: str, k: int) -> SkillPool:
    """K copies of one prompt, for repeated-run baselines."""
    return SkillPool(tuple(Skill(f"rep{i}", prompt) for i in range(k)))


__all__ = [
    "NoFailures",
    "SyntheticSkill",
    "SimulatedExecutor",
    "MutationOptimizer",
    "mutate_skill",
    "parse_capabilities",
    "parse_requirements",
    "seed_pool",
    "simulated_execute",
    "single_skill_pool",
    "synthetic_family",
    "unmet_requirements",
]
