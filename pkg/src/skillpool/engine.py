"""Batch-sequential residual skill optimization.

Each batch walks the pool in a rotated order. A skill is optimized on the
instances no earlier skill in the batch solved, its proposal is kept only if
it does strictly better on that residual (or ties with a shorter prompt), and
the instances it then solves are removed before the next skill's turn.
Accepted prompts are committed to the pool at the end of the batch.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

from .agents.base import Budgets, Executor, RunResult
from .core import DEFAULT_MAX_PROMPT_LEN, Instance, OutcomeMatrix, ResidualSet, Skill, SkillPool, residual_of
from .execution import GoldStore, schema_identifiers

logger = logging.getLogger(__name__)

DEFAULT_DIALECT_DENYLIST = (
    "strftime",
    "julianday",
    "date_trunc",
    "to_char",
    "to_date",
    "nvl",
    "nvl2",
    "iff",
    "qualify",
    "ilike",
    "safe_divide",
    "safe_cast",
    "datediff",
    "dateadd",
    "date_diff",
    "format_date",
    "parse_date",
    "regexp_contains",
    "group_concat",
    "listagg",
    "string_agg",
)

_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class ConfigError(ValueError):
    pass


class ExecutorFailure(RuntimeError):
    def __init__(self, batch: int, position: int, skill_id: str, instance_id: str, cause: BaseException):
        super().__init__(
            f"executor failed at batch {batch}, position {position} ({skill_id} on {instance_id}): {cause}"
        )
        self.batch = batch
        self.position = position
        self.skill_id = skill_id
        self.instance_id = instance_id


class OptimizerScreenViolation(ValueError):
    def __init__(self, tokens: Iterable[str]):
        self.tokens = sorted(tokens)
        super().__init__(f"proposal introduces forbidden tokens: {', '.join(self.tokens)}")


class SkillOptimizer(Protocol):
    def optimize(self, prompt: str, failures: Sequence[tuple]) -> str:
        """Refined prompt given (instance, trajectory, error summary) failures."""
        ...


@dataclass(frozen=True)
class RunConfig:
    K: int
    T: int
    b: int
    n_eval: int = 1
    max_prompt_len: int = DEFAULT_MAX_PROMPT_LEN
    rng_seed: int = 0
    rotation_stride: Optional[int] = None
    dialect_denylist: tuple[str, ...] = DEFAULT_DIALECT_DENYLIST

    def __post_init__(self) -> None:
        object.__setattr__(self, "dialect_denylist", tuple(self.dialect_denylist))
        if self.K < 1 or self.b < 1 or self.n_eval < 1 or self.T < 0:
            raise ConfigError("K, b and n_eval must be positive and T non-negative")
        if self.max_prompt_len < 1:
            raise ConfigError("max_prompt_len must be positive")
        if self.rotation_stride is not None and self.rotation_stride < 1:
            raise ConfigError("rotation_stride must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["dialect_denylist"] = list(self.dialect_denylist)
        return d


def rotation_ordering(K: int, t: int, T: int, stride_override: Optional[int] = None) -> list[int]:
    """Pool indices for batch ``t`` (1-based): the pool order rotated by (t-1)*stride.

    The default stride is max(1, ceil(K/T)), so with fewer batches than skills
    the first position still spreads across the pool.
    """
    if t < 1:
        raise ValueError("batch index t starts at 1")
    stride = stride_override if stride_override is not None else max(1, math.ceil(K / max(T, 1)))
    offset = ((t - 1) * stride) % K
    return [(offset + i) % K for i in range(K)]


@dataclass(frozen=True)
class Decision:
    accept: bool
    reason: str


def accept_update(old_prompt: str, new_prompt: str, old_rate: Fraction, new_rate: Fraction) -> Decision:
    if new_rate > old_rate:
        return Decision(True, "strict-improvement")
    if new_rate == old_rate and len(new_prompt) < len(old_prompt):
        return Decision(True, "brevity-tiebreak")
    return Decision(False, "no-improvement")


def screen_proposal(proposal: str, current: str, lexicon: set[str]) -> None:
    """Reject proposals that introduce schema identifiers or dialect keywords.

    Only tokens absent from the current prompt are screened, so vocabulary a
    seed already uses does not block every later proposal.
    """
    new_tokens = {t.lower() for t in _TOKEN.findall(proposal)} - {t.lower() for t in _TOKEN.findall(current)}
    hits = new_tokens & lexicon
    if hits:
        raise OptimizerScreenViolation(hits)


@dataclass
class PositionTrace:
    position: int
    skill_id: str
    residual_before: list[str]
    residual_after: list[str]
    proposed_prompt: Optional[str] = None
    accepted: bool = False
    reason: str = ""
    old_rate: Optional[Fraction] = None
    new_rate: Optional[Fraction] = None
    skipped: bool = False

    def to_json(self) -> dict:
        return {
            "position": self.position,
            "skill_id": self.skill_id,
            "residual_before": self.residual_before,
            "residual_after": self.residual_after,
            "proposed_prompt": self.proposed_prompt,
            "accepted": self.accepted,
            "reason": self.reason,
            "rates": {
                "old": None if self.old_rate is None else str(self.old_rate),
                "new": None if self.new_rate is None else str(self.new_rate),
            },
            "skipped": self.skipped,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PositionTrace":
        rates = d.get("rates") or {}
        return cls(
            position=d["position"],
            skill_id=d["skill_id"],
            residual_before=list(d["residual_before"]),
            residual_after=list(d["residual_after"]),
            proposed_prompt=d.get("proposed_prompt"),
            accepted=d["accepted"],
            reason=d.get("reason", ""),
            old_rate=None if rates.get("old") is None else Fraction(rates["old"]),
            new_rate=None if rates.get("new") is None else Fraction(rates["new"]),
            skipped=d.get("skipped", False),
        )


@dataclass
class BatchTrace:
    batch: int
    ordering: list[str]
    instances: list[str]
    entries: list[PositionTrace] = field(default_factory=list)
    prompts_before: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "batch": self.batch,
            "ordering": self.ordering,
            "instances": self.instances,
            "prompts_before": self.prompts_before,
            "entries": [e.to_json() for e in self.entries],
        }

    @classmethod
    def from_json(cls, d: dict) -> "BatchTrace":
        return cls(d["batch"], list(d["ordering"]), list(d["instances"]),
                   [PositionTrace.from_json(e) for e in d["entries"]], dict(d.get("prompts_before", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


@dataclass
class Evaluation:
    """Runs of one prompt on a residual, grouped per instance (sorted by id)."""

    runs: dict[str, list[tuple[RunResult, bool]]]

    @property
    def rate(self) -> Fraction:
        total = Fraction(0)
        for outcomes in self.runs.values():
            total += Fraction(sum(ok for _, ok in outcomes), len(outcomes))
        return total / len(self.runs)


def candidate_ref(skill: Skill, run: RunResult) -> Optional[str]:
    if run.sql is None:
        return None
    return f"{skill.skill_id}:v{skill.version}:{hashlib.sha1(run.sql.encode()).hexdigest()[:10]}"


class Engine:
    """Holds the collaborators of one optimization run."""

    def __init__(self, config: RunConfig, executor: Executor, optimizer: SkillOptimizer,
                 grader: Optional[GoldStore] = None, budgets: Optional[Budgets] = None,
                 jobs: int = 1, db_root: Optional[Path] = None):
        self.config = config
        self.executor = executor
        self.optimizer = optimizer
        self.grader = grader or GoldStore(db_root=db_root)
        self.budgets = budgets
        self.jobs = max(1, jobs)
        self.db_root = db_root
        self._schema_cache: dict[str, set[str]] = {}

    # -- evaluation ----------------------------------------------------------

    def _one(self, skill: Skill, instance: Instance, t: int, j: int) -> tuple[RunResult, bool]:
        try:
            run = self.executor.run(skill, instance, self.budgets)
            ok = run.error is None and self.grader.is_correct(instance, run.result)
        except Exception as exc:
            raise ExecutorFailure(t, j, skill.skill_id, instance.instance_id, exc) from exc
        return run, ok

    def evaluate(self, skill: Skill, instances: Sequence[Instance], t: int, j: int) -> Evaluation:
        jobs = [(inst, n) for inst in sorted(instances, key=lambda i: i.instance_id)
                for n in range(self.config.n_eval)]
        if self.jobs > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                outcomes = list(pool.map(lambda job: self._one(skill, job[0], t, j), jobs))
        else:
            outcomes = [self._one(skill, inst, t, j) for inst, _ in jobs]
        runs: dict[str, list[tuple[RunResult, bool]]] = {}
        for (inst, _), outcome in zip(jobs, outcomes):
            runs.setdefault(inst.instance_id, []).append(outcome)
        return Evaluation(runs)

    def lexicon(self, batch: Iterable[Instance]) -> set[str]:
        words = {w.lower() for w in self.config.dialect_denylist}
        for inst in batch:
            if inst.db_ref not in self._schema_cache:
                self._schema_cache[inst.db_ref] = schema_identifiers(inst.db_ref, self.db_root)
            words |= self._schema_cache[inst.db_ref]
        return words

    @staticmethod
    def _record(matrix: OutcomeMatrix, skill: Skill, ev: Evaluation, t: int, j: int) -> OutcomeMatrix:
        for iid, outcomes in ev.runs.items():
            for run, ok in outcomes:
                matrix = matrix.record(skill.skill_id, iid, ok, candidate_ref=candidate_ref(skill, run),
                                       batch=t, position=j, version=skill.version)
        return matrix

    # -- the batch loop --------------------------------------------------------

    def run_batch(self, pool: SkillPool, batch: Sequence[Instance], t: int,
                  matrix: OutcomeMatrix) -> tuple[SkillPool, BatchTrace, OutcomeMatrix]:
        cfg = self.config
        by_id = {inst.instance_id: inst for inst in batch}
        order = rotation_ordering(pool.k, t, max(cfg.T, 1), cfg.rotation_stride)
        trace = BatchTrace(t, [pool.skills[i].skill_id for i in order], sorted(by_id),
                           prompts_before={s.skill_id: s.prompt for s in pool})
        lexicon = self.lexicon(batch)
        residual = ResidualSet(frozenset(by_id), (t, 0))
        committed: dict[str, Skill] = {}

        for j, idx in enumerate(order, 1):
            skill = pool.skills[idx]
            before = sorted(residual.instance_ids)
            entry = PositionTrace(j, skill.skill_id, before, before)
            trace.entries.append(entry)
            if not residual:
                entry.skipped, entry.reason = True, "empty-residual"
                continue

            insts = [by_id[i] for i in before]
            current = self.evaluate(skill, insts, t, j)
            matrix = self._record(matrix, skill, current, t, j)
            entry.old_rate = current.rate
            kept = current
            failures = [
                (by_id[iid], outcomes[-1][0].trajectory, _failure_summary(outcomes[-1][0]))
                for iid, outcomes in current.runs.items()
                if not any(ok for _, ok in outcomes)
            ]
            if not failures:
                entry.reason = "no-failures"
            else:
                proposal = self.optimizer.optimize(skill.prompt, failures)
                entry.proposed_prompt = proposal
                entry.reason, trial = self._consider(skill, proposal, insts, t, j, lexicon, entry)
                if entry.accepted:
                    new_skill = skill.evolve(proposal)
                    kept = trial
                    matrix = self._record(matrix, new_skill, kept, t, j)
                    committed[skill.skill_id] = new_skill

            solved_here = OutcomeMatrix.empty([skill.skill_id], before)
            for iid, outcomes in kept.runs.items():
                for _, ok in outcomes:
                    solved_here = solved_here.record(skill.skill_id, iid, ok)
            residual = residual_of(solved_here, before, [skill.skill_id], (t, j))
            entry.residual_after = sorted(residual.instance_ids)

        for new_skill in committed.values():
            pool = pool.replace(new_skill)
        return pool, trace, matrix

    def _consider(self, skill: Skill, proposal: str, insts: Sequence[Instance], t: int, j: int,
                  lexicon: set[str], entry: PositionTrace) -> tuple[str, Optional[Evaluation]]:
        """Screen and evaluate a proposal; fills ``entry`` and returns (reason, evaluation)."""
        if not proposal or not proposal.strip():
            return "empty-proposal", None
        if proposal == skill.prompt:
            return "unchanged", None
        if len(proposal) > self.config.max_prompt_len:
            return "too-long", None
        try:
            screen_proposal(proposal, skill.prompt, lexicon)
        except OptimizerScreenViolation as exc:
            logger.info("batch %d position %d: %s", t, j, exc)
            return "screen-violation", None
        trial = self.evaluate(skill.evolve(proposal), insts, t, j)
        entry.new_rate = trial.rate
        decision = accept_update(skill.prompt, proposal, entry.old_rate, entry.new_rate)
        entry.accepted = decision.accept
        return decision.reason, trial

    def run(self, pool0: SkillPool, train: Sequence[Instance]) -> "RunOutput":
        cfg = self.config
        if pool0.k != cfg.K:
            raise ConfigError(f"pool has {pool0.k} skills but K={cfg.K}")
        if len(train) < cfg.b:
            raise ConfigError(f"batch size {cfg.b} exceeds training set of {len(train)}")
        ids = [i.instance_id for i in train]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate instance ids in training set")
        for s in pool0:
            s.check_length(cfg.max_prompt_len)
        rng = random.Random(cfg.rng_seed)
        matrix = OutcomeMatrix.empty(pool0.ids, ids)
        pool = pool0
        traces = []
        for t in range(1, cfg.T + 1):
            batch = rng.sample(list(train), cfg.b)
            pool, trace, matrix = self.run_batch(pool, batch, t, matrix)
            traces.append(trace)
        return RunOutput(pool0, pool, traces, matrix)


def _failure_summary(run: RunResult) -> str:
    summary = run.error_summary()
    if summary:
        return summary
    if run.result is None:
        return "no result"
    return f"wrong result: {len(run.result.rows)} rows x {len(run.result.columns)} columns"


@dataclass
class RunOutput:
    initial_pool: SkillPool
    pool: SkillPool
    traces: list[BatchTrace]
    matrix: OutcomeMatrix


def run(pool0: SkillPool, train: Sequence[Instance], config: RunConfig, executor: Executor,
        optimizer: SkillOptimizer, **kwargs) -> RunOutput:
    return Engine(config, executor, optimizer, **kwargs).run(pool0, train)


def run_batch(pool: SkillPool, batch: Sequence[Instance], t: int, executor: Executor,
              optimizer: SkillOptimizer, matrix: OutcomeMatrix, config: RunConfig,
              **kwargs) -> tuple[SkillPool, BatchTrace, OutcomeMatrix]:
    return Engine(config, executor, optimizer, **kwargs).run_batch(pool, batch, t, matrix)


def write_run_dir(out: str | Path, config: RunConfig, output: RunOutput) -> Path:
    """Persist a run: config, initial/final pools, per-batch traces, outcome log."""
    out = Path(out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n")
    output.initial_pool.save(out / "pool_initial.json")
    output.pool.save(out / "pool_final.json")
    for trace in output.traces:
        (out / "traces" / f"batch_{trace.batch}.json").write_text(trace.dumps())
    (out / "outcomes.jsonl").write_text(output.matrix.to_jsonl())
    return out


def load_traces(run_dir: str | Path) -> list[BatchTrace]:
    paths = sorted(Path(run_dir, "traces").glob("batch_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    return [BatchTrace.from_json(json.loads(p.read_text())) for p in paths]


def trace_violations(trace: BatchTrace) -> list[str]:
    """Invariant checks for one batch trace; returns human-readable problems."""
    problems = []
    prev = set(trace.instances)
    for e in trace.entries:
        before, after = set(e.residual_before), set(e.residual_after)
        if before != prev:
            problems.append(f"position {e.position}: residual_before differs from previous residual_after")
        if not after <= before:
            problems.append(f"position {e.position}: residual grew")
        if e.accepted:
            if e.old_rate is None or e.new_rate is None or e.proposed_prompt is None:
                problems.append(f"position {e.position}: accepted without rates")
            else:
                old_prompt = trace.prompts_before[e.skill_id]
                expected = accept_update(old_prompt, e.proposed_prompt, e.old_rate, e.new_rate)
                if not expected.accept or expected.reason != e.reason:
                    problems.append(f"position {e.position}: acceptance disagrees with the rule")
        elif e.new_rate is not None:
            old_prompt = trace.prompts_before[e.skill_id]
            if accept_update(old_prompt, e.proposed_prompt, e.old_rate, e.new_rate).accept:
                problems.append(f"position {e.position}: rejected a proposal the rule accepts")
        if e.skipped and before:
            problems.append(f"position {e.position}: skipped with a non-empty residual")
        prev = after
    return problems
