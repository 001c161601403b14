"""Candidate selection: dedup by execution output, then a swapped-order round robin."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Protocol, Sequence

from .execution import DEFAULT_POLICY, ExecError, MatchPolicy, fingerprint
from .table import ResultTable

logger = logging.getLogger(__name__)

PREVIEW_ROWS = 20
PREVIEW_CELL_CHARS = 200


class JudgeFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Candidate:
    skill_id: str
    sql: str
    result: Optional[ResultTable] = None
    error: Optional[str] = None
    skill_index: int = 0
    fingerprint: Optional[str] = None

    @property
    def errored(self) -> bool:
        return self.result is None


@dataclass(frozen=True)
class CandidateView:
    """What the judge sees of one candidate."""

    skill_id: str
    sql: str
    preview: str
    result: Optional[ResultTable] = None


class Judge(Protocol):
    def compare(self, question: str, schema: str, a: CandidateView, b: CandidateView) -> str:
        """Return ``"a"`` or ``"b"``; never abstain."""
        ...


@dataclass
class CandidatePool:
    instance_id: str
    candidates: list[Candidate]
    classes: list[list[int]]  # candidate indices, ordered by lowest skill index
    representatives: list[int]  # one candidate index per eligible class

    @property
    def G(self) -> int:
        """Number of non-error equivalence classes."""
        return sum(1 for c in self.classes if not self.candidates[c[0]].errored)

    @property
    def all_errored(self) -> bool:
        return self.G == 0

    def class_of(self, index: int) -> int:
        for n, members in enumerate(self.classes):
            if index in members:
                return n
        raise IndexError(index)


def deduplicate(results: Sequence[tuple], instance_id: str = "",
                policy: MatchPolicy = DEFAULT_POLICY) -> CandidatePool:
    """Group candidates by result fingerprint.

    ``results`` holds ``(skill_id, sql, ResultTable | ExecError | None)``
    tuples, or ``Candidate`` objects. Input order is the skill index unless a
    Candidate carries its own. Errored candidates become singleton classes and
    only represent the pool when nothing executed.
    """
    if not results:
        raise ValueError("no candidates to deduplicate")
    cands = []
    for n, item in enumerate(results):
        if isinstance(item, Candidate):
            cand = item
        else:
            skill_id, sql, outcome = item
            if isinstance(outcome, ResultTable):
                cand = Candidate(skill_id, sql, outcome, None, n)
            else:
                msg = outcome.summary() if isinstance(outcome, ExecError) else str(outcome or "no result")
                cand = Candidate(skill_id, sql, None, msg, n)
        if cand.result is not None and cand.fingerprint is None:
            cand = Candidate(cand.skill_id, cand.sql, cand.result, cand.error, cand.skill_index,
                             fingerprint(cand.result, policy))
        cands.append(cand)

    order = sorted(range(len(cands)), key=lambda i: (cands[i].skill_index, i))
    by_fp: dict[str, list[int]] = {}
    classes: list[list[int]] = []
    for i in order:
        c = cands[i]
        if c.errored:
            classes.append([i])
        elif c.fingerprint in by_fp:
            by_fp[c.fingerprint].append(i)
        else:
            by_fp[c.fingerprint] = [i]
            classes.append(by_fp[c.fingerprint])
    ok = [m[0] for m in classes if not cands[m[0]].errored]
    reps = ok if ok else [m[0] for m in classes]
    return CandidatePool(instance_id, cands, classes, reps)


def view(c: Candidate) -> CandidateView:
    if c.result is not None:
        preview = c.result.preview(PREVIEW_ROWS, PREVIEW_CELL_CHARS)
    else:
        preview = f"ERROR: {c.error}"
    return CandidateView(c.skill_id, c.sql, preview, c.result)


@dataclass
class TournamentResult:
    winner: int  # candidate index of the winning representative
    win_counts: dict[str, int]  # representative skill_id -> wins
    judgments: int = 0
    forfeits: int = 0
    judge_calls: list[tuple[str, str]] = field(default_factory=list)


def run_tournament(pool: CandidatePool, judge: Judge, question: str = "", schema: str = "",
                   max_retries: int = 1) -> TournamentResult:
    """Every unordered pair of representatives is judged in both orders.

    Each judgment gives one win. Highest win count wins; ties go to the lower
    skill index. A judgment that keeps failing after ``max_retries`` retries is
    forfeited: no win for either side.
    """
    reps = pool.representatives
    if not reps:
        raise ValueError("pool has no representatives")
    wins = {pool.candidates[r].skill_id: 0 for r in reps}
    if len(reps) == 1:
        return TournamentResult(reps[0], wins)
    res = TournamentResult(reps[0], wins)
    for i, j in combinations(reps, 2):
        for first, second in ((i, j), (j, i)):
            a, b = pool.candidates[first], pool.candidates[second]
            verdict = None
            for attempt in range(max_retries + 1):
                try:
                    verdict = judge.compare(question, schema, view(a), view(b))
                    if verdict not in ("a", "b"):
                        raise JudgeFailure(f"judge returned {verdict!r}")
                    break
                except Exception as exc:  # judges are external; any failure is retried then forfeited
                    verdict = None
                    logger.warning("judgment %s vs %s failed (attempt %d): %s",
                                   a.skill_id, b.skill_id, attempt + 1, exc)
            res.judge_calls.append((a.skill_id, b.skill_id))
            if verdict is None:
                res.forfeits += 1
                continue
            res.judgments += 1
            wins[(a if verdict == "a" else b).skill_id] += 1
    res.winner = max(reps, key=lambda r: (wins[pool.candidates[r].skill_id], -pool.candidates[r].skill_index))
    return res


@dataclass
class Selection:
    instance_id: str
    sql: str
    winner_skill_id: str
    G: int
    win_counts: dict[str, int]
    all_errored: bool = False
    judge_calls: int = 0

    def to_json(self) -> dict:
        row = {
            "instance_id": self.instance_id,
            "winner_skill_id": self.winner_skill_id,
            "sql": self.sql,
            "G": self.G,
            "win_counts": self.win_counts,
        }
        if self.all_errored:
            row["all_errored"] = True
        return row


def select(instance_id: str, candidates: Sequence, judge: Judge, question: str = "", schema: str = "",
           policy: MatchPolicy = DEFAULT_POLICY) -> Selection:
    pool = deduplicate(candidates, instance_id, policy)
    if pool.all_errored:
        first = min(pool.candidates, key=lambda c: c.skill_index)
        return Selection(instance_id, first.sql, first.skill_id, 0, {}, all_errored=True)
    t = run_tournament(pool, judge, question, schema)
    w = pool.candidates[t.winner]
    return Selection(instance_id, w.sql, w.skill_id, pool.G, t.win_counts, judge_calls=len(t.judge_calls))


# -- judges ------------------------------------------------------------------


class OracleJudge:
    """Prefers a candidate whose result matches the gold table; else the first shown."""

    def __init__(self, gold: ResultTable, policy: MatchPolicy = DEFAULT_POLICY):
        self.gold_fp = fingerprint(gold, policy)
        self.policy = policy

    def _correct(self, c: CandidateView) -> bool:
        return c.result is not None and fingerprint(c.result, self.policy) == self.gold_fp

    def compare(self, question, schema, a, b) -> str:
        if self._correct(b) and not self._correct(a):
            return "b"
        return "a"


class PositionJudge:
    """Always picks the same presentation slot; models pure position bias."""

    def __init__(self, slot: str = "a"):
        self.slot = slot

    def compare(self, question, schema, a, b) -> str:
        return self.slot


JUDGE_SYSTEM = """You compare two SQL queries written to answer the same question.
Decide which query answers the question correctly, using the schema and the result previews.
Reply with exactly one letter: A or B."""


class LLMJudge:
    def __init__(self, client, temperature: float = 0.2, max_tokens: int = 2000):
        self.client = client
        self.temperature = temperature
        self.max_tokens = max_tokens

    def compare(self, question, schema, a, b) -> str:
        body = (
            f"Question: {question}\n\nSchema:\n{schema}\n\n"
            f"Candidate A:\n{a.sql}\nResult preview:\n{a.preview}\n\n"
            f"Candidate B:\n{b.sql}\nResult preview:\n{b.preview}\n\nWhich is correct, A or B?"
        )
        reply = self.client.complete(
            [{"role": "system", "content": JUDGE_SYSTEM}, {"role": "user", "content": body}],
            None, self.temperature, self.max_tokens,
        )
        m = re.search(r"\b([AB])\b", (reply.content or "").strip().upper())
        if not m:
            raise JudgeFailure(f"unparseable verdict: {reply.content!r}")
        return m.group(1).lower()
