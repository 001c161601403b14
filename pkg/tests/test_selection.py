import random
from math import comb

import pytest

from skillpool.agents.llm import AssistantMessage, ScriptedClient
from skillpool.execution import SchemaError
from skillpool.selection import (
    Candidate,
    JudgeFailure,
    LLMJudge,
    OracleJudge,
    PositionJudge,
    deduplicate,
    run_tournament,
    select,
    view,
)
from skillpool.table import ResultTable


def table(*vals):
    return ResultTable(("v",), tuple((v,) for v in vals))


class RankJudge:
    """Prefers the candidate whose skill appears earlier in ``ranking``."""

    def __init__(self, ranking):
        self.ranking = ranking
        self.calls = 0

    def compare(self, question, schema, a, b):
        self.calls += 1
        return "a" if self.ranking.index(a.skill_id) < self.ranking.index(b.skill_id) else "b"


def test_identical_results_single_class():
    pool = deduplicate([(f"s{i}", f"SELECT {i}", table(1, 2)) for i in range(8)])
    assert pool.G == 1 and len(pool.representatives) == 1
    judge = RankJudge([f"s{i}" for i in range(8)])
    res = run_tournament(pool, judge)
    assert judge.calls == 0 and pool.candidates[res.winner].skill_id == "s0"


def test_row_order_does_not_split_classes():
    pool = deduplicate([("s0", "q", table(1, 2)), ("s1", "q", table(2, 1))])
    assert pool.G == 1


def test_errors_excluded_from_representatives():
    err = SchemaError("no such column: x")
    results = [("s0", "q0", err), ("s1", "q1", table(1)), ("s2", "q2", err),
               ("s3", "q3", table(2)), ("s4", "q4", None), ("s5", "q5", table(1))]
    pool = deduplicate(results)
    assert pool.G == 2
    assert len(pool.classes) == 5  # three error singletons plus two result classes
    assert [pool.candidates[r].skill_id for r in pool.representatives] == ["s1", "s3"]
    assert pool.class_of(5) == pool.class_of(1)


def test_dedup_idempotent():
    pool = deduplicate([("s0", "a", table(1)), ("s1", "b", table(1)), ("s2", "c", table(3))])
    again = deduplicate(pool.candidates)
    assert again.classes == pool.classes and again.representatives == pool.representatives


def test_three_way_tournament():
    pool = deduplicate([("A", "a", table(1)), ("B", "b", table(2)), ("C", "c", table(3))])
    res = run_tournament(pool, RankJudge(["A", "B", "C"]))
    assert res.win_counts == {"A": 4, "B": 2, "C": 0}
    assert pool.candidates[res.winner].skill_id == "A"
    assert res.judgments == 6 == len(res.judge_calls)


def test_position_bias_splits_evenly():
    pool = deduplicate([("s0", "a", table(1)), ("s1", "b", table(2))])
    for slot in ("a", "b"):
        res = run_tournament(pool, PositionJudge(slot))
        assert res.win_counts == {"s0": 1, "s1": 1}
        assert pool.candidates[res.winner].skill_id == "s0"


def test_swapped_order_is_judged():
    pool = deduplicate([("s0", "a", table(1)), ("s1", "b", table(2))])
    res = run_tournament(pool, PositionJudge())
    assert res.judge_calls == [("s0", "s1"), ("s1", "s0")]


def test_failing_judgment_is_forfeited(caplog):
    class Flaky:
        def compare(self, q, s, a, b):
            if a.skill_id == "s1":
                raise JudgeFailure("boom")
            return "a"

    pool = deduplicate([("s0", "a", table(1)), ("s1", "b", table(2))])
    res = run_tournament(pool, Flaky(), max_retries=1)
    assert res.forfeits == 1 and res.judgments == 1
    assert sum(res.win_counts.values()) == 2 * comb(2, 2) - res.forfeits


def test_relabeling_invariance():
    rng = random.Random(4)
    for _ in range(30):
        vals = [rng.randint(0, 3) for _ in range(5)]
        ids = [f"s{i}" for i in range(5)]
        ranking = ids[:]
        rng.shuffle(ranking)
        cands = [Candidate(sid, f"q{v}", table(v), None, n) for n, (sid, v) in enumerate(zip(ids, vals))]
        shuffled = cands[:]
        rng.shuffle(shuffled)
        w1 = select("x", cands, RankJudge(ranking))
        w2 = select("x", shuffled, RankJudge(ranking))
        assert w1.sql == w2.sql and w1.winner_skill_id == w2.winner_skill_id


def test_all_errored_passthrough():
    sel = select("x", [("s0", "bad0", SchemaError("e")), ("s1", "bad1", None)], PositionJudge())
    assert sel.all_errored and sel.sql == "bad0" and sel.G == 0
    assert sel.to_json()["all_errored"] is True


def test_selection_json_fields():
    sel = select("x", [("s0", "a", table(1)), ("s1", "b", table(2))], OracleJudge(table(2)))
    row = sel.to_json()
    assert set(row) == {"instance_id", "winner_skill_id", "sql", "G", "win_counts"}
    assert row["winner_skill_id"] == "s1" and row["G"] == 2


def test_llm_judge_parses_letter():
    client = ScriptedClient([AssistantMessage("Answer: B"), AssistantMessage("no idea")])
    judge = LLMJudge(client)
    pool = deduplicate([("s0", "a", table(1)), ("s1", "b", table(2))])
    assert judge.compare("q", "", view(pool.candidates[0]), view(pool.candidates[1])) == "b"
    with pytest.raises(JudgeFailure):
        judge.compare("q", "", view(pool.candidates[0]), view(pool.candidates[1]))


def test_preview_truncation():
    long = ResultTable(("v",), tuple((("x" * 500),) for _ in range(30)))
    text = view(Candidate("s", "q", long)).preview
    lines = text.splitlines()
    assert len(lines) == 1 + 20 + 1
    assert len(lines[1]) == 203
