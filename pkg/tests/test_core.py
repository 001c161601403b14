import itertools
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillpool.core import (
    Instance,
    Origin,
    OutcomeMatrix,
    Skill,
    SkillPool,
    UnknownId,
    record_outcome,
    residual_of,
)
from skillpool.table import ResultTable


def test_skill_validation():
    with pytest.raises(ValueError):
        Skill("s", "")
    with pytest.raises(ValueError):
        Skill("s", "p", version=-1)
    with pytest.raises(ValueError):
        Skill("s", "p", version=1, parent_version=1)
    Skill("s", "x" * 10).check_length(10)
    with pytest.raises(ValueError):
        Skill("s", "x" * 11).check_length(10)


def test_evolve_records_lineage():
    s = Skill("s1", "seed prompt")
    s2 = s.evolve("better").evolve("best")
    assert (s2.version, s2.parent_version, s2.origin) == (2, 1, Origin.OPTIMIZED)
    assert s.origin == Origin.SEED and s.version == 0


def test_pool_json_roundtrip(tmp_path):
    pool = SkillPool((Skill("a", "one"), Skill("b", "two").evolve("three")))
    doc = pool.to_json()
    assert doc["k"] == 2
    assert set(doc["skills"][1]) == {"skill_id", "prompt", "version", "parent_version", "origin"}
    pool.save(tmp_path / "p.json")
    assert SkillPool.load(tmp_path / "p.json") == pool
    assert (tmp_path / "p.json").read_text() == pool.dumps()


def test_pool_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        SkillPool((Skill("a", "x"), Skill("a", "y")))


def test_pool_replace_keeps_order():
    pool = SkillPool((Skill("a", "x"), Skill("b", "y")))
    new = pool.replace(pool["b"].evolve("z"))
    assert new.ids == ["a", "b"] and new["b"].prompt == "z"
    with pytest.raises(UnknownId):
        pool.replace(Skill("c", "w"))


def test_instance_needs_exactly_one_gold():
    table = ResultTable(("x",), ((1,),))
    with pytest.raises(ValueError):
        Instance("i", "q", "db")
    with pytest.raises(ValueError):
        Instance("i", "q", "db", gold_sql="SELECT 1", gold_result=table)
    assert Instance("i", "q", "db", gold_result=table).to_json()["gold_result"] == {"columns": ["x"], "rows": [[1]]}


def test_record_outcome_appends():
    m = OutcomeMatrix.empty(["s1"], ["x1"])
    m1 = record_outcome(m, "s1", "x1", True)
    assert m1.success_count("s1", "x1") == (1, 1)
    assert m.attempts("s1", "x1") == ()  # original untouched
    m2 = record_outcome(record_outcome(m, "s1", "x1", False), "s1", "x1", False)
    assert [a.success for a in m2.attempts("s1", "x1")] == [False, False]


def test_success_count_from_log():
    m = OutcomeMatrix.empty(["s1"], ["x1"])
    for ok in (True, False, True):
        m = m.record("s1", "x1", ok)
    # independent re-read of the serialized log
    rows = [json.loads(line) for line in m.to_jsonl().splitlines()]
    assert sum(r["success"] for r in rows) == 2 and len(rows) == 3
    assert m.success_count("s1", "x1") == (2, 3)


def test_unknown_ids_rejected():
    m = OutcomeMatrix.empty(["s1"], ["x1"])
    with pytest.raises(UnknownId):
        m.record("s2", "x1", True)
    with pytest.raises(UnknownId):
        m.record("s1", "x2", True)


def test_record_leaves_other_keys_unchanged():
    m = OutcomeMatrix.empty(["s1", "s2"], ["x1", "x2"]).record("s1", "x1", True).record("s2", "x2", False)
    snapshot = dict(m.records)
    m2 = m.record("s1", "x2", True)
    for key, atts in snapshot.items():
        assert m2.records[key] == atts


def test_outcome_log_roundtrip():
    m = OutcomeMatrix.empty(["s1", "s2"], ["x1", "x2"])
    m = m.record("s1", "x1", True, candidate_ref="r1", batch=1, position=2, version=0)
    m = m.record("s2", "x2", False, batch=1, position=1)
    m = m.record("s1", "x1", False)
    back = OutcomeMatrix.from_jsonl(m.to_jsonl())
    assert back.to_jsonl() == m.to_jsonl()
    fields = set(json.loads(m.to_jsonl().splitlines()[0]))
    assert {"skill_id", "instance_id", "attempt", "success", "candidate_ref", "batch", "position"} <= fields


def test_residual_definition():
    m = OutcomeMatrix.empty(["s1", "s2"], ["x1", "x2", "x3"])
    for sid, iid, ok in [("s1", "x1", True), ("s1", "x2", False), ("s1", "x3", False),
                         ("s2", "x1", False), ("s2", "x2", True), ("s2", "x3", False)]:
        m = m.record(sid, iid, ok)
    assert residual_of(m, {"x1", "x2", "x3"}, ["s1", "s2"]).instance_ids == {"x3"}
    assert residual_of(m, {"x1", "x2"}, []).instance_ids == {"x1", "x2"}


def test_residual_any_success_semantics():
    m = OutcomeMatrix.empty(["s"], ["x"]).record("s", "x", False).record("s", "x", True)
    assert len(residual_of(m, ["x"], ["s"])) == 0


def test_unattempted_pair_counts_as_failure(caplog):
    m = OutcomeMatrix.empty(["s"], ["x"])
    with caplog.at_level("WARNING"):
        assert residual_of(m, ["x"], ["s"]).instance_ids == {"x"}
    assert "no attempts" in caplog.text


def test_residual_matches_enumerator():
    rng = random.Random(11)
    for _ in range(50):
        skills = [f"s{i}" for i in range(4)]
        insts = [f"x{i}" for i in range(6)]
        grid = {(s, x): rng.random() < 0.4 for s in skills for x in insts}
        m = OutcomeMatrix.empty(skills, insts)
        for (s, x), ok in grid.items():
            m = m.record(s, x, ok)
        failing = [{x for x in insts if not grid[(s, x)]} for s in skills]
        assert residual_of(m, insts, skills).instance_ids == set.intersection(*failing)


@given(st.lists(st.lists(st.booleans(), min_size=5, max_size=5), min_size=1, max_size=5))
def test_residual_monotone_and_order_free(rows):
    skills = [f"s{i}" for i in range(len(rows))]
    insts = [f"x{i}" for i in range(5)]
    m = OutcomeMatrix.empty(skills, insts)
    for s, row in zip(skills, rows):
        for x, ok in zip(insts, row):
            m = m.record(s, x, ok)
    prefixes = [residual_of(m, insts, skills[:n]) for n in range(len(skills) + 1)]
    for a, b in itertools.pairwise(prefixes):
        assert b.issubset(a)
    assert residual_of(m, insts, skills[::-1]) == residual_of(m, insts, skills)
