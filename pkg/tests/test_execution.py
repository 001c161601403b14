import json
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillpool.core import Instance
from skillpool.execution import (
    EXEC_ERROR_KINDS,
    DuplicateId,
    EngineError,
    GoldStore,
    Limits,
    MatchPolicy,
    ParseError,
    QueryTimeout,
    RowLimitExceeded,
    SchemaError,
    SQLSyntaxError,
    canonicalize,
    classify_error,
    dump_manifest,
    execute_sql,
    fingerprint,
    load_manifest,
    results_match,
    schema_identifiers,
    schema_summary,
)
from skillpool.table import BlobDigest, ResultTable


def T(*rows, cols=None):
    width = len(rows[0]) if rows else 1
    return ResultTable.build(cols or [f"c{i}" for i in range(width)], rows)


def test_constant_query():
    t = execute_sql(":memory:", "SELECT 1")
    assert t.columns == ("1",) and t.rows == ((1,),)


def test_cells_typed(company_db):
    t = execute_sql(str(company_db), "SELECT id, name, salary, photo FROM emp ORDER BY id")
    assert t.rows[0][:3] == (1, "ada", 120.5)
    assert isinstance(t.rows[0][3], BlobDigest) and t.rows[1][3] is None


def test_schema_error_keeps_engine_message(company_db):
    with pytest.raises(SchemaError) as err:
        execute_sql(str(company_db), "SELECT wage FROM emp")
    assert "no such column: wage" in str(err.value)
    assert err.value.kind == "schema"


def test_syntax_error(company_db):
    with pytest.raises(SQLSyntaxError):
        execute_sql(str(company_db), "SELEC name FROM emp")


def test_timeout_on_cross_join(company_db):
    sql = ("WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 3000) "
           "SELECT count(*) FROM n a, n b, n c")
    start = time.monotonic()
    with pytest.raises(QueryTimeout):
        execute_sql(str(company_db), sql, Limits(timeout_s=0.2))
    assert time.monotonic() - start < 5


def test_row_limit_is_an_error(company_db):
    with pytest.raises(RowLimitExceeded):
        execute_sql(str(company_db), "SELECT * FROM emp", Limits(max_rows=3))
    assert len(execute_sql(str(company_db), "SELECT * FROM emp", Limits(max_rows=4))) == 4


def test_read_only(company_db):
    with pytest.raises(EngineError):
        execute_sql(str(company_db), "DELETE FROM emp")


def test_relative_db_resolved_against_root(company_db):
    t = execute_sql("company.sqlite", "SELECT count(*) FROM dept", db_root=company_db.parent)
    assert t.rows == ((2,),)


def test_error_taxonomy_total():
    import sqlite3

    for exc in (sqlite3.OperationalError("near x: syntax error"), sqlite3.OperationalError("no such table: t"),
                sqlite3.DatabaseError("disk I/O error"), sqlite3.OperationalError("interrupted")):
        assert sum(isinstance(classify_error(exc), cls) for cls in EXEC_ERROR_KINDS.values()) == 1
    assert isinstance(classify_error(sqlite3.OperationalError("interrupted"), timed_out=True), QueryTimeout)


def test_schema_helpers(company_db):
    ids = schema_identifiers(str(company_db))
    assert {"emp", "dept", "salary", "dept_id"} <= ids
    assert "CREATE TABLE emp" in schema_summary(str(company_db))
    assert schema_identifiers(":memory:") == set()


def test_canonical_examples():
    assert canonicalize(T((1, "a"), (2, "b"))) == canonicalize(T((2, "b"), (1, "a")))
    assert results_match(T((0.30000000000000004,)), T((0.3,)))
    assert not results_match(T((None,)), T(("NULL",)))
    assert fingerprint(T((None,))) != fingerprint(T(("NULL",)))
    assert results_match(T(("abc  ",)), T(("abc",)))
    assert results_match(T((2.0,)), T((2,)))


def test_results_match_rules():
    a = T((1, "x"), (2, "y"))
    assert results_match(a, a)
    assert not results_match(T((1, "x", 0), (2, "y", 0)), a)
    swapped = T((2, "y"), (1, "x"))
    assert results_match(swapped, a)
    ordered = MatchPolicy(row_order_sensitive=True)
    assert not results_match(swapped, a, ordered)
    assert fingerprint(swapped) == fingerprint(a)
    assert fingerprint(swapped, ordered) != fingerprint(a, ordered)


def test_column_names_ignored():
    assert results_match(T((1,), cols=["a"]), T((1,), cols=["b"]))


def test_policy_validation():
    with pytest.raises(ValueError):
        MatchPolicy(float_sig_digits=0)


cells = st.one_of(st.none(), st.integers(-10**6, 10**6), st.floats(-1e6, 1e6, allow_nan=False),
                  st.text(max_size=4))


@given(st.lists(st.tuples(cells, cells), max_size=6))
def test_canonicalize_idempotent(rows):
    t = ResultTable.build(["a", "b"], rows)
    once = canonicalize(t)
    assert canonicalize(once) == once
    assert fingerprint(once) == fingerprint(t)


# -- manifests -------------------------------------------------------------


def _rows(n):
    return [{"id": f"q{i}", "question": f"question {i}", "db": "x.sqlite",
             **({"gold_sql": f"SELECT {i}"} if i % 2 else {"gold_result": {"columns": ["v"], "rows": [[i]]}}),
             "dialect": "sqlite"} for i in range(n)]


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_manifest_load(tmp_path):
    insts = load_manifest(_write(tmp_path / "m.jsonl", _rows(2)))
    assert [i.instance_id for i in insts] == ["q0", "q1"]
    assert insts[0].gold_result.rows == ((0,),) and insts[1].gold_sql == "SELECT 1"


def test_manifest_missing_gold_reports_line(tmp_path):
    rows = _rows(3)
    del rows[2]["gold_result"]
    with pytest.raises(ParseError) as err:
        load_manifest(_write(tmp_path / "m.jsonl", rows))
    assert err.value.line == 3


def test_manifest_duplicate_ids(tmp_path):
    rows = _rows(2)
    rows[1]["id"] = "q0"
    with pytest.raises(DuplicateId):
        load_manifest(_write(tmp_path / "m.jsonl", rows))


def test_manifest_roundtrip_500(tmp_path):
    path = tmp_path / "m.jsonl"
    text = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in _rows(500))
    path.write_text(text)
    assert dump_manifest(load_manifest(path)) == text


def test_gold_store_executes_once_and_caches(company_db, tmp_path):
    inst = Instance("q1", "how many?", "company.sqlite", gold_sql="SELECT count(*) FROM emp")
    store = GoldStore(company_db.parent, tmp_path / "gold_cache")
    assert store.gold(inst).rows == ((4,),)
    cached = tmp_path / "gold_cache" / "q1.json"
    assert json.loads(cached.read_text())["rows"] == [[4]]
    # a fresh store reads the cache instead of the database
    fresh = GoldStore(tmp_path / "missing", tmp_path / "gold_cache")
    assert fresh.gold(inst).rows == ((4,),)
    assert fresh.is_correct(inst, T((4,))) and not fresh.is_correct(inst, None)
