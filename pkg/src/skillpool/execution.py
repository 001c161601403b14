"""SQLite execution, result canonicalization and gold matching."""

from __future__ import annotations

import hashlib
import json
import re
import sqlite3
import time
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Optional

from .core import Instance
from .table import BlobDigest, Cell, ResultTable

MEMORY_DB = ":memory:"


class ExecError(Exception):
    """Base for every execution failure. ``kind`` names the variant."""

    kind = "engine"

    def __init__(self, message: str, sql: str = ""):
        super().__init__(message)
        self.message = message
        self.sql = sql

    def summary(self) -> str:
        return f"{self.kind}: {self.message}"


class SQLSyntaxError(ExecError):
    kind = "syntax"


class SchemaError(ExecError):
    kind = "schema"


class QueryTimeout(ExecError):
    kind = "timeout"


class RowLimitExceeded(ExecError):
    kind = "row_limit"


class EngineError(ExecError):
    """Any engine failure outside the four named categories."""

    kind = "engine"


EXEC_ERROR_KINDS = {
    cls.kind: cls for cls in (SQLSyntaxError, SchemaError, QueryTimeout, RowLimitExceeded, EngineError)
}

_SYNTAX_PATTERNS = ("syntax error", "incomplete input", "unrecognized token", "one statement at a time")
_SCHEMA_PATTERNS = ("no such table", "no such column", "ambiguous column", "no such function", "has no column")


@dataclass(frozen=True)
class Limits:
    timeout_s: float = 30.0
    max_rows: int = 10000

    def __post_init__(self) -> None:
        if self.timeout_s <= 0 or self.max_rows <= 0:
            raise ValueError("limits must be positive")


def classify_error(exc: Exception, sql: str = "", timed_out: bool = False) -> ExecError:
    message = str(exc)
    if timed_out:
        return QueryTimeout(f"query exceeded time limit ({message})", sql)
    low = message.lower()
    if any(p in low for p in _SYNTAX_PATTERNS):
        return SQLSyntaxError(message, sql)
    if any(p in low for p in _SCHEMA_PATTERNS):
        return SchemaError(message, sql)
    return EngineError(message, sql)


def resolve_db(db_ref: str, db_root: Optional[Path] = None) -> str:
    if db_ref == MEMORY_DB:
        return db_ref
    path = Path(db_ref)
    if not path.is_absolute() and db_root is not None:
        path = Path(db_root) / path
    return str(path)


def connect(db_path: str) -> sqlite3.Connection:
    if db_path == MEMORY_DB:
        return sqlite3.connect(MEMORY_DB)
    if not Path(db_path).exists():
        raise FileNotFoundError(db_path)
    return sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)


def execute_sql(db_ref: str, sql: str, limits: Limits = Limits(), db_root: Optional[Path] = None) -> ResultTable:
    """Run one statement read-only and return its result table.

    Raises an ``ExecError`` subclass on failure. Results longer than
    ``limits.max_rows`` raise ``RowLimitExceeded`` instead of truncating.
    """
    if not sql or not sql.strip():
        raise ValueError("sql must be non-empty")
    conn = connect(resolve_db(db_ref, db_root))
    deadline = time.monotonic() + limits.timeout_s
    timed_out = False

    def progress() -> int:
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    conn.set_progress_handler(progress, 1000)
    try:
        cur = conn.execute(sql)
        rows = cur.fetchmany(limits.max_rows + 1)
        if len(rows) > limits.max_rows:
            raise RowLimitExceeded(f"result exceeds {limits.max_rows} rows", sql)
        columns = [d[0] for d in cur.description] if cur.description else []
        return ResultTable.build(columns, rows)
    except ExecError:
        raise
    except (sqlite3.Error, sqlite3.Warning) as exc:
        raise classify_error(exc, sql, timed_out) from exc
    finally:
        conn.close()


def schema_identifiers(db_ref: str, db_root: Optional[Path] = None) -> set[str]:
    """Lower-cased table and column names of a database; empty if unavailable."""
    path = resolve_db(db_ref, db_root)
    if path == MEMORY_DB or not Path(path).exists():
        return set()
    names: set[str] = set()
    conn = connect(path)
    try:
        tables = [r[0] for r in conn.execute("SELECT name FROM sqlite_master WHERE type IN ('table','view')")]
        for t in tables:
            names.add(t.lower())
            for col in conn.execute(f'PRAGMA table_info("{t}")'):
                names.add(str(col[1]).lower())
    finally:
        conn.close()
    return names


def schema_summary(db_ref: str, db_root: Optional[Path] = None) -> str:
    path = resolve_db(db_ref, db_root)
    if path == MEMORY_DB or not Path(path).exists():
        return ""
    conn = connect(path)
    try:
        rows = conn.execute("SELECT sql FROM sqlite_master WHERE type='table' AND sql IS NOT NULL ORDER BY name")
        return "\n".join(r[0] for r in rows)
    finally:
        conn.close()


# -- canonical forms ---------------------------------------------------------


@dataclass(frozen=True)
class MatchPolicy:
    row_order_sensitive: bool = False
    float_sig_digits: int = 6
    column_match: str = "positional"
    null_token: str = "<NULL>"

    def __post_init__(self) -> None:
        if self.float_sig_digits < 1:
            raise ValueError("float_sig_digits must be >= 1")
        if self.column_match != "positional":
            raise ValueError(f"unsupported column_match {self.column_match!r}")


DEFAULT_POLICY = MatchPolicy()


def _round_sig(x: float, digits: int) -> float | int:
    if x != x or x in (float("inf"), float("-inf")):
        return x
    rounded = float(f"{x:.{digits - 1}e}")
    if rounded.is_integer():
        return int(Decimal(rounded))
    return rounded


def canonical_cell(cell: Cell, policy: MatchPolicy = DEFAULT_POLICY) -> Cell:
    if isinstance(cell, bool):
        return int(cell)
    if isinstance(cell, float):
        return _round_sig(cell, policy.float_sig_digits)
    if isinstance(cell, str):
        return cell.rstrip()
    if isinstance(cell, (bytes, bytearray)):
        return BlobDigest.of(bytes(cell))
    return cell


_TYPE_RANK = {type(None): 0, int: 1, float: 1, str: 2, BlobDigest: 3}


def _sort_key(row: tuple) -> tuple:
    return tuple((_TYPE_RANK[type(c)], "" if c is None else c) if not isinstance(c, BlobDigest)
                 else (3, c.hexdigest) for c in row)


def canonicalize(table: ResultTable, policy: MatchPolicy = DEFAULT_POLICY) -> ResultTable:
    """Normalized copy of ``table``; idempotent.

    Floats are rounded to ``policy.float_sig_digits`` significant digits (and
    collapse to ints when integral), trailing whitespace is trimmed from text,
    and rows are sorted unless the policy is order-sensitive.
    """
    rows = [tuple(canonical_cell(c, policy) for c in row) for row in table.rows]
    if not policy.row_order_sensitive:
        rows.sort(key=_sort_key)
    return ResultTable(table.columns, tuple(rows))


def _cell_token(cell: Cell, policy: MatchPolicy) -> list:
    if cell is None:
        return [policy.null_token]
    if isinstance(cell, int):
        return ["n", str(cell)]
    if isinstance(cell, float):
        return ["f", repr(cell)]
    if isinstance(cell, str):
        return ["s", cell]
    return ["b", cell.hexdigest]


def fingerprint(table: ResultTable, policy: MatchPolicy = DEFAULT_POLICY) -> str:
    """sha256 over the canonical form; column names are ignored (positional matching)."""
    canon = canonicalize(table, policy)
    payload = {
        "ncols": len(canon.columns),
        "ordered": policy.row_order_sensitive,
        "rows": [[_cell_token(c, policy) for c in row] for row in canon.rows],
    }
    blob = json.dumps(payload, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def results_match(pred: ResultTable, gold: ResultTable, policy: MatchPolicy = DEFAULT_POLICY) -> bool:
    if len(pred.columns) != len(gold.columns):
        return False
    return canonicalize(pred, policy).rows == canonicalize(gold, policy).rows


# -- manifests ---------------------------------------------------------------


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(ValueError):
    pass


def parse_instance(row: dict) -> Instance:
    if not isinstance(row, dict):
        raise ValueError("row must be a JSON object")
    for key in ("id", "question", "db"):
        if key not in row:
            raise ValueError(f"missing field {key!r}")
    has_sql = row.get("gold_sql") is not None
    has_result = row.get("gold_result") is not None
    if has_sql == has_result:
        raise ValueError("exactly one of gold_sql / gold_result is required")
    return Instance(
        instance_id=str(row["id"]),
        question=str(row["question"]),
        db_ref=str(row["db"]),
        gold_sql=row.get("gold_sql"),
        gold_result=ResultTable.from_json(row["gold_result"]) if has_result else None,
        dialect=str(row.get("dialect", "sqlite")),
    )


def load_manifest(path: str | Path) -> list[Instance]:
    instances: list[Instance] = []
    seen: set[str] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                inst = parse_instance(json.loads(line))
            except (ValueError, TypeError) as exc:
                raise ParseError(lineno, str(exc)) from exc
            if inst.instance_id in seen:
                raise DuplicateId(f"line {lineno}: duplicate id {inst.instance_id!r}")
            seen.add(inst.instance_id)
            instances.append(inst)
    return instances


def dump_manifest(instances: Iterable[Instance]) -> str:
    return "".join(json.dumps(i.to_json(), ensure_ascii=False) + "\n" for i in instances)


def save_manifest(instances: Iterable[Instance], path: str | Path) -> None:
    Path(path).write_text(dump_manifest(instances))


# -- gold answers ------------------------------------------------------------


class GoldStore:
    """Gold result tables, executing reference SQL at most once per instance."""

    def __init__(self, db_root: Optional[Path] = None, cache_dir: Optional[Path] = None,
                 limits: Limits = Limits(), policy: MatchPolicy = DEFAULT_POLICY):
        self.db_root = db_root
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.limits = limits
        self.policy = policy
        self._memo: dict[str, ResultTable] = {}

    def gold(self, instance: Instance) -> ResultTable:
        if instance.gold_result is not None:
            return instance.gold_result
        hit = self._memo.get(instance.instance_id)
        if hit is not None:
            return hit
        cache_file = self._cache_path(instance.instance_id)
        if cache_file is not None and cache_file.exists():
            table = ResultTable.from_json(json.loads(cache_file.read_text()))
        else:
            table = execute_sql(instance.db_ref, instance.gold_sql, self.limits, self.db_root)
            if cache_file is not None:
                cache_file.parent.mkdir(parents=True, exist_ok=True)
                cache_file.write_text(json.dumps(table.to_json(), sort_keys=True))
        self._memo[instance.instance_id] = table
        return table

    def _cache_path(self, instance_id: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", instance_id)
        return self.cache_dir / f"{safe}.json"

    def is_correct(self, instance: Instance, result: Optional[ResultTable]) -> bool:
        if result is None:
            return False
        return results_match(result, self.gold(instance), self.policy)

