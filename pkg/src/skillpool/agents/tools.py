"""The fixed six-tool set offered to every skill-conditioned agent."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from ..core import Instance
from ..execution import ExecError, Limits, execute_sql

TOOL_NAMES = (
    "execute_sql",
    "lookup_docs",
    "review_sql",
    "get_sql_pattern",
    "get_sql_templates",
    "submit_final_sql",
)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def _schema(name: str, description: str, arg: str, arg_desc: str) -> dict:
    return {
        "type": "function",
        "function": {
            "name": name,
            "description": description,
            "parameters": {
                "type": "object",
                "properties": {arg: {"type": "string", "description": arg_desc}},
                "required": [arg],
            },
        },
    }


TOOL_SCHEMAS = (
    _schema("execute_sql", "Run SQL against the task database; returns a result preview or the error.",
            "sql", "a single SQL statement"),
    _schema("lookup_docs", "Retrieve SQL dialect documentation or database notes.", "query", "topic to look up"),
    _schema("review_sql", "Ask a critic to review a SQL draft before submission.", "sql", "the draft query"),
    _schema("get_sql_pattern", "Retrieve an anonymized SQL pattern for a query type.", "query", "query type"),
    _schema("get_sql_templates", "Retrieve masked SQL templates by query category.", "query", "query category"),
    _schema("submit_final_sql", "Submit the final answer query and stop.", "sql", "the final query"),
)

REQUIRED_ARG = {
    t["function"]["name"]: t["function"]["parameters"]["required"][0] for t in TOOL_SCHEMAS
}

_WORD = re.compile(r"[a-z0-9]+")


@dataclass
class SnippetStore:
    """Text snippets keyed by tags; a query returns the best tag overlap."""

    snippets: dict[str, str] = field(default_factory=dict)  # key -> text

    @classmethod
    def from_dir(cls, directory: str | Path) -> "SnippetStore":
        directory = Path(directory)
        if not directory.is_dir():
            return cls()
        return cls({p.stem: p.read_text() for p in sorted(directory.glob("*.md"))})

    def _tags(self, key: str, text: str) -> set[str]:
        tags = set(_WORD.findall(key.lower().replace("_", " ")))
        first = text.splitlines()[0] if text else ""
        if first.lower().startswith("tags:"):
            tags |= set(_WORD.findall(first[5:].lower()))
        return tags

    def lookup(self, query: str) -> str:
        words = set(_WORD.findall(query.lower()))
        best_key, best_score = None, 0
        for key in sorted(self.snippets):
            score = len(words & self._tags(key, self.snippets[key]))
            if score > best_score:
                best_key, best_score = key, score
        if best_key is None:
            return f"No entry matches {query!r}. Available topics: {', '.join(sorted(self.snippets)) or 'none'}."
        return self.snippets[best_key]


_AGG_RE = re.compile(r"\b(count|sum|avg|min|max|group_concat|total)\s*\(", re.IGNORECASE)


def _select_list(sql: str) -> Optional[str]:
    m = re.search(r"\bselect\b(.*?)\bfrom\b", sql, re.IGNORECASE | re.DOTALL)
    return m.group(1) if m else None


def _split_top_level(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur).strip())
    return parts


def review_sql(sql: str) -> list[str]:
    """Rule-based critic. Returns findings; an empty list means no objection."""
    findings = []
    select_list = _select_list(sql)
    if select_list is None:
        return ["could not locate a SELECT ... FROM clause"]
    items = _split_top_level(select_list)
    if any(re.fullmatch(r"(\w+\.)?\*", i) for i in items):
        findings.append("SELECT * returns every column; list the columns the question asks for")
    has_group = re.search(r"\bgroup\s+by\b", sql, re.IGNORECASE) is not None
    aggregated = [bool(_AGG_RE.search(i)) for i in items]
    if any(aggregated) and not all(aggregated) and not has_group:
        findings.append("aggregate mixed with plain columns but no GROUP BY")
    elif has_group:
        gb = re.search(r"\bgroup\s+by\b(.*?)(\bhaving\b|\border\s+by\b|\blimit\b|$)", sql, re.IGNORECASE | re.DOTALL)
        grouped = {g.strip().lower() for g in _split_top_level(gb.group(1))} if gb else set()
        for item, agg in zip(items, aggregated):
            if agg:
                continue
            expr = re.split(r"\s+as\s+", item, flags=re.IGNORECASE)[0].strip().lower()
            alias = re.split(r"\s+as\s+", item, flags=re.IGNORECASE)[-1].strip().lower()
            if expr not in grouped and alias not in grouped and not expr.isdigit():
                findings.append(f"column {expr!r} is neither aggregated nor in GROUP BY")
    if re.search(r"\bjoin\b", sql, re.IGNORECASE):
        bare = [i for i in items if re.fullmatch(r"[A-Za-z_]\w*", i) and not _AGG_RE.search(i)]
        if bare:
            findings.append(f"unqualified columns in a multi-table query: {', '.join(bare)}")
    return findings


@dataclass
class ToolBox:
    """Dispatches tool calls for one agent run against one instance's database."""

    instance: Instance
    db_root: Optional[Path] = None
    limits: Limits = Limits()
    docs: SnippetStore = field(default_factory=lambda: SnippetStore.from_dir(DATA_DIR / "docs"))
    patterns: SnippetStore = field(default_factory=lambda: SnippetStore.from_dir(DATA_DIR / "patterns"))
    templates: SnippetStore = field(default_factory=lambda: SnippetStore.from_dir(DATA_DIR / "templates"))
    preview_rows: int = 20

    def dispatch(self, name: str, args: Mapping[str, str]) -> tuple[str, Optional[str]]:
        """Run one tool; returns (reply text, error message or None)."""
        if name == "execute_sql":
            try:
                table = execute_sql(self.instance.db_ref, args["sql"], self.limits, self.db_root)
            except ExecError as exc:
                return f"ERROR ({exc.kind}): {exc.message}", exc.summary()
            return table.preview(self.preview_rows), None
        if name == "lookup_docs":
            return self.docs.lookup(args["query"]), None
        if name == "get_sql_pattern":
            return self.patterns.lookup(args["query"]), None
        if name == "get_sql_templates":
            return self.templates.lookup(args["query"]), None
        if name == "review_sql":
            findings = review_sql(args["sql"])
            return ("No issues found." if not findings else "\n".join(f"- {f}" for f in findings)), None
        if name == "submit_final_sql":
            return "Submitted.", None
        raise KeyError(name)
