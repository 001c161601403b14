"""Result tables returned by SQL execution, plus their JSON encoding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Sequence


@dataclass(frozen=True, order=True)
class BlobDigest:
    """Stand-in for a binary cell: only the content hash is kept."""

    hexdigest: str

    @classmethod
    def of(cls, data: bytes) -> "BlobDigest":
        return cls(hashlib.sha256(data).hexdigest())


Cell = Any  # None | int | float | str | BlobDigest


def normalize_cell(value: Any) -> Cell:
    if value is None or isinstance(value, (str, BlobDigest)):
        return value
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, (bytes, bytearray, memoryview)):
        return BlobDigest.of(bytes(value))
    raise TypeError(f"unsupported cell type: {type(value).__name__}")


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    def __post_init__(self) -> None:
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} cells, expected {width}")

    @classmethod
    def build(cls, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> "ResultTable":
        return cls(
            tuple(str(c) for c in columns),
            tuple(tuple(normalize_cell(v) for v in row) for row in rows),
        )

    def __len__(self) -> int:
        return len(self.rows)

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "rows": [[_cell_to_json(c) for c in row] for row in self.rows],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ResultTable":
        if not isinstance(data, dict) or "columns" not in data or "rows" not in data:
            raise ValueError("result table needs 'columns' and 'rows'")
        return cls(
            tuple(str(c) for c in data["columns"]),
            tuple(tuple(_cell_from_json(c) for c in row) for row in data["rows"]),
        )

    def preview(self, max_rows: int = 20, max_cell: int = 200) -> str:
        """Plain-text rendering of the first rows, cells clipped to ``max_cell`` chars."""

        def clip(cell: Cell) -> str:
            text = "NULL" if cell is None else str(cell)
            return text if len(text) <= max_cell else text[:max_cell] + "..."

        lines = [" | ".join(self.columns)]
        lines += [" | ".join(clip(c) for c in row) for row in self.rows[:max_rows]]
        if len(self.rows) > max_rows:
            lines.append(f"... ({len(self.rows) - max_rows} more rows)")
        return "\n".join(lines)


def _cell_to_json(cell: Cell) -> Any:
    if isinstance(cell, BlobDigest):
        return {"blob": cell.hexdigest}
    return cell


def _cell_from_json(value: Any) -> Cell:
    if isinstance(value, dict):
        if set(value) != {"blob"}:
            raise ValueError(f"bad cell object: {value!r}")
        return BlobDigest(value["blob"])
    if isinstance(value, list):
        raise ValueError("nested list is not a valid cell")
    return value
