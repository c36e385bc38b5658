"""Table model, linearized text format and CSV ingestion.

The linearized format flattens a table into a single line: cells are joined
with ``" | "`` and lines with ``" <0x0A> "`` (the literal six-character
token, not a newline byte)::

    Entity | Value <0x0A> Asia | 4560.0 <0x0A> Africa | 1340.0

An optional leading single-cell line carries the chart title.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Optional, Sequence

LINE_TOKEN = "<0x0A>"
CELL_SEP = "|"
DEFAULT_CORNER = "Entity"

__all__ = [
    "Cell",
    "EntityMapping",
    "ForbiddenCharacter",
    "LINE_TOKEN",
    "MalformedCsv",
    "RaggedRow",
    "Table",
    "TableFormatError",
    "from_csv",
    "parse_linearized",
    "parse_numeric",
    "serialize_linearized",
    "to_entity_mappings",
]


class TableFormatError(ValueError):
    pass


class RaggedRow(TableFormatError):
    def __init__(self, line_index: int, expected: int, got: int):
        super().__init__(
            f"line {line_index}: expected {expected} cells, got {got}"
        )
        self.line_index = line_index
        self.expected = expected
        self.got = got


class ForbiddenCharacter(TableFormatError):
    pass


class MalformedCsv(TableFormatError):
    pass


# ---------------------------------------------------------------------------
# numeric parsing

_UNITS = {
    "thousand": 3,
    "million": 6,
    "billion": 9,
    "trillion": 12,
}
_NUMBER_RE = re.compile(
    r"""
    ^(?P<sign>[+-]?)
    (?P<cur>[$€£]?)
    (?P<sign2>[+-]?)
    (?P<mant>(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d*)?|\.\d+)
    (?P<exp>[eE][+-]?\d+)?
    \s*(?P<pct>%?)
    \s*(?P<unit>[A-Za-z]*)$
    """,
    re.VERBOSE,
)


def parse_decimal(raw: str) -> Optional[Decimal]:
    """Exact counterpart of :func:`parse_numeric`, returning a ``Decimal``."""
    m = _NUMBER_RE.match(raw.strip())
    if m is None:
        return None
    if m["sign"] and m["sign2"]:
        return None
    unit = m["unit"].lower()
    if unit and unit not in _UNITS:
        return None
    if m["pct"] and unit:
        return None
    try:
        value = Decimal(m["mant"].replace(",", "") + (m["exp"] or ""))
    except InvalidOperation:  # pragma: no cover - regex already guards this
        return None
    if unit:
        value = value.scaleb(_UNITS[unit])
    if "-" in (m["sign"] + m["sign2"]):
        value = -value
    return value


def parse_numeric(raw: str) -> Optional[float]:
    """Parse a chart cell such as ``"$1,234.5"``, ``"45%"`` or ``"1.56 billion"``.

    Returns ``None`` when the text is not a number.
    """
    value = parse_decimal(raw)
    if value is None:
        return None
    return float(value)


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class Cell:
    raw: str
    numeric: Optional[float] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "numeric", parse_numeric(self.raw))

    @property
    def is_numeric(self) -> bool:
        return self.numeric is not None


@dataclass(frozen=True)
class EntityMapping:
    row: str
    col: str
    value: Cell

    @property
    def key(self) -> str:
        return self.row + self.col


@dataclass(frozen=True)
class Table:
    col_headers: tuple[str, ...] = ()
    rows: tuple[tuple[str, tuple[Cell, ...]], ...] = ()
    title: Optional[str] = None
    corner: Optional[str] = None
    source_id: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "col_headers", tuple(self.col_headers))
        object.__setattr__(
            self,
            "rows",
            tuple((label, tuple(cells)) for label, cells in self.rows),
        )
        n = len(self.col_headers)
        for i, (label, cells) in enumerate(self.rows):
            if len(cells) != n:
                raise RaggedRow(i + 1, n, len(cells))

    @classmethod
    def from_values(
        cls,
        col_headers: Sequence[str],
        rows: Sequence[tuple[str, Sequence[object]]],
        **kwargs,
    ) -> "Table":
        """Build a table from plain Python values (numbers are rendered with ``str``)."""
        return cls(
            tuple(col_headers),
            tuple(
                (label, tuple(Cell(str(v)) for v in values))
                for label, values in rows
            ),
            **kwargs,
        )

    @property
    def row_labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.col_headers)

    def is_empty(self) -> bool:
        return not self.col_headers and not self.rows and self.title is None


# ---------------------------------------------------------------------------
# linearized format


def _split_cells(line: str) -> list[str]:
    return [c.strip() for c in line.split(CELL_SEP)]


def parse_linearized(text: str) -> Table:
    """Parse the linearized ``a | b <0x0A> c | d`` text form into a :class:`Table`."""
    text = text.strip()
    if not text:
        return Table()
    if "\n" in text or "\r" in text:
        raise TableFormatError(
            f"newline byte in linearized text; lines are separated by {LINE_TOKEN!r}"
        )
    lines = [ln.strip() for ln in text.split(LINE_TOKEN)]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        return Table()

    split = [_split_cells(ln) for ln in lines]
    title = None
    start = 0
    if len(split) >= 2 and len(split[1]) > 1:
        first = split[0]
        if len(first) == 1:
            title, start = first[0], 1
        elif len(first) == 2 and first[0] == "TITLE":
            # published model outputs sometimes begin with a "TITLE | ..." line
            title, start = first[1], 1

    header = split[start]
    corner, col_headers = header[0], tuple(header[1:])
    width = len(header)
    rows = []
    for idx in range(start + 1, len(split)):
        cells = split[idx]
        if len(cells) != width:
            raise RaggedRow(idx, width, len(cells))
        rows.append((cells[0], tuple(Cell(c) for c in cells[1:])))
    return Table(col_headers, tuple(rows), title=title, corner=corner)


def _check_text(text: str) -> str:
    if CELL_SEP in text or LINE_TOKEN in text or "\n" in text:
        raise ForbiddenCharacter(f"cannot linearize cell text {text!r}")
    return text


def serialize_linearized(t: Table) -> str:
    """Inverse of :func:`parse_linearized`; output is deterministic."""
    if t.is_empty():
        return ""
    lines = []
    if t.title is not None:
        lines.append(_check_text(t.title))
    corner = DEFAULT_CORNER if t.corner is None else t.corner
    header = [corner, *t.col_headers]
    lines.append(" | ".join(_check_text(h) for h in header))
    for label, cells in t.rows:
        parts = [label, *(c.raw for c in cells)]
        lines.append(" | ".join(_check_text(p) for p in parts))
    return f" {LINE_TOKEN} ".join(lines)


# ---------------------------------------------------------------------------
# CSV


def from_csv(data: bytes, source_id: Optional[str] = None) -> Table:
    """Read an RFC-4180 CSV: first row holds headers, first column row labels."""
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise MalformedCsv(f"not UTF-8: {exc}") from exc
    try:
        records = [
            r for r in csv.reader(io.StringIO(text, newline=""), strict=True) if r
        ]
    except csv.Error as exc:
        raise MalformedCsv(str(exc)) from exc
    if not records:
        return Table(source_id=source_id)
    header = [c.strip() for c in records[0]]
    width = len(header)
    rows = []
    for idx, rec in enumerate(records[1:], start=1):
        if len(rec) != width:
            raise RaggedRow(idx, width, len(rec))
        rec = [c.strip() for c in rec]
        rows.append((rec[0], tuple(Cell(c) for c in rec[1:])))
    return Table(
        tuple(header[1:]), tuple(rows), corner=header[0], source_id=source_id
    )


def to_entity_mappings(t: Table) -> list[EntityMapping]:
    return [
        EntityMapping(label, col, cell)
        for label, cells in t.rows
        for col, cell in zip(t.col_headers, cells)
    ]
