"""Index a ChartQA-style dataset tree.

Expected layout::

    <root>/<split>/png/<chart_id>.png
    <root>/<split>/tables/<chart_id>.csv
    <root>/<split>/<split>_human.json       # [{"imgname", "query", "label"}, ...]
    <root>/<split>/<split>_augmented.json
    <root>/chart_types.csv                  # optional: chart_id,chart_type

Splits are any of ``train``, ``val`` and ``test``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
QA_KINDS = ("human", "augmented")


class DatasetError(ValueError):
    pass


class MissingDirectory(DatasetError):
    pass


class MissingTable(DatasetError):
    pass


class DuplicateChart(DatasetError):
    pass


@dataclass(frozen=True)
class ChartEntry:
    chart_id: str
    image_path: Optional[Path]
    table_path: Optional[Path]
    chart_type: str
    split: str


@dataclass
class QARecord:
    qid: str
    chart_id: str
    question: str
    gold: str
    kind: str
    predicted: Optional[str] = None
    tags: tuple = ()

    def __post_init__(self):
        if not self.question.strip() or not str(self.gold).strip():
            raise DatasetError(f"{self.qid}: question and gold answer must be non-empty")
        if self.kind not in QA_KINDS:
            raise DatasetError(f"{self.qid}: unknown QA kind {self.kind!r}")


@dataclass
class DatasetIndex:
    root: Path
    entries: list = field(default_factory=list)
    qa: list = field(default_factory=list)
    orphans: int = 0

    def entry(self, chart_id: str) -> ChartEntry:
        for e in self.entries:
            if e.chart_id == chart_id:
                return e
        raise KeyError(chart_id)

    def by_id(self) -> dict:
        return {e.chart_id: e for e in self.entries}

    def in_splits(self, splits) -> list:
        if splits is None:
            return list(self.entries)
        return [e for e in self.entries if e.split in splits]

    def qa_in_splits(self, splits) -> list:
        if splits is None:
            return list(self.qa)
        split_of = {e.chart_id: e.split for e in self.entries}
        return [q for q in self.qa if split_of[q.chart_id] in splits]

    def to_dict(self) -> dict:
        def rel(p: Optional[Path]):
            return None if p is None else p.relative_to(self.root).as_posix()

        return {
            "entries": [
                {
                    "chart_id": e.chart_id,
                    "image": rel(e.image_path),
                    "table": rel(e.table_path),
                    "chart_type": e.chart_type,
                    "split": e.split,
                }
                for e in self.entries
            ],
            "qa": [
                {
                    "id": q.qid,
                    "chart_id": q.chart_id,
                    "question": q.question,
                    "gold": q.gold,
                    "kind": q.kind,
                    "tags": list(q.tags),
                }
                for q in self.qa
            ],
            "orphans": self.orphans,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)


def _read_chart_types(path: Path) -> dict:
    if not path.is_file():
        return {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        return {
            row["chart_id"].strip(): row["chart_type"].strip().lower()
            for row in csv.DictReader(fh)
        }


def ingest_dataset(root: str | Path) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise MissingDirectory(f"dataset root {root} does not exist")
    splits = [s for s in SPLITS if (root / s).is_dir()]
    if not splits:
        raise MissingDirectory(f"{root} has none of the split directories {SPLITS}")

    types = _read_chart_types(root / "chart_types.csv")
    entries: dict[str, ChartEntry] = {}
    qa: list[QARecord] = []
    orphans = 0
    for split in splits:
        png_dir = root / split / "png"
        if not png_dir.is_dir():
            raise MissingDirectory(f"missing {png_dir}")
        split_types = {**types, **_read_chart_types(root / split / "chart_types.csv")}
        for png in sorted(png_dir.glob("*.png")):
            chart_id = png.stem
            if chart_id in entries:
                raise DuplicateChart(f"chart id {chart_id!r} appears in two splits")
            table = root / split / "tables" / f"{chart_id}.csv"
            if not table.is_file():
                if split != "test":
                    raise MissingTable(f"{split} chart {chart_id!r} has no table at {table}")
                table = None
            entries[chart_id] = ChartEntry(
                chart_id, png, table, split_types.get(chart_id, "unknown"), split
            )

        for kind in QA_KINDS:
            qa_file = root / split / f"{split}_{kind}.json"
            if not qa_file.is_file():
                continue
            for k, rec in enumerate(json.loads(qa_file.read_text("utf-8"))):
                chart_id = Path(rec["imgname"]).stem
                if chart_id not in entries or entries[chart_id].split != split:
                    orphans += 1
                    log.warning("%s: question %d references unknown chart %r", qa_file.name, k, chart_id)
                    continue
                qa.append(
                    QARecord(
                        qid=str(rec.get("id", f"{split}-{kind}-{k:05d}")),
                        chart_id=chart_id,
                        question=rec["query"],
                        gold=str(rec["label"]),
                        kind=kind,
                        tags=tuple(rec.get("tags", ())),
                    )
                )
    if orphans:
        log.warning("skipped %d orphan question(s)", orphans)
    qids = [q.qid for q in qa]
    if len(set(qids)) != len(qids):
        raise DatasetError("question ids are not unique")
    return DatasetIndex(
        root=root,
        entries=sorted(entries.values(), key=lambda e: e.chart_id),
        qa=sorted(qa, key=lambda q: q.qid),
        orphans=orphans,
    )
