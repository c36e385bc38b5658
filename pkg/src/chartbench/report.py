"""Aggregated evaluation reports (JSON document plus a fixed-width text table).

Library scores live on [0, 1]; serialized reports use the 0-100 scale of
published result tables.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .metrics import ScoreTriple

REPORT_SCHEMA_VERSION = 1
SCALE = 100.0


@dataclass(frozen=True)
class ItemScore:
    item_id: str
    group: str
    rd: Optional[ScoreTriple] = None
    rms: Optional[ScoreTriple] = None
    correct: Optional[bool] = None
    note: Optional[str] = None


@dataclass(frozen=True)
class GroupSummary:
    count: int
    rd: Optional[ScoreTriple] = None
    rms: Optional[ScoreTriple] = None
    ra: Optional[float] = None


@dataclass
class MetricReport:
    kind: str
    overall: GroupSummary
    groups: dict = field(default_factory=dict)
    per_item: list = field(default_factory=list)
    bleu: Optional[float] = None
    missing: list = field(default_factory=list)

    @property
    def rd(self) -> Optional[ScoreTriple]:
        return self.overall.rd

    @property
    def rms(self) -> Optional[ScoreTriple]:
        return self.overall.rms

    @property
    def ra(self) -> Optional[float]:
        return self.overall.ra

    @property
    def counts(self) -> dict:
        return {g: s.count for g, s in self.groups.items()}

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": self.kind,
            "scale": SCALE,
            "overall": _summary_doc(self.overall),
            "groups": {g: _summary_doc(s) for g, s in sorted(self.groups.items())},
            "bleu": None if self.bleu is None else self.bleu * SCALE,
            "missing": list(self.missing),
            "per_item": [_item_doc(it) for it in self.per_item],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
        return cls(
            kind=doc["kind"],
            overall=_summary_from(doc["overall"]),
            groups={g: _summary_from(s) for g, s in doc["groups"].items()},
            per_item=[_item_from(d) for d in doc["per_item"]],
            bleu=None if doc.get("bleu") is None else doc["bleu"] / SCALE,
            missing=list(doc.get("missing", [])),
        )

    def to_text(self) -> str:
        metrics = []
        if self.overall.rd is not None:
            metrics += [("RD_P", "rd", "precision"), ("RD_R", "rd", "recall"), ("RD_F1", "rd", "f1")]
        if self.overall.rms is not None:
            metrics += [("RMS_P", "rms", "precision"), ("RMS_R", "rms", "recall"), ("RMS_F1", "rms", "f1")]
        if self.overall.ra is not None:
            metrics += [("RA", "ra", None)]
        header = f"{'group':<12}{'n':>6}" + "".join(f"{m[0]:>9}" for m in metrics)
        out = [header, "-" * len(header)]

        def row(name: str, s: GroupSummary) -> str:
            cells = []
            for _, attr, sub in metrics:
                val = getattr(s, attr)
                if val is not None and sub is not None:
                    val = getattr(val, sub)
                cells.append(f"{'-':>9}" if val is None else f"{val * SCALE:>9.2f}")
            return f"{name:<12}{s.count:>6}" + "".join(cells)

        for g, s in sorted(self.groups.items()):
            out.append(row(g, s))
        out.append(row("overall", self.overall))
        if self.bleu is not None:
            out.append(f"BLEU {self.bleu * SCALE:.2f}")
        if self.missing:
            out.append(f"missing predictions: {len(self.missing)}")
        return "\n".join(out) + "\n"


def _scaled(t: Optional[ScoreTriple]):
    if t is None:
        return None
    return {k: v * SCALE for k, v in t.as_dict().items()}


def _unscaled(d) -> Optional[ScoreTriple]:
    if d is None:
        return None
    return ScoreTriple(d["precision"] / SCALE, d["recall"] / SCALE, d["f1"] / SCALE)


def _summary_doc(s: GroupSummary) -> dict:
    return {
        "count": s.count,
        "rd": _scaled(s.rd),
        "rms": _scaled(s.rms),
        "ra": None if s.ra is None else s.ra * SCALE,
    }


def _summary_from(d: dict) -> GroupSummary:
    return GroupSummary(
        d["count"],
        _unscaled(d.get("rd")),
        _unscaled(d.get("rms")),
        None if d.get("ra") is None else d["ra"] / SCALE,
    )


def _item_doc(it: ItemScore) -> dict:
    return {
        "id": it.item_id,
        "group": it.group,
        "rd": _scaled(it.rd),
        "rms": _scaled(it.rms),
        "correct": it.correct,
        "note": it.note,
    }


def _item_from(d: dict) -> ItemScore:
    return ItemScore(
        d["id"], d["group"], _unscaled(d.get("rd")), _unscaled(d.get("rms")),
        d.get("correct"), d.get("note"),
    )


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _mean_triple(triples: Sequence[ScoreTriple]) -> ScoreTriple:
    return ScoreTriple(
        _mean([t.precision for t in triples]),
        _mean([t.recall for t in triples]),
        _mean([t.f1 for t in triples]),
    )


def _summarize(items: Sequence[ItemScore]) -> GroupSummary:
    rd = [it.rd for it in items if it.rd is not None]
    rms = [it.rms for it in items if it.rms is not None]
    qa = [it.correct for it in items if it.correct is not None]
    return GroupSummary(
        count=len(items),
        rd=_mean_triple(rd) if rd else None,
        rms=_mean_triple(rms) if rms else None,
        ra=_mean([1.0 if c else 0.0 for c in qa]) if qa else None,
    )


def aggregate_report(
    items: Sequence[ItemScore],
    kind: str = "table",
    *,
    bleu: Optional[float] = None,
    missing: Sequence[str] = (),
) -> MetricReport:
    """Arithmetic means per group and overall; items are ordered by id."""
    ordered = sorted(items, key=lambda it: (it.item_id, it.group))
    groups: dict[str, list[ItemScore]] = {}
    for it in ordered:
        groups.setdefault(it.group, []).append(it)
    overall = _summarize(ordered) if ordered else GroupSummary(0)
    return MetricReport(
        kind=kind,
        overall=overall,
        groups={g: _summarize(v) for g, v in sorted(groups.items())},
        per_item=ordered,
        bleu=bleu,
        missing=sorted(missing),
    )
