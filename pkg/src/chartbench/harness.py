"""Batch runs over an indexed dataset: preprocessing, scoring and model queries."""
from __future__ import annotations

import hashlib
import json
import logging
import threading
import zlib
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__, _kernels
from .dataset import ChartEntry, DatasetIndex
from .gateway import (
    AuthError,
    Endpoint,
    GatewayError,
    OfflineError,
    ReplayEndpoint,
    answer_question,
    build_rowcol_prompt,
    chat,
    parse_rowcol_response,
    template_versions,
)
from .imaging import Image
from .io_utils import atomic_write_bytes, atomic_write_json
from .metrics import (
    DEFAULT_TAU,
    DEFAULT_THETA,
    DEFAULT_TOL,
    ScoreTriple,
    corpus_bleu,
    rd_scores,
    relaxed_accuracy,
    rms_scores,
)
from .preprocess import (
    RowColAnnotation,
    make_training_triple,
    render_row_col_banner,
    write_sidecar,
)
from .report import ItemScore, MetricReport, aggregate_report
from .table import Table, TableFormatError, from_csv, parse_linearized

log = logging.getLogger(__name__)

PREDICTIONS_SCHEMA_VERSION = 1
FALLBACK_CHART_TYPE = "bar"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2

_ZERO = ScoreTriple(0.0, 0.0, 0.0)


@dataclass
class EvalParams:
    tau: float = DEFAULT_TAU
    theta: float = DEFAULT_THETA
    with_rms: bool = False
    splits: Optional[tuple] = ("test",)
    workers: int = 1


@dataclass
class RunSummary:
    written: int = 0
    skipped: int = 0
    failures: dict = field(default_factory=dict)
    hard_failure: Optional[str] = None

    @property
    def exit_code(self) -> int:
        if self.hard_failure:
            return EXIT_FAILURE
        return EXIT_PARTIAL if self.failures else EXIT_OK


def manifest(command: str, params: dict) -> dict:
    """Everything needed to replay an offline run byte-for-byte."""
    return {
        "command": command,
        "package_version": __version__,
        "kernel_backend": _kernels.BACKEND,
        "params": params,
        "templates": template_versions(),
        "metric_defaults": {"tau": DEFAULT_TAU, "theta": DEFAULT_THETA, "tol": DEFAULT_TOL},
    }


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_table(entry: ChartEntry) -> Table:
    if entry.table_path is None:
        raise FileNotFoundError(f"{entry.chart_id}: no table")
    return from_csv(entry.table_path.read_bytes(), source_id=entry.chart_id)


# ---------------------------------------------------------------------------
# chart-to-table evaluation


def run_eval_table(pred_dir, gold_index: DatasetIndex, params: EvalParams = EvalParams()) -> MetricReport:
    """Score ``<pred_dir>/<chart_id>.txt`` linearized predictions against gold CSVs."""
    pred_dir = Path(pred_dir)
    entries = [e for e in gold_index.in_splits(params.splits) if e.table_path is not None]

    def score(entry: ChartEntry):
        path = pred_dir / f"{entry.chart_id}.txt"
        rms0 = _ZERO if params.with_rms else None
        if not path.is_file():
            return ItemScore(entry.chart_id, entry.chart_type, _ZERO, rms0, note="missing"), True
        gold = load_table(entry)
        try:
            pred = parse_linearized(path.read_text("utf-8"))
        except TableFormatError as exc:
            return ItemScore(entry.chart_id, entry.chart_type, _ZERO, rms0, note=f"unparseable: {exc}"), False
        rd = rd_scores(pred, gold, params.theta, params.tau)
        rms = rms_scores(pred, gold, params.tau, params.theta) if params.with_rms else None
        return ItemScore(entry.chart_id, entry.chart_type, rd, rms), False

    results = _map(score, entries, params.workers)
    missing = [item.item_id for item, is_missing in results if is_missing]
    return aggregate_report([item for item, _ in results], "table", missing=missing)


# ---------------------------------------------------------------------------
# QA evaluation


def load_predictions(path) -> dict:
    """``{qid: answer}`` for answered questions in a predictions file."""
    doc = json.loads(Path(path).read_text("utf-8"))
    preds = doc.get("predictions", doc)
    out = {}
    for qid, rec in preds.items():
        answer = rec.get("answer") if isinstance(rec, dict) else rec
        if answer is not None:
            out[qid] = str(answer)
    return out


def attach_predictions(index: DatasetIndex, predictions: dict) -> DatasetIndex:
    for q in index.qa:
        q.predicted = predictions.get(q.qid)
    return index


def run_eval_qa(
    index: DatasetIndex,
    tol: float = DEFAULT_TOL,
    *,
    splits: Optional[tuple] = ("test",),
    with_bleu: bool = False,
) -> MetricReport:
    """Relaxed accuracy per QA kind and overall; unanswered questions count as wrong."""
    records = index.qa_in_splits(splits)
    items, missing = [], []
    for q in records:
        if q.predicted is None:
            missing.append(q.qid)
            items.append(ItemScore(q.qid, q.kind, correct=False, note="missing"))
        else:
            items.append(ItemScore(q.qid, q.kind, correct=relaxed_accuracy(q.predicted, q.gold, tol)))
    bleu = None
    if with_bleu and records:
        bleu = corpus_bleu([q.predicted or "" for q in records], [q.gold for q in records])
    return aggregate_report(items, "qa", bleu=bleu, missing=missing)


# ---------------------------------------------------------------------------
# preprocessing


def chart_seed(seed: int, chart_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(chart_id.encode("utf-8"))) & 0x7FFFFFFF


def _preprocess_one(args) -> tuple[str, Optional[str], list]:
    entry, out_dir, seed = args
    try:
        table = load_table(entry)
        original = Image.from_png(entry.image_path)
        chart_type = entry.chart_type if entry.chart_type in ("bar", "line", "pie") else FALLBACK_CHART_TYPE
        ann = RowColAnnotation.from_table(table)
        triple = make_training_triple(original, table, chart_type, chart_seed(seed, entry.chart_id), ann)
    except Exception as exc:  # per-chart isolation: record and move on
        return entry.chart_id, f"{type(exc).__name__}: {exc}", []
    base = Path(out_dir) / entry.split
    written = []
    for role, img in zip(("anchor", "positive", "negative"), triple):
        path = base / f"{entry.chart_id}.{role}.png"
        atomic_write_bytes(path, img.to_png())
        written.append(path)
    written.append(write_sidecar(base / f"{entry.chart_id}.png", ann))
    return entry.chart_id, None, written


def run_preprocess(
    index: DatasetIndex,
    out_dir,
    seed: int = 0,
    *,
    splits: tuple = ("train", "val"),
    workers: int = 1,
) -> RunSummary:
    """Write anchor/positive/negative PNGs and one row/column sidecar per chart."""
    out_dir = Path(out_dir)
    entries = index.in_splits(splits)
    jobs = [(e, str(out_dir), seed) for e in entries]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_preprocess_one, jobs))
    else:
        results = [_preprocess_one(j) for j in jobs]

    summary = RunSummary()
    files = {}
    for chart_id, error, written in results:
        if error is not None:
            summary.failures[chart_id] = error
            log.warning("preprocess %s failed: %s", chart_id, error)
            continue
        summary.written += len(written)
        for p in written:
            files[p.relative_to(out_dir).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    doc = manifest(
        "preprocess",
        {"seed": seed, "splits": list(splits), "dataset": str(index.root)},
    )
    doc["charts"] = len(entries)
    doc["failures"] = dict(sorted(summary.failures.items()))
    doc["files"] = dict(sorted(files.items()))
    atomic_write_json(out_dir / "manifest.json", doc)
    return summary


# ---------------------------------------------------------------------------
# model queries


def _read_existing(out_path: Path) -> dict:
    if not out_path.is_file():
        return {}
    doc = json.loads(out_path.read_text("utf-8"))
    return dict(doc.get("predictions", {}))


def _predictions_doc(preds: dict) -> dict:
    return {
        "schema_version": PREDICTIONS_SCHEMA_VERSION,
        "predictions": dict(sorted(preds.items())),
    }


def _table_for(entry: ChartEntry, tables_dir: Optional[Path]) -> Table:
    if tables_dir is not None:
        path = tables_dir / f"{entry.chart_id}.txt"
        return parse_linearized(path.read_text("utf-8")) if path.is_file() else Table()
    return load_table(entry) if entry.table_path is not None else Table()


def run_ask(
    index: DatasetIndex,
    endpoint: Optional[Endpoint],
    out_path,
    *,
    tables_dir=None,
    splits: Optional[tuple] = ("test",),
    workers: int = 1,
) -> RunSummary:
    """Answer every question in ``splits`` and write ``{qid: {"answer": ...}}``.

    Questions already answered in ``out_path`` are skipped, so an
    interrupted run can be resumed. The file is rewritten atomically after
    each answer.
    """
    out_path = Path(out_path)
    tables_dir = None if tables_dir is None else Path(tables_dir)
    summary = RunSummary()
    if endpoint is None:
        summary.hard_failure = str(OfflineError("no endpoint configured (use --endpoint or --fixtures)"))
        return summary

    preds = _read_existing(out_path)
    charts = index.by_id()
    todo = []
    for q in index.qa_in_splits(splits):
        if "answer" in preds.get(q.qid, {}):
            summary.skipped += 1
        else:
            todo.append(q)
    lock = threading.Lock()

    def ask(q):
        entry = charts[q.chart_id]
        try:
            image = Image.from_png(entry.image_path) if entry.image_path and entry.image_path.is_file() else None
            answer = answer_question(
                image, _table_for(entry, tables_dir), q.question, entry.chart_type,
                endpoint, request_id=q.qid,
            )
            rec = {"answer": answer}
        except (GatewayError, TableFormatError, OSError) as exc:
            rec = {"error": type(exc).__name__, "message": str(exc)}
            with lock:
                summary.failures[q.qid] = type(exc).__name__
                if isinstance(exc, (AuthError, OfflineError)):
                    summary.hard_failure = type(exc).__name__
        with lock:
            preds[q.qid] = rec
            if "answer" in rec:
                summary.written += 1
            atomic_write_json(out_path, _predictions_doc(preds))

    _map(ask, todo, workers)
    atomic_write_json(out_path, _predictions_doc(preds))
    params = {"splits": list(splits) if splits else None, "tables": str(tables_dir) if tables_dir else None}
    params["endpoint"] = "fixtures" if isinstance(endpoint, ReplayEndpoint) else endpoint.completions_url
    if not isinstance(endpoint, ReplayEndpoint):
        params["model"] = endpoint.model
    atomic_write_json(out_path.with_name(out_path.name + ".manifest.json"), manifest("ask", params))
    return summary


def run_extract_rowcol(
    index: DatasetIndex,
    endpoint: Optional[Endpoint],
    out_dir,
    *,
    splits: Optional[tuple] = ("test",),
    workers: int = 1,
) -> RunSummary:
    """Ask the model for each chart's row/column names and render the banner.

    Writes ``<chart_id>.png`` (banner + chart) and ``<chart_id>.rowcol.json``.
    """
    out_dir = Path(out_dir)
    summary = RunSummary()
    if endpoint is None:
        summary.hard_failure = "OfflineError"
        return summary
    lock = threading.Lock()

    def extract(entry: ChartEntry):
        try:
            image = Image.from_png(entry.image_path)
            payload = build_rowcol_prompt(image, request_id=entry.chart_id)
            ann = parse_rowcol_response(chat(payload, endpoint).text)
            out = out_dir / entry.split / f"{entry.chart_id}.png"
            atomic_write_bytes(out, render_row_col_banner(image, ann).to_png())
            write_sidecar(out, ann)
            with lock:
                summary.written += 1
        except (GatewayError, ValueError, OSError) as exc:
            with lock:
                summary.failures[entry.chart_id] = type(exc).__name__
                if isinstance(exc, (AuthError, OfflineError)):
                    summary.hard_failure = type(exc).__name__

    _map(extract, index.in_splits(splits), workers)
    atomic_write_json(
        out_dir / "manifest.json",
        manifest("extract-rowcol", {"splits": list(splits) if splits else None}),
    )
    return summary


def write_report(report: MetricReport, out_path, command: str, params) -> None:
    out_path = Path(out_path)
    atomic_write_bytes(out_path, report.to_json().encode("utf-8"))
    if not isinstance(params, dict):
        params = asdict(params)
    atomic_write_json(out_path.with_name(out_path.name + ".manifest.json"), manifest(command, params))
