"""Command line entry point: ``chartbench <subcommand> ...``.

Exit codes: 0 success, 1 hard failure, 2 partial (per-item failures recorded).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import DatasetError, ingest_dataset
from .gateway import ReplayEndpoint, ServiceConfig
from .harness import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_PARTIAL,
    EvalParams,
    attach_predictions,
    load_predictions,
    run_ask,
    run_eval_qa,
    run_eval_table,
    run_extract_rowcol,
    run_preprocess,
    write_report,
)
from .metrics import DEFAULT_TAU, DEFAULT_THETA, DEFAULT_TOL
from .report import MetricReport


def _splits(value: str):
    if value == "all":
        return None
    return tuple(s.strip() for s in value.split(",") if s.strip())


def _common(p: argparse.ArgumentParser, *, out_help: str):
    p.add_argument("--dataset", required=True, type=Path, help="dataset root (ChartQA layout)")
    p.add_argument("--out", required=True, type=Path, help=out_help)
    p.add_argument("--workers", type=int, default=1)


def _endpoint_args(p: argparse.ArgumentParser):
    p.add_argument("--endpoint", help="OpenAI-compatible server URL")
    p.add_argument("--model", help="model name sent with each request")
    p.add_argument("--config", type=Path, help="JSON file with endpoint/model/timeout settings")
    p.add_argument("--fixtures", type=Path, help="recorded completions (JSON keyed by request id)")


def _endpoint(args):
    if args.fixtures:
        return ReplayEndpoint.from_file(args.fixtures)
    if args.config:
        return ServiceConfig.from_file(args.config, endpoint=args.endpoint, model=args.model)
    if args.endpoint:
        kwargs = {"model": args.model} if args.model else {}
        return ServiceConfig(url=args.endpoint, max_in_flight=max(args.workers, 1), **kwargs)
    return None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="render anchor/positive/negative training images")
    _common(p, out_help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", default="train,val")

    p = sub.add_parser("eval-table", help="score linearized table predictions (RD, optional RMS)")
    _common(p, out_help="report JSON path")
    p.add_argument("--predictions", required=True, type=Path, help="directory of <chart_id>.txt files")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--theta", type=float, default=DEFAULT_THETA)
    p.add_argument("--rms", action="store_true", help="also report RMS")
    p.add_argument("--splits", default="test")

    p = sub.add_parser("eval-qa", help="score QA predictions with relaxed accuracy")
    _common(p, out_help="report JSON path")
    p.add_argument("--predictions", required=True, type=Path, help="predictions JSON from `ask`")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--bleu", action="store_true", help="also report corpus BLEU")
    p.add_argument("--splits", default="test")

    p = sub.add_parser("ask", help="answer questions with a vision chat model")
    _common(p, out_help="predictions JSON path (resumed if present)")
    _endpoint_args(p)
    p.add_argument("--tables", type=Path, help="directory of extracted <chart_id>.txt tables; gold CSVs if omitted")
    p.add_argument("--splits", default="test")

    p = sub.add_parser("extract-rowcol", help="extract row/column names with the model and render banners")
    _common(p, out_help="output directory")
    _endpoint_args(p)
    p.add_argument("--splits", default="test")

    p = sub.add_parser("report", help="print a saved report")
    p.add_argument("report", type=Path)
    p.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "report":
        report = MetricReport.from_dict(json.loads(args.report.read_text("utf-8")))
        sys.stdout.write(report.to_text() if args.format == "text" else report.to_json())
        return EXIT_OK

    try:
        index = ingest_dataset(args.dataset)
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    splits = _splits(args.splits)

    if args.command == "preprocess":
        summary = run_preprocess(index, args.out, args.seed, splits=splits or ("train", "val", "test"), workers=args.workers)
        print(f"wrote {summary.written} files, {len(summary.failures)} chart failure(s)")
        for chart_id, err in sorted(summary.failures.items()):
            print(f"  {chart_id}: {err}")
        return summary.exit_code

    if args.command == "eval-table":
        params = EvalParams(args.tau, args.theta, args.rms, splits, args.workers)
        report = run_eval_table(args.predictions, index, params)
        write_report(report, args.out, "eval-table", params)
        sys.stdout.write(report.to_text())
        return EXIT_PARTIAL if report.missing else EXIT_OK

    if args.command == "eval-qa":
        attach_predictions(index, load_predictions(args.predictions))
        report = run_eval_qa(index, args.tol, splits=splits, with_bleu=args.bleu)
        write_report(report, args.out, "eval-qa", {"tol": args.tol, "splits": args.splits, "bleu": args.bleu})
        sys.stdout.write(report.to_text())
        return EXIT_PARTIAL if report.missing else EXIT_OK

    endpoint = _endpoint(args)
    if args.command == "ask":
        summary = run_ask(index, endpoint, args.out, tables_dir=args.tables, splits=splits, workers=args.workers)
        verb = "answered"
    else:
        summary = run_extract_rowcol(index, endpoint, args.out, splits=splits, workers=args.workers)
        verb = "extracted"
    if summary.hard_failure:
        print(f"error: {summary.hard_failure}", file=sys.stderr)
    print(f"{verb} {summary.written}, skipped {summary.skipped}, failed {len(summary.failures)}")
    return summary.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
