"""Command line entry point: ``chemminer run|ingest|eval|dump-dict``.

Settings are layered: a TOML config file, then command line flags, then
environment variables, each overriding the previous.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .backends import ENV_MODEL, ENV_URL
from .config import DEFAULT_TOLERANCES
from .docmodel import page_text, save_document
from .evaluation import evaluate_dirs, format_report
from .ingest import DECODER_ENV, ConversionError, page_flags
from .pipeline import (ConfigError, PipelineConfig, analyse, bold_labels, discover_inputs, load_input,
                       run_pipeline, write_timing)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

USAGE_ERROR = 2

_FLAG_KEYS = ("backend", "workers", "context_limit", "multimodal", "chars_per_token", "chunk_overlap",
              "retries", "min_interval", "timeout", "decoder", "dump_tables", "remote_url", "remote_model")


def read_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    section = data.get("pipeline", data)
    unknown = set(section) - set(_FLAG_KEYS) - {"tolerances", "pipeline"}
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = {k: v for k, v in section.items() if k in _FLAG_KEYS}
    tol = dict(section.get("tolerances", {}))
    tol.update(data.get("tolerances", {}) if section is not data else {})
    if tol:
        out["tolerances"] = tol
    return out


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge config file, flags and environment into a validated PipelineConfig."""
    settings = read_config(getattr(args, "config", None))
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    tol_overrides = dict(settings.pop("tolerances", {}))
    for item in getattr(args, "tol", None) or []:
        name, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"--tol expects NAME=VALUE, got {item!r}")
        tol_overrides[name.strip()] = value.strip()
    env = {"remote_url": os.environ.get(ENV_URL), "remote_model": os.environ.get(ENV_MODEL),
           "decoder": os.environ.get(DECODER_ENV)}
    settings.update({k: v for k, v in env.items() if v})
    try:
        tolerances = DEFAULT_TOLERANCES.updated(tol_overrides)
        return PipelineConfig(tolerances=tolerances, **settings)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML settings file")
    p.add_argument("--backend", choices=("rule", "remote"))
    p.add_argument("--workers", type=int)
    p.add_argument("--context-limit", dest="context_limit", type=int)
    p.add_argument("--multimodal", action="store_true", default=None,
                   help="send embedded figure payloads to the backend")
    p.add_argument("--chars-per-token", dest="chars_per_token", type=float)
    p.add_argument("--chunk-overlap", dest="chunk_overlap", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--min-interval", dest="min_interval", type=float,
                   help="seconds between remote requests")
    p.add_argument("--timeout", type=float)
    p.add_argument("--decoder", help="external PDF decoder command (default: pymupdf)")
    p.add_argument("--url", dest="remote_url")
    p.add_argument("--model", dest="remote_model")
    p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override one tolerance")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chemminer", description="Mine reaction records from papers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline over PDFs or interchange JSON files")
    run.add_argument("inputs", nargs="+", help="files or directories")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--dump-tables", dest="dump_tables", metavar="DIR",
                     help="write one JSON file per detected table under DIR/<document>/")
    run.add_argument("--timing-out", help="write a paper_id,seconds,usd CSV here")
    run.add_argument("--usd-per-second", type=float, default=0.0)
    _add_pipeline_flags(run)

    ing = sub.add_parser("ingest", help="decode documents to interchange JSON with page flags")
    ing.add_argument("inputs", nargs="*", help="PDF or interchange JSON files or directories")
    ing.add_argument("--pdf", action="append", default=[], help="a PDF to decode")
    ing.add_argument("--interchange", action="append", default=[], help="an interchange JSON to check")
    ing.add_argument("--out", required=True)
    _add_pipeline_flags(ing)

    ev = sub.add_parser("eval", help="score extracted reactions against ground truth")
    ev.add_argument("--extracted", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--report", required=True, help="JSON report path; a .txt table is written beside it")
    ev.add_argument("--score-catalyst", action="store_true")
    ev.add_argument("--timing", help="CSV with columns paper_id,seconds,usd")

    dd = sub.add_parser("dump-dict", help="build and print the coreference dictionary only")
    dd.add_argument("inputs", nargs="+")
    dd.add_argument("--out", help="write to this directory instead of stdout")
    _add_pipeline_flags(dd)
    return parser


def _cmd_run(args, config: PipelineConfig) -> int:
    result = run_pipeline(config, args.inputs, args.out)
    if args.timing_out:
        write_timing(result, args.timing_out, args.usd_per_second)
    for r in result.documents:
        print(f"{r.source_id}: {r.status} ({r.reactions} reactions){' ' + r.error if r.error else ''}")
    if not result.documents:
        print("no input documents found", file=sys.stderr)
    return result.exit_code


def _cmd_ingest(args, config: PipelineConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sources = [*args.inputs, *args.pdf, *args.interchange]
    if not sources:
        raise ConfigError("ingest needs at least one input (positional, --pdf or --interchange)")
    ok = 0
    for path in discover_inputs(sources):
        try:
            doc = load_input(path, config.decoder)
        except (ConversionError, ValueError, KeyError, OSError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            continue
        save_document(doc, out / f"{doc.source_id}.json")
        tol = config.tolerances
        flags = page_flags([page_text(p, tol.row_tol, tol.space_gap) for p in doc.pages], tol.fuzzy_max)
        (out / f"{doc.source_id}.flags.json").write_text(
            json.dumps(flags, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        ok += 1
    return 0 if ok else 1


def _cmd_dump_dict(args, config: PipelineConfig) -> int:
    from . import agents
    from .corefdict import CorefDictionary

    backend = config.make_backend()
    ok = 0
    dumps = {}
    for path in discover_inputs(args.inputs):
        try:
            doc = load_input(path, config.decoder)
        except (ConversionError, ValueError, KeyError, OSError) as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            continue
        a = analyse(doc, config.tolerances)
        d = CorefDictionary()
        for p in doc.pages:
            agents.run_agent1_page(a.texts[p.index], a.sections[p.index], backend, d, p.index, bold_labels(p))
        agents.run_agent2_assets(a.tables, a.figures, backend, d)
        d.process_revisits(backend)
        dumps[doc.source_id] = d.to_dict()
        ok += 1
    text = json.dumps(dumps, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for sid, dump in dumps.items():
            (out / f"{sid}.dictionary.json").write_text(
                json.dumps(dump, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0 if ok else 1


def _cmd_eval(args) -> int:
    report = evaluate_dirs(args.extracted, args.truth, args.score_catalyst, args.timing)
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    table = format_report(report)
    path.with_suffix(".txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0 if report.rows else 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            return _cmd_eval(args)
        config = build_config(args)
        if args.command == "run":
            return _cmd_run(args, config)
        if args.command == "ingest":
            return _cmd_ingest(args, config)
        return _cmd_dump_dict(args, config)
    except ConfigError as exc:
        print(f"chemminer: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"chemminer: error: no such input {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
