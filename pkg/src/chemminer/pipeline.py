"""End-to-end orchestration: documents in, reaction records out.

Per document::

    ingest -> Agent I per page  |  tables + figures -> Agent II
           -> dictionary revisits -> Agent III -> substitution -> emit

Backend calls for Agent I pages and Agent II assets run in a bounded
thread pool, but their results enter the dictionary in a fixed order
(pages first, then assets), so outputs do not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import agents
from .backends import BackendError, ExtractionBackend, RemoteBackend, RuleBackend, ENV_KEY, ENV_MODEL, ENV_URL
from .config import DEFAULT_TOLERANCES, Tolerances
from .corefdict import CorefDictionary, is_label
from .docmodel import StructuredDocument, load_document, page_text, reading_rows, validate_document
from .figures import FigureAsset, extract_figures, write_manifest
from .ingest import ConversionError, SectionKind, classify_section, convert_pdf, page_flags
from .reactions import build_records, emit
from .tables import TableGrid, detect_tables, dump_tables, merge_cross_page

log = logging.getLogger(__name__)

INPUT_SUFFIXES = (".pdf", ".json")


class ConfigError(ValueError):
    """Invalid pipeline configuration (a usage error)."""


@dataclass(frozen=True)
class PipelineConfig:
    backend: str = "rule"
    workers: int = 4
    tolerances: Tolerances = DEFAULT_TOLERANCES
    context_limit: int = 128_000
    multimodal: bool = False
    chars_per_token: float = agents.CHARS_PER_TOKEN
    chunk_overlap: int = agents.CHUNK_OVERLAP_TOKENS
    retries: int = 2
    min_interval: float = 0.0
    timeout: float = 120.0
    decoder: str | None = None
    dump_tables: str | None = None
    remote_url: str | None = None
    remote_model: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("rule", "remote"):
            raise ConfigError(f"backend must be 'rule' or 'remote', not {self.backend!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.context_limit <= 0 or self.chars_per_token <= 0 or self.chunk_overlap < 0 or self.retries < 0:
            raise ConfigError("context_limit and chars_per_token must be positive; "
                              "chunk_overlap and retries non-negative")
        if self.backend == "remote" and not (self.url and self.model):
            raise ConfigError(f"remote backend requires {ENV_URL} and {ENV_MODEL}")

    @property
    def url(self) -> str:
        return self.remote_url or os.environ.get(ENV_URL, "")

    @property
    def model(self) -> str:
        return self.remote_model or os.environ.get(ENV_MODEL, "")

    def make_backend(self) -> ExtractionBackend:
        if self.backend == "rule":
            return RuleBackend(self.context_limit)
        return RemoteBackend(self.url, self.model, os.environ.get(ENV_KEY) or None, self.context_limit,
                             self.multimodal, self.timeout, self.min_interval)

    def snapshot(self) -> dict:
        """Settings as recorded next to the outputs; the API key is never included."""
        d = asdict(self)
        d["tolerances"] = self.tolerances.as_dict()
        d["remote_url"] = self.url or None if self.backend == "remote" else None
        d["remote_model"] = self.model or None if self.backend == "remote" else None
        return d


@dataclass
class DocumentResult:
    source_id: str
    status: str  # ok | partial | failed
    reactions: int = 0
    failed_pages: list[int] = field(default_factory=list)
    failed_assets: list[int] = field(default_factory=list)
    error: str = ""
    seconds: float = 0.0


@dataclass
class RunResult:
    documents: list[DocumentResult]

    @property
    def exit_code(self) -> int:
        return 0 if any(d.status == "ok" for d in self.documents) else 1


def load_input(path: Path, decoder: str | None = None) -> StructuredDocument:
    if path.suffix.lower() == ".pdf":
        return convert_pdf(path.read_bytes(), path.stem, decoder)
    doc = load_document(path)
    problems = validate_document(doc)
    if problems:
        raise ConversionError(f"{path}: invalid interchange document: " + "; ".join(map(str, problems[:5])))
    return doc


def discover_inputs(paths: Sequence[str | os.PathLike]) -> list[Path]:
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            found.extend(sorted(q for q in p.iterdir() if q.is_file() and q.suffix.lower() in INPUT_SUFFIXES))
        elif p.is_file():
            found.append(p)
        else:
            raise FileNotFoundError(p)
    return found


def bold_labels(page) -> frozenset[str]:
    """Label-shaped tokens rendered entirely in bold on ``page``."""
    out = set()
    for row in reading_rows(page.chars):
        word = ""
        for c in row + [None]:
            if c is not None and c.bold and not c.is_space:
                word += c.glyph
                continue
            token = word.strip(".,;:()[]")
            if token and is_label(token):
                out.add(token)
            word = ""
    return frozenset(out)


def _with_retries(fn: Callable, retries: int):
    """Call ``fn``; on BackendError retry up to ``retries`` times.  Returns (value, error)."""
    for attempt in range(retries + 1):
        try:
            return fn(), None
        except BackendError as exc:
            if attempt == retries:
                return None, exc
            log.info("transient backend failure, retrying (%d/%d): %s", attempt + 1, retries, exc)


@dataclass
class DocumentAnalysis:
    """Everything derived from a document before the reaction agent runs."""

    doc: StructuredDocument
    texts: list[str]
    sections: list[SectionKind]
    page_tables: dict[int, list[TableGrid]]
    tables: list[TableGrid]
    figures: list[FigureAsset]


def analyse(doc: StructuredDocument, tol: Tolerances = DEFAULT_TOLERANCES) -> DocumentAnalysis:
    texts = [page_text(p, tol.row_tol, tol.space_gap) for p in doc.pages]
    sections = [classify_section(t) for t in texts]
    page_tables = {p.index: detect_tables(p, tol) for p in doc.pages}
    tables = merge_cross_page([t for p in doc.pages for t in page_tables[p.index]], doc, tol)
    figures = [f for p in doc.pages for f in extract_figures(p, page_tables[p.index], tol)]
    return DocumentAnalysis(doc, texts, sections, page_tables, tables, figures)


def process_document(doc: StructuredDocument, config: PipelineConfig, backend: ExtractionBackend,
                     out_dir: Path, pool: ThreadPoolExecutor | None = None) -> DocumentResult:
    start = time.perf_counter()
    tol = config.tolerances
    a = analyse(doc, tol)
    result = DocumentResult(doc.source_id, "ok")
    own_pool = pool is None
    pool = pool or ThreadPoolExecutor(max_workers=config.workers)
    try:
        page_jobs = [pool.submit(_with_retries, lambda p=p: agents.agent1_candidates(
            a.texts[p.index], a.sections[p.index], backend, p.index, bold_labels(p),
            config.chars_per_token), config.retries) for p in doc.pages]
        asset_jobs = [pool.submit(_with_retries, lambda t=t: agents.agent2_table_candidates(t, backend),
                                  config.retries) for t in a.tables]
        asset_jobs += [pool.submit(_with_retries, lambda f=f: agents.agent2_figure_candidates(f, backend),
                                   config.retries) for f in a.figures]
        page_results = [j.result() for j in page_jobs]
        asset_results = [j.result() for j in asset_jobs]
    finally:
        if own_pool:
            pool.shutdown()

    dictionary = CorefDictionary()
    outcomes: list[dict] = []
    for k, (cands, err) in enumerate(page_results):
        if err is not None:
            result.failed_pages.append(k)
            log.warning("%s page %d failed: %s", doc.source_id, k, err)
            continue
        outcomes += [_outcome_dict(o) for o in agents.insert_candidates(dictionary, cands)]
    for k, (cands, err) in enumerate(asset_results):
        if err is not None:
            result.failed_assets.append(k)
            log.warning("%s asset %d failed: %s", doc.source_id, k, err)
            continue
        outcomes += [_outcome_dict(o) for o in agents.insert_candidates(dictionary, cands)]

    revisits = dictionary.process_revisits(backend)
    doc_text, offsets = agents.build_document_text(doc, a.page_tables, a.tables, tol)
    raws = agents.run_agent3_document(doc_text, dictionary, backend, offsets, config.chars_per_token,
                                      config.chunk_overlap)
    records = build_records(doc.source_id, raws, dictionary)

    out_dir.mkdir(parents=True, exist_ok=True)
    emit(records, out_dir / "reactions.json")
    dump = dictionary.to_dict()
    dump["outcomes"] = outcomes
    dump["revisits"] = [asdict(r) for r in revisits]
    _write_json(out_dir / "dictionary.json", dump)
    write_manifest(a.figures, out_dir)
    flags = page_flags(a.texts, tol.fuzzy_max)
    for f in flags:
        f["failed"] = f["page"] in result.failed_pages
    _write_json(out_dir / "flags.json", {"pages": flags, "failed_assets": result.failed_assets})
    if config.dump_tables:
        dump_tables(a.tables, Path(config.dump_tables) / doc.source_id)

    result.reactions = len(records)
    if result.failed_pages or result.failed_assets:
        result.status = "partial"
    result.seconds = time.perf_counter() - start
    return result


def _outcome_dict(o: agents.PairOutcome) -> dict:
    d = {"label": o.label, "molecule": o.molecule, "status": o.status}
    if o.reason:
        d["reason"] = o.reason
    if o.provenance is not None:
        d["provenance"] = asdict(o.provenance)
    return d


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def run_pipeline(config: PipelineConfig, inputs: Sequence[str | os.PathLike], out_root: str | os.PathLike,
                 backend: ExtractionBackend | None = None) -> RunResult:
    """Process every input document into ``out_root/<source_id>/``.

    A failure inside one document is recorded and does not affect the others.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    backend = backend or config.make_backend()
    _write_json(out_root / "config.json", config.snapshot())
    paths = discover_inputs(inputs)

    def load(path: Path) -> StructuredDocument | DocumentResult:
        try:
            return load_input(path, config.decoder)
        except (ConversionError, ValueError, KeyError, TypeError, OSError) as exc:
            return DocumentResult(path.stem, "failed", error=f"{type(exc).__name__}: {exc}")

    def process(item, pool: ThreadPoolExecutor) -> DocumentResult:
        if isinstance(item, DocumentResult):
            return item
        try:
            return process_document(item, config, backend, out_root / item.source_id, pool)
        except Exception as exc:  # isolate the failure to this document
            log.exception("%s failed", item.source_id)
            return DocumentResult(item.source_id, "failed", error=f"{type(exc).__name__}: {exc}")

    # document drivers run on their own small pool so they never starve the
    # per-page and per-asset jobs they submit to the inner pool
    n_outer = min(config.workers, max(len(paths), 1))
    with ThreadPoolExecutor(max_workers=config.workers) as inner, \
            ThreadPoolExecutor(max_workers=n_outer) as outer:
        loaded = list(outer.map(load, paths))
        seen: set[str] = set()
        for k, item in enumerate(loaded):
            if isinstance(item, DocumentResult):
                continue
            if item.source_id in seen:
                loaded[k] = DocumentResult(item.source_id, "failed",
                                           error=f"duplicate source_id from {paths[k].name}")
            seen.add(item.source_id)
        results = list(outer.map(lambda item: process(item, inner), loaded))

    lines = [f"{r.source_id}\t{r.status}\treactions={r.reactions}"
             + (f"\tfailed_pages={r.failed_pages}" if r.failed_pages else "")
             + (f"\tfailed_assets={r.failed_assets}" if r.failed_assets else "")
             + (f"\terror={r.error}" if r.error else "") for r in results]
    if not results:
        lines.append("no input documents")
    (out_root / "run.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return RunResult(results)


def write_timing(results: RunResult, path: str | os.PathLike, usd_per_second: float = 0.0) -> None:
    """Write a ``paper_id,seconds,usd`` CSV for the evaluation cost block."""
    rows = ["paper_id,seconds,usd"]
    for r in results.documents:
        if r.status != "failed":
            rows.append(f"{r.source_id},{r.seconds:.6f},{r.seconds * usd_per_second:.6f}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
