"""The three extraction agents.

Agent I reads page text for coreference definitions, Agent II reads tables
and figures, and Agent III reads the whole document for reaction records.
All of them talk to an :class:`~chemminer.backends.ExtractionBackend`
through versioned prompt templates and strict JSON parsing.
"""

from __future__ import annotations

import logging
import re
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Sequence

from .backends import BackendError, ExtractionBackend, count_tokens
from .config import DEFAULT_TOLERANCES, Tolerances
from .corefdict import (
    CorefDictionary,
    CorefEntry,
    LabelVerdict,
    MoleculeName,
    Provenance,
    normalize_molecule,
    validate_label,
)
from .docmodel import StructuredDocument, reading_rows, row_text
from .figures import FigureAsset
from .ingest import SectionKind
from .parsing import ResponseParseError, parse_backend_response
from .prompts import JSON_ONLY_SUFFIX, PromptTemplate, load_template
from .tables import TableGrid, table_to_text

log = logging.getLogger(__name__)

YIELD_RE = re.compile(r"(?:[<>≥≤~]\s*|up to\s+)?\d+(?:\.\d+)?\s*%?\s*(?:[-–—]|to)\s*\d+(?:\.\d+)?\s*%"
                      r"|(?:[<>≥≤~]\s*|up to\s+)?\d+(?:\.\d+)?\s*%", re.I)

CHUNK_OVERLAP_TOKENS = 512
CHARS_PER_TOKEN = 4.0
COREF_OUTPUT_TOKENS = 1024
REACTION_OUTPUT_TOKENS = 4096


# -- shared plumbing ------------------------------------------------------------

def ask(backend: ExtractionBackend, template: PromptTemplate, content: str, shape: str,
        token_budget: int, extra: str = "", images: Sequence[tuple[str, bytes]] = ()):
    """Submit once; on a parse failure retry once asking for JSON only.

    Transport errors propagate as :class:`BackendError`; a second parse
    failure propagates as :class:`ResponseParseError`.
    """
    prompt = template.render(extra)
    reply = backend.submit(prompt, content, token_budget, images)
    try:
        return parse_backend_response(reply, shape)
    except ResponseParseError as exc:
        log.info("%s: unparseable reply (%s); retrying", template.task_id, exc)
    reply = backend.submit(prompt + JSON_ONLY_SUFFIX, content, token_budget, images)
    return parse_backend_response(reply, shape)


def chunk_text(text: str, max_tokens: int, overlap_tokens: int = CHUNK_OVERLAP_TOKENS,
               chars_per_token: float = CHARS_PER_TOKEN) -> list[tuple[int, str]]:
    """Split at blank-line section boundaries into windows of at most ``max_tokens``.

    Consecutive chunks share up to ``overlap_tokens`` of trailing sections.
    Returns ``(offset, chunk)`` pairs with ``text[offset:offset+len(chunk)] == chunk``.
    """
    max_chars = max(int(max_tokens * chars_per_token), 1)
    if len(text) <= max_chars:
        return [(0, text)] if text else []
    overlap_chars = int(overlap_tokens * chars_per_token)
    units: list[tuple[int, int]] = []
    start = 0
    for m in re.finditer(r"\n\s*\n", text):
        units.append((start, m.end()))
        start = m.end()
    if start < len(text):
        units.append((start, len(text)))
    pieces: list[tuple[int, int]] = []
    for a, b in units:
        while b - a > max_chars:
            cut = text.rfind("\n", a + 1, a + max_chars)
            if cut <= a:
                cut = text.rfind(" ", a + 1, a + max_chars)
            cut = cut + 1 if cut > a else a + max_chars
            pieces.append((a, cut))
            a = cut
        pieces.append((a, b))
    chunks = []
    i = 0
    while i < len(pieces):
        start = pieces[i][0]
        j = i
        while j < len(pieces) and pieces[j][1] - start <= max_chars:
            j += 1
        j = max(j, i + 1)
        end = pieces[j - 1][1]
        chunks.append((start, text[start:end]))
        if j >= len(pieces):
            break
        k = j
        while k - 1 > i and pieces[j - 1][1] - pieces[k - 1][0] <= overlap_chars:
            k -= 1
        i = k
    return chunks


def _budget(backend: ExtractionBackend, template: PromptTemplate, output_tokens: int,
            chars_per_token: float, extra: str = "") -> int:
    room = backend.context_limit - count_tokens(template.render(extra), chars_per_token) - output_tokens
    if room <= 0:
        raise ValueError(f"backend context of {backend.context_limit} tokens cannot fit the "
                         f"{template.task_id} prompt")
    return room


def _snippet(text: str, label: str, width: int = 160) -> str:
    m = re.search(r"(?<![\w.\-])" + re.escape(label) + r"(?![\w\-])", text)
    if not m:
        return ""
    return " ".join(text[max(0, m.start() - width // 2):m.end() + width // 2].split())


@dataclass(frozen=True)
class Candidate:
    """A label/molecule pair proposed by a backend, with its validation verdict."""

    label: str
    molecule: str
    verdict: LabelVerdict
    entry: CorefEntry | None = None


@dataclass(frozen=True)
class PairOutcome:
    label: str
    molecule: str
    status: str  # inserted | duplicate | conflict | rejected
    reason: str = ""
    provenance: Provenance | None = None


def _candidates(mapping: dict[str, str], source: str, provenance: Provenance,
                bold_labels: frozenset[str] = frozenset(), image_borne: bool = False) -> list[Candidate]:
    out = []
    for label, name in mapping.items():
        label = label.strip()
        name = (name or "").strip()
        context = source
        if image_borne:
            # a multimodal reply reads the label off pixels; its own pairing is the definition
            context = f"{source}\n{label} = {name}"
        verdict = validate_label(label, context, bold=label in bold_labels)
        if verdict and not normalize_molecule(name):
            verdict = LabelVerdict(False, "empty_molecule")
        entry = None
        if verdict:
            entry = CorefEntry(label, MoleculeName(name), provenance, _snippet(context, label))
        out.append(Candidate(label, name, verdict, entry))
    return out


def insert_candidates(dictionary: CorefDictionary, candidates: Sequence[Candidate]) -> list[PairOutcome]:
    outcomes = []
    for c in candidates:
        if c.entry is None:
            outcomes.append(PairOutcome(c.label, c.molecule, "rejected",
                                        f"{c.verdict.reason}: {c.verdict.detail}".rstrip(": ")))
            continue
        result = dictionary.insert(c.entry)
        outcomes.append(PairOutcome(c.label, c.molecule, result.value, provenance=c.entry.provenance))
    return outcomes


# -- Agent I ------------------------------------------------------------------------

def agent1_candidates(page_text: str, section: SectionKind, backend: ExtractionBackend,
                      page_index: int = 0, bold_labels: frozenset[str] = frozenset(),
                      chars_per_token: float = CHARS_PER_TOKEN) -> list[Candidate]:
    if section == SectionKind.NON_TECHNICAL or not page_text.strip():
        return []
    template = load_template("agent1")
    budget = _budget(backend, template, COREF_OUTPUT_TOKENS, chars_per_token)
    mapping: dict[str, str] = {}
    for _, chunk in chunk_text(page_text, budget, CHUNK_OVERLAP_TOKENS, chars_per_token):
        try:
            found = ask(backend, template, chunk, "coref_mapping", COREF_OUTPUT_TOKENS)
        except ResponseParseError as exc:
            log.warning("agent1 page %d: skipped, reply not parseable after retry: %s", page_index, exc)
            return []
        for k, v in found.items():
            mapping.setdefault(k, v)
    return _candidates(mapping, page_text, Provenance(page_index, "agent1", "text"), bold_labels)


def run_agent1_page(page_text: str, section: SectionKind, backend: ExtractionBackend,
                    dictionary: CorefDictionary, page_index: int = 0,
                    bold_labels: frozenset[str] = frozenset()) -> list[PairOutcome]:
    """Extract text coreferences from one page and insert the validated ones.

    Non-technical pages are bypassed without any backend call.  A transport
    failure raises :class:`BackendError` so the caller can retry the page.
    """
    cands = agent1_candidates(page_text, section, backend, page_index, bold_labels)
    return insert_candidates(dictionary, cands)


# -- Agent II -----------------------------------------------------------------------

def agent2_table_candidates(table: TableGrid, backend: ExtractionBackend) -> list[Candidate]:
    text = table_to_text(table)
    if not text.strip("| \n"):
        return []
    template = load_template("agent2")
    content = f"Table on page {table.page_range[0] + 1}:\n{text}"
    try:
        mapping = ask(backend, template, content, "coref_mapping", COREF_OUTPUT_TOKENS)
    except ResponseParseError as exc:
        log.warning("agent2 table on page %d skipped: %s", table.page_range[0], exc)
        return []
    return _candidates(mapping, text, Provenance(table.page_range[0], "agent2", "table"))


def agent2_figure_candidates(figure: FigureAsset, backend: ExtractionBackend) -> list[Candidate]:
    template = load_template("agent2")
    images: list[tuple[str, bytes]] = []
    if backend.multimodal and isinstance(figure.payload, bytes):
        images.append((figure.format_tag or "png", figure.payload))
    if not images and not figure.caption.strip():
        return []
    b = figure.bbox
    content = (f"Figure on page {figure.page_index + 1}, region "
               f"({b.x0:.1f}, {b.y0:.1f}, {b.x1:.1f}, {b.y1:.1f}), {figure.kind}.\n"
               f"Text inside the figure: {figure.caption}")
    try:
        mapping = ask(backend, template, content, "coref_mapping", COREF_OUTPUT_TOKENS, images=images)
    except ResponseParseError as exc:
        log.warning("agent2 figure on page %d skipped: %s", figure.page_index, exc)
        return []
    return _candidates(mapping, figure.caption, Provenance(figure.page_index, "agent2", "figure"),
                       image_borne=bool(images))


def run_agent2_assets(tables: Sequence[TableGrid], figures: Sequence[FigureAsset],
                      backend: ExtractionBackend, dictionary: CorefDictionary) -> list[PairOutcome]:
    outcomes: list[PairOutcome] = []
    for t in tables:
        outcomes.extend(insert_candidates(dictionary, agent2_table_candidates(t, backend)))
    for f in figures:
        outcomes.extend(insert_candidates(dictionary, agent2_figure_candidates(f, backend)))
    return outcomes


# -- Agent III ----------------------------------------------------------------------

@dataclass(frozen=True)
class RawReaction:
    reactants: tuple[str, ...]
    products: tuple[str, ...]
    catalyst: str | None = None
    solvent: str | None = None
    yield_text: str | None = None
    source_spans: tuple[tuple[int, int, int], ...] = field(default=())

    def merge_key(self) -> tuple[frozenset[str], str | None]:
        return frozenset(normalize_molecule(p) for p in self.products), self.yield_text


def _as_list(v) -> list[str]:
    if v is None:
        return []
    if isinstance(v, str):
        return [v.strip()] if v.strip() else []
    return [x.strip() for x in v if isinstance(x, str) and x.strip()]


def _as_text(v) -> str | None:
    if v is None:
        return None
    v = str(v).strip()
    return v or None


def normalize_yield(v) -> str | None:
    text = _as_text(v)
    if text is None:
        return None
    if re.fullmatch(r"\d+(?:\.\d+)?", text):
        text += "%"
    return text if YIELD_RE.fullmatch(text) else None


def _locate(evidence: str | None, chunk: str, offset: int, page_offsets: Sequence[int]) -> tuple:
    if not evidence:
        return ()
    words = evidence.split()
    if not words:
        return ()
    pattern = r"\s+".join(re.escape(w) for w in words)
    m = re.search(pattern, chunk)
    if not m:
        return ()
    start, end = offset + m.start(), offset + m.end()
    page = max(bisect_right(page_offsets, start) - 1, 0) if page_offsets else 0
    return ((page, start, end),)


def merge_reactions(reactions: Sequence[RawReaction]) -> list[RawReaction]:
    """Merge records sharing product set and yield text, preferring populated fields."""
    order: list[tuple] = []
    merged: dict[tuple, RawReaction] = {}
    for r in reactions:
        key = r.merge_key()
        if key not in merged:
            merged[key] = r
            order.append(key)
            continue
        m = merged[key]
        seen = {normalize_molecule(x) for x in m.reactants}
        reactants = list(m.reactants) + [x for x in r.reactants
                                         if normalize_molecule(x) not in seen
                                         and not seen.add(normalize_molecule(x))]
        merged[key] = replace(
            m, reactants=tuple(reactants),
            catalyst=m.catalyst or r.catalyst, solvent=m.solvent or r.solvent,
            source_spans=tuple(sorted(set(m.source_spans) | set(r.source_spans))))
    return [merged[k] for k in order]


def run_agent3_document(doc_text: str, dictionary: CorefDictionary | None, backend: ExtractionBackend,
                        page_offsets: Sequence[int] = (), chars_per_token: float = CHARS_PER_TOKEN,
                        overlap_tokens: int = CHUNK_OVERLAP_TOKENS) -> list[RawReaction]:
    """Extract reactions from the whole document text, chunking when it exceeds the window."""
    if not doc_text.strip():
        return []
    template = load_template("agent3")
    extra = ""
    if dictionary is not None and len(dictionary):
        extra = "Known coreference labels: " + ", ".join(sorted(dictionary.mapping()))
    budget = _budget(backend, template, REACTION_OUTPUT_TOKENS, chars_per_token, extra)
    found: list[RawReaction] = []
    for offset, chunk in chunk_text(doc_text, budget, overlap_tokens, chars_per_token):
        try:
            items = ask(backend, template, chunk, "reaction_list", REACTION_OUTPUT_TOKENS, extra)
        except (BackendError, ResponseParseError) as exc:
            log.warning("agent3 chunk at offset %d dropped: %s", offset, exc)
            continue
        for item in items:
            products = _as_list(item.get("products"))
            if not products:
                continue
            raw_yield = item.get("yield", item.get("yield_text"))
            found.append(RawReaction(
                reactants=tuple(_as_list(item.get("reactants"))),
                products=tuple(products),
                catalyst=_as_text(item.get("catalyst")),
                solvent=_as_text(item.get("solvent")),
                yield_text=normalize_yield(raw_yield),
                source_spans=_locate(_as_text(item.get("evidence")), chunk, offset, page_offsets),
            ))
    return merge_reactions(found)


# -- document text ---------------------------------------------------------------------

def build_document_text(doc: StructuredDocument, page_tables: dict[int, Sequence[TableGrid]],
                        tables: Sequence[TableGrid] = (),
                        tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[str, list[int]]:
    """Whole-document reading-order text with tables rendered as pipe rows.

    Chars inside a per-page table region (``page_tables``) are left out of
    the prose; each table in ``tables`` is rendered once, at its position on
    its first page, as a blank-line separated block.  Returns the text and
    the start offset of every page.
    """
    by_page: dict[int, list[TableGrid]] = {}
    for t in tables:
        by_page.setdefault(t.page_range[0], []).append(t)
    parts: list[str] = []
    offsets: list[int] = []
    pos = 0

    def emit(s: str) -> None:
        nonlocal pos
        parts.append(s)
        pos += len(s)

    for page in doc.pages:
        if page.index:
            emit("\n\n")
        offsets.append(pos)
        regions = [g.bbox for g in page_tables.get(page.index, [])]
        chars = [c for c in page.chars if not any(r.contains_point(*c.bbox.center) for r in regions)]
        pending = sorted(by_page.get(page.index, []), key=lambda t: (t.row_boundaries[0], t.col_boundaries[0]))
        lines: list[str] = []
        for row in reading_rows(chars, tol.row_tol):
            cy = sum((c.bbox.y0 + c.bbox.y1) / 2 for c in row) / len(row)
            while pending and pending[0].row_boundaries[0] < cy:
                lines.append("\n" + table_to_text(pending.pop(0)) + "\n")
            text = row_text(row, tol.space_gap)
            if text:
                lines.append(text)
        for t in pending:
            lines.append("\n" + table_to_text(t) + "\n")
        emit("\n".join(lines))
    return "".join(parts), offsets
