"""Document ingestion: PDF adapter, OCR quality gate and section classifier."""

from __future__ import annotations

import enum
import json
import logging
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES
from .docmodel import (
    BBox,
    Block,
    Char,
    EmbeddedImage,
    Line,
    Page,
    Span,
    StructuredDocument,
    VectorSegment,
    document_from_dict,
    validate_document,
)

log = logging.getLogger(__name__)

KEY_PHRASES = ("General Procedure", "Typical Procedure", "General Experiment")

TECHNICAL_CUES = (
    "general procedure", "typical procedure", "general experiment", "experimental section",
    "experimental", "methods", "methodology", "synthesis of", "characterization",
)
NON_TECHNICAL_CUES = ("references", "acknowledg", "abstract", "introduction", "conclusion")

DECODER_ENV = "CHEMMINER_DECODER"


class ConversionError(RuntimeError):
    """The PDF could not be turned into a StructuredDocument."""


class OcrStatus(str, enum.Enum):
    PASS = "pass"
    MISSPELLED = "misspelled"
    INDETERMINATE = "indeterminate"


class SectionKind(str, enum.Enum):
    TECHNICAL = "technical"
    NON_TECHNICAL = "non_technical"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class PhraseEvidence:
    target_phrase: str
    matched_text: str
    edit_distance: int


@dataclass(frozen=True)
class OcrVerdict:
    status: OcrStatus
    evidence: tuple[PhraseEvidence, ...] = field(default_factory=tuple)


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def window_distances(text: str, phrase: str) -> np.ndarray:
    """Levenshtein distance between ``phrase`` and every same-length window of ``text``.

    Runs the usual dynamic program once, vectorized across all windows.  A
    text shorter than the phrase is compared as a single window.
    """
    n = len(phrase)
    if n == 0:
        return np.zeros(1, dtype=np.int32)
    codes = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
    if len(codes) < n:
        m = len(codes)
        win = np.zeros((1, m), dtype=np.uint32)
        win[0, :m] = codes
    else:
        win = np.lib.stride_tricks.sliding_window_view(codes, n)
        m = n
    pat = np.frombuffer(phrase.encode("utf-32-le"), dtype=np.uint32)
    w = win.shape[0]
    # prev[j] = distance(window[:i], phrase[:j]) for the previous i
    prev = np.tile(np.arange(n + 1, dtype=np.int32), (w, 1))
    for i in range(1, m + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = i
        ci = win[:, i - 1]
        for j in range(1, n + 1):
            sub = prev[:, j - 1] + (ci != pat[j - 1])
            cur[:, j] = np.minimum(np.minimum(prev[:, j] + 1, cur[:, j - 1] + 1), sub)
        prev = cur
    return prev[:, n]


def best_window(text: str, phrase: str) -> tuple[int, str]:
    """Minimum edit distance of ``phrase`` over same-length windows of ``text``, plus the window."""
    dists = window_distances(text, phrase)
    k = int(np.argmin(dists))
    return int(dists[k]), text[k:k + len(phrase)]


def ocr_quality_gate(page_text: str, fuzzy_max: int = DEFAULT_TOLERANCES.fuzzy_max,
                     phrases: Sequence[str] = KEY_PHRASES) -> OcrVerdict:
    """Check recognized text for misspellings of stock experimental phrases.

    An exact occurrence of any phrase passes the page.  Otherwise a phrase
    found within ``fuzzy_max`` edits marks the page as misspelled; with no
    near match the verdict is indeterminate.
    """
    text = _normalize(page_text)
    evidence: list[PhraseEvidence] = []
    if text:
        for phrase in phrases:
            dist, matched = best_window(text, _normalize(phrase))
            if dist <= fuzzy_max:
                evidence.append(PhraseEvidence(phrase, matched, dist))
    if any(e.edit_distance == 0 for e in evidence):
        status = OcrStatus.PASS
    elif evidence:
        status = OcrStatus.MISSPELLED
    else:
        status = OcrStatus.INDETERMINATE
    return OcrVerdict(status, tuple(evidence))


def classify_section(page_text: str, technical_cues: Sequence[str] = TECHNICAL_CUES,
                     non_technical_cues: Sequence[str] = NON_TECHNICAL_CUES) -> SectionKind:
    text = _normalize(page_text)
    if any(cue in text for cue in technical_cues):
        return SectionKind.TECHNICAL
    if any(cue in text for cue in non_technical_cues):
        return SectionKind.NON_TECHNICAL
    return SectionKind.UNKNOWN


# -- PDF adapter ---------------------------------------------------------------

def _r(v: float) -> float:
    return round(float(v), 3)


def _bbox(rect, page_w: float, page_h: float) -> BBox:
    x0, y0, x1, y1 = (float(v) for v in rect)
    return BBox(_r(x0), _r(y0), _r(x1), _r(y1)).clipped(_r(page_w), _r(page_h))


def _segments_from_drawing(path: dict, page_w: float, page_h: float) -> list[VectorSegment]:
    width = float(path.get("width") or 0.0)
    out: list[VectorSegment] = []

    def add(a, b) -> None:
        p0 = (min(max(_r(a[0]), 0.0), _r(page_w)), min(max(_r(a[1]), 0.0), _r(page_h)))
        p1 = (min(max(_r(b[0]), 0.0), _r(page_w)), min(max(_r(b[1]), 0.0), _r(page_h)))
        if p0 != p1:
            out.append(VectorSegment(p0, p1, _r(width)))

    for item in path.get("items", []):
        op = item[0]
        if op == "l":
            add(item[1], item[2])
        elif op == "c":
            add(item[1], item[4])
        elif op == "re":
            r = item[1]
            if r.height <= 1.0:
                cy = (r.y0 + r.y1) / 2
                add((r.x0, cy), (r.x1, cy))
            elif r.width <= 1.0:
                cx = (r.x0 + r.x1) / 2
                add((cx, r.y0), (cx, r.y1))
            else:
                add((r.x0, r.y0), (r.x1, r.y0))
                add((r.x1, r.y0), (r.x1, r.y1))
                add((r.x1, r.y1), (r.x0, r.y1))
                add((r.x0, r.y1), (r.x0, r.y0))
        elif op == "qu":
            q = item[1]
            pts = [q.ul, q.ur, q.lr, q.ll]
            for a, b in zip(pts, pts[1:] + pts[:1]):
                add(a, b)
    return out


def _convert_with_pymupdf(pdf_bytes: bytes, source_id: str) -> StructuredDocument:
    try:
        import pymupdf
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ConversionError("PDF decoding needs the optional 'pymupdf' package") from exc
    try:
        pdf = pymupdf.open(stream=pdf_bytes, filetype="pdf")
    except Exception as exc:
        raise ConversionError(f"unreadable PDF: {exc}") from exc
    with pdf:
        if pdf.needs_pass:
            raise ConversionError("encrypted PDF: a password is required")
        if pdf.page_count == 0:
            raise ConversionError("no pages")
        pages = []
        for pno in range(pdf.page_count):
            page = pdf[pno]
            pw, ph = float(page.rect.width), float(page.rect.height)
            raw = page.get_text("rawdict", flags=pymupdf.TEXT_PRESERVE_WHITESPACE)
            blocks = []
            for b in raw.get("blocks", []):
                if b.get("type") != 0:
                    continue
                lines = []
                for ln in b.get("lines", []):
                    spans = []
                    baseline = None
                    for sp in ln.get("spans", []):
                        bold = bool(sp.get("flags", 0) & 16)
                        size = _r(sp.get("size", 0.0)) or 1.0
                        chars = tuple(Char(c["c"], _bbox(c["bbox"], pw, ph), size, bold)
                                      for c in sp.get("chars", []) if c.get("c"))
                        if chars:
                            spans.append(Span(chars, sp.get("font", "")))
                            if baseline is None:
                                baseline = _r(sp["origin"][1])
                    if spans:
                        lo = min(c.bbox.y0 for s in spans for c in s.chars)
                        hi = max(c.bbox.y1 for s in spans for c in s.chars)
                        lines.append(Line(tuple(spans), min(max(baseline, lo), hi)))
                if lines:
                    blocks.append(Block(tuple(lines), "text"))
            segments = []
            for path in page.get_drawings():
                segments.extend(_segments_from_drawing(path, pw, ph))
            images = []
            for info in page.get_images(full=True):
                xref = info[0]
                try:
                    extracted = pdf.extract_image(xref)
                except Exception as exc:
                    log.warning("page %d: image xref %d not extractable: %s", pno, xref, exc)
                    continue
                if not extracted:
                    continue
                ext = extracted.get("ext", "bin")
                for k, rect in enumerate(page.get_image_rects(xref)):
                    bbox = _bbox(rect, pw, ph)
                    dpi = float(extracted.get("xres") or 0)
                    if dpi <= 1 and bbox.width > 0:
                        dpi = extracted["width"] / (bbox.width / 72.0)
                    ref = f"p{pno}_x{xref}_{k}.{ext}"
                    images.append(EmbeddedImage(bbox, ext, ref, _r(dpi), extracted["image"]))
            pages.append(Page(pno, _r(pw), _r(ph), tuple(blocks), tuple(segments), tuple(images)))
    return StructuredDocument(source_id, tuple(pages))


def _convert_with_command(command: str, pdf_bytes: bytes, source_id: str) -> StructuredDocument:
    """Run an external decoder that prints interchange JSON for a PDF path."""
    exe = shutil.which(command) or command
    with tempfile.TemporaryDirectory() as tmp:
        src = Path(tmp) / f"{source_id}.pdf"
        src.write_bytes(pdf_bytes)
        proc = subprocess.run([exe, str(src)], capture_output=True, cwd=tmp)
        if proc.returncode != 0:
            raise ConversionError(f"decoder {command!r} failed: {proc.stderr.decode(errors='replace').strip()}")
        try:
            data = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise ConversionError(f"decoder {command!r} emitted invalid JSON: {exc}") from exc
        return document_from_dict(data, blob_dir=Path(tmp))


def convert_pdf(pdf_bytes: bytes, source_id: str = "document", decoder: str | None = None) -> StructuredDocument:
    """Decode a PDF into a validated StructuredDocument.

    ``decoder`` (or the ``CHEMMINER_DECODER`` environment variable) names an
    external command; the default is the in-process PyMuPDF adapter.
    """
    decoder = decoder or os.environ.get(DECODER_ENV) or "pymupdf"
    if not pdf_bytes.lstrip().startswith(b"%PDF"):
        raise ConversionError("unreadable PDF: missing %PDF header")
    if decoder == "pymupdf":
        doc = _convert_with_pymupdf(pdf_bytes, source_id)
    else:
        doc = _convert_with_command(decoder, pdf_bytes, source_id)
    problems = validate_document(doc)
    if problems:
        raise ConversionError("decoded document is invalid: " + "; ".join(map(str, problems[:5])))
    return doc


def page_flags(page_texts: Sequence[str], fuzzy_max: int = DEFAULT_TOLERANCES.fuzzy_max) -> list[dict]:
    """Per-page OCR verdicts and section kinds, in a JSON-ready shape."""
    out = []
    for i, text in enumerate(page_texts):
        verdict = ocr_quality_gate(text, fuzzy_max)
        out.append({
            "page": i,
            "ocr_status": verdict.status.value,
            "evidence": [{"target_phrase": e.target_phrase, "matched_text": e.matched_text,
                          "edit_distance": e.edit_distance} for e in verdict.evidence],
            "section": classify_section(text).value,
        })
    return out

