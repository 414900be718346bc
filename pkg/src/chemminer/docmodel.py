"""Five-level geometric document model (pages, blocks, lines, spans, chars).

Coordinates are PDF points with the origin at the top-left corner of the
page and y growing downward.  Every type is an immutable value; the
constructors do not validate, so that malformed input can still be loaded
and reported by :func:`validate_document`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .config import DEFAULT_TOLERANCES

INTERCHANGE_VERSION = 1
BLOCK_KINDS = ("text", "figure-region", "table-candidate")
PAGE_TOL = 1.0


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def is_valid(self) -> bool:
        coords = (self.x0, self.y0, self.x1, self.y1)
        return all(math.isfinite(c) for c in coords) and self.x0 <= self.x1 and self.y0 <= self.y1

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def intersects(self, other: "BBox") -> bool:
        return not (other.x0 > self.x1 or other.x1 < self.x0 or other.y0 > self.y1 or other.y1 < self.y0)

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x0, other.x0), min(self.y0, other.y0),
                    max(self.x1, other.x1), max(self.y1, other.y1))

    def iou(self, other: "BBox") -> float:
        ix = min(self.x1, other.x1) - max(self.x0, other.x0)
        iy = min(self.y1, other.y1) - max(self.y0, other.y0)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def clipped(self, width: float, height: float) -> "BBox":
        return BBox(min(max(self.x0, 0.0), width), min(max(self.y0, 0.0), height),
                    min(max(self.x1, 0.0), width), min(max(self.y1, 0.0), height))


def union_bbox(boxes: Iterable[BBox]) -> BBox | None:
    out = None
    for b in boxes:
        out = b if out is None else out.union(b)
    return out


@dataclass(frozen=True)
class Char:
    glyph: str
    bbox: BBox
    font_size: float
    bold: bool = False

    @property
    def is_space(self) -> bool:
        return not self.glyph.strip()


@dataclass(frozen=True)
class Span:
    chars: tuple[Char, ...]
    style: str = ""


@dataclass(frozen=True)
class Line:
    spans: tuple[Span, ...]
    baseline_y: float


@dataclass(frozen=True)
class Block:
    lines: tuple[Line, ...]
    kind: str = "text"


@dataclass(frozen=True)
class VectorSegment:
    p0: tuple[float, float]
    p1: tuple[float, float]
    stroke_width: float = 1.0

    def is_horizontal(self, axis_tol: float = DEFAULT_TOLERANCES.axis_tol) -> bool:
        dx = abs(self.p0[0] - self.p1[0])
        dy = abs(self.p0[1] - self.p1[1])
        return dy <= axis_tol and dx >= dy

    def is_vertical(self, axis_tol: float = DEFAULT_TOLERANCES.axis_tol) -> bool:
        dx = abs(self.p0[0] - self.p1[0])
        dy = abs(self.p0[1] - self.p1[1])
        return dx <= axis_tol and dy > dx

    @property
    def bbox(self) -> BBox:
        return BBox(min(self.p0[0], self.p1[0]), min(self.p0[1], self.p1[1]),
                    max(self.p0[0], self.p1[0]), max(self.p0[1], self.p1[1]))


@dataclass(frozen=True)
class EmbeddedImage:
    bbox: BBox
    format_tag: str
    payload_ref: str
    resolution: float
    # raw bytes behind payload_ref; not part of the interchange JSON
    data: bytes | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Page:
    index: int
    width: float
    height: float
    blocks: tuple[Block, ...] = ()
    vector_segments: tuple[VectorSegment, ...] = ()
    embedded_images: tuple[EmbeddedImage, ...] = ()

    @property
    def bbox(self) -> BBox:
        return BBox(0.0, 0.0, self.width, self.height)

    def iter_chars(self) -> Iterator[Char]:
        for block in self.blocks:
            for line in block.lines:
                for span in line.spans:
                    yield from span.chars

    @property
    def chars(self) -> list[Char]:
        return list(self.iter_chars())


@dataclass(frozen=True)
class StructuredDocument:
    source_id: str
    pages: tuple[Page, ...]


# -- reading order ---------------------------------------------------------

def _row_buckets(chars: Sequence[Char], row_tol: float) -> list[int]:
    centers = [(c.bbox.y0 + c.bbox.y1) / 2 for c in chars]
    order = sorted(range(len(chars)), key=lambda i: (centers[i], i))
    buckets = [0] * len(chars)
    bucket = 0
    prev = None
    for i in order:
        if prev is not None and centers[i] - prev > row_tol:
            bucket += 1
        buckets[i] = bucket
        prev = centers[i]
    return buckets


def reading_rows(chars: Sequence[Char], row_tol: float = DEFAULT_TOLERANCES.row_tol) -> list[list[Char]]:
    """Group chars into visual rows, each sorted left to right."""
    if not chars:
        return []
    buckets = _row_buckets(chars, row_tol)
    order = sorted(range(len(chars)), key=lambda i: (buckets[i], chars[i].bbox.x0, i))
    rows: list[list[Char]] = []
    last = None
    for i in order:
        if buckets[i] != last:
            rows.append([])
            last = buckets[i]
        rows[-1].append(chars[i])
    return rows


def reading_order(page: Page, row_tol: float = DEFAULT_TOLERANCES.row_tol) -> list[Char]:
    """Sort a page's chars by (row bucket, x0, input index).

    Chars whose vertical centers chain together within ``row_tol`` share a
    row bucket; buckets are ordered top to bottom.
    """
    return [c for row in reading_rows(page.chars, row_tol) for c in row]


def row_text(row: Sequence[Char], space_gap: float = DEFAULT_TOLERANCES.space_gap) -> str:
    """Join one row of chars, inserting a space at space glyphs or wide gaps."""
    parts: list[str] = []
    prev: Char | None = None
    for ch in row:
        if prev is not None and not ch.is_space and not prev.is_space:
            gap = ch.bbox.x0 - prev.bbox.x1
            if gap > space_gap * max(ch.font_size, prev.font_size):
                parts.append(" ")
        parts.append(" " if ch.is_space else ch.glyph)
        prev = ch
    return " ".join("".join(parts).split())


def chars_text(chars: Sequence[Char], row_tol: float = DEFAULT_TOLERANCES.row_tol,
               space_gap: float = DEFAULT_TOLERANCES.space_gap) -> str:
    """Single-line text of an arbitrary char set, rows joined by spaces."""
    rows = (row_text(r, space_gap) for r in reading_rows(chars, row_tol))
    return " ".join(t for t in rows if t)


def page_text(page: Page, row_tol: float = DEFAULT_TOLERANCES.row_tol,
              space_gap: float = DEFAULT_TOLERANCES.space_gap) -> str:
    """Reading-order text of a page, one visual row per output line."""
    rows = (row_text(r, space_gap) for r in reading_rows(page.chars, row_tol))
    return "\n".join(t for t in rows if t)


# -- validation ------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}" if self.path else self.message


def _inside(b: BBox, page: Page, tol: float = PAGE_TOL) -> bool:
    return (b.x0 >= -tol and b.y0 >= -tol and b.x1 <= page.width + tol and b.y1 <= page.height + tol)


def validate_document(doc: StructuredDocument) -> list[Violation]:
    """Collect every invariant violation in ``doc``; an empty list means valid."""
    out: list[Violation] = []

    def bad(path: str, message: str) -> None:
        out.append(Violation(path, message))

    if not doc.pages:
        bad("", "document has no pages")
    indices = [p.index for p in doc.pages]
    if indices != list(range(len(indices))):
        bad("", "non-contiguous page indices")

    for page in doc.pages:
        pp = f"page[{page.index}]"
        if not (math.isfinite(page.width) and math.isfinite(page.height)) or page.width <= 0 or page.height <= 0:
            bad(pp, "page dimensions must be positive")
        for bi, block in enumerate(page.blocks):
            bp = f"{pp}/block[{bi}]"
            if block.kind not in BLOCK_KINDS:
                bad(bp, f"unknown block kind {block.kind!r}")
            if not block.lines:
                bad(bp, "empty block")
            for li, line in enumerate(block.lines):
                lp = f"{bp}/line[{li}]"
                if not line.spans:
                    bad(lp, "empty line")
                ys: list[tuple[float, float]] = []
                for si, span in enumerate(line.spans):
                    sp = f"{lp}/span[{si}]"
                    if not span.chars:
                        bad(sp, "empty span")
                    for ci, ch in enumerate(span.chars):
                        cp = f"{sp}/char[{ci}]"
                        if not ch.glyph:
                            bad(cp, "empty glyph")
                        if not (ch.font_size > 0):
                            bad(cp, "font_size must be positive")
                        if not ch.bbox.is_valid():
                            bad(cp, "invalid bbox (x0 > x1, y0 > y1 or non-finite)")
                        elif not _inside(ch.bbox, page):
                            bad(cp, "bbox outside page bounds")
                        ys.append((ch.bbox.y0, ch.bbox.y1))
                if ys:
                    lo = min(y for y, _ in ys)
                    hi = max(y for _, y in ys)
                    if not (lo - PAGE_TOL <= line.baseline_y <= hi + PAGE_TOL):
                        bad(lp, "baseline outside the line's vertical extent")
        for si, seg in enumerate(page.vector_segments):
            sp = f"{pp}/segment[{si}]"
            if tuple(seg.p0) == tuple(seg.p1):
                bad(sp, "degenerate segment (p0 == p1)")
            elif not seg.bbox.is_valid() or not _inside(seg.bbox, page):
                bad(sp, "segment outside page bounds")
        for ii, img in enumerate(page.embedded_images):
            ip = f"{pp}/image[{ii}]"
            if not img.bbox.is_valid() or not _inside(img.bbox, page):
                bad(ip, "image bbox outside page bounds")
            if img.data is None:
                bad(ip, f"payload {img.payload_ref!r} not resolvable")
    return out


# -- interchange JSON --------------------------------------------------------

def _bbox_dict(b: BBox) -> dict:
    return {"x0": float(b.x0), "y0": float(b.y0), "x1": float(b.x1), "y1": float(b.y1)}


def _bbox_from(d: dict) -> BBox:
    return BBox(float(d["x0"]), float(d["y0"]), float(d["x1"]), float(d["y1"]))


def document_to_dict(doc: StructuredDocument) -> dict:
    pages = []
    for p in doc.pages:
        pages.append({
            "index": p.index,
            "width": float(p.width),
            "height": float(p.height),
            "blocks": [{
                "kind": b.kind,
                "lines": [{
                    "baseline_y": float(ln.baseline_y),
                    "spans": [{
                        "style": s.style,
                        "chars": [{"glyph": c.glyph, "bbox": _bbox_dict(c.bbox),
                                   "font_size": float(c.font_size), "bold": c.bold} for c in s.chars],
                    } for s in ln.spans],
                } for ln in b.lines],
            } for b in p.blocks],
            "vector_segments": [{"p0": [float(v) for v in s.p0], "p1": [float(v) for v in s.p1],
                                 "stroke_width": float(s.stroke_width)}
                                for s in p.vector_segments],
            "embedded_images": [{"bbox": _bbox_dict(i.bbox), "format_tag": i.format_tag,
                                 "payload_ref": i.payload_ref, "resolution": float(i.resolution)}
                                for i in p.embedded_images],
        })
    return {"version": INTERCHANGE_VERSION, "source_id": doc.source_id, "pages": pages}


def document_from_dict(data: dict, blob_dir: Path | None = None) -> StructuredDocument:
    if not isinstance(data, dict):
        raise ValueError("interchange document must be a JSON object")
    if data.get("version") != INTERCHANGE_VERSION:
        raise ValueError(f"unsupported interchange version {data.get('version')!r}")
    pages = []
    for p in data["pages"]:
        blocks = tuple(
            Block(kind=b.get("kind", "text"), lines=tuple(
                Line(baseline_y=float(ln["baseline_y"]), spans=tuple(
                    Span(style=s.get("style", ""), chars=tuple(
                        Char(glyph=c["glyph"], bbox=_bbox_from(c["bbox"]),
                             font_size=float(c["font_size"]), bold=bool(c.get("bold", False)))
                        for c in s["chars"]))
                    for s in ln["spans"]))
                for ln in b["lines"]))
            for b in p.get("blocks", []))
        segments = tuple(
            VectorSegment(p0=(float(s["p0"][0]), float(s["p0"][1])),
                          p1=(float(s["p1"][0]), float(s["p1"][1])),
                          stroke_width=float(s.get("stroke_width", 1.0)))
            for s in p.get("vector_segments", []))
        images = []
        for i in p.get("embedded_images", []):
            payload = None
            if blob_dir is not None:
                blob = blob_dir / i["payload_ref"]
                if blob.is_file():
                    payload = blob.read_bytes()
            images.append(EmbeddedImage(bbox=_bbox_from(i["bbox"]), format_tag=i["format_tag"],
                                        payload_ref=i["payload_ref"], resolution=float(i["resolution"]),
                                        data=payload))
        pages.append(Page(index=int(p["index"]), width=float(p["width"]), height=float(p["height"]),
                          blocks=blocks, vector_segments=segments, embedded_images=tuple(images)))
    return StructuredDocument(source_id=str(data["source_id"]), pages=tuple(pages))


def dumps_document(doc: StructuredDocument) -> str:
    return json.dumps(document_to_dict(doc), ensure_ascii=False, indent=1, sort_keys=True) + "\n"


def save_document(doc: StructuredDocument, path: str | Path) -> Path:
    """Write interchange JSON plus image payload files next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_document(doc), encoding="utf-8")
    for page in doc.pages:
        for img in page.embedded_images:
            if img.data is not None:
                target = path.parent / img.payload_ref
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(img.data)
    return path


def load_document(path: str | Path) -> StructuredDocument:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    return document_from_dict(data, blob_dir=path.parent)
