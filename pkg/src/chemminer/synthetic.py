"""Programmatic page layouts with a fixed-advance font.

Used to build hermetic fixtures: every glyph advances by ``ADVANCE * size``
and occupies ``[baseline - ASCENT*size, baseline + DESCENT*size]``
vertically.
"""

from __future__ import annotations

from typing import Sequence

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
)

ADVANCE = 0.5
ASCENT = 0.8
DESCENT = 0.2


def text_width(text: str, size: float = 10.0) -> float:
    return len(text) * ADVANCE * size


def make_line(x: float, baseline: float, text: str, size: float = 10.0, bold: bool = False) -> Line:
    chars = []
    for k, glyph in enumerate(text):
        x0 = x + k * ADVANCE * size
        chars.append(Char(glyph, BBox(x0, baseline - ASCENT * size, x0 + ADVANCE * size,
                                      baseline + DESCENT * size), size, bold))
    return Line(spans=(Span(tuple(chars), "bold" if bold else "regular"),), baseline_y=baseline)


class PageBuilder:
    def __init__(self, index: int = 0, width: float = 612.0, height: float = 792.0):
        self.index = index
        self.width = width
        self.height = height
        self.blocks: list[Block] = []
        self.segments: list[VectorSegment] = []
        self.images: list[EmbeddedImage] = []

    def text(self, x: float, baseline: float, text: str, size: float = 10.0,
             bold: bool = False, kind: str = "text") -> "PageBuilder":
        self.blocks.append(Block((make_line(x, baseline, text, size, bold),), kind))
        return self

    def paragraph(self, x: float, baseline: float, lines: Sequence[str], size: float = 10.0,
                  leading: float = 14.0) -> float:
        """Add consecutive lines as one block; returns the next free baseline."""
        out = []
        for k, t in enumerate(lines):
            out.append(make_line(x, baseline + k * leading, t, size))
        if out:
            self.blocks.append(Block(tuple(out)))
        return baseline + len(lines) * leading

    def text_centered(self, cx: float, cy: float, text: str, size: float = 10.0,
                      bold: bool = False) -> "PageBuilder":
        x = cx - text_width(text, size) / 2
        baseline = cy + (ASCENT - DESCENT) / 2 * size
        return self.text(x, baseline, text, size, bold)

    def segment(self, p0: tuple[float, float], p1: tuple[float, float], width: float = 0.5) -> "PageBuilder":
        self.segments.append(VectorSegment(p0, p1, width))
        return self

    def grid(self, xs: Sequence[float], ys: Sequence[float], width: float = 0.5) -> "PageBuilder":
        for y in ys:
            self.segment((xs[0], y), (xs[-1], y), width)
        for x in xs:
            self.segment((x, ys[0]), (x, ys[-1]), width)
        return self

    def grid_table(self, xs: Sequence[float], ys: Sequence[float], cells: Sequence[Sequence[str]],
                   size: float = 9.0) -> "PageBuilder":
        """Bordered table with each cell's text centered in its rectangle."""
        self.grid(xs, ys)
        for r, row in enumerate(cells):
            for c, text in enumerate(row):
                if text:
                    self.text_centered((xs[c] + xs[c + 1]) / 2, (ys[r] + ys[r + 1]) / 2, text, size)
        return self

    def image(self, bbox: BBox, data: bytes, format_tag: str = "png", resolution: float = 72.0,
              payload_ref: str | None = None) -> "PageBuilder":
        ref = payload_ref or f"p{self.index}_img{len(self.images)}.{format_tag}"
        self.images.append(EmbeddedImage(bbox, format_tag, ref, resolution, data))
        return self

    def build(self) -> Page:
        return Page(self.index, self.width, self.height, tuple(self.blocks),
                    tuple(self.segments), tuple(self.images))


def make_document(source_id: str, pages: Sequence[Page]) -> StructuredDocument:
    return StructuredDocument(source_id, tuple(pages))
