from __future__ import annotations

import sys
from pathlib import Path

import pytest

from chemminer.docmodel import BBox, Block, Char, Line, Page, Span, StructuredDocument

FIXTURES = Path(__file__).resolve().parent / "fixtures"
sys.path.insert(0, str(FIXTURES))


def char(glyph: str, x: float, y: float, size: float = 10.0, w: float = 5.0, bold: bool = False) -> Char:
    """A char whose box starts at (x, y) top-left."""
    return Char(glyph, BBox(x, y, x + w, y + size), size, bold)


def page_of(chars, index: int = 0, width: float = 612.0, height: float = 792.0, segments=(), images=()) -> Page:
    blocks = tuple(Block((Line((Span((c,)),), c.bbox.y1 - 0.2 * c.font_size),)) for c in chars)
    return Page(index, width, height, blocks, tuple(segments), tuple(images))


def doc_of(*pages: Page, source_id: str = "doc") -> StructuredDocument:
    return StructuredDocument(source_id, tuple(pages))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


# verdict lines from test_acceptance, repeated after the run so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
