"""Table structure detection.

Two detectors run on every page.  The vector detector merges ruling-line
segments into grid lines and reads table lattices off their intersections.
The alignment detector finds columns of text that share a left edge, right
edge or center across consecutive rows and places virtual boundaries in the
whitespace between them.  ``fuse_and_fill`` reconciles the two and fills
cell text; ``merge_cross_page`` stitches continued tables together.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .docmodel import BBox, Char, Page, StructuredDocument, reading_rows, row_text

ORIGINS = ("vector", "alignment", "fused")


@dataclass(frozen=True)
class GridLine:
    orientation: str
    coordinate: float
    span: tuple[float, float]
    origin: str = "vector"
    segments: tuple[int, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class AlignmentGroup:
    axis_x: float
    kind: str
    member_lines: frozenset[int]
    members: tuple[int, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class TableGrid:
    page_range: tuple[int, int]
    col_boundaries: tuple[float, ...]
    row_boundaries: tuple[float, ...]
    cells: tuple[tuple[str, ...], ...]
    origin: str

    @property
    def n_rows(self) -> int:
        return len(self.row_boundaries) - 1

    @property
    def n_cols(self) -> int:
        return len(self.col_boundaries) - 1

    @property
    def page(self) -> int:
        return self.page_range[0]

    @property
    def bbox(self) -> BBox:
        """Bounding box on the first page (the whole table for single-page tables)."""
        return BBox(self.col_boundaries[0], self.row_boundaries[0],
                    self.col_boundaries[-1], self.row_boundaries[-1])

    def with_cells(self, cells: Sequence[Sequence[str]]) -> "TableGrid":
        return TableGrid(self.page_range, self.col_boundaries, self.row_boundaries,
                         tuple(tuple(r) for r in cells), self.origin)

    def as_dict(self) -> dict:
        return {
            "page_range": list(self.page_range),
            "col_boundaries": list(self.col_boundaries),
            "row_boundaries": list(self.row_boundaries),
            "cells": [list(r) for r in self.cells],
            "origin": self.origin,
        }


def _empty_grid(page: int, xs: Sequence[float], ys: Sequence[float], origin: str) -> TableGrid:
    cells = tuple(("",) * (len(xs) - 1) for _ in range(len(ys) - 1))
    return TableGrid((page, page), tuple(xs), tuple(ys), cells, origin)


def _single_linkage(values: Sequence[float], tol: float) -> list[list[int]]:
    """Cluster indices of ``values`` so that sorted neighbours within ``tol`` share a cluster."""
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    clusters: list[list[int]] = []
    prev = None
    for i in order:
        if prev is None or values[i] - prev > tol:
            clusters.append([])
        clusters[-1].append(i)
        prev = values[i]
    return clusters


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return sorted(out.values(), key=lambda g: g[0])


# -- vector grids --------------------------------------------------------------

def merge_segments(page: Page, tol: Tolerances = DEFAULT_TOLERANCES) -> list[GridLine]:
    """Merge collinear axis-aligned segments into maximal grid lines."""
    out: list[GridLine] = []
    for orientation in ("horizontal", "vertical"):
        items = []  # (segment index, coordinate, lo, hi)
        for i, seg in enumerate(page.vector_segments):
            (x0, y0), (x1, y1) = seg.p0, seg.p1
            if orientation == "horizontal" and seg.is_horizontal(tol.axis_tol):
                items.append((i, (y0 + y1) / 2, min(x0, x1), max(x0, x1)))
            elif orientation == "vertical" and seg.is_vertical(tol.axis_tol):
                items.append((i, (x0 + x1) / 2, min(y0, y1), max(y0, y1)))
        for cluster in _single_linkage([it[1] for it in items], tol.axis_tol):
            members = sorted((items[k] for k in cluster), key=lambda it: (it[2], it[3], it[0]))
            runs: list[list[tuple]] = []
            end = None
            for it in members:
                if end is None or it[2] - end > tol.merge_gap:
                    runs.append([])
                    end = it[3]
                runs[-1].append(it)
                end = max(end, it[3])
            for run in runs:
                lo = min(it[2] for it in run)
                hi = max(it[3] for it in run)
                weights = [max(it[3] - it[2], 1e-9) for it in run]
                coord = sum(w * it[1] for w, it in zip(weights, run)) / sum(weights)
                out.append(GridLine(orientation, coord, (lo, hi), "vector",
                                    tuple(sorted(it[0] for it in run))))
    return out


def _coordinate_set(values: Iterable[float], tol: float) -> list[float]:
    values = list(values)
    return [sum(values[i] for i in c) / len(c) for c in _single_linkage(values, tol)]


def lattice_grids(lines: Sequence[GridLine], page_index: int, snap_tol: float,
                  origin: str = "vector") -> list[tuple[TableGrid, list[GridLine]]]:
    """Connected intersection lattices with at least 3 distinct x and 3 distinct y lines."""
    hs = [ln for ln in lines if ln.orientation == "horizontal"]
    vs = [ln for ln in lines if ln.orientation == "vertical"]
    if not hs or not vs:
        return []
    hy = np.array([h.coordinate for h in hs])
    hlo = np.array([h.span[0] for h in hs])
    hhi = np.array([h.span[1] for h in hs])
    vx = np.array([v.coordinate for v in vs])
    vlo = np.array([v.span[0] for v in vs])
    vhi = np.array([v.span[1] for v in vs])
    hit = ((vx[None, :] >= hlo[:, None] - snap_tol) & (vx[None, :] <= hhi[:, None] + snap_tol)
           & (hy[:, None] >= vlo[None, :] - snap_tol) & (hy[:, None] <= vhi[None, :] + snap_tol))
    uf = _UnionFind(len(hs) + len(vs))
    for i, j in zip(*np.nonzero(hit)):
        uf.union(int(i), len(hs) + int(j))
    out = []
    for comp in uf.groups():
        comp_h = [hs[k] for k in comp if k < len(hs)]
        comp_v = [vs[k - len(hs)] for k in comp if k >= len(hs)]
        if not comp_h or not comp_v:
            continue
        xs = _coordinate_set((v.coordinate for v in comp_v), snap_tol)
        ys = _coordinate_set((h.coordinate for h in comp_h), snap_tol)
        if len(xs) >= 3 and len(ys) >= 3:
            out.append((_empty_grid(page_index, xs, ys, origin), comp_h + comp_v))
    out.sort(key=lambda t: (t[0].row_boundaries[0], t[0].col_boundaries[0]))
    return out


def detect_vector_grids(page: Page, tol: Tolerances = DEFAULT_TOLERANCES) -> list[TableGrid]:
    """Tables drawn with explicit ruling lines; cells are left empty."""
    if not page.vector_segments:
        return []
    return [g for g, _ in lattice_grids(merge_segments(page, tol), page.index, tol.snap_tol)]


# -- alignment grids -------------------------------------------------------------

@dataclass(frozen=True)
class TextUnit:
    """A gap-delimited run of text within one visual row (a cell candidate)."""

    row: int
    x0: float
    x1: float
    y0: float
    y1: float
    text: str

    @property
    def center(self) -> float:
        return (self.x0 + self.x1) / 2


def row_units(row: Sequence[Char], row_index: int, tol: Tolerances = DEFAULT_TOLERANCES) -> list[TextUnit]:
    """Split a visual row wherever the gap between glyphs exceeds ``cell_gap`` font sizes."""
    units: list[TextUnit] = []
    current: list[Char] = []
    prev: Char | None = None
    for ch in row:
        if ch.is_space:
            current.append(ch)
            continue
        if prev is not None and ch.bbox.x0 - prev.bbox.x1 > tol.cell_gap * max(ch.font_size, prev.font_size):
            units.append(_unit(current, row_index, tol))
            current = []
        current.append(ch)
        prev = ch
    if any(not c.is_space for c in current):
        units.append(_unit(current, row_index, tol))
    return units


def _unit(chars: list[Char], row_index: int, tol: Tolerances) -> TextUnit:
    ink = [c for c in chars if not c.is_space]
    return TextUnit(row_index, min(c.bbox.x0 for c in ink), max(c.bbox.x1 for c in ink),
                    min(c.bbox.y0 for c in ink), max(c.bbox.y1 for c in ink),
                    row_text(chars, tol.space_gap))


def alignment_groups(units: Sequence[TextUnit], tol: Tolerances = DEFAULT_TOLERANCES) -> list[AlignmentGroup]:
    """Single-linkage clusters of left edges, right edges and centers.

    A cluster becomes a group when it touches at least ``min_group_lines``
    rows and every member lies within ``clustering_tol`` of the cluster mean
    (long chains of loosely spaced coordinates are not alignments).
    """
    groups = []
    families = (("left", lambda u: u.x0), ("right", lambda u: u.x1), ("center", lambda u: u.center))
    for kind, key in families:
        values = [key(u) for u in units]
        for cluster in _single_linkage(values, tol.clustering_tol):
            axis = sum(values[i] for i in cluster) / len(cluster)
            if any(abs(values[i] - axis) > tol.clustering_tol for i in cluster):
                continue
            rows = frozenset(units[i].row for i in cluster)
            if len(rows) >= tol.min_group_lines:
                groups.append(AlignmentGroup(axis, kind, rows, tuple(sorted(cluster))))
    return groups


def detect_alignment_grids(page: Page, tol: Tolerances = DEFAULT_TOLERANCES) -> list[TableGrid]:
    """Borderless tables inferred from repeated text alignment; cells are left empty."""
    rows = reading_rows(page.chars, tol.row_tol)
    units: list[TextUnit] = []
    for r, row in enumerate(rows):
        units.extend(row_units(row, r, tol))
    if not units:
        return []
    groups = alignment_groups(units, tol)
    unit_groups: dict[int, set[int]] = {}
    for g, group in enumerate(groups):
        for m in group.members:
            unit_groups.setdefault(m, set()).add(g)
    aligned_per_row: dict[int, int] = {}
    for u in unit_groups:
        aligned_per_row[units[u].row] = aligned_per_row.get(units[u].row, 0) + 1

    runs: list[list[int]] = []
    for r in range(len(rows)):
        if aligned_per_row.get(r, 0) >= 2:
            if runs and runs[-1][-1] == r - 1:
                runs[-1].append(r)
            else:
                runs.append([r])
    grids = []
    for run in runs:
        if len(run) < tol.min_group_lines:
            continue
        grid = _region_grid(page.index, run, units, unit_groups, rows, tol)
        if grid is not None:
            grids.append(grid)
    return grids


def _region_grid(page_index: int, run: list[int], units: Sequence[TextUnit],
                 unit_groups: dict[int, set[int]], rows: Sequence[Sequence[Char]],
                 tol: Tolerances) -> TableGrid | None:
    in_run = set(run)
    aligned = sorted(u for u in unit_groups if units[u].row in in_run)
    # units sharing a group belong to one column
    uf = _UnionFind(len(aligned))
    first_by_group: dict[int, int] = {}
    for k, u in enumerate(aligned):
        for g in unit_groups[u]:
            if g in first_by_group:
                uf.union(first_by_group[g], k)
            else:
                first_by_group[g] = k
    extents = sorted(
        (min(units[aligned[k]].x0 for k in comp), max(units[aligned[k]].x1 for k in comp))
        for comp in uf.groups())
    columns: list[list[float]] = []
    for lo, hi in extents:
        if columns and lo <= columns[-1][1]:
            columns[-1][1] = max(columns[-1][1], hi)
        else:
            columns.append([lo, hi])
    if len(columns) < 2:
        return None
    pad = tol.clustering_tol
    xs = [columns[0][0] - pad]
    xs += [(a[1] + b[0]) / 2 for a, b in zip(columns, columns[1:])]
    xs.append(columns[-1][1] + pad)

    spans = []
    for r in run:
        ink = [c for c in rows[r] if not c.is_space]
        spans.append((min(c.bbox.y0 for c in ink), max(c.bbox.y1 for c in ink)))
    ys = [spans[0][0] - pad]
    ys += [(a[1] + b[0]) / 2 for a, b in zip(spans, spans[1:])]
    ys.append(spans[-1][1] + pad)
    if any(b <= a for a, b in zip(xs, xs[1:])) or any(b <= a for a, b in zip(ys, ys[1:])):
        return None
    return _empty_grid(page_index, xs, ys, "alignment")


def virtual_lines(grid: TableGrid) -> list[GridLine]:
    """The virtual boundary lines of a grid (for debugging and plotting)."""
    x0, x1 = grid.col_boundaries[0], grid.col_boundaries[-1]
    y0, y1 = grid.row_boundaries[0], grid.row_boundaries[-1]
    return ([GridLine("horizontal", y, (x0, x1), "virtual") for y in grid.row_boundaries]
            + [GridLine("vertical", x, (y0, y1), "virtual") for x in grid.col_boundaries])


# -- fusion and filling ------------------------------------------------------------

def _locate(bounds: Sequence[float], v: float) -> int | None:
    if v < bounds[0] or v > bounds[-1]:
        return None
    return min(bisect_right(bounds, v) - 1, len(bounds) - 2)


def fill_cells(page: Page, grid: TableGrid, tol: Tolerances = DEFAULT_TOLERANCES) -> TableGrid:
    """Assign each char whose center lies in a cell to that cell."""
    n_r, n_c = grid.n_rows, grid.n_cols
    parts: list[list[list[str]]] = [[[] for _ in range(n_c)] for _ in range(n_r)]
    for row in reading_rows(page.chars, tol.row_tol):
        per_cell: dict[tuple[int, int], list[Char]] = {}
        for ch in row:
            cx, cy = ch.bbox.center
            r = _locate(grid.row_boundaries, cy)
            c = _locate(grid.col_boundaries, cx)
            if r is not None and c is not None:
                per_cell.setdefault((r, c), []).append(ch)
        for (r, c), chars in per_cell.items():
            text = row_text(chars, tol.space_gap)
            if text:
                parts[r][c].append(text)
    return grid.with_cells([[" ".join(p).strip() for p in row] for row in parts])


def fuse_and_fill(page: Page, vector: Sequence[TableGrid], alignment: Sequence[TableGrid],
                  tol: Tolerances = DEFAULT_TOLERANCES) -> list[TableGrid]:
    """Drop grids overlapping a higher-priority grid, then fill cell text.

    Vector grids take precedence over alignment grids; within one origin,
    larger grids win.
    """
    def rank(g: TableGrid) -> tuple:
        return (0 if g.origin == "vector" else 1, -g.bbox.area, g.bbox.y0, g.bbox.x0)

    kept: list[TableGrid] = []
    for g in sorted([*vector, *alignment], key=rank):
        if all(g.bbox.iou(k.bbox) < tol.overlap_iou for k in kept):
            kept.append(g)
    kept.sort(key=lambda g: (g.bbox.y0, g.bbox.x0))
    return [fill_cells(page, g, tol) for g in kept]


def detect_tables(page: Page, tol: Tolerances = DEFAULT_TOLERANCES) -> list[TableGrid]:
    return fuse_and_fill(page, detect_vector_grids(page, tol), detect_alignment_grids(page, tol), tol)


# -- cross-page merging -------------------------------------------------------------

def merge_cross_page(tables: Sequence[TableGrid], doc: StructuredDocument,
                     tol: Tolerances = DEFAULT_TOLERANCES) -> list[TableGrid]:
    """Join table segments continued from the bottom of one page to the top of the next.

    Rows of a continuation are appended below the first segment; their y
    coordinates are shifted by the heights of the preceding pages so the
    merged row boundaries stay strictly increasing.
    """
    heights = {p.index: p.height for p in doc.pages}
    ordered = sorted(tables, key=lambda t: (t.page_range[0], t.row_boundaries[0],
                                            t.col_boundaries[0], t.row_boundaries[-1]))
    merged: list[TableGrid] = []
    for t in ordered:
        p = t.page_range[0]
        target = None
        for k, u in enumerate(merged):
            last = u.page_range[1]
            if last != p - 1 or last not in heights:
                continue
            offset = sum(heights[i] for i in range(u.page_range[0], last))
            bottom = u.row_boundaries[-1] - offset
            if heights[last] - bottom > tol.bottom_margin:
                continue
            if t.row_boundaries[0] > tol.top_margin:
                continue
            if u.n_cols != t.n_cols:
                continue
            if any(abs(a - b) > tol.col_match_tol for a, b in zip(u.col_boundaries, t.col_boundaries)):
                continue
            if target is None or bottom > target[1]:
                target = (k, bottom, offset + heights[last])
        if target is None:
            merged.append(t)
            continue
        k, _, shift = target
        u = merged[k]
        rows = u.row_boundaries + tuple(y + shift for y in t.row_boundaries[1:])
        origin = u.origin if u.origin == t.origin else "fused"
        merged[k] = TableGrid((u.page_range[0], p), u.col_boundaries, rows, u.cells + t.cells, origin)
    return merged


# -- serialization ------------------------------------------------------------------

def table_to_text(table: TableGrid) -> str:
    """Row-wise pipe-delimited rendering."""
    return "\n".join("| " + " | ".join(row) + " |" for row in table.cells)


def dump_tables(tables: Sequence[TableGrid], out_dir: str | Path, prefix: str = "table") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, t in enumerate(tables):
        path = out_dir / f"{prefix}_{k:03d}_p{t.page_range[0]}.json"
        path.write_text(json.dumps(t.as_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                        encoding="utf-8")
        paths.append(path)
    return paths
