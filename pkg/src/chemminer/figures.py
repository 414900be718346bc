"""Figure asset extraction.

Embedded raster images are passed through byte for byte.  Vector drawings
left over after table detection are clustered into connected components;
each large enough component becomes a render spec for the external
rasterizer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .docmodel import BBox, Page, VectorSegment, chars_text
from .tables import TableGrid, _UnionFind


@dataclass(frozen=True)
class RenderSpec:
    bbox: BBox
    target_dpi: int


@dataclass(frozen=True)
class FigureAsset:
    page_index: int
    bbox: BBox
    kind: str  # "embedded" | "rasterized_vector"
    payload: bytes | RenderSpec = field(repr=False)
    format_tag: str = ""
    caption: str = ""

    @property
    def digest(self) -> str:
        if isinstance(self.payload, bytes):
            return hashlib.sha256(self.payload).hexdigest()
        return ""


def consumed_segments(page: Page, tables: Sequence[TableGrid], tol: Tolerances = DEFAULT_TOLERANCES) -> set[int]:
    """Indices of segments lying on a detected table's boundary lines."""
    used: set[int] = set()
    for t in tables:
        box = t.bbox
        s = tol.snap_tol
        for i, seg in enumerate(page.vector_segments):
            b = seg.bbox
            if seg.is_horizontal(tol.axis_tol):
                y = (seg.p0[1] + seg.p1[1]) / 2
                if (b.x0 >= box.x0 - s and b.x1 <= box.x1 + s
                        and any(abs(y - rb) <= s for rb in t.row_boundaries)):
                    used.add(i)
            elif seg.is_vertical(tol.axis_tol):
                x = (seg.p0[0] + seg.p1[0]) / 2
                if (b.y0 >= box.y0 - s and b.y1 <= box.y1 + s
                        and any(abs(x - cb) <= s for cb in t.col_boundaries)):
                    used.add(i)
    return used


def segment_clusters(segments: Sequence[VectorSegment], adjacency_dist: float) -> list[list[int]]:
    """Connected components: segments touch if endpoints are close or bboxes intersect."""
    n = len(segments)
    if n == 0:
        return []
    p = np.array([[s.p0[0], s.p0[1], s.p1[0], s.p1[1]] for s in segments], dtype=float)
    ends = np.stack([p[:, 0:2], p[:, 2:4]], axis=1)  # (n, 2, 2)
    lo = np.minimum(p[:, 0:2], p[:, 2:4])
    hi = np.maximum(p[:, 0:2], p[:, 2:4])
    uf = _UnionFind(n)
    block = 128
    for start in range(0, n, block):
        sl = slice(start, min(start + block, n))
        boxes = ((lo[sl, None, 0] <= hi[None, :, 0]) & (hi[sl, None, 0] >= lo[None, :, 0])
                 & (lo[sl, None, 1] <= hi[None, :, 1]) & (hi[sl, None, 1] >= lo[None, :, 1]))
        diff = ends[sl, None, :, None, :] - ends[None, :, None, :, :]  # (b, n, 2, 2, 2)
        close = (np.sqrt((diff ** 2).sum(-1)) <= adjacency_dist).any(axis=(2, 3))
        for i, j in zip(*np.nonzero(boxes | close)):
            i = int(i) + start
            if i < j:
                uf.union(i, int(j))
    return uf.groups()


def extract_figures(page: Page, tables: Sequence[TableGrid],
                    tol: Tolerances = DEFAULT_TOLERANCES) -> list[FigureAsset]:
    assets: list[FigureAsset] = []
    chars = page.chars

    def caption(box: BBox) -> str:
        return chars_text([c for c in chars if box.contains_point(*c.bbox.center)], tol.row_tol, tol.space_gap)

    for img in page.embedded_images:
        if img.data is None:
            continue
        assets.append(FigureAsset(page.index, img.bbox, "embedded", img.data, img.format_tag,
                                  caption(img.bbox)))

    used = consumed_segments(page, tables, tol)
    free = [k for k in range(len(page.vector_segments)) if k not in used]
    segs = [page.vector_segments[k] for k in free]
    vector_assets = []
    for comp in segment_clusters(segs, tol.adjacency_dist):
        box = BBox(min(segs[k].bbox.x0 for k in comp), min(segs[k].bbox.y0 for k in comp),
                   max(segs[k].bbox.x1 for k in comp), max(segs[k].bbox.y1 for k in comp))
        if box.area < tol.min_figure_area:
            continue
        if any(box.iou(t.bbox) >= tol.overlap_iou for t in tables):
            continue
        box = box.clipped(page.width, page.height)
        vector_assets.append(FigureAsset(page.index, box, "rasterized_vector",
                                         RenderSpec(box, tol.target_dpi), "", caption(box)))
    vector_assets.sort(key=lambda a: (a.bbox.y0, a.bbox.x0, a.bbox.y1, a.bbox.x1))
    return assets + vector_assets


def write_manifest(assets: Sequence[FigureAsset], out_dir: str | Path,
                   manifest_name: str = "assets.json") -> Path:
    """Write embedded payloads to files and a JSON manifest describing every asset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, a in enumerate(assets):
        entry: dict = {"page_index": a.page_index, "kind": a.kind,
                       "bbox": [a.bbox.x0, a.bbox.y0, a.bbox.x1, a.bbox.y1]}
        if isinstance(a.payload, bytes):
            name = f"asset_{k:03d}_p{a.page_index}.{a.format_tag or 'bin'}"
            (out_dir / name).write_bytes(a.payload)
            entry["payload_path"] = name
            entry["sha256"] = a.digest
        else:
            spec = a.payload
            entry["render_spec"] = {"bbox": [spec.bbox.x0, spec.bbox.y0, spec.bbox.x1, spec.bbox.y1],
                                    "target_dpi": spec.target_dpi}
        entries.append(entry)
    path = out_dir / manifest_name
    path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
