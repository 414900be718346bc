import hashlib
import json
import math
import random
from dataclasses import replace

from hypothesis import given, settings
from hypothesis import strategies as st

from chemminer.config import DEFAULT_TOLERANCES
from chemminer.docmodel import BBox, Page, VectorSegment
from chemminer.figures import RenderSpec, extract_figures, segment_clusters, write_manifest
from chemminer.synthetic import PageBuilder
from chemminer.tables import detect_tables

from make_fixtures import synthetic_paper, tiny_png

TOL = DEFAULT_TOLERANCES


def touching(a, b, dist=TOL.adjacency_dist):
    ends_a, ends_b = (a.p0, a.p1), (b.p0, b.p1)
    if any(math.dist(p, q) <= dist for p in ends_a for q in ends_b):
        return True
    ba, bb = a.bbox, b.bbox
    return ba.x0 <= bb.x1 and bb.x0 <= ba.x1 and ba.y0 <= bb.y1 and bb.y0 <= ba.y1


def components(segments):
    """Breadth-first search over the pairwise adjacency graph."""
    seen, out = set(), []
    for start in range(len(segments)):
        if start in seen:
            continue
        comp, queue = [], [start]
        seen.add(start)
        while queue:
            i = queue.pop()
            comp.append(i)
            for j in range(len(segments)):
                if j not in seen and touching(segments[i], segments[j]):
                    seen.add(j)
                    queue.append(j)
        out.append(sorted(comp))
    return sorted(out)


def zigzag(x0=300.0, y0=400.0, n=50):
    pts = [(x0 + 4 * k, y0 + (60 if k % 2 else 0)) for k in range(n + 1)]
    return [VectorSegment(pts[k], pts[k + 1]) for k in range(n)]


def table_and_drawing_page():
    b = PageBuilder().grid_table((72, 150, 250), (100, 120, 140), [("Ligand", "Yield"), ("Amphos", "93%")])
    b.segments.extend(zigzag())
    return b.build()


def test_embedded_image_passes_through():
    data = tiny_png()
    page = PageBuilder().image(BBox(72, 200, 172, 300), data, "png").build()
    [a] = extract_figures(page, [])
    assert a.kind == "embedded" and a.format_tag == "png"
    assert hashlib.sha256(a.payload).hexdigest() == hashlib.sha256(data).hexdigest() == a.digest
    assert a.bbox == BBox(72, 200, 172, 300)


def test_table_only_vectors_give_no_assets():
    page = PageBuilder().grid_table((72, 150, 250), (100, 120, 140), [("a", "b"), ("c", "d")]).build()
    tables = detect_tables(page)
    assert len(tables) == 1
    assert extract_figures(page, tables) == []


def test_table_plus_drawing_gives_one_vector_asset():
    page = table_and_drawing_page()
    tables = detect_tables(page)
    drawing = zigzag()
    assert len(drawing) == 50
    [comp] = components(drawing)
    oracle = BBox(min(drawing[k].bbox.x0 for k in comp), min(drawing[k].bbox.y0 for k in comp),
                  max(drawing[k].bbox.x1 for k in comp), max(drawing[k].bbox.y1 for k in comp))
    [a] = extract_figures(page, tables)
    assert a.kind == "rasterized_vector"
    assert a.bbox == oracle == BBox(300, 400, 500, 460)
    assert a.payload == RenderSpec(oracle, 150)
    assert all(a.bbox.iou(t.bbox) < 0.5 for t in tables)


def test_small_clusters_are_dropped():
    page = PageBuilder().segment((10, 10), (40, 10)).segment((40, 10), (40, 40)).build()
    assert extract_figures(page, []) == []
    big = replace(page, vector_segments=page.vector_segments + (VectorSegment((40, 40), (100, 100)),))
    assert [a.bbox for a in extract_figures(big, [])] == [BBox(10, 10, 100, 100)]


def test_asset_count_invariant_under_segment_reordering():
    page = table_and_drawing_page()
    tables = detect_tables(page)
    expected = extract_figures(page, tables)
    rng = random.Random(11)
    for _ in range(10):
        segs = list(page.vector_segments)
        rng.shuffle(segs)
        shuffled = replace(page, vector_segments=tuple(segs))
        assert extract_figures(shuffled, detect_tables(shuffled)) == expected


coords = st.floats(0, 300, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(coords, coords, coords, coords), min_size=0, max_size=25))
def test_clusters_match_bfs_oracle(raw):
    segs = [VectorSegment((a, b), (c, d)) for a, b, c, d in raw if (a, b) != (c, d)]
    got = sorted(sorted(c) for c in segment_clusters(segs, TOL.adjacency_dist))
    assert got == components(segs)


def test_fixture_scheme_is_a_vector_asset():
    doc = synthetic_paper()
    p1 = doc.pages[1]
    assets = extract_figures(p1, detect_tables(p1))
    assert [a.kind for a in assets] == ["rasterized_vector"]
    assert "2d = methyl 4-iodobenzoate" in assets[0].caption
    p2 = doc.pages[2]
    assert [a.kind for a in extract_figures(p2, detect_tables(p2))] == ["embedded"]


def test_image_without_bytes_is_skipped():
    page = PageBuilder().image(BBox(0, 0, 10, 10), b"x").build()
    empty = replace(page, embedded_images=(replace(page.embedded_images[0], data=None),))
    assert extract_figures(empty, []) == []


def test_vector_bbox_is_clipped_to_page():
    page = Page(0, 200, 200, vector_segments=(VectorSegment((150, 150), (260, 150)),
                                              VectorSegment((260, 150), (260, 260))))
    [a] = extract_figures(page, [])
    assert a.bbox == BBox(150, 150, 200, 200)


def test_manifest(tmp_path):
    data = tiny_png()
    b = PageBuilder().image(BBox(72, 200, 172, 300), data, "png")
    b.segments.extend(zigzag())
    assets = extract_figures(b.build(), [])
    path = write_manifest(assets, tmp_path)
    entries = json.loads(path.read_text())
    assert [e["kind"] for e in entries] == ["embedded", "rasterized_vector"]
    assert (tmp_path / entries[0]["payload_path"]).read_bytes() == data
    assert entries[0]["sha256"] == hashlib.sha256(data).hexdigest()
    assert entries[1]["render_spec"] == {"bbox": [300.0, 400.0, 500.0, 460.0], "target_dpi": 150}
