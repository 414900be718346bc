"""From glyph boxes to tables and figures.

Run from the repository root:

    python demos/01_layout_and_tables.py

The page below is drawn with the synthetic page builder, so everything is
exact and no PDF library is needed.
"""

# %%
from chemminer.docmodel import load_document, page_text, reading_order
from chemminer.figures import extract_figures
from chemminer.synthetic import PageBuilder
from chemminer.tables import detect_alignment_grids, detect_tables, merge_cross_page, table_to_text

# %% [markdown]
# A page with a ruled table, a borderless two column listing and a small
# zigzag drawing.  Coordinates are in points with the origin top left.
# The prose line keeps the listing apart from the table: an alignment
# region is a run of consecutive lines, however far apart they sit.

# %%
b = PageBuilder()
b.text(72, 60, "General Procedure", 12, bold=True)
b.grid_table((72.0, 160.0, 250.0, 330.0), (90.0, 106.0, 122.0, 138.0), [
    ("Ligand", "Solvent", "Yield"),
    ("XPhos", "toluene", "45%"),
    ("Amphos", "THF", "93%"),
])
b.text(72, 175, "Melting points of the isolated biaryls were recorded in open capillaries.")
for k, (name, mp) in enumerate([("3a", "121-122"), ("3b", "99-101"), ("3c", "140-141"), ("3d", "87-88")]):
    b.text(72, 200 + 14 * k, name)
    b.text(200, 200 + 14 * k, mp)
for x0 in range(350, 500, 10):
    b.segment((x0, 300.0), (x0 + 10, 290.0 if x0 % 20 else 310.0))
page = b.build()

print(page_text(page))
print(len(reading_order(page)), "glyphs in reading order")

# %% [markdown]
# Ruled lines give a vector grid.  Repeated left edges give an alignment
# grid.  Overlapping candidates are fused, preferring the ruled one.

# %%
for t in detect_tables(page):
    print(t.origin, f"{t.n_rows}x{t.n_cols}")
    print(table_to_text(t))

# the alignment detector also finds the ruled table; fusion dropped that copy
print([(g.n_rows, g.n_cols) for g in detect_alignment_grids(page)])

# %% [markdown]
# Segments not consumed by a table cluster into figure regions.  Drawings
# are not rasterized here; the asset carries a render request instead.

# %%
for asset in extract_figures(page, detect_tables(page)):
    print(asset.kind, asset.bbox, asset.payload)

# %% [markdown]
# Table 1 of the bundled fixture paper starts at the foot of page 1 and
# continues on page 2.  The two fragments are stitched back together.

# %%
doc = load_document("tests/fixtures/synthetic_paper.json")
fragments = [t for p in doc.pages for t in detect_tables(p)]
print([t.page_range for t in fragments])
[merged] = merge_cross_page(fragments, doc)
print(merged.page_range)
print(table_to_text(merged))
