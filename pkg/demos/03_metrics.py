"""Scoring extractions against annotations.

    python demos/03_metrics.py

Precision is correct over extracted, recall is extracted over total and
efficiency is correct over total, so efficiency is always precision times
recall.  All arithmetic is exact; rounding happens once, half up.
"""

# %%
from fractions import Fraction

from chemminer.evaluation import (FieldCounts, GroundTruthRecord, build_report, compute_metrics, format_report,
                                  report_from_counts)
from chemminer.reactions import ReactionRecord

# %% [markdown]
# The published per-field counts (correct, extracted, total).

# %%
counts = {
    "yield": FieldCounts(236, 256, 326),
    "reactant": FieldCounts(203, 228, 300),
    "solvent": FieldCounts(227, 247, 326),
    "product": FieldCounts(223, 255, 326),
}
row = compute_metrics(counts["yield"])
print(row.precision, row.recall, row.efficiency, row.efficiency == row.precision * row.recall)
print(format_report(report_from_counts(counts)))

# %% [markdown]
# The same report from records.  Extractions are paired with annotations
# by product overlap before any field is compared.

# %%
truth = [
    GroundTruthRecord(("benzaldehyde", "phenylboronic acid"), ("biphenyl-4-carbaldehyde",), None, "THF", "93%"),
    GroundTruthRecord(("iodobenzene",), ("biphenyl",), None, "toluene", "45%"),
]
extracted = [
    ReactionRecord("demo", 1, ("iodobenzene",), ("biphenyl",), None, "dioxane", "45 %"),
    ReactionRecord("demo", 2, ("benzaldehyde", "phenylboronic acid"), ("biphenyl-4-carbaldehyde",),
                   None, "THF", None),
]
report = build_report({"demo": (extracted, truth)}, timing={"demo": (Fraction(3, 2), Fraction(1, 200))})
print(report.matching_log)
print(format_report(report))
