"""Scoring extracted reactions against expert annotations.

Metrics follow the published convention: ``efficiency = correct/total``,
``precision = correct/extracted``, ``recall = extracted/total`` and F1 is
the harmonic mean of precision and recall.  Note that "recall" here is the
fraction of annotated facts for which *anything* was extracted; the
conventional correct/total ratio is what this module calls efficiency.
"""

from __future__ import annotations

import csv
import json
import os
import unicodedata
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .corefdict import normalize_molecule
from .reactions import ReactionRecord, load_records

FIELDS = ("yield", "reactant", "solvent", "product")
CATALYST = "catalyst"

_ATTR = {"yield": "yield_text", "reactant": "reactants", "solvent": "solvent",
         "product": "products", "catalyst": "catalyst"}
_LIST_FIELDS = {"reactant", "product"}


class UndefinedFieldError(ValueError):
    """A field has no annotated ground truth, so its metrics are undefined."""


@dataclass(frozen=True)
class GroundTruthRecord:
    reactants: tuple[str, ...]
    products: tuple[str, ...]
    catalyst: str | None = None
    solvent: str | None = None
    yield_text: str | None = None
    annotated: Mapping[str, bool] = field(default_factory=dict)
    paper_id: str = ""

    def __post_init__(self) -> None:
        flags = {f: bool(self.annotated.get(f, True)) for f in (*FIELDS, CATALYST)}
        if self.products and not flags["product"]:
            raise ValueError("products must be annotated whenever present")
        if not any(flags.values()):
            raise ValueError("ground truth record has no annotated field")
        object.__setattr__(self, "annotated", flags)

    def is_annotated(self, f: str) -> bool:
        return self.annotated[f]

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthRecord":
        return cls(tuple(d.get("reactants") or ()), tuple(d.get("products") or ()), d.get("catalyst"),
                   d.get("solvent"), d.get("yield"), dict(d.get("annotated") or {}), d.get("paper_id", ""))


def load_truth(path: str | os.PathLike) -> list[GroundTruthRecord]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of ground truth records")
    return [GroundTruthRecord.from_dict(d) for d in data]


def normalize_yield(text: str | None) -> str:
    if not text:
        return ""
    t = unicodedata.normalize("NFKC", text).replace("﹪", "%")
    t = normalize_molecule(t)
    return "".join(t.split())


def _value(record, f: str):
    v = getattr(record, _ATTR[f])
    if f in _LIST_FIELDS:
        return frozenset(normalize_molecule(x) for x in v if normalize_molecule(x))
    if f == "yield":
        return normalize_yield(v)
    return normalize_molecule(v) if v else ""


def similarity(a, b) -> Fraction:
    """Jaccard overlap of the normalized product sets."""
    pa, pb = _value(a, "product"), _value(b, "product")
    union = pa | pb
    return Fraction(len(pa & pb), len(union)) if union else Fraction(0)


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int, Fraction], ...]
    unmatched_extracted: tuple[int, ...]
    unmatched_truth: tuple[int, ...]

    def as_log(self) -> list[dict]:
        return [{"extracted": i, "truth": j, "similarity": str(s)} for i, j, s in self.pairs]


def match_records(extracted: Sequence, truth: Sequence[GroundTruthRecord]) -> Matching:
    """Greedy one-to-one matching by descending product similarity.

    Ties prefer equal yield text, then earlier extracted and truth indices.
    Pairs with zero similarity are never formed.
    """
    scored = []
    for i, e in enumerate(extracted):
        for j, t in enumerate(truth):
            s = similarity(e, t)
            if s > 0:
                same_yield = _value(e, "yield") == _value(t, "yield")
                scored.append((-s, not same_yield, i, j, s))
    scored.sort()
    used_e: set[int] = set()
    used_t: set[int] = set()
    pairs = []
    for _, _, i, j, s in scored:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        pairs.append((i, j, s))
    pairs.sort()
    return Matching(tuple(pairs), tuple(i for i in range(len(extracted)) if i not in used_e),
                    tuple(j for j in range(len(truth)) if j not in used_t))


@dataclass(frozen=True)
class FieldCounts:
    correct: int
    extracted: int
    total: int

    def __post_init__(self) -> None:
        if not (0 <= self.correct <= self.extracted and self.correct <= self.total):
            raise ValueError(f"inconsistent counts {self}")

    def __add__(self, other: "FieldCounts") -> "FieldCounts":
        return FieldCounts(self.correct + other.correct, self.extracted + other.extracted,
                           self.total + other.total)


def count_fields(matching: Matching, extracted: Sequence, truth: Sequence[GroundTruthRecord],
                 score_catalyst: bool = False) -> dict[str, FieldCounts]:
    """Per-field counts.  Only truth records annotating a field contribute to it."""
    fields = FIELDS + ((CATALYST,) if score_catalyst else ())
    out = {}
    for f in fields:
        total = sum(1 for t in truth if t.is_annotated(f))
        n_extracted = correct = 0
        for i, j, _ in matching.pairs:
            t = truth[j]
            if not t.is_annotated(f):
                continue
            got = _value(extracted[i], f)
            if got:
                n_extracted += 1
                if got == _value(t, f):
                    correct += 1
        out[f] = FieldCounts(correct, n_extracted, total)
    return out


@dataclass(frozen=True)
class MetricRow:
    efficiency: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction

    def percent(self) -> dict[str, Decimal]:
        return {k: as_percent(getattr(self, k)) for k in ("efficiency", "precision", "recall", "f1")}


def as_percent(x: Fraction) -> Decimal:
    """``x`` as a percentage rounded half-up to two decimals."""
    scaled = x * 10000
    if scaled < 0:
        raise ValueError("metrics are never negative")
    hundredths = int(scaled + Fraction(1, 2))  # floor(v + 1/2) is half-up for v >= 0
    return Decimal(hundredths).scaleb(-2)


def compute_metrics(counts: FieldCounts) -> MetricRow:
    if counts.total == 0:
        raise UndefinedFieldError("field has no annotated ground truth")
    precision = Fraction(counts.correct, counts.extracted) if counts.extracted else Fraction(0)
    recall = Fraction(counts.extracted, counts.total)
    efficiency = Fraction(counts.correct, counts.total)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return MetricRow(efficiency, precision, recall, f1)


@dataclass(frozen=True)
class CostBlock:
    precision: Fraction
    seconds_per_reaction: Fraction
    usd_per_reaction: Fraction
    reactions: int


@dataclass(frozen=True)
class EvalReport:
    counts: dict[str, FieldCounts]
    rows: dict[str, MetricRow]
    macro: dict[str, Decimal]
    macro_exact: dict[str, Fraction]
    matching_log: dict[str, list[dict]]
    cost: CostBlock | None = None

    def as_dict(self) -> dict:
        d = {
            "fields": {f: {"counts": vars(self.counts[f]).copy(),
                           "metrics": {k: str(v) for k, v in self.rows[f].percent().items()}}
                       for f in self.rows},
            "macro": {k: str(v) for k, v in self.macro.items()},
            "macro_exact": {k: str(v) for k, v in self.macro_exact.items()},
            "matching": self.matching_log,
            "cost": None,
        }
        if self.cost is not None:
            d["cost"] = {"precision": str(as_percent(self.cost.precision)),
                         "seconds_per_reaction": f"{float(self.cost.seconds_per_reaction):.4f}",
                         "usd_per_reaction": f"{float(self.cost.usd_per_reaction):.6f}",
                         "reactions": self.cost.reactions}
        return d


def read_timing(path: str | os.PathLike) -> dict[str, tuple[Fraction, Fraction]]:
    """Read a ``paper_id,seconds,usd`` CSV into per-paper totals."""
    out: dict[str, tuple[Fraction, Fraction]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"paper_id", "seconds", "usd"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: timing CSV needs columns {sorted(need)}")
        for row in reader:
            s, u = out.get(row["paper_id"], (Fraction(0), Fraction(0)))
            out[row["paper_id"]] = (s + Fraction(row["seconds"]), u + Fraction(row["usd"]))
    return out


def build_report(papers: Mapping[str, tuple[Sequence, Sequence[GroundTruthRecord]]],
                 score_catalyst: bool = False,
                 timing: Mapping[str, tuple[Fraction, Fraction]] | None = None) -> EvalReport:
    """Aggregate counts over papers, then compute metrics once per field.

    ``papers`` maps a paper id to ``(extracted records, ground truth)``.
    Fields with no annotated truth anywhere are left out of the report.
    The macro averages are taken over the rounded per-field percentages,
    which is how the published averages were obtained; the exact rational
    means are kept alongside.
    """
    fields = FIELDS + ((CATALYST,) if score_catalyst else ())
    totals = {f: FieldCounts(0, 0, 0) for f in fields}
    log: dict[str, list[dict]] = {}
    n_extracted = 0
    for pid in sorted(papers):
        extracted, truth = papers[pid]
        m = match_records(extracted, truth)
        log[pid] = m.as_log()
        n_extracted += len(extracted)
        for f, c in count_fields(m, extracted, truth, score_catalyst).items():
            totals[f] = totals[f] + c
    return report_from_counts(totals, log, timing, n_extracted)


def report_from_counts(totals: Mapping[str, FieldCounts], log: dict | None = None,
                       timing: Mapping[str, tuple[Fraction, Fraction]] | None = None,
                       n_reactions: int = 0) -> EvalReport:
    rows: dict[str, MetricRow] = {}
    for f, c in totals.items():
        try:
            rows[f] = compute_metrics(c)
        except UndefinedFieldError:
            continue
    scored = [f for f in rows if f in FIELDS]
    keys = ("precision", "recall", "f1", "efficiency")
    macro: dict[str, Decimal] = {}
    macro_exact: dict[str, Fraction] = {}
    if scored:
        for k in keys:
            rounded = sum(as_percent(getattr(rows[f], k)) for f in scored) / len(scored)
            macro[k] = rounded.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
            macro_exact[k] = sum((getattr(rows[f], k) for f in scored), Fraction(0)) / len(scored)
    cost = None
    if timing:
        seconds = sum((s for s, _ in timing.values()), Fraction(0))
        usd = sum((u for _, u in timing.values()), Fraction(0))
        n = max(n_reactions, 1)
        precision = rows["product"].precision if "product" in rows else Fraction(0)
        cost = CostBlock(precision, seconds / n, usd / n, n_reactions)
    return EvalReport(dict(totals), rows, macro, macro_exact, log or {}, cost)


def format_report(report: EvalReport) -> str:
    """Aligned plain-text tables: counts, metrics and the optional cost line."""
    lines = [f"{'Field':<10}{'Correct':>10}{'Extracted':>11}{'Total':>8}"]
    for f, c in report.counts.items():
        lines.append(f"{f:<10}{c.correct:>10}{c.extracted:>11}{c.total:>8}")
    lines.append("")
    lines.append(f"{'Field':<10}{'Precision':>11}{'Recall':>9}{'F1':>9}{'Efficiency':>12}")
    for f, row in report.rows.items():
        p = row.percent()
        lines.append(f"{f:<10}{p['precision']:>10}%{p['recall']:>8}%{p['f1']:>8}%{p['efficiency']:>11}%")
    if report.macro:
        m = report.macro
        lines.append(f"{'average':<10}{m['precision']:>10}%{m['recall']:>8}%{m['f1']:>8}%{m['efficiency']:>11}%")
    if report.cost is not None:
        c = report.cost
        lines.append("")
        lines.append(f"{'Precision':>10}{'Seconds/reaction':>18}{'USD/reaction':>14}")
        lines.append(f"{as_percent(c.precision):>9}%{float(c.seconds_per_reaction):>18.4f}"
                     f"{float(c.usd_per_reaction):>14.6f}")
    return "\n".join(lines) + "\n"


def evaluate_dirs(extracted_dir: str | os.PathLike, truth_dir: str | os.PathLike,
                  score_catalyst: bool = False, timing_csv: str | os.PathLike | None = None) -> EvalReport:
    """Pair ``<truth_dir>/<paper>.json`` with ``<extracted_dir>/<paper>/reactions.json``.

    A flat ``<extracted_dir>/<paper>.json`` layout is accepted too.  A paper
    with truth but no extraction counts as zero extracted records.
    """
    extracted_dir, truth_dir = Path(extracted_dir), Path(truth_dir)
    papers: dict[str, tuple[list[ReactionRecord], list[GroundTruthRecord]]] = {}
    for tpath in sorted(truth_dir.glob("*.json")):
        pid = tpath.stem
        candidates = [extracted_dir / pid / "reactions.json", extracted_dir / f"{pid}.json"]
        found = next((p for p in candidates if p.is_file()), None)
        papers[pid] = (load_records(found) if found else [], load_truth(tpath))
    timing = read_timing(timing_csv) if timing_csv else None
    return build_report(papers, score_catalyst, timing)

