"""Tunable geometric and matching tolerances shared by the pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Any, Mapping


@dataclass(frozen=True)
class Tolerances:
    # doc model
    row_tol: float = 2.0
    axis_tol: float = 0.5
    # text assembly: a horizontal gap wider than this fraction of the font
    # size is read as an implicit space
    space_gap: float = 0.25
    # table-detect: gaps wider than this fraction of the font size split a
    # row into separate alignment units
    cell_gap: float = 1.0
    clustering_tol: float = 3.0
    min_group_lines: int = 3
    merge_gap: float = 3.0
    snap_tol: float = 1.0
    bottom_margin: float = 72.0
    top_margin: float = 72.0
    col_match_tol: float = 4.0
    overlap_iou: float = 0.5
    # figure-extract
    adjacency_dist: float = 5.0
    min_figure_area: float = 2000.0
    target_dpi: int = 150
    # ingest
    fuzzy_max: int = 2

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "fuzzy_max":
                if value < 0:
                    raise ValueError("fuzzy_max must be non-negative")
            elif value <= 0:
                raise ValueError(f"tolerance {f.name} must be positive, got {value!r}")

    def updated(self, values: Mapping[str, Any]) -> "Tolerances":
        known = {f.name: f.type for f in fields(self)}
        unknown = set(values) - set(known)
        if unknown:
            raise KeyError(f"unknown tolerance(s): {', '.join(sorted(unknown))}")
        cast = {k: type(getattr(self, k))(v) for k, v in values.items()}
        return replace(self, **cast)

    def as_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


DEFAULT_TOLERANCES = Tolerances()
