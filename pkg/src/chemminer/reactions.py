"""Coreference substitution and the final reaction record format."""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .agents import RawReaction
from .corefdict import CUE_WORDS, CorefDictionary, is_label

SCHEMA_KEYS = ("paper_id", "reaction_id", "reactants", "catalyst", "solvent", "products", "yield",
               "unresolved_labels")

_CUE_PREFIX = re.compile(r"(?i)^(?:(" + "|".join(sorted(CUE_WORDS)) + r")\s+)?(\S+)$")


@dataclass(frozen=True)
class ReactionRecord:
    paper_id: str
    reaction_id: int
    reactants: tuple[str, ...]
    products: tuple[str, ...]
    catalyst: str | None = None
    solvent: str | None = None
    yield_text: str | None = None
    unresolved_labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.products:
            raise ValueError(f"reaction {self.reaction_id} of {self.paper_id!r} has no products")

    def as_dict(self) -> dict:
        return {"paper_id": self.paper_id, "reaction_id": self.reaction_id,
                "reactants": list(self.reactants), "catalyst": self.catalyst,
                "solvent": self.solvent, "products": list(self.products),
                "yield": self.yield_text, "unresolved_labels": list(self.unresolved_labels)}

    @classmethod
    def from_dict(cls, d: dict) -> "ReactionRecord":
        missing = set(SCHEMA_KEYS) - set(d)
        if missing:
            raise ValueError(f"reaction record lacks keys {sorted(missing)}")
        return cls(d["paper_id"], int(d["reaction_id"]), tuple(d["reactants"]), tuple(d["products"]),
                   d["catalyst"], d["solvent"], d["yield"], tuple(d["unresolved_labels"]))


def _resolve_value(value: str, dictionary: CorefDictionary, unresolved: list[str]) -> str:
    m = _CUE_PREFIX.match(value.strip())
    if not m or not is_label(m.group(2)):
        return value
    molecule = dictionary.resolve(m.group(2))
    if molecule is None:
        if m.group(2) not in unresolved:
            unresolved.append(m.group(2))
        return value
    return molecule.raw


def substitute(raw: RawReaction | ReactionRecord, dictionary: CorefDictionary, paper_id: str = "",
               reaction_id: int = 1) -> ReactionRecord:
    """Replace every label-valued field with the molecule name it stands for.

    A value counts as a label when it is a bare label or a cue word followed
    by one (``compound 3b``).  Labels the dictionary cannot resolve, including
    tombstoned ones, are kept verbatim and listed in ``unresolved_labels``.
    """
    unresolved: list[str] = []
    sub = lambda v: _resolve_value(v, dictionary, unresolved)  # noqa: E731
    reactants = tuple(sub(v) for v in raw.reactants)
    products = tuple(sub(v) for v in raw.products)
    catalyst = sub(raw.catalyst) if raw.catalyst else raw.catalyst
    solvent = sub(raw.solvent) if raw.solvent else raw.solvent
    if isinstance(raw, ReactionRecord):
        paper_id, reaction_id = raw.paper_id, raw.reaction_id
    return ReactionRecord(paper_id, reaction_id, reactants, products, catalyst, solvent,
                          raw.yield_text, tuple(unresolved))


def build_records(paper_id: str, raws: Iterable[RawReaction], dictionary: CorefDictionary) -> list[ReactionRecord]:
    return [substitute(r, dictionary, paper_id, k) for k, r in enumerate(raws, 1)]


def dumps_records(records: Sequence[ReactionRecord]) -> str:
    return json.dumps([r.as_dict() for r in records], sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def emit(records: Sequence[ReactionRecord], out_path: str | os.PathLike) -> Path:
    ids = [(r.paper_id, r.reaction_id) for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("reaction ids must be unique within a paper")
    path = Path(out_path)
    path.write_text(dumps_records(records), encoding="utf-8")
    return path


def load_records(path: str | os.PathLike) -> list[ReactionRecord]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of reaction records")
    return [ReactionRecord.from_dict(d) for d in data]
