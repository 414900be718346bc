"""Coreference labels and the shared label -> molecule dictionary."""

from __future__ import annotations

import enum
import logging
import re
import threading
import unicodedata
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .backends import ExtractionBackend

log = logging.getLogger(__name__)

LABEL_RE = re.compile(r"\d{1,3}[a-z]{0,2}")

CUE_WORDS = frozenset({"compound", "product", "item", "substrate", "catalyst", "intermediate"})
ANTI_CUE_WORDS = frozenset({"figure", "fig.", "table", "scheme", "eq.", "section", "page"})

_DASHES = dict.fromkeys(map(ord, "‐‑‒–—―−﹘﹣－"), "-")
_QUOTES = {**dict.fromkeys(map(ord, "‘’‚‛′´`"), "'"),
           **dict.fromkeys(map(ord, "“”„‟″"), '"')}
_CHEM_SUFFIXES = ("ane", "ene", "yne", "ol", "one", "al", "yde", "ide", "ate", "ite", "ine", "ium",
                  "yl", "oic", "ose", "ile", "ether", "ester", "acid", "phos", "amine", "azole")


def is_label(token: str) -> bool:
    return LABEL_RE.fullmatch(token) is not None


def normalize_label(token: str) -> str:
    return token.strip().lower()


def normalize_molecule(raw: str) -> str:
    """Case-fold, collapse whitespace and unify Unicode dashes and quotes."""
    text = unicodedata.normalize("NFKC", raw).translate(_DASHES).translate(_QUOTES)
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class MoleculeName:
    raw: str
    normalized: str = ""

    def __post_init__(self) -> None:
        norm = normalize_molecule(self.raw)
        if not norm:
            raise ValueError("molecule name is empty")
        object.__setattr__(self, "normalized", norm)

    def __str__(self) -> str:
        return self.raw


def is_chemical_name(token: str) -> bool:
    """Heuristic: long, letter-rich and carrying a locant, hyphen or chemical suffix."""
    t = token.strip(" .,;:()[]")
    if len(t) < 8 or sum(ch.isalpha() for ch in t) < 3:
        return False
    return bool(re.search(r"[\d\-,()\[\]]", t)) or t.lower().endswith(_CHEM_SUFFIXES)


@dataclass(frozen=True)
class LabelVerdict:
    accepted: bool
    reason: str | None = None  # "pattern_mismatch" | "no_context_cue"
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


def _label_occurrences(token: str, text: str) -> list[re.Match]:
    return list(re.finditer(r"(?<![\w.\-])" + re.escape(token) + r"(?![\w\-])", text))


def validate_label(token: str, context: str, bold: bool = False) -> LabelVerdict:
    """Accept ``token`` as a coreference label only with supporting context.

    Supporting context is a cue word right before the label, the label in
    parentheses right after a chemical name, a definition ``label = name``,
    or bold rendering.  A figure/table/scheme style word before the label
    rejects that occurrence.
    """
    if not is_label(token):
        return LabelVerdict(False, "pattern_mismatch")
    occurrences = _label_occurrences(token, context)
    if not occurrences:
        return LabelVerdict(False, "no_context_cue", "label not found in context")
    anti = None
    for m in occurrences:
        before = context[:m.start()]
        after = context[m.end():]
        words = re.findall(r"[A-Za-z]+\.?", before[-40:])
        prev = words[-1].lower() if words else ""
        prev_plain = prev.rstrip(".")
        if prev in ANTI_CUE_WORDS or prev_plain in ANTI_CUE_WORDS or (prev_plain + ".") in ANTI_CUE_WORDS:
            anti = anti or f"{prev_plain} reference"
            continue
        if prev_plain in CUE_WORDS and before.rstrip().lower().endswith(prev_plain):
            return LabelVerdict(True)
        if before.endswith("(") and after.startswith(")"):
            pieces = before[:-1].split()
            if pieces and is_chemical_name(pieces[-1]):
                return LabelVerdict(True)
        definition = re.match(r"\s*[=:]\s*(\S+(?:\s+\S+)*)", after)
        if definition and any(is_chemical_name(w) for w in definition.group(1).split()[:4]):
            return LabelVerdict(True)
        if bold:
            return LabelVerdict(True)
    return LabelVerdict(False, "no_context_cue", anti or "no cue near label")


class InsertOutcome(str, enum.Enum):
    INSERTED = "inserted"
    DUPLICATE = "duplicate"
    CONFLICT = "conflict"


@dataclass(frozen=True)
class Provenance:
    page_index: int
    agent_id: str  # "agent1" | "agent2"
    modality: str  # "text" | "table" | "figure"


@dataclass(frozen=True)
class CorefEntry:
    label: str
    molecule: MoleculeName
    provenance: Provenance
    context: str = field(default="", compare=False)

    @property
    def key(self) -> str:
        return normalize_label(self.label)

    def as_dict(self) -> dict:
        return {"label": self.key, "molecule_raw": self.molecule.raw,
                "molecule_normalized": self.molecule.normalized,
                "provenance": {"page_index": self.provenance.page_index,
                               "agent_id": self.provenance.agent_id,
                               "modality": self.provenance.modality}}


@dataclass
class Conflict:
    label: str
    existing: CorefEntry
    incoming: CorefEntry
    status: str = "queued"  # queued | confirmed | replaced | tombstoned | failed


@dataclass(frozen=True)
class RevisitResult:
    label: str
    existing: str
    incoming: str
    answer: str | None
    status: str
    error: str = ""


class CorefDictionary:
    """Label -> molecule map with duplicate/contradiction self-checks.

    Inserts and lookups are serialized by a lock, so Agent I and Agent II
    workers may share one instance.  A contradicting insert keeps the first
    entry live and queues the pair for revisiting.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._entries: dict[str, CorefEntry] = {}
        self._seen: dict[str, list[str]] = {}
        self._conflicts: list[Conflict] = []
        self._queue: list[Conflict] = []
        self._tombstones: set[str] = set()

    def insert(self, entry: CorefEntry) -> InsertOutcome:
        key = entry.key
        with self._lock:
            existing = self._entries.get(key)
            if existing is None:
                self._entries[key] = entry
                self._seen[key] = [entry.molecule.normalized]
                return InsertOutcome.INSERTED
            if existing.molecule.normalized == entry.molecule.normalized:
                return InsertOutcome.DUPLICATE
            seen = self._seen[key]
            if entry.molecule.normalized not in seen:
                seen.append(entry.molecule.normalized)
                conflict = Conflict(key, existing, entry)
                self._conflicts.append(conflict)
                self._queue.append(conflict)
            return InsertOutcome.CONFLICT

    def resolve(self, label: str) -> MoleculeName | None:
        key = normalize_label(label)
        with self._lock:
            if key in self._tombstones:
                return None
            entry = self._entries.get(key)
            return entry.molecule if entry else None

    def __contains__(self, label: str) -> bool:
        return self.resolve(label) is not None

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def entries(self) -> dict[str, CorefEntry]:
        with self._lock:
            return dict(self._entries)

    @property
    def revisit_queue(self) -> list[Conflict]:
        with self._lock:
            return list(self._queue)

    @property
    def conflicts(self) -> list[Conflict]:
        with self._lock:
            return list(self._conflicts)

    @property
    def tombstones(self) -> set[str]:
        with self._lock:
            return set(self._tombstones)

    def mapping(self) -> dict[str, str]:
        """Normalized label -> normalized molecule for every live entry."""
        with self._lock:
            return {k: e.molecule.normalized for k, e in self._entries.items() if k not in self._tombstones}

    def tombstone(self, label: str) -> None:
        with self._lock:
            self._tombstones.add(normalize_label(label))

    def process_revisits(self, backend: "ExtractionBackend", token_budget: int = 256) -> list[RevisitResult]:
        """Re-query the backend once per queued conflict and settle it.

        Runs with the lock held for the whole pass, so no insert interleaves.
        """
        from .parsing import ResponseParseError, parse_backend_response
        from .backends import BackendError
        from .prompts import load_template

        template = load_template("revisit")
        report: list[RevisitResult] = []
        with self._lock:
            pending, self._queue = self._queue, []
            for conflict in pending:
                key = conflict.label
                current = self._entries[key]
                incoming = conflict.incoming
                if key in self._tombstones:
                    conflict.status = "tombstoned"
                    report.append(RevisitResult(key, current.molecule.raw, incoming.molecule.raw,
                                                None, "tombstoned"))
                    continue
                content = (f"Label: {key}\n"
                           f"Candidate A: {current.molecule.raw}\nContext A: {current.context}\n"
                           f"Candidate B: {incoming.molecule.raw}\nContext B: {incoming.context}\n")
                try:
                    reply = backend.submit(template.render(), content, token_budget)
                    mapping = parse_backend_response(reply, "coref_mapping")
                except (BackendError, ResponseParseError) as exc:
                    conflict.status = "failed"
                    self._queue.append(conflict)
                    report.append(RevisitResult(key, current.molecule.raw, incoming.molecule.raw,
                                                None, "failed", str(exc)))
                    continue
                answer = _answer_for(key, mapping)
                norm = normalize_molecule(answer) if answer else ""
                if norm and norm == current.molecule.normalized:
                    conflict.status = "confirmed"
                elif norm and norm == incoming.molecule.normalized:
                    self._entries[key] = incoming
                    conflict.status = "replaced"
                else:
                    self._tombstones.add(key)
                    conflict.status = "tombstoned"
                log.info("revisit %s: %s (answer %r)", key, conflict.status, answer)
                report.append(RevisitResult(key, current.molecule.raw, incoming.molecule.raw,
                                            answer, conflict.status))
        return report

    def to_dict(self) -> dict:
        with self._lock:
            entries = {}
            for key in sorted(self._entries):
                d = self._entries[key].as_dict()
                d.pop("label")
                entries[key] = d
            conflicts = [{"label": c.label, "existing": c.existing.as_dict(), "incoming": c.incoming.as_dict(),
                          "status": c.status} for c in self._conflicts]
            return {"entries": entries, "conflicts": conflicts, "tombstones": sorted(self._tombstones)}

    @classmethod
    def from_entries(cls, entries: Iterable[CorefEntry]) -> "CorefDictionary":
        d = cls()
        for e in entries:
            d.insert(e)
        return d


def _answer_for(label: str, mapping: dict[str, str]) -> str | None:
    for k, v in mapping.items():
        if normalize_label(k) == label:
            return v
    if len(mapping) == 1:
        return next(iter(mapping.values()))
    return None
