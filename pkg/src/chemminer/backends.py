"""Extraction backends: a deterministic rule engine and a remote chat-completions client."""

from __future__ import annotations

import base64
import json
import logging
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from typing import Protocol, Sequence, runtime_checkable

from .prompts import task_of

log = logging.getLogger(__name__)

ENV_URL = "CHEMMINER_LLM_URL"
ENV_MODEL = "CHEMMINER_LLM_MODEL"
ENV_KEY = "CHEMMINER_LLM_KEY"

SOLVENTS = ("THF", "DMF", "DMSO", "toluene", "dioxane", "MeCN", "EtOH", "water")
SUBSTITUENT_WORDS = frozenset({
    "methyl", "ethyl", "propyl", "isopropyl", "butyl", "tert-butyl", "phenyl", "benzyl",
    "acetyl", "allyl", "vinyl", "cyclohexyl", "trimethylsilyl", "sodium", "potassium", "lithium",
})


class BackendError(RuntimeError):
    """Transport-level failure talking to a backend."""


def count_tokens(text: str, chars_per_token: float = 4.0) -> int:
    return math.ceil(len(text) / chars_per_token)


@runtime_checkable
class ExtractionBackend(Protocol):
    context_limit: int
    multimodal: bool
    calls: int

    def submit(self, prompt: str, content: str, token_budget: int,
               images: Sequence[tuple[str, bytes]] = ()) -> str: ...


class _Counted:
    def __init__(self) -> None:
        self._count_lock = threading.Lock()
        self.calls = 0

    def _tick(self) -> None:
        with self._count_lock:
            self.calls += 1


# -- rule backend --------------------------------------------------------------

_LABEL = r"\d{1,3}[a-z]{0,2}"
_PAREN_DEF = re.compile(r"(?P<name>[^\s()]+(?:\([^\s()]*\)[^\s()]*)*)\s*\((?P<label>" + _LABEL + r")\)")
_EQ_DEF = re.compile(r"(?<![\w.\-])(?P<label>" + _LABEL + r")\s*=\s*(?P<name>[^;\n|]+)")
_PERCENT = re.compile(r"\d+(?:\.\d+)?\s*(?:[-–]\s*\d+(?:\.\d+)?\s*)?%")
_NO_BREAK = re.compile(r"(?:(?:^|\n)[ \t]*(?:Table|Scheme|Figure|Fig\.?)\s*\d+[a-z]?\."
                       r"|\b(?:Fig|Eq|ca|al|e\.g|i\.e|vs)\.)$")
_REFERENCE_WORDS = frozenset({"table", "fig", "figure", "scheme", "eq", "entry", "section", "page", "ref"})
_VERB = re.compile(r"\b(gave|afforded)\b", re.I)


def _rule_name(name: str) -> bool:
    """The rule backend's notion of a chemical name: 8+ chars with a digit or hyphen."""
    name = name.strip()
    return len(name) >= 8 and bool(re.search(r"[\d-]", name)) and bool(re.search(r"[A-Za-z]{3}", name))


def _extend_name(text: str, start: int, name: str) -> str:
    """Prepend preceding substituent words ("methyl 4-iodobenzoate")."""
    words = text[:start].split()
    while words and words[-1].lower() in SUBSTITUENT_WORDS:
        name = words.pop() + " " + name
    return name


def rule_coreferences(text: str) -> dict[str, str]:
    found: dict[str, str] = {}
    hits = []
    for m in _PAREN_DEF.finditer(text):
        name = m.group("name").lstrip("([,;:")
        if _rule_name(name):
            hits.append((m.start(), m.group("label"), _extend_name(text, m.start("name"), name)))
    for m in _EQ_DEF.finditer(text):
        name = re.split(r"\.\s|\.$|,\s+(?=\d{1,3}[a-z]{0,2}\s*=)", m.group("name").strip())[0].strip(" .,")
        if _rule_name(name):
            hits.append((m.start(), m.group("label"), name))
    for _, label, name in sorted(hits, key=lambda h: h[0]):
        found.setdefault(label, name)
    return found


def _molecules(fragment: str) -> list[str]:
    """Labels and chemical names in a sentence fragment, in order."""
    out: list[str] = []
    tokens = fragment.split()
    k = 0
    while k < len(tokens):
        tok = tokens[k].strip("(),;:.")
        if re.fullmatch(_LABEL, tok):
            prev = tokens[k - 1].strip("(),;:").lower() if k else ""
            if prev.rstrip(".") not in _REFERENCE_WORDS:
                out.append(tok)
        elif _rule_name(tok) or tok.lower() in SUBSTITUENT_WORDS:
            name = tok
            while tok.lower() in SUBSTITUENT_WORDS and k + 1 < len(tokens):
                k += 1
                tok = tokens[k].strip("(),;:.")
                name += " " + tok
            if _rule_name(name):
                out.append(name)
        k += 1
    return out


def _solvent(fragment: str) -> str | None:
    for m in re.finditer(r"\bin\s+([A-Za-z]+)", fragment):
        for s in SOLVENTS:
            if m.group(1).lower() == s.lower():
                return s
    return None


def _catalyst(fragment: str) -> str | None:
    m = re.search(r"\bwith\s+(\S+)\s+as\s+(?:the\s+)?catalyst\b", fragment, re.I) \
        or re.search(r"\bcatalyzed\s+by\s+(\S+)", fragment, re.I)
    return m.group(1).strip("(),;.") if m else None


def _scheme(sentence: str) -> tuple[list[str], list[str]] | None:
    m = _VERB.search(sentence)
    if not m:
        return None
    before = sentence[:m.start()]
    after = sentence[m.end():]
    after = re.split(r"\s(?:in|with|under|using)\s|[,;.(]", after)[0]
    return _molecules(before), _molecules(after)


def _sentences(text: str) -> list[tuple[int, int]]:
    spans = []
    start = 0
    for m in re.finditer(r"(?<=[.!?])\s+(?=[A-Z0-9(])", text):
        spans.append((start, m.start()))
        start = m.end()
    spans.append((start, len(text)))
    merged: list[tuple[int, int]] = []
    for a, b in spans:
        if merged and _NO_BREAK.search(text[merged[-1][0]:merged[-1][1]]):
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return [(a, b) for a, b in merged if text[a:b].strip()]


def _blocks(content: str) -> list[tuple[str, int, int]]:
    """Split content into ("prose" | "table", start, end) blocks."""
    out: list[tuple[str, int, int]] = []
    pos = 0
    for line in content.splitlines(keepends=True):
        kind = "table" if line.lstrip().startswith("|") else "prose"
        end = pos + len(line)
        if out and out[-1][0] == kind:
            out[-1] = (kind, out[-1][1], end)
        else:
            out.append((kind, pos, end))
        pos = end
    return out


_COLUMN_ROLES = (
    ("yield", re.compile(r"yield", re.I)),
    ("solvent", re.compile(r"solvent", re.I)),
    ("catalyst", re.compile(r"^cat|catalyst", re.I)),
    ("reactant", re.compile(r"ligand|reagent|additive|reactant|base", re.I)),
    ("product", re.compile(r"product", re.I)),
)


def rule_reactions(content: str) -> list[dict]:
    reactions: list[dict] = []
    caption: tuple[list[str], list[str]] | None = None
    for kind, a, b in _blocks(content):
        block = content[a:b]
        if kind == "prose":
            if not block.strip():
                continue
            caption = None
            for s0, s1 in _sentences(block):
                raw = block[s0:s1].strip()
                flat = " ".join(raw.split())
                cap = re.search(r"(?:^|\n)[ \t]*(Table\s+\d+\b.*)", raw, re.S)
                if cap:
                    caption = _scheme(" ".join(cap.group(1).split()))
                    continue
                caption = None
                if "yield" not in flat.lower():
                    continue
                scheme = _scheme(flat)
                if not scheme or not scheme[1]:
                    continue
                pct = _PERCENT.search(flat)
                reactions.append({
                    "reactants": scheme[0], "catalyst": _catalyst(flat), "solvent": _solvent(flat),
                    "products": scheme[1], "yield": pct.group(0).replace(" ", "") if pct else None,
                    "evidence": raw,
                })
            continue
        rows = [ln.strip() for ln in block.splitlines() if ln.strip()]
        cells = [[c.strip() for c in r.strip("|").split("|")] for r in rows]
        if not cells:
            continue
        roles: dict[int, str] = {}
        for j, head in enumerate(cells[0]):
            for role, pat in _COLUMN_ROLES:
                if pat.search(head):
                    roles[j] = role
                    break
        if "yield" not in roles.values():
            caption = None
            continue
        base_reactants, base_products = caption if caption else ([], [])
        for row, raw in zip(cells[1:], rows[1:]):
            rec = {"reactants": list(base_reactants), "catalyst": None, "solvent": None,
                   "products": list(base_products), "yield": None, "evidence": raw}
            for j, value in enumerate(row):
                role = roles.get(j)
                if not value or role is None:
                    continue
                if role == "yield":
                    pct = _PERCENT.search(value)
                    rec["yield"] = pct.group(0).replace(" ", "") if pct else None
                elif role == "solvent":
                    rec["solvent"] = value
                elif role == "catalyst":
                    rec["catalyst"] = value
                elif role == "reactant":
                    rec["reactants"].append(value)
                elif role == "product":
                    rec["products"] = _molecules(value) or [value]
            if rec["products"]:
                reactions.append(rec)
        caption = None
    return reactions


def _revisit_answer(content: str) -> dict[str, str]:
    label = re.search(r"^Label:\s*(\S+)", content, re.M)
    if not label:
        return {}
    for ctx in re.findall(r"^Context [AB]:(.*)$", content, re.M):
        found = rule_coreferences(ctx)
        if label.group(1) in found:
            return {label.group(1): found[label.group(1)]}
    return {}


class RuleBackend(_Counted):
    """Pattern-based stand-in for a language model.

    Coreferences: ``<name> (<label>)`` and ``<label> = <name>`` where the
    name has at least 8 characters and a digit or hyphen.  Reactions: a
    sentence mentioning "yield" with reactants before "gave"/"afforded" and
    products after it, the solvent taken from ``in <solvent>``; tables with
    a yield column give one reaction per row, the reaction scheme taken
    from a preceding "Table N." caption sentence.
    """

    multimodal = False

    def __init__(self, context_limit: int = 128_000):
        super().__init__()
        if context_limit <= 0:
            raise ValueError("context_limit must be positive")
        self.context_limit = context_limit

    def submit(self, prompt: str, content: str, token_budget: int,
               images: Sequence[tuple[str, bytes]] = ()) -> str:
        self._tick()
        task = task_of(prompt)
        if task in ("agent1-coreference", "agent2-multimodal"):
            return json.dumps(rule_coreferences(content), ensure_ascii=False)
        if task == "agent3-reaction":
            return json.dumps(rule_reactions(content), ensure_ascii=False)
        if task == "revisit":
            return json.dumps(_revisit_answer(content), ensure_ascii=False)
        raise BackendError(f"rule backend cannot handle task {task!r}")


# -- remote backend --------------------------------------------------------------

class RemoteBackend(_Counted):
    """Chat-completions style HTTP client.

    ``min_interval`` seconds are enforced between requests across threads.
    """

    def __init__(self, url: str, model: str, api_key: str | None = None, context_limit: int = 128_000,
                 multimodal: bool = False, timeout: float = 120.0, min_interval: float = 0.0):
        super().__init__()
        if not url or not model:
            raise ValueError("remote backend needs both a URL and a model name")
        self.url = url
        self.model = model
        self.api_key = api_key
        self.context_limit = context_limit
        self.multimodal = multimodal
        self.timeout = timeout
        self.min_interval = min_interval
        self._rate_lock = threading.Lock()
        self._last = 0.0

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteBackend":
        return cls(os.environ.get(ENV_URL, ""), os.environ.get(ENV_MODEL, ""),
                   os.environ.get(ENV_KEY) or None, **kwargs)

    def _wait_turn(self) -> None:
        with self._rate_lock:
            delay = self._last + self.min_interval - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            self._last = time.monotonic()

    def request_body(self, prompt: str, content: str, token_budget: int,
                     images: Sequence[tuple[str, bytes]] = ()) -> dict:
        if images and self.multimodal:
            user: str | list = [{"type": "text", "text": content}] + [
                {"type": "image_url",
                 "image_url": {"url": f"data:image/{fmt};base64,{base64.b64encode(data).decode('ascii')}"}}
                for fmt, data in images]
        else:
            user = content
        return {"model": self.model,
                "messages": [{"role": "system", "content": prompt}, {"role": "user", "content": user}],
                "max_tokens": int(token_budget)}

    def submit(self, prompt: str, content: str, token_budget: int,
               images: Sequence[tuple[str, bytes]] = ()) -> str:
        self._tick()
        body = json.dumps(self.request_body(prompt, content, token_budget, images)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        self._wait_turn()
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"request to {self.url} failed: {exc}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape from {self.url}") from exc
