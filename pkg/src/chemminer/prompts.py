"""Versioned few-shot prompt templates shipped as package data."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

TEMPLATE_FILES = {
    "agent1": "agent1_coreference.txt",
    "agent2": "agent2_multimodal.txt",
    "agent3": "agent3_reaction.txt",
    "revisit": "revisit.txt",
}

TASK_RE = re.compile(r"^\[task: ([\w-]+) v(\d+)\]")

JSON_ONLY_SUFFIX = "\n\nRespond with JSON only, without any surrounding text."


@dataclass(frozen=True)
class PromptTemplate:
    task_id: str
    version: int
    instruction: str
    few_shot: tuple[tuple[str, str], ...]
    output_contract: str

    def render(self, extra: str = "") -> str:
        parts = [f"[task: {self.task_id} v{self.version}]", self.instruction]
        for k, (inp, out) in enumerate(self.few_shot, 1):
            parts.append(f"Example input {k}:\n{inp}\nExample output {k}:\n{out}")
        parts.append(f"Output format: {self.output_contract}")
        if extra:
            parts.append(extra)
        return "\n\n".join(parts)


def parse_template(text: str) -> PromptTemplate:
    header, *sections = re.split(r"^=== ", text, flags=re.M)
    meta = dict(line.split(":", 1) for line in header.strip().splitlines())
    body: dict[str, list[str]] = {}
    for sec in sections:
        name, _, content = sec.partition("\n")
        body.setdefault(name.strip(), []).append(" ".join(content.split()) if name.strip() in
                                                 ("instruction", "output contract") else content.strip())
    shots = tuple(zip(body.get("example input", []), body.get("example output", [])))
    return PromptTemplate(meta["id"].strip(), int(meta["version"]), body["instruction"][0], shots,
                          body["output contract"][0])


def template_text(name: str) -> str:
    return resources.files("chemminer").joinpath("prompts").joinpath(TEMPLATE_FILES[name]).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    return parse_template(template_text(name))


def template_hash(name: str) -> str:
    return hashlib.sha256(template_text(name).encode("utf-8")).hexdigest()


def task_of(prompt: str) -> str | None:
    m = TASK_RE.match(prompt)
    return m.group(1) if m else None
