"""Strict extraction of JSON payloads from free-form backend replies."""

from __future__ import annotations

import json
import re
from typing import Any

SHAPES = ("coref_mapping", "reaction_list")

_REACTION_KEYS = {"reactants", "catalyst", "solvent", "products", "yield", "yield_text", "evidence"}


class ResponseParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def _str_or_none(v: Any) -> bool:
    return v is None or isinstance(v, (str, int, float)) and not isinstance(v, bool)


def _conform(value: Any, shape: str) -> Any:
    if shape == "coref_mapping":
        if isinstance(value, dict) and set(value) == {"coreferences"} and isinstance(value["coreferences"], dict):
            value = value["coreferences"]
        if isinstance(value, dict) and all(isinstance(k, str) and isinstance(v, str) for k, v in value.items()):
            return dict(value)
        return None
    if shape == "reaction_list":
        if isinstance(value, dict) and set(value) == {"reactions"}:
            value = value["reactions"]
        if not isinstance(value, list):
            return None
        for item in value:
            if not isinstance(item, dict) or "products" not in item or not set(item) <= _REACTION_KEYS:
                return None
            for k in ("reactants", "products"):
                v = item.get(k, [])
                if not (isinstance(v, str) or isinstance(v, list) and all(isinstance(x, str) for x in v)):
                    return None
            if not all(_str_or_none(item.get(k)) for k in ("catalyst", "solvent", "yield", "yield_text", "evidence")):
                return None
        return value
    raise ValueError(f"unknown response shape {shape!r}; expected one of {SHAPES}")


def parse_backend_response(text: str, expected_shape: str) -> Any:
    """Return the first well-formed JSON value in ``text`` conforming to ``expected_shape``.

    Prose around the JSON is ignored.  Values nested inside an earlier,
    non-conforming JSON value are not considered.  Raises
    :class:`ResponseParseError` carrying the position of the first malformed
    value, or the end of the text when no JSON value was found at all.
    """
    if expected_shape not in SHAPES:
        raise ValueError(f"unknown response shape {expected_shape!r}; expected one of {SHAPES}")
    decoder = json.JSONDecoder()
    first_error: json.JSONDecodeError | None = None
    skip_until = 0
    for m in re.finditer(r"[\[{]", text):
        if m.start() < skip_until:
            continue
        try:
            value, end = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError as exc:
            first_error = first_error or exc
            continue
        skip_until = end
        conformed = _conform(value, expected_shape)
        if conformed is not None:
            return conformed
    if first_error is not None:
        raise ResponseParseError(f"malformed JSON: {first_error.msg}", first_error.pos)
    raise ResponseParseError(f"no JSON value of shape {expected_shape}", len(text))
