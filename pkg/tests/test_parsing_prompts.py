import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemminer.parsing import ResponseParseError, parse_backend_response
from chemminer.prompts import (JSON_ONLY_SUFFIX, TEMPLATE_FILES, load_template, parse_template, task_of,
                               template_hash, template_text)

# Changing a template changes extraction behaviour; bump its version and these pins together.
PINNED = {
    "agent1": "30af9b64b57addacf71949fdd5ac39f64b15416bf905ce21fb5794486d0e2af4",
    "agent2": "8885eb26fe4ede0bbfa23b59259412028c59772d7175cfe1dc436f1c570b4a70",
    "agent3": "14ec28007cb786063ed8b95aa3717e72ad374c013c88a44810e6f51d7a323327",
    "revisit": "8ce267d56117bef75cde18339e7c05b28d841cb81b1f610a3cdf10a6b695bafe",
}


def test_prose_around_mapping():
    assert parse_backend_response('Here you go: {"1b": "4-methylbenzaldehyde"}', "coref_mapping") == {
        "1b": "4-methylbenzaldehyde"}


def test_malformed_value_position():
    text = '{"1b": }'
    with pytest.raises(ResponseParseError) as err:
        parse_backend_response(text, "coref_mapping")
    assert err.value.position == text.index("}")


def test_first_conforming_object_wins():
    text = 'first {"1b": "a-1-ol"} then {"2c": "b-2-ol"}'
    assert parse_backend_response(text, "coref_mapping") == {"1b": "a-1-ol"}


def test_non_conforming_value_is_skipped():
    text = '{"count": 2} and then {"1b": "a-1-ol"}'
    assert parse_backend_response(text, "coref_mapping") == {"1b": "a-1-ol"}
    # nested values of an earlier object are not candidates
    with pytest.raises(ResponseParseError):
        parse_backend_response('{"outer": {"1b": "x"}, "n": 1}', "coref_mapping")


def test_wrapped_forms():
    assert parse_backend_response('{"coreferences": {"1b": "x-1-ol"}}', "coref_mapping") == {"1b": "x-1-ol"}
    reactions = [{"reactants": ["1b"], "products": ["3b"], "yield": "93%"}]
    assert parse_backend_response(json.dumps({"reactions": reactions}), "reaction_list") == reactions
    assert parse_backend_response("[]", "reaction_list") == []


@pytest.mark.parametrize("bad", [
    '[{"reactants": ["1b"]}]',                         # products missing
    '[{"products": ["3b"], "colour": "red"}]',         # unknown key
    '[{"products": [3]}]',                             # non-string product
    '[{"products": ["3b"], "yield": true}]',           # boolean yield
])
def test_reaction_shape_violations(bad):
    with pytest.raises(ResponseParseError):
        parse_backend_response(bad, "reaction_list")


def test_no_json_reports_end_position():
    with pytest.raises(ResponseParseError) as err:
        parse_backend_response("I could not find anything.", "coref_mapping")
    assert err.value.position == len("I could not find anything.")


def test_unknown_shape():
    with pytest.raises(ValueError):
        parse_backend_response("{}", "table")


@settings(max_examples=80, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=5), st.text(max_size=12), max_size=4),
       st.text(alphabet="abc :.\n", max_size=20), st.text(alphabet="abc :.\n", max_size=20))
def test_embedded_mapping_round_trips(mapping, before, after):
    text = before + json.dumps(mapping) + after
    assert parse_backend_response(text, "coref_mapping") == mapping


@pytest.mark.parametrize("name", sorted(TEMPLATE_FILES))
def test_template_hashes_pinned(name):
    assert template_hash(name) == PINNED[name]


@pytest.mark.parametrize("name", sorted(TEMPLATE_FILES))
def test_template_structure(name):
    t = load_template(name)
    assert t.version >= 1 and t.instruction and t.output_contract
    assert len(t.few_shot) >= 1
    prompt = t.render()
    assert task_of(prompt) == t.task_id
    assert prompt.startswith(f"[task: {t.task_id} v{t.version}]")
    assert "Example input 1:" in prompt and "Output format:" in prompt
    assert parse_template(template_text(name)) == t


def test_render_extra_is_appended():
    t = load_template("agent3")
    assert t.render("Known coreference labels: 1b").endswith("Known coreference labels: 1b")
    assert task_of("no header") is None
    assert JSON_ONLY_SUFFIX.strip().startswith("Respond with JSON only")
