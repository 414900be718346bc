import json
from dataclasses import astuple

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemminer.agents import RawReaction
from chemminer.corefdict import CorefDictionary, CorefEntry, MoleculeName, Provenance
from chemminer.reactions import SCHEMA_KEYS, ReactionRecord, build_records, emit, load_records, substitute


def dictionary(**pairs):
    d = CorefDictionary()
    for label, name in pairs.items():
        d.insert(CorefEntry(label.lstrip("_"), MoleculeName(name), Provenance(0, "agent1", "text")))
    return d


D = dictionary(_1b="4-methylbenzaldehyde", _2d="methyl 4-iodobenzoate", _3b="methyl 4'-formylbiphenyl-4-carboxylate")


def test_labels_replaced_names_kept():
    raw = RawReaction(("1b", "2d", "Amphos"), ("3b",), None, "THF", "93%")
    rec = substitute(raw, D, "paper", 1)
    assert rec.reactants == ("4-methylbenzaldehyde", "methyl 4-iodobenzoate", "Amphos")
    assert rec.products == ("methyl 4'-formylbiphenyl-4-carboxylate",)
    assert rec.unresolved_labels == ()
    assert (rec.solvent, rec.yield_text) == ("THF", "93%")


def test_unknown_label_kept_and_listed():
    rec = substitute(RawReaction(("9z", "1b", "9z"), ("3c",)), D)
    assert rec.reactants == ("9z", "4-methylbenzaldehyde", "9z")
    assert rec.unresolved_labels == ("9z", "3c")


def test_no_labels_is_identity():
    raw = RawReaction(("benzaldehyde", "Amphos"), ("biphenyl",), "Pd(OAc)2", "toluene", "80-85%")
    rec = substitute(raw, D, "p", 7)
    assert (rec.reactants, rec.products, rec.catalyst, rec.solvent, rec.yield_text) == \
        (raw.reactants, raw.products, raw.catalyst, raw.solvent, raw.yield_text)
    assert rec.unresolved_labels == ()


def test_cue_word_prefix_is_resolved():
    rec = substitute(RawReaction(("compound 1b",), ("Product 3b",)), D)
    assert rec.reactants == ("4-methylbenzaldehyde",)
    assert rec.products == ("methyl 4'-formylbiphenyl-4-carboxylate",)


def test_tombstoned_label_is_unresolved():
    d = dictionary(_1b="4-methylbenzaldehyde")
    d.tombstone("1b")
    rec = substitute(RawReaction(("1b",), ("3b",)), d)
    assert rec.reactants == ("1b",) and rec.unresolved_labels == ("1b", "3b")


def test_catalyst_and_solvent_labels():
    d = dictionary(_5="tetrakis(triphenylphosphine)palladium")
    rec = substitute(RawReaction(("1b",), ("3b",), "5", "12"), d)
    assert rec.catalyst == "tetrakis(triphenylphosphine)palladium"
    assert rec.solvent == "12" and rec.unresolved_labels == ("1b", "3b", "12")


tokens = st.sampled_from(["1b", "2d", "3b", "9z", "Amphos", "THF", "compound 2d", "4-iodoanisole", "12aa"])
raws = st.builds(RawReaction, st.lists(tokens, max_size=4).map(tuple),
                 st.lists(tokens, min_size=1, max_size=3).map(tuple),
                 st.one_of(st.none(), tokens), st.one_of(st.none(), tokens), st.sampled_from([None, "93%"]))


@settings(max_examples=150, deadline=None)
@given(raws)
def test_substitution_properties(raw):
    once = substitute(raw, D, "p", 1)
    assert substitute(once, D) == once
    assert len(once.reactants) == len(raw.reactants) and len(once.products) == len(raw.products)
    assert len(set(once.unresolved_labels)) == len(once.unresolved_labels)
    for label in once.unresolved_labels:
        assert D.resolve(label) is None


def test_products_required():
    with pytest.raises(ValueError):
        ReactionRecord("p", 1, ("a",), ())


def test_emit_empty(tmp_path):
    path = emit([], tmp_path / "r.json")
    assert path.read_text() == "[]\n"


def test_emit_schema_keys(tmp_path):
    [rec] = build_records("paper", [RawReaction(("1b",), ("3b",), yield_text="93%")], D)
    path = emit([rec], tmp_path / "r.json")
    [obj] = json.loads(path.read_text())
    assert set(obj) == set(SCHEMA_KEYS)
    assert obj["yield"] == "93%" and obj["reaction_id"] == 1
    assert path.read_text().endswith("}\n]\n")
    assert list(obj) == sorted(obj)


def test_emit_is_deterministic_and_round_trips(tmp_path):
    recs = build_records("paper", [RawReaction(("1b", "Amphos"), ("3b",), None, "THF", "93%"),
                                   RawReaction(("9z",), ("3c",), yield_text="12%")], D)
    assert [r.reaction_id for r in recs] == [1, 2]
    a = emit(recs, tmp_path / "a.json").read_bytes()
    b = emit(recs, tmp_path / "b.json").read_bytes()
    assert a == b
    assert load_records(tmp_path / "a.json") == recs
    assert [astuple(r) for r in load_records(tmp_path / "a.json")] == [astuple(r) for r in recs]


def test_emit_rejects_duplicate_ids(tmp_path):
    rec = ReactionRecord("p", 1, (), ("x",))
    with pytest.raises(ValueError):
        emit([rec, rec], tmp_path / "r.json")


def test_unicode_is_written_verbatim(tmp_path):
    rec = ReactionRecord("p", 1, ("α-pinene",), ("β-pinene",), yield_text="85–90%")
    text = emit([rec], tmp_path / "r.json").read_text(encoding="utf-8")
    assert "α-pinene" in text and "85–90%" in text


def test_load_rejects_bad_files(tmp_path):
    (tmp_path / "obj.json").write_text("{}")
    with pytest.raises(ValueError):
        load_records(tmp_path / "obj.json")
    (tmp_path / "short.json").write_text('[{"paper_id": "p"}]')
    with pytest.raises(ValueError):
        load_records(tmp_path / "short.json")
