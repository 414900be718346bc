import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemminer.agents import (RawReaction, agent1_candidates, build_document_text, chunk_text, insert_candidates,
                              merge_reactions, normalize_yield, run_agent1_page, run_agent2_assets,
                              run_agent3_document)
from chemminer.backends import BackendError, RuleBackend, count_tokens
from chemminer.corefdict import CorefDictionary, normalize_molecule
from chemminer.docmodel import BBox
from chemminer.figures import FigureAsset, RenderSpec
from chemminer.ingest import SectionKind
from chemminer.pipeline import analyse
from chemminer.prompts import JSON_ONLY_SUFFIX, load_template
from chemminer.tables import TableGrid

from make_fixtures import synthetic_paper, tiny_png

AGENT3_PROMPT_TOKENS = count_tokens(load_template("agent3").render())


class Scripted:
    context_limit = 128_000

    def __init__(self, *replies, multimodal=False):
        self.replies = list(replies)
        self.multimodal = multimodal
        self.calls = 0
        self.seen = []

    def submit(self, prompt, content, token_budget, images=()):
        self.calls += 1
        self.seen.append((prompt, content, list(images)))
        reply = self.replies.pop(0) if self.replies else "{}"
        if isinstance(reply, Exception):
            raise reply
        return reply


def table(rows, page=0):
    n_r, n_c = len(rows), len(rows[0])
    return TableGrid((page, page), tuple(float(10 * k) for k in range(n_c + 1)),
                     tuple(float(10 * k) for k in range(n_r + 1)), tuple(tuple(r) for r in rows), "vector")


# -- Agent I ------------------------------------------------------------------------

def test_agent1_rule_backend_inserts():
    d = CorefDictionary()
    [o] = run_agent1_page("4-methylbenzaldehyde (1b) was added", SectionKind.TECHNICAL, RuleBackend(), d, 3)
    assert (o.label, o.molecule, o.status) == ("1b", "4-methylbenzaldehyde", "inserted")
    assert (o.provenance.page_index, o.provenance.agent_id, o.provenance.modality) == (3, "agent1", "text")
    assert d.resolve("1b").raw == "4-methylbenzaldehyde"


@pytest.mark.parametrize("text, section", [("References\n4-methylbenzaldehyde (1b)", SectionKind.NON_TECHNICAL),
                                           ("   \n", SectionKind.TECHNICAL)])
def test_agent1_bypass_makes_no_calls(text, section):
    backend = RuleBackend()
    assert run_agent1_page(text, section, backend, CorefDictionary()) == []
    assert backend.calls == 0


def test_agent1_rejects_figure_reference():
    d = CorefDictionary()
    backend = Scripted('{"5a": "methyl 4-iodobenzoate"}')
    [o] = run_agent1_page("Figure 5a shows the crude spectrum.", SectionKind.UNKNOWN, backend, d)
    assert o.status == "rejected" and o.reason.startswith("no_context_cue")
    assert len(d) == 0


def test_agent1_retries_once_on_unparseable_reply():
    backend = Scripted("Sorry, here it is", '{"1b": "4-methylbenzaldehyde"}')
    [o] = run_agent1_page("4-methylbenzaldehyde (1b)", SectionKind.TECHNICAL, backend, CorefDictionary())
    assert o.status == "inserted" and backend.calls == 2
    assert backend.seen[1][0].endswith(JSON_ONLY_SUFFIX)
    assert not backend.seen[0][0].endswith(JSON_ONLY_SUFFIX)


def test_agent1_second_parse_failure_skips_page():
    backend = Scripted("nope", "still nope")
    assert run_agent1_page("4-methylbenzaldehyde (1b)", SectionKind.TECHNICAL, backend, CorefDictionary()) == []
    assert backend.calls == 2


def test_agent1_transport_error_propagates():
    with pytest.raises(BackendError):
        run_agent1_page("1b", SectionKind.TECHNICAL, Scripted(BackendError("down")), CorefDictionary())


def test_agent1_bold_label_accepted():
    backend = Scripted('{"7": "2-bromopyridine"}')
    d = CorefDictionary()
    cands = agent1_candidates("see 7 below", SectionKind.TECHNICAL, backend, bold_labels=frozenset({"7"}))
    assert [o.status for o in insert_candidates(d, cands)] == ["inserted"]


# -- Agent II -----------------------------------------------------------------------

def test_agent2_named_ligand_table_gives_no_pair():
    d = CorefDictionary()
    backend = RuleBackend()
    out = run_agent2_assets([table([["Entry", "Ligand", "Yield"], ["3", "Amphos", "93%"]])], [], backend, d)
    assert out == [] and len(d) == 0 and backend.calls == 1


def test_agent2_definition_cell_inserted():
    d = CorefDictionary()
    backend = RuleBackend()
    [o] = run_agent2_assets([table([["Substrate", "Note"], ["2d = methyl 4-iodobenzoate", "-"]], page=4)], [],
                            backend, d)
    assert (o.label, o.molecule, o.status) == ("2d", "methyl 4-iodobenzoate", "inserted")
    assert (o.provenance.page_index, o.provenance.modality) == (4, "table")


def test_agent2_table_request_is_pipe_rows():
    rec = Scripted("{}")
    run_agent2_assets([table([["Substrate", "Note"], ["2d = methyl 4-iodobenzoate", "-"]], page=4)], [], rec,
                      CorefDictionary())
    [(prompt, content, images)] = rec.seen
    assert prompt.startswith("[task: agent2-multimodal v1]") and images == []
    assert content == "Table on page 5:\n| Substrate | Note |\n| 2d = methyl 4-iodobenzoate | - |"


def test_agent2_empty_inputs_make_no_calls():
    backend = RuleBackend()
    assert run_agent2_assets([], [], backend, CorefDictionary()) == []
    assert run_agent2_assets([table([["", ""], ["", ""]])], [], backend, CorefDictionary()) == []
    assert backend.calls == 0


def test_agent2_figure_text_only_backend_gets_caption():
    fig = FigureAsset(1, BBox(100, 280, 350, 305), "rasterized_vector",
                      RenderSpec(BBox(100, 280, 350, 305), 150), caption="2d = methyl 4-iodobenzoate")
    d = CorefDictionary()
    backend = RuleBackend()
    [o] = run_agent2_assets([], [fig], backend, d)
    assert o.status == "inserted" and o.provenance.modality == "figure"


def test_agent2_multimodal_gets_payload():
    png = tiny_png()
    fig = FigureAsset(2, BBox(0, 0, 50, 50), "embedded", png, "png")
    backend = Scripted('{"4a": "2-bromopyridine"}', multimodal=True)
    d = CorefDictionary()
    [o] = run_agent2_assets([], [fig], backend, d)
    assert backend.seen[0][2] == [("png", png)]
    assert o.status == "inserted"
    # the same image without text goes nowhere on a text-only backend
    text_only = Scripted()
    assert run_agent2_assets([], [fig], text_only, CorefDictionary()) == [] and text_only.calls == 0


# -- Agent III ----------------------------------------------------------------------

def test_agent3_rule_sentence():
    [r] = run_agent3_document("1b and 2d gave 3b in 93% yield in THF", CorefDictionary(), RuleBackend())
    assert r.reactants == ("1b", "2d") and r.products == ("3b",)
    assert r.solvent == "THF" and r.yield_text == "93%" and r.catalyst is None


def test_agent3_empty_document():
    backend = RuleBackend()
    assert run_agent3_document("", CorefDictionary(), backend) == []
    assert backend.calls == 0


def merge_oracle(records):
    """Group by (normalized products, yield); the first record is kept as is and later
    ones contribute new reactants and fill empty fields."""
    groups = {}
    for r in records:
        groups.setdefault((frozenset(map(normalize_molecule, r.products)), r.yield_text), []).append(r)
    out = []
    for rs in groups.values():
        reactants = list(rs[0].reactants)
        for r in rs[1:]:
            for x in r.reactants:
                if normalize_molecule(x) not in map(normalize_molecule, reactants):
                    reactants.append(x)
        out.append((tuple(reactants), next((r.solvent for r in rs if r.solvent), None),
                    next((r.catalyst for r in rs if r.catalyst), None)))
    return out


def test_same_reaction_in_two_chunks_merges():
    first = "Coupling of 1b and 2d gave 3b in 93% yield."
    second = "Procedure: 1b and 2d gave 3b in 93% yield in THF."
    doc = first + "\n\n" + "Filler sentence without chemistry. " * 30 + "\n\n" + second
    backend = RuleBackend(context_limit=AGENT3_PROMPT_TOKENS + 4096 + 120)
    [r] = run_agent3_document(doc, None, backend, overlap_tokens=0)
    assert backend.calls >= 2
    assert r.solvent == "THF" and r.yield_text == "93%"
    assert len(r.source_spans) == 2
    raw = [RawReaction(("1b", "2d"), ("3b",), None, None, "93%"),
           RawReaction(("1b", "2d"), ("3b",), None, "THF", "93%")]
    assert [(m.reactants, m.solvent, m.catalyst) for m in merge_reactions(raw)] == merge_oracle(raw)


names = st.sampled_from(["1b", "2d", "3b", "3c", "Amphos", "4-iodoanisole"])
raw_reactions = st.builds(
    RawReaction, st.lists(names, max_size=3).map(tuple), st.lists(names, min_size=1, max_size=2).map(tuple),
    st.sampled_from([None, "Pd(OAc)2"]), st.sampled_from([None, "THF", "toluene"]),
    st.sampled_from([None, "93%", "45%"]))


@settings(max_examples=100, deadline=None)
@given(st.lists(raw_reactions, max_size=8))
def test_merge_matches_oracle(records):
    merged = merge_reactions(records)
    assert [(m.reactants, m.solvent, m.catalyst) for m in merged] == merge_oracle(records)
    assert len({m.merge_key() for m in merged}) == len(merged)
    assert merge_reactions(merged) == merged


def fixture_text():
    a = analyse(synthetic_paper())
    return build_document_text(a.doc, a.page_tables, a.tables)


@pytest.mark.parametrize("window", [60, 100, 150, 200])
def test_chunking_invariance_on_fixture(window):
    text, offsets = fixture_text()
    whole = run_agent3_document(text, None, RuleBackend(), offsets)
    small = RuleBackend(context_limit=AGENT3_PROMPT_TOKENS + 4096 + window)
    assert run_agent3_document(text, None, small, offsets) == whole
    assert len(whole) == 4


def test_source_spans_exist_in_text():
    text, offsets = fixture_text()
    reactions = run_agent3_document(text, None, RuleBackend(), offsets)
    for r in reactions:
        assert r.source_spans
        for page, start, end in r.source_spans:
            assert 0 <= start < end <= len(text)
            assert offsets[page] <= start and (page + 1 == len(offsets) or start < offsets[page + 1])
    [last] = [r for r in reactions if r.products == ("3c",)]
    page, start, end = last.source_spans[0]
    assert page == 2 and text[start:end] == "Attempted coupling of 9z gave 3c in 12% yield."


def test_agent3_prompt_lists_known_labels():
    d = CorefDictionary()
    run_agent1_page("4-methylbenzaldehyde (1b) was added", SectionKind.TECHNICAL, RuleBackend(), d)
    backend = Scripted("[]")
    run_agent3_document("text", d, backend)
    assert backend.seen[0][0].endswith("Known coreference labels: 1b")


def test_agent3_failed_chunk_drops_only_its_reactions():
    doc = "1a gave 2a in 50% yield.\n\n" + "x " * 300 + "\n\n1c gave 2c in 60% yield."
    limit = AGENT3_PROMPT_TOKENS + 4096 + 100
    good = RuleBackend(context_limit=limit)

    class Flaky(Scripted):
        context_limit = limit

        def submit(self, prompt, content, token_budget, images=()):
            if "1a gave" in content:
                raise BackendError("timeout")
            return good.submit(prompt, content, token_budget, images)

    out = run_agent3_document(doc, None, Flaky(), overlap_tokens=0)
    assert [r.products for r in out] == [("2c",)]


def test_agent3_drops_records_without_products_and_bad_yields():
    reply = json.dumps([{"reactants": ["1a"], "products": []},
                        {"reactants": "1a", "products": "2a", "yield": "about half"},
                        {"products": ["2b"], "yield": 88}])
    out = run_agent3_document("anything", None, Scripted(reply))
    assert [(r.reactants, r.products, r.yield_text) for r in out] == [(("1a",), ("2a",), None), ((), ("2b",), "88%")]


@pytest.mark.parametrize("raw, norm", [("93%", "93%"), ("93", "93%"), ("80-85%", "80-85%"), ("80–85 %", "80–85 %"),
                                       (">95%", ">95%"), ("trace", None), (None, None), ("", None)])
def test_normalize_yield(raw, norm):
    assert normalize_yield(raw) == norm


def test_context_too_small_for_prompt():
    with pytest.raises(ValueError):
        run_agent3_document("1a gave 2a in 5% yield.", None, RuleBackend(context_limit=100))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(alphabet="abc \n", min_size=0, max_size=40), max_size=12), st.integers(3, 40),
       st.integers(0, 20))
def test_chunks_are_slices_within_budget(sections, max_tokens, overlap):
    text = "\n\n".join(sections)
    chunks = chunk_text(text, max_tokens, overlap, chars_per_token=1.0)
    if not text:
        assert chunks == []
        return
    covered = set()
    for offset, chunk in chunks:
        assert text[offset:offset + len(chunk)] == chunk
        assert len(chunk) <= max_tokens
        covered.update(range(offset, offset + len(chunk)))
    assert covered == set(range(len(text)))
    starts = [o for o, _ in chunks]
    assert starts == sorted(set(starts))
