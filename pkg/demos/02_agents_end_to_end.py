"""The three agents on the fixture paper, then the whole pipeline.

    python demos/02_agents_end_to_end.py

Everything runs against the rule backend, a deterministic pattern matcher
that speaks the same prompt and JSON protocol as a hosted model.  Point
CHEMMINER_LLM_URL at an OpenAI-compatible endpoint and pass
``--backend remote`` to the CLI to use a real one.
"""

# %%
import json
import tempfile
from pathlib import Path

from chemminer import agents
from chemminer.backends import RuleBackend
from chemminer.corefdict import CorefDictionary
from chemminer.docmodel import load_document
from chemminer.pipeline import PipelineConfig, analyse, run_pipeline
from chemminer.reactions import build_records

doc = load_document("tests/fixtures/synthetic_paper.json")
backend = RuleBackend()
a = analyse(doc)
print([s.value for s in a.sections])

# %% [markdown]
# Agent I reads the technical pages and proposes label to molecule pairs.
# Each pair is checked against the page text before it reaches the
# dictionary.  The abstract page is skipped without a backend call.

# %%
dictionary = CorefDictionary()
for p in doc.pages:
    cands = agents.agent1_candidates(a.texts[p.index], a.sections[p.index], backend, p.index)
    for outcome in agents.insert_candidates(dictionary, cands):
        print(p.index, outcome.label, outcome.status)
print(dictionary.mapping())

# %% [markdown]
# Agent II looks at tables and figures.  Here it finds nothing new: the
# scheme label "2d = ..." was already read from the page text.

# %%
for t in a.tables:
    print(agents.agent2_table_candidates(t, backend))
for f in a.figures:
    print(f.kind, f.page_index, repr(f.caption))

# %% [markdown]
# Agent III reads the whole paper, tables included, and returns reactions
# that still use labels.  Substitution against the dictionary finishes the
# job; "9z" is never defined, so it stays listed as unresolved.

# %%
text, offsets = agents.build_document_text(doc, a.page_tables, a.tables)
raws = agents.run_agent3_document(text, dictionary, backend, offsets)
for r in build_records(doc.source_id, raws, dictionary):
    print(r.reaction_id, r.reactants, "->", r.products, r.solvent, r.yield_text, r.unresolved_labels)
print(backend.calls, "backend calls")

# %% [markdown]
# The pipeline does the same thing concurrently and writes one directory
# per paper.  The worker count does not change a single output byte.

# %%
src = Path(tempfile.mkdtemp())
for name in ("synthetic_paper.json", "p2_img0.png"):
    (src / name).write_bytes(Path("tests/fixtures", name).read_bytes())
outs = []
for workers in (1, 8):
    out = Path(tempfile.mkdtemp())
    run_pipeline(PipelineConfig(workers=workers), [src], out)
    outs.append((out / "synthetic_paper" / "reactions.json").read_bytes())
print("identical:", outs[0] == outs[1])
print(json.dumps(json.loads(outs[0])[0], indent=2))
