# # Walking through the bundled fixture
#
# The package ships a 20-sentence corpus with a scripted mock backend, so the
# whole pipeline runs offline. This script runs each stage by hand and prints
# what comes out.

# %%
import shutil
import tempfile
from importlib import resources
from pathlib import Path

from dyadex import (
    RunConfig,
    affiliate,
    aggregate_graph,
    default_gazetteer,
    detect,
    extract,
    load_corpus,
    load_event_specs,
)
from dyadex.arguments import ModalityAudit
from dyadex.pipeline import ensure_lexicons, load_affiliation_tools, make_gateway

work = Path(tempfile.mkdtemp()) / "fixture"
shutil.copytree(resources.files("dyadex") / "data" / "fixture", work,
                ignore=shutil.ignore_patterns("out", "cache", "lexicons"))
cfg = RunConfig.from_file(work / "config.json", env={})
gateway = make_gateway(cfg)
specs = load_event_specs(cfg.specs)
corpus = load_corpus(cfg.corpus)
print(len(corpus), "sentences;", ", ".join(s.id for s in specs))

# %% [markdown]
# ## Trigger stems
#
# Each class gets a stem set built from sampled synonym lists plus word forms.
# Stems are cached on disk and rebuilt only when their inputs change.

# %%
lexicons, rebuilt = ensure_lexicons(gateway, specs, cfg)
for cid, lex in sorted(lexicons.items()):
    print(f"{cid:8} {len(lex.stems):3} stems, e.g. {sorted(lex.stems)[:6]}")

# %% [markdown]
# ## Detection
#
# Only sentences with a stem match reach the model, which is asked a yes/no
# question per match. The vote drops "hurt" in the scandal sentence.

# %%
detections = detect(gateway, corpus, specs, lexicons, cfg.boolean)
for d in detections:
    print(d.sentence_id, d.class_id, repr(d.trigger), d.votes)

# %% [markdown]
# ## Who did what to whom
#
# Hypothetical sentences are rewritten in the past tense before the agent and
# patient questions are asked. Every answer must be a substring of the text.

# %%
audit = ModalityAudit()
pairs = extract(gateway, detections, corpus, specs, cfg.extraction, cfg.modality_policy, cfg.boolean, audit=audit)
for p in pairs:
    print(f"{p.sentence_id:6} {p.class_id:7} {p.a1!r} -> {p.a2!r}")
for rec in audit.records:
    print("rewrote", rec["sentence_id"], repr(rec["original"]), "->", repr(rec["rewrite"]))

# %% [markdown]
# ## Affiliation and the country graph

# %%
gazetteer, geocoder = load_affiliation_tools(cfg)
affiliated = affiliate(gateway, pairs, corpus, gazetteer, geocoder, cfg.affiliation)
for a in affiliated:
    print(f"{a.pair.a1!r} ({a.h1}) -> {a.pair.a2!r} ({a.h2})")

graph = aggregate_graph(affiliated, "year", corpus)
for h1, h2, cls, bucket, n in graph.rows():
    print(f"{bucket} {cls:7} {h1} -> {h2}: {n}")

# %% [markdown]
# ## What it cost

# %%
for purpose, n in sorted(gateway.ledger.by_purpose().items()):
    print(f"{purpose:16} {n:4} draws")
