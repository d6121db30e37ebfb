"""Acceptance suite: one marked group of tests per criterion.

Run ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section at the end of the report for one PASS/FAIL/SKIP line per criterion.
"""
import itertools
import json
import os
import random
import re
import time

import pytest

from dyadex.affiliation import CachedGeocoder, affiliate, affiliation_prompt, default_gazetteer, find_country_mentions
from dyadex.arguments import extract_pair
from dyadex.detection import detect, exhaustive_detect, naive_prompt
from dyadex.evaluation import GoldAnnotation, efficiency_report, score_detection, score_dyadic
from dyadex.gateway import MCConfig, Prompt, Purpose
from dyadex.lexicon import TriggerStemSet, build_trigger_set
from dyadex.pipeline import RunConfig, make_gateway as config_gateway, run_pipeline
from dyadex.stemmer import stem, stem_phrase
from dyadex.types import Detection, DyadicArguments, EventClassSpec, Sentence, ace_specs
from conftest import DATA, make_gateway

OUTPUTS = ["detections", "pairs", "affiliations", "graph"]


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# ------------------------------------------------------------------------- 1


@criterion(1, "fixture outputs are byte-identical across reruns and cache states, under 10 s")
def test_golden_end_to_end(fixture_dir, tmp_path):
    def run(out, cache):
        cfg = RunConfig.from_file(fixture_dir / "config.json", env={})
        cfg.output_dir, cfg.cache_dir, cfg.lexicon_dir = str(out), str(cache), str(cache / "lexicons")
        t0 = time.perf_counter()
        paths = run_pipeline(cfg)
        return {k: open(paths[k], "rb").read() for k in OUTPUTS}, time.perf_counter() - t0

    cold, cold_s = run(tmp_path / "a", tmp_path / "c1")
    warm, warm_s = run(tmp_path / "b", tmp_path / "c1")
    again, again_s = run(tmp_path / "c", tmp_path / "c2")
    assert cold == warm == again
    golden = {k: (DATA.parent / "golden" / name).read_bytes() for k, name in zip(
        OUTPUTS, ["detections.jsonl", "pairs.jsonl", "affiliations.jsonl", "graph.csv"])}
    assert cold == golden and cold["detections"]
    assert max(cold_s, warm_s, again_s) < 10


# ------------------------------------------------------------------------- 2

VOCAB = ["hurt", "wound", "harm", "maim", "maul", "injure", "batter", "bruise", "cripple", "beat"]


@criterion(2, "MC union equals a brute-force union and its curve never decreases")
def test_mc_union_oracle():
    rng = random.Random(2024)
    for trial in range(100):
        y = rng.randint(1, 70)
        responses = []
        for _ in range(y):
            if rng.random() < 0.05:
                responses.append("I cannot list anything.")
            else:
                words = [rng.choice(VOCAB) for _ in range(rng.randint(1, 5))]
                responses.append("\n".join(f"{rng.choice(['-', '*', '1.'])} {w.upper() if rng.random() < .2 else w}"
                                           for w in words))
        expected, curve = set(), []
        for r in responses:
            expected |= {w for w in VOCAB if re.search(rf"\b{w}\b", r, re.IGNORECASE)}
            curve.append(len(expected))
        gw = make_gateway([{"pattern": ".", "responses": responses}])
        trace = gw.mc_union_trace(Prompt(f"List synonyms {trial}", Purpose.SYNONYM), MCConfig(0.67, y))
        assert trace.items == expected
        assert trace.cumulative_sizes == curve
        assert all(a <= b for a, b in zip(curve, curve[1:]))
        assert len(gw.ledger) == y


# ------------------------------------------------------------------------- 3


@criterion(3, "MC vote matches the strict-majority rule on every small tally")
def test_vote_correctness():
    checked = 0
    for yes in range(16):
        for no in range(16 - yes):
            for unparseable in (0, 1, 2):
                n = yes + no + unparseable
                if n == 0:
                    continue
                answers = ["Yes."] * yes + ["no"] * no + ["It depends."] * unparseable
                random.Random(n * 31 + yes).shuffle(answers)
                gw = make_gateway([{"pattern": ".", "responses": answers}])
                r = gw.mc_vote(Prompt("q", Purpose.DISAMBIGUATION), MCConfig(0.0, n))
                assert r.tally == (yes, no, unparseable)
                assert r.verdict is (yes > no)
                checked += 1
    assert checked > 400


# ------------------------------------------------------------------------- 4


def _curated():
    rows = [line.split("\t") for line in (DATA / "stem_words.tsv").read_text().splitlines()
            if line and not line.startswith("#")]
    return {w: s for w, s in rows}


@criterion(4, "stemmer agrees with the reference Snowball English stemmer on 200 words")
def test_stemmer_oracle():
    curated = _curated()
    assert len(curated) == 200 and "mauled" in curated
    class_tokens = {t for s in ace_specs() for t in re.findall(r"[a-z]+", s.name.lower())}
    assert class_tokens <= set(curated)
    assert all(stem(w) == s for w, s in curated.items())
    snowball = pytest.importorskip("snowballstemmer").stemmer("english")
    assert all(stem(w) == snowball.stemWord(w) for w in curated)


# ------------------------------------------------------------------------- 5

FIVE = [EventClassSpec(c, c, f"Something of kind {c} happens.") for c in ("attack", "injure", "aid", "meet", "sue")]
TEN = [Sentence(f"s{i}", t) for i, t in enumerate([
    "Rebels attacked a post.", "Two were injured and one wounded.", "The attack injured many.",
    "Nothing happened.", "Talks resumed.", "Prices fell.", "It rained.", "Crowds gathered.",
    "Attackers fled.", "Markets opened.",
])]
LEX = {"attack": TriggerStemSet("attack", frozenset({"attack"})),
       "injure": TriggerStemSet("injure", frozenset({"injur", "wound"}))}


@criterion(5, "efficiency report on 10 sentences, 5 classes, 6 matches, 3 samples is 18/150 = 12.0%")
def test_filter_efficiency_identity():
    gw = make_gateway("Yes")
    detect(gw, TEN, FIVE, LEX, MCConfig(0.0, 3))
    rep = efficiency_report(gw.ledger, corpus_size=10, class_count=5, samples=3)
    assert (rep.pipeline_draws, rep.exhaustive_draws) == (18, 150)
    assert rep.ratio == 0.12
    assert "12.0%" in rep.format_table()
    assert len(gw.ledger) == rep.pipeline_draws


# ------------------------------------------------------------------------- 6


@criterion(6, "a corpus without stem matches issues no disambiguation queries")
def test_zero_match_short_circuit():
    gw = make_gateway("Yes")
    assert detect(gw, [s for s in TEN if s.id in {"s3", "s4", "s5", "s6"}], FIVE, LEX, MCConfig(0.0, 9)) == []
    assert gw.ledger.count(Purpose.DISAMBIGUATION) == 0 and len(gw.ledger) == 0


# ------------------------------------------------------------------------- 7

SPANS = [
    "French customs police mauled Mohsen Aminzadeh, a deputy foreign minister of Iran, at the Paris airport.",
    "Rebels attacked a police station in Lima on Tuesday.",
    "The Soviet Union sent tanks and advisers to Nicaragua.",
    "Kurdish insurgents ambushed a Turkish army convoy near the border.",
]
INVENTED = ["the entire country of Atlantis", "a man", "Martian troops", "police officers", "the minister",
            "Turkish army units"]
INJURE = EventClassSpec("injure", "injure", "A person suffers physical harm.")


def _substrings(span, rng):
    words = span.rstrip(".").split()
    i = rng.randrange(len(words))
    j = rng.randint(i + 1, min(len(words), i + 4))
    return " ".join(words[i:j]).strip(",")


@criterion(7, "every extracted actor is a substring of its span and invented answers never survive")
def test_substring_guarantee():
    rng = random.Random(7)
    for trial in range(500):
        span = rng.choice(SPANS)
        pool = [_substrings(span, rng) for _ in range(3)] + [a for a in INVENTED if a not in span] + ["none"]
        agent = [rng.choice(pool) for _ in range(3)]
        patient = [rng.choice(pool) for _ in range(3)]
        gw = make_gateway([{"pattern": "Who injures\\?", "responses": agent},
                           {"pattern": "Who is injured\\?", "responses": patient}])
        out = extract_pair(gw, span, INJURE, cfg=MCConfig(0.0, 3))
        if out is not None:
            for actor in out:
                assert actor in span
                assert actor.lower() not in {a.lower() for a in INVENTED if a not in span}
    for invented in INVENTED:
        if all(invented not in s for s in SPANS):
            gw = make_gateway(invented)
            assert extract_pair(gw, SPANS[0], INJURE, cfg=MCConfig(0.0, 3)) is None


# ------------------------------------------------------------------------- 8


def _norm(actor):
    words = actor.lower().split()
    return " ".join(words[1:] if words and words[0] in ("the", "a", "an") else words)


def _best_matching(preds, golds, ok):
    best = 0
    small, large, flip = (preds, golds, False) if len(preds) <= len(golds) else (golds, preds, True)
    for perm in itertools.permutations(range(len(large)), len(small)):
        best = max(best, sum(ok(large[j], small[i]) if flip else ok(small[i], large[j])
                             for i, j in enumerate(perm)))
    return best


def _brute(preds, golds, ok):
    tp = 0
    for key in {(p[0], p[1]) for p in preds} | {(g[0], g[1]) for g in golds}:
        tp += _best_matching([p for p in preds if p[:2] == key], [g for g in golds if g[:2] == key], ok)
    return tp, len(preds) - tp, len(golds) - tp


@criterion(8, "detection and dyadic scorers agree with brute-force matchers")
def test_scorer_oracles():
    rng = random.Random(8)
    sids, classes = ["s1", "s2", "s3"], ["attack", "injure", "sue"]
    actors = ["the rebels", "Rebels", "police", "customs police", "Iran", "the army", "The Army"]
    for _ in range(100):
        p = [(rng.choice(sids), rng.choice(classes), rng.choice(actors), rng.choice(actors))
             for _ in range(rng.randint(0, 6))]
        g = [(rng.choice(sids), rng.choice(classes), rng.choice(actors), rng.choice(actors))
             for _ in range(rng.randint(0, 6))]
        gold = [GoldAnnotation(s, c, None, a1, a2) for s, c, a1, a2 in g]
        det = score_detection([Detection(s, c, "t", 0) for s, c, *_ in p], gold)
        assert (det.tp, det.fp, det.fn) == _brute(p, g, lambda a, b: True)
        dy = score_dyadic([DyadicArguments(s, c, "t", 0, a1, a2, "") for s, c, a1, a2 in p], gold)
        same = lambda a, b: _norm(a[2]) == _norm(b[2]) and _norm(a[3]) == _norm(b[3])  # noqa: E731
        assert (dy.tp, dy.fp, dy.fn) == _brute(p, g, same)
        if g:
            assert score_detection([Detection(s, c, "t", 0) for s, c, *_ in g], gold).f1 == 1.0
            assert score_dyadic([DyadicArguments(s, c, "t", 0, a1, a2, "") for s, c, a1, a2 in g], gold).f1 == 1.0


@criterion(8, "detection and dyadic scorers agree with brute-force matchers")
def test_both_actors_rule():
    gold = [GoldAnnotation("s1", "injure", "t", "customs police", "Mohsen Aminzadeh")]
    r = score_dyadic([DyadicArguments("s1", "injure", "t", 0, "customs police", "the airport", "")], gold)
    assert (r.tp, r.fp, r.fn) == (0, 1, 1)


# ------------------------------------------------------------------------- 9

GAZ = default_gazetteer()
FIG1 = Sentence("fig:0", SPANS[0])
CONTRA = Sentence("c:0", "Washington sent aid to the Contra rebels fighting the government of Nicaragua.")


@criterion(9, "mention detection, running-example affiliation and rebel relabeling")
def test_labeled_mention_fixture():
    geo = CachedGeocoder.from_file(DATA / "mention_geocoder.json")
    rows = [json.loads(line) for line in (DATA / "mentions.jsonl").read_text().splitlines() if line.strip()]
    assert len(rows) == 25
    hits = sum([[m.surface, m.country_code] for m in find_country_mentions(Sentence(r["id"], r["text"]), GAZ, geo)]
               == r["mentions"] for r in rows)
    assert hits == 25


@criterion(9, "mention detection, running-example affiliation and rebel relabeling")
def test_running_example_affiliation():
    gw = make_gateway([{"pattern": "is Mohsen Aminzadeh affiliated with France", "response": "No"},
                       {"pattern": "is Mohsen Aminzadeh affiliated with Iran", "response": "Yes"}])
    pair = DyadicArguments("fig:0", "injure", "mauled", 3, "French customs police", "Mohsen Aminzadeh", FIG1.text)
    (a,) = affiliate(gw, [pair], [FIG1], GAZ, None, MCConfig(0.0, 3))
    assert (a.h1, a.h2) == ("France", "Iran")
    asked = {e.prompt_hash for e in gw.ledger.entries}
    for country in ("France", "Iran"):
        assert affiliation_prompt(FIG1.text, "French customs police", country).digest not in asked
    assert gw.ledger.count(Purpose.AFFILIATION) == 6  # France then Iran, for the patient only


@criterion(9, "mention detection, running-example affiliation and rebel relabeling")
def test_rebel_relabeling():
    pair = DyadicArguments("c:0", "aid", "aid", 2, "Washington", "the Contra rebels", CONTRA.text)
    gw = make_gateway([{"pattern": "is Washington affiliated with United States", "response": "Yes"},
                       {"pattern": "is the Contra rebels affiliated with Nicaragua", "response": "Yes"},
                       {"pattern": ".", "response": "No"}])
    geo = CachedGeocoder({"Washington": [{"country_code": "us"}]})
    (a,) = affiliate(gw, [pair], [CONTRA], GAZ, geo, MCConfig(0.0, 3))
    assert (a.h1, a.h2) == ("United States", "Nicaragua (rebels)")


# ------------------------------------------------------------------------ 10

PARDON = EventClassSpec("pardon", "pardon", "to lift a sentence imposed by the judiciary")


@criterion(10, "exhaustive baseline issues sentences x classes x samples draws")
def test_naive_baseline_accounting():
    specs = FIVE[:3]
    gw = make_gateway("No")
    exhaustive_detect(gw, TEN[:7], specs, "about+def", MCConfig(0.0, 4))
    assert len(gw.ledger) == gw.ledger.count(Purpose.NAIVE_BOOLEAN) == 7 * 3 * 4
    text = naive_prompt("He was pardoned.", PARDON, "about+def").text
    assert "to lift a sentence imposed by the judiciary" in text


# ------------------------------------------------------------------------ 11

LIVE = bool(os.environ.get("DYADEX_BASE_URL") and os.environ.get("DYADEX_MODEL"))


@criterion(11, "live endpoint: injure lexicon at 0.67/70 contains hurt and wound")
@pytest.mark.skipif(not LIVE, reason="set DYADEX_BASE_URL and DYADEX_MODEL to run the live smoke test")
def test_live_injure_lexicon(tmp_path):
    cfg = RunConfig(cache_dir=str(tmp_path / "cache")).with_env(os.environ)
    spec = next(s for s in ace_specs() if s.id == "injure")
    t0 = time.perf_counter()
    lexicon = build_trigger_set(config_gateway(cfg), spec, MCConfig(0.67, 70), MCConfig(0.0, 1))
    assert time.perf_counter() - t0 < 600
    assert {stem_phrase("hurt"), stem_phrase("wound")} <= lexicon.stems
