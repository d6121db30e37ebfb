"""Event detection: stem filtering, contextual disambiguation, and the exhaustive baseline."""
from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Literal, Mapping, Sequence

from .gateway import BOOLEAN_MC, Gateway, GatewayError, MCConfig, Prompt, Purpose, VoteResult
from .lexicon import TriggerStemSet
from .morph import gerund_phrase
from .types import Detection, EventClassSpec, Sentence, StageSummary, TriggerMatch

logger = logging.getLogger(__name__)

__all__ = [
    "MIN_PREFIX_STEM",
    "StemIndex",
    "match_candidates",
    "disambiguation_prompt",
    "disambiguate",
    "detect",
    "naive_prompt",
    "exhaustive_detect",
]

MIN_PREFIX_STEM = 3

Variant = Literal["about", "discusses", "about+def", "discusses+def"]
VARIANTS: tuple[str, ...] = ("about", "discusses", "about+def", "discusses+def")


def _token_matches(stem_part: str, token: str) -> bool:
    if len(stem_part) < MIN_PREFIX_STEM:
        return token == stem_part
    return token.startswith(stem_part)


class StemIndex:
    """Prefix lookup of one class's stems against lowercased tokens."""

    def __init__(self, lexicon: TriggerStemSet):
        self.lexicon = lexicon
        self._by_first: dict[str, list[tuple[str, ...]]] = defaultdict(list)
        for s in lexicon.stems:
            parts = tuple(s.split())
            if parts:
                self._by_first[parts[0]].append(parts)

    def matches_at(self, tokens: Sequence[str], i: int) -> list[tuple[str, ...]]:
        tok = tokens[i]
        found = []
        for k in range(1, len(tok) + 1):
            for parts in self._by_first.get(tok[:k], ()):
                if i + len(parts) > len(tokens):
                    continue
                if all(_token_matches(p, tokens[i + j]) for j, p in enumerate(parts)):
                    found.append(parts)
        return found


def match_candidates(
    sentence: Sentence, lexicons: Mapping[str, TriggerStemSet | StemIndex]
) -> list[TriggerMatch]:
    """Every (class, token position) where some stem of the class is a token prefix.

    When several stems of one class fit at the same position the longest
    wins. No model queries are made here.
    """
    lowered = [t.text.lower() for t in sentence.tokens]
    out = []
    for class_id in sorted(lexicons):
        index = lexicons[class_id]
        if not isinstance(index, StemIndex):
            index = StemIndex(index)
        for i in range(len(lowered)):
            hits = index.matches_at(lowered, i)
            if not hits:
                continue
            parts = min(hits, key=lambda p: (-sum(map(len, p)), p))
            end = sentence.tokens[i + len(parts) - 1].end
            stem = " ".join(parts)
            out.append(
                TriggerMatch(
                    sentence.id,
                    class_id,
                    sentence.text[sentence.tokens[i].start : end],
                    i,
                    stem,
                    index.lexicon.source(stem),
                )
            )
    return out


def disambiguation_prompt(sentence_text: str, token: str, term: str, definition: str) -> Prompt:
    gloss = definition.strip().rstrip(".")
    return Prompt(
        f"{sentence_text}\nIn the sentence, does '{token}' indicate '{term}', where '{term}' means {gloss}?",
        Purpose.DISAMBIGUATION,
    )


def _query_term(match: TriggerMatch, spec: EventClassSpec) -> str:
    keywords = {k.strip().lower(): k.strip() for k in spec.keywords}
    if match.source_term and match.source_term in keywords and match.source_term != spec.name.lower():
        return keywords[match.source_term]
    return spec.name


def disambiguate(
    gateway: Gateway,
    sentence_text: str,
    match: TriggerMatch,
    spec: EventClassSpec,
    cfg: MCConfig = BOOLEAN_MC,
) -> VoteResult:
    """Ask whether the matched token really denotes the event class here."""
    prompt = disambiguation_prompt(sentence_text, match.token, _query_term(match, spec), spec.definition)
    return gateway.mc_vote(prompt, cfg)


def detect(
    gateway: Gateway,
    corpus: Iterable[Sentence],
    specs: Iterable[EventClassSpec],
    lexicons: Mapping[str, TriggerStemSet],
    cfg: MCConfig = BOOLEAN_MC,
    workers: int = 1,
    summary: StageSummary | None = None,
) -> list[Detection]:
    spec_by_id = {s.id: s for s in specs}
    indexes = {cid: StemIndex(lex) for cid, lex in lexicons.items() if cid in spec_by_id}
    summary = summary if summary is not None else StageSummary("detect")
    jobs = []
    for sentence in corpus:
        for m in match_candidates(sentence, indexes):
            jobs.append((sentence, m))
    summary.attempt(len(jobs))

    def run(job) -> Detection | None:
        sentence, m = job
        try:
            vote = disambiguate(gateway, sentence.text, m, spec_by_id[m.class_id], cfg)
        except GatewayError as exc:
            summary.fail(f"{m.sentence_id}[{m.token_index}] {m.class_id}: {exc}")
            return None
        if not vote.verdict:
            return None
        return Detection(m.sentence_id, m.class_id, m.token, m.token_index, vote.tally)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, jobs))
    return sorted((d for d in results if d is not None), key=lambda d: d.sort_key)


def naive_prompt(sentence_text: str, spec: EventClassSpec, variant: Variant) -> Prompt:
    """Whole-sentence yes/no question used by the exhaustive baseline."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown template variant {variant!r}")
    name = spec.name.strip().lower()
    action = gerund_phrase(name)
    if variant.startswith("about"):
        question = f"Is the text about {action}"
    else:
        question = f"Does this text discuss {action}"
    if variant.endswith("+def"):
        question += f", where `{name}' is {spec.gloss}"
    return Prompt(f"{sentence_text}\n{question}?", Purpose.NAIVE_BOOLEAN)


def exhaustive_detect(
    gateway: Gateway,
    corpus: Iterable[Sentence],
    specs: Iterable[EventClassSpec],
    variant: Variant = "about",
    cfg: MCConfig = BOOLEAN_MC,
    workers: int = 1,
    summary: StageSummary | None = None,
) -> list[Detection]:
    """One query per (sentence, class); detections carry no trigger token."""
    specs = list(specs)
    jobs = [(s, spec) for s in corpus for spec in specs]
    summary = summary if summary is not None else StageSummary("baseline")
    summary.attempt(len(jobs))

    def run(job) -> Detection | None:
        sentence, spec = job
        try:
            vote = gateway.mc_vote(naive_prompt(sentence.text, spec, variant), cfg)
        except GatewayError as exc:
            summary.fail(f"{sentence.id} {spec.id}: {exc}")
            return None
        return Detection(sentence.id, spec.id, "", -1, vote.tally) if vote.verdict else None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run, jobs))
    return sorted((d for d in results if d is not None), key=lambda d: d.sort_key)
