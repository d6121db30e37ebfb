"""Dyadic argument extraction (agent, patient) for detected events."""
from __future__ import annotations

import json
import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Literal, Mapping, Sequence

from .gateway import (
    BOOLEAN_MC,
    EXTRACTION_MC,
    SINGLE_MC,
    Gateway,
    GatewayError,
    MCConfig,
    Prompt,
    Purpose,
    parse_bullets,
)
from .morph import past_participle, split_verb_phrase, third_person
from .types import Detection, DyadicArguments, EventClassSpec, Sentence, StageSummary

logger = logging.getLogger(__name__)

__all__ = [
    "ModalityResult",
    "RoleQueries",
    "modality_prompt",
    "rewrite_prompt",
    "split_prompt",
    "qa_prompt",
    "detect_modality",
    "normalize_modality",
    "split_instances",
    "build_role_queries",
    "vote_answer",
    "extract_pair",
    "extract",
    "ModalityAudit",
]

ModalityPolicy = Literal["normalize", "past_only", "include_future"]
POLICIES = ("normalize", "past_only", "include_future")


@dataclass(frozen=True)
class ModalityResult:
    has_hypothetical: bool
    normalized_text: str


@dataclass(frozen=True)
class RoleQueries:
    agent_q: str
    patient_q: str


def _ws(text: str) -> str:
    return " ".join(text.split())


# ------------------------------------------------------------------ prompts


def modality_prompt(text: str) -> Prompt:
    return Prompt(
        f"Does the text contain hypothetical or intended (not yet realized) events?\n{text}",
        Purpose.MODALITY_CHECK,
    )


def rewrite_prompt(text: str) -> Prompt:
    return Prompt(
        "Rewrite the text so that every hypothetical or intended event is stated in the past tense "
        f"as if it happened. Output only the rewritten text.\n{text}",
        Purpose.MODALITY_REWRITE,
    )


def split_prompt(text: str, spec: EventClassSpec, count: int) -> Prompt:
    return Prompt(
        f"{text}\nThe text describes {count} separate '{spec.name}' events, where '{spec.name}' means "
        f"{spec.gloss}. Split the text into one span per event. List each span in bullet points, "
        "copying it exactly from the text.",
        Purpose.INSTANCE_SPLIT,
    )


def qa_prompt(span: str, question: str, spec: EventClassSpec, purpose: Purpose) -> Prompt:
    return Prompt(
        f"{span}\n{question} where {spec.name} means {spec.gloss}. "
        "Answer with an exact phrase from the text, or 'none'.",
        purpose,
    )


# ----------------------------------------------------------------- modality


def detect_modality(gateway: Gateway, text: str, cfg: MCConfig = BOOLEAN_MC) -> bool:
    try:
        return gateway.mc_vote(modality_prompt(text), cfg).verdict
    except GatewayError as exc:
        logger.warning("modality check failed, proceeding unnormalized: %s", exc)
        return False


def normalize_modality(gateway: Gateway, text: str) -> str:
    """Past-tense rewrite of ``text`` (first sample at temperature 0)."""
    out = gateway.complete(rewrite_prompt(text), SINGLE_MC).raw_texts[0].strip()
    return out or text


class ModalityAudit:
    """Append-only log of (original, rewrite) pairs, one JSON object per line."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, sentence_id: str, original: str, rewrite: str) -> None:
        self.records.append({"sentence_id": sentence_id, "original": original, "rewrite": rewrite})

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in sorted(self.records, key=lambda r: r["sentence_id"]):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @staticmethod
    def load(path: str | os.PathLike) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------- splitting


def split_instances(
    gateway: Gateway, text: str, spec: EventClassSpec, trigger_count: int, cfg: MCConfig = SINGLE_MC
) -> list[str]:
    """Spans of ``text``, one per event instance.

    A single instance needs no query. Spans that are not substrings of the
    text are dropped; if any were dropped, or nothing usable came back, the
    whole text is appended as a fallback span.
    """
    if trigger_count < 1:
        raise ValueError("trigger_count must be >= 1")
    if trigger_count == 1:
        return [text]
    try:
        raw = gateway.complete(split_prompt(text, spec, trigger_count), cfg).raw_texts[0]
        items = parse_bullets(raw, lowercase=False)
    except (GatewayError, ValueError) as exc:
        logger.warning("instance split failed, using whole sentence: %s", exc)
        return [text]
    spans = [s for s in items if s in text]
    if len(spans) < len(items):
        logger.warning("dropped %d split spans not found in the text", len(items) - len(spans))
    if not spans or len(spans) < len(items):
        spans.append(text)
    return list(dict.fromkeys(spans))


# ------------------------------------------------------------ role queries


def build_role_queries(spec: EventClassSpec) -> RoleQueries:
    head, middle, prep = split_verb_phrase(spec.verb)
    agent = " ".join(p for p in (third_person(head), middle) if p)
    patient = " ".join(p for p in (past_participle(head), middle, prep) if p)
    return RoleQueries(f"Who {agent}?", f"Who is {patient}?")


# ---------------------------------------------------------- answer voting


def _clean_answer(answer: str) -> str:
    a = _ws(answer).strip().strip("\"'`“”‘’").strip()
    return a.rstrip(".,;:!?").strip()


def _locate(answer: str, span: str) -> str | None:
    """The span's own text for ``answer`` (case-insensitive), if present."""
    norm = _ws(span)
    i = norm.casefold().find(answer.casefold())
    if not answer or i < 0:
        return None
    # casefold can change length (e.g. "ß"); only accept when offsets line up
    candidate = norm[i : i + len(answer)]
    return candidate if candidate.casefold() == answer.casefold() else None


def vote_answer(answers: Sequence[str], span: str) -> str | None:
    """Plurality over extractive answers, clustering answers that contain one another.

    Each distinct valid answer is supported by every sample whose answer is a
    substring of it or contains it.  The best-supported answer wins, ties going
    to the more frequent exact answer, then the longer one.  ``none`` answers
    form their own bloc, which wins ties.  Answers not found in ``span`` are
    discarded.
    """
    valid: list[str] = []
    nones = 0
    for raw in answers:
        a = _clean_answer(raw)
        if a.casefold() in ("none", "none.", "n/a", ""):
            nones += 1
            continue
        located = _locate(a, span)
        if located is not None:
            valid.append(located)
    if not valid:
        return None
    keys = Counter(v.casefold() for v in valid)
    first_form = {}
    for v in valid:
        first_form.setdefault(v.casefold(), v)

    def support(k: str) -> int:
        return sum(n for other, n in keys.items() if other in k or k in other)

    best = max(keys, key=lambda k: (support(k), keys[k], len(k), k))
    if support(best) <= nones:
        return None
    return first_form[best]


def extract_pair(
    gateway: Gateway,
    span: str,
    spec: EventClassSpec,
    queries: RoleQueries | None = None,
    cfg: MCConfig = EXTRACTION_MC,
) -> tuple[str, str] | None:
    """Agent and patient for one span, or ``None`` unless both resolve."""
    if not span.strip():
        raise ValueError("span must be non-empty")
    queries = queries or build_role_queries(spec)
    agent_batch = gateway.complete(qa_prompt(span, queries.agent_q, spec, Purpose.AGENT_QA), cfg)
    patient_batch = gateway.complete(qa_prompt(span, queries.patient_q, spec, Purpose.PATIENT_QA), cfg)
    a1 = vote_answer(agent_batch.raw_texts, span)
    a2 = vote_answer(patient_batch.raw_texts, span)
    if a1 is None or a2 is None:
        return None
    return a1, a2


def _assign_spans(text: str, spans: Sequence[str], dets: Sequence[Detection]) -> list[str]:
    """Pair each detection (in token order) with a span containing its trigger."""
    out = []
    used: set[int] = set()
    for d in dets:
        trig = d.trigger.casefold()
        candidates = [i for i, s in enumerate(spans) if trig and trig in s.casefold()]
        fresh = [i for i in candidates if i not in used]
        if fresh:
            i = fresh[0]
        elif candidates:
            i = candidates[0]
        else:
            out.append(text)
            continue
        used.add(i)
        out.append(spans[i])
    return out


def extract(
    gateway: Gateway,
    detections: Iterable[Detection],
    sentences: Mapping[str, Sentence] | Iterable[Sentence],
    specs: Iterable[EventClassSpec],
    cfg: MCConfig = EXTRACTION_MC,
    modality_policy: ModalityPolicy = "normalize",
    boolean_cfg: MCConfig = BOOLEAN_MC,
    workers: int = 1,
    summary: StageSummary | None = None,
    audit: ModalityAudit | None = None,
) -> list[DyadicArguments]:
    if modality_policy not in POLICIES:
        raise ValueError(f"unknown modality policy {modality_policy!r}")
    if not isinstance(sentences, Mapping):
        sentences = {s.id: s for s in sentences}
    spec_by_id = {s.id: s for s in specs}
    summary = summary if summary is not None else StageSummary("extract")

    by_sentence: dict[str, list[Detection]] = defaultdict(list)
    for d in detections:
        by_sentence[d.sentence_id].append(d)

    def run_sentence(sid: str) -> list[DyadicArguments]:
        sentence = sentences.get(sid)
        if sentence is None:
            summary.fail(f"{sid}: detection refers to unknown sentence")
            return []
        text, flagged = sentence.text, False
        if modality_policy != "include_future":
            flagged = detect_modality(gateway, text, boolean_cfg)
            if flagged and modality_policy == "past_only":
                return []
            if flagged:
                try:
                    text = normalize_modality(gateway, text)
                except GatewayError as exc:
                    summary.fail(f"{sid}: modality rewrite failed: {exc}")
                if audit is not None:
                    audit.add(sid, sentence.text, text)
        out = []
        by_class: dict[str, list[Detection]] = defaultdict(list)
        for d in sorted(by_sentence[sid], key=lambda d: d.token_index):
            by_class[d.class_id].append(d)
        for class_id in sorted(by_class):
            spec = spec_by_id.get(class_id)
            dets = by_class[class_id]
            if spec is None:
                summary.fail(f"{sid}: no spec for class {class_id}")
                continue
            spans = split_instances(gateway, text, spec, len(dets))
            queries = build_role_queries(spec)
            for d, span in zip(dets, _assign_spans(text, spans, dets)):
                summary.attempt()
                try:
                    pair = extract_pair(gateway, span, spec, queries, cfg)
                except GatewayError as exc:
                    summary.fail(f"{sid}[{d.token_index}] {class_id}: {exc}")
                    continue
                if pair is not None:
                    out.append(DyadicArguments(sid, class_id, d.trigger, d.token_index, pair[0], pair[1],
                                               _ws(span), flagged))
        return out

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(run_sentence, sorted(by_sentence)))
    return sorted((p for batch in results for p in batch), key=lambda p: p.sort_key)
