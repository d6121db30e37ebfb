"""Scoring against gold files, query-efficiency accounting, and dyad network aggregation."""
from __future__ import annotations

import csv
import json
import logging
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .gateway import Purpose, QueryLedger
from .types import AffiliatedInstance, Detection, DyadicArguments, Sentence, read_jsonl

logger = logging.getLogger(__name__)

__all__ = [
    "GoldAnnotation",
    "ROLE_MAP",
    "load_gold",
    "load_role_map",
    "gold_from_role_rows",
    "ClassCounts",
    "ScoreReport",
    "normalize_actor",
    "actors_match",
    "score_detection",
    "score_dyadic",
    "EfficiencyReport",
    "efficiency_report",
    "DyadGraph",
    "aggregate_graph",
    "export_edges",
]

MatchPolicy = Literal["exact", "head"]
Bucketing = Literal["year", "month", "none"]


@dataclass(frozen=True)
class GoldAnnotation:
    sentence_id: str
    class_id: str
    trigger: str | None = None
    a1: str | None = None
    a2: str | None = None

    def __post_init__(self):
        if (self.a1 is None) != (self.a2 is None):
            raise ValueError(f"{self.sentence_id}: dyadic gold rows need both a1 and a2")

    @property
    def is_dyadic(self) -> bool:
        return self.a1 is not None

    @classmethod
    def from_record(cls, rec: dict) -> "GoldAnnotation":
        return cls(rec["sentence_id"], rec["class"], rec.get("trigger"), rec.get("a1"), rec.get("a2"))

    def to_record(self) -> dict:
        rec = {"sentence_id": self.sentence_id, "class": self.class_id}
        for k in ("trigger", "a1", "a2"):
            if getattr(self, k) is not None:
                rec[k] = getattr(self, k)
        return rec


def load_gold(path: str | os.PathLike) -> list[GoldAnnotation]:
    return [GoldAnnotation.from_record(r) for r in read_jsonl(path)]


# class -> (agent role, patient role)
ROLE_MAP: dict[str, tuple[str, str]] = {
    "injure": ("Agent", "Victim"),
    "die": ("Agent", "Victim"),
    "attack": ("Attacker", "Target"),
    "nominate": ("Agent", "Person"),
    "elect": ("Agent", "Person"),
    "arrest-jail": ("Agent", "Person"),
    "execute": ("Agent", "Person"),
    "extradite": ("Agent", "Person"),
    "trial-hearing": ("Prosecutor", "Defendant"),
    "charge-indict": ("Prosecutor", "Defendant"),
    "appeal": ("Prosecutor", "Defendant"),
    "sue": ("Plaintiff", "Defendant"),
    "convict": ("Adjudicator", "Defendant"),
    "sentence": ("Adjudicator", "Defendant"),
    "acquit": ("Adjudicator", "Defendant"),
    "pardon": ("Adjudicator", "Defendant"),
    "transfer-money": ("Giver", "Recipient"),
    "transfer-ownership": ("Seller", "Buyer"),
    "fine": ("Adjudicator", "Entity"),
    "release-parole": ("Entity", "Person"),
}


def load_role_map(path: str | os.PathLike) -> dict[str, tuple[str, str]]:
    """JSON ``{class: {"agent_role": ..., "patient_role": ...}}``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {c.lower(): (v["agent_role"], v["patient_role"]) for c, v in raw.items()}


def gold_from_role_rows(
    rows: Iterable[dict], role_map: Mapping[str, tuple[str, str]] = ROLE_MAP
) -> list[GoldAnnotation]:
    """Turn role-annotated rows into gold annotations.

    Each row is ``{sentence_id, class, trigger?, arguments: [{role, text}]}``.
    Rows of mapped classes become dyadic when both roles are present.
    """
    out = []
    for r in rows:
        cls = r["class"]
        a1 = a2 = None
        roles = role_map.get(cls.lower())
        if roles:
            args = {a["role"]: a["text"] for a in r.get("arguments", ())}
            if roles[0] in args and roles[1] in args:
                a1, a2 = args[roles[0]], args[roles[1]]
        out.append(GoldAnnotation(r["sentence_id"], cls, r.get("trigger"), a1, a2))
    return out


# ------------------------------------------------------------------- scoring


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def prf(self) -> tuple[float, float, float]:
        return _prf(self.tp, self.fp, self.fn)


@dataclass
class ScoreReport:
    per_class: dict[str, ClassCounts] = field(default_factory=dict)
    notes: dict[str, int] = field(default_factory=dict)

    @property
    def tp(self) -> int:
        return sum(c.tp for c in self.per_class.values())

    @property
    def fp(self) -> int:
        return sum(c.fp for c in self.per_class.values())

    @property
    def fn(self) -> int:
        return sum(c.fn for c in self.per_class.values())

    @property
    def precision(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[2]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_class": {
                c: {"tp": v.tp, "fp": v.fp, "fn": v.fn, **dict(zip(("precision", "recall", "f1"), v.prf))}
                for c, v in sorted(self.per_class.items())
            },
            "notes": dict(self.notes),
        }

    def format_table(self) -> str:
        lines = [f"{'class':<22}{'tp':>6}{'fp':>6}{'fn':>6}{'P':>8}{'R':>8}{'F1':>8}"]
        for c, v in sorted(self.per_class.items()):
            p, r, f = v.prf
            lines.append(f"{c:<22}{v.tp:>6}{v.fp:>6}{v.fn:>6}{p:>8.3f}{r:>8.3f}{f:>8.3f}")
        lines.append(
            f"{'micro':<22}{self.tp:>6}{self.fp:>6}{self.fn:>6}"
            f"{self.precision:>8.3f}{self.recall:>8.3f}{self.f1:>8.3f}"
        )
        for k, v in sorted(self.notes.items()):
            lines.append(f"{k}: {v}")
        return "\n".join(lines)


def _mapped(cls: str, class_map: Mapping[str, str] | None) -> str:
    return class_map.get(cls, cls) if class_map else cls


def score_detection(
    pred: Iterable[Detection],
    gold: Iterable[GoldAnnotation],
    sentence_ids: Iterable[str] | None = None,
    class_map: Mapping[str, str] | None = None,
) -> ScoreReport:
    """Micro P/R/F1 over (sentence, class) occurrence counts.

    ``class_map`` folds predicted class ids into gold ones (e.g. ``arrest`` and
    ``jail`` into ``arrest-jail``). With ``sentence_ids``, predictions on other
    sentences are reported; they are false positives either way.
    """
    p_counts = Counter((d.sentence_id, _mapped(d.class_id, class_map)) for d in pred)
    g_counts = Counter((g.sentence_id, g.class_id) for g in gold)
    report = ScoreReport()
    if sentence_ids is not None:
        known = set(sentence_ids)
        unknown = sum(n for (sid, _), n in p_counts.items() if sid not in known)
        if unknown:
            logger.warning("%d predictions refer to sentences outside the corpus", unknown)
        report.notes["unknown_sentence_predictions"] = unknown
    for key in p_counts.keys() | g_counts.keys():
        cc = report.per_class.setdefault(key[1], ClassCounts())
        tp = min(p_counts[key], g_counts[key])
        cc.tp += tp
        cc.fp += p_counts[key] - tp
        cc.fn += g_counts[key] - tp
    return report


_ARTICLES = re.compile(r"^(?:the|a|an)\s+", re.IGNORECASE)


def normalize_actor(text: str) -> str:
    t = " ".join(text.lower().split())
    return _ARTICLES.sub("", t).strip()


def actors_match(pred: str, gold: str, policy: MatchPolicy = "exact") -> bool:
    p, g = normalize_actor(pred), normalize_actor(gold)
    if policy == "exact":
        return p == g
    if policy == "head":
        pt, gt = re.findall(r"\w+", p), re.findall(r"\w+", g)
        if not pt or not gt:
            return False
        # the head of an English noun phrase is usually its last word
        return pt[-1] in gt or gt[-1] in pt
    raise ValueError(f"unknown match policy {policy!r}")


def _max_matching(pred: Sequence[tuple[str, str]], gold: Sequence[tuple[str, str]], policy: MatchPolicy) -> int:
    if not pred or not gold:
        return 0
    m = np.array(
        [[actors_match(p[0], g[0], policy) and actors_match(p[1], g[1], policy) for g in gold] for p in pred],
        dtype=float,
    )
    rows, cols = linear_sum_assignment(m, maximize=True)
    return int(m[rows, cols].sum())


def score_dyadic(
    pred: Iterable[DyadicArguments | AffiliatedInstance],
    gold: Iterable[GoldAnnotation],
    role_map: Mapping[str, tuple[str, str]] = ROLE_MAP,
    match_policy: MatchPolicy = "exact",
    class_map: Mapping[str, str] | None = None,
) -> ScoreReport:
    """A prediction is a true positive only when class, agent and patient all match.

    Within each (sentence, class) group, predictions and gold rows are paired
    one-to-one so as to maximise matches. Classes missing from ``role_map`` are
    left out on both sides and counted in the report notes.
    """
    mapped = {c.lower() for c in role_map}
    p_groups: dict[tuple[str, str], list[tuple[str, str]]] = defaultdict(list)
    g_groups: dict[tuple[str, str], list[tuple[str, str]]] = defaultdict(list)
    ignored_pred = ignored_gold = 0
    for row in pred:
        p = row.pair if isinstance(row, AffiliatedInstance) else row
        cls = _mapped(p.class_id, class_map)
        if cls.lower() not in mapped:
            ignored_pred += 1
            continue
        p_groups[(p.sentence_id, cls)].append((p.a1, p.a2))
    for g in gold:
        if g.class_id.lower() not in mapped or not g.is_dyadic:
            ignored_gold += 1
            continue
        g_groups[(g.sentence_id, g.class_id)].append((g.a1, g.a2))
    if ignored_pred:
        logger.info("ignored %d predictions of classes without a role mapping", ignored_pred)
    report = ScoreReport(notes={"ignored_pred": ignored_pred, "ignored_gold": ignored_gold})
    for key in p_groups.keys() | g_groups.keys():
        ps, gs = p_groups.get(key, []), g_groups.get(key, [])
        tp = _max_matching(ps, gs, match_policy)
        cc = report.per_class.setdefault(key[1], ClassCounts())
        cc.tp += tp
        cc.fp += len(ps) - tp
        cc.fn += len(gs) - tp
    return report


# ---------------------------------------------------------------- efficiency


@dataclass(frozen=True)
class EfficiencyReport:
    pipeline_draws: int
    exhaustive_draws: int
    by_purpose: dict[str, int]
    cache_hits: int

    @property
    def ratio(self) -> float:
        return self.pipeline_draws / self.exhaustive_draws if self.exhaustive_draws else 0.0

    def to_dict(self) -> dict:
        return {
            "pipeline_draws": self.pipeline_draws,
            "exhaustive_draws": self.exhaustive_draws,
            "ratio": self.ratio,
            "by_purpose": dict(self.by_purpose),
            "cache_hits": self.cache_hits,
        }

    def format_table(self) -> str:
        lines = [
            f"disambiguation draws: {self.pipeline_draws}",
            f"exhaustive draws:     {self.exhaustive_draws}",
            f"ratio:                {100 * self.ratio:.1f}%",
        ]
        lines += [f"  {k}: {v}" for k, v in sorted(self.by_purpose.items())]
        return "\n".join(lines)


def efficiency_report(ledger: QueryLedger, corpus_size: int, class_count: int, samples: int) -> EfficiencyReport:
    """Disambiguation draws logged by a run versus querying every (sentence, class) pair."""
    if min(corpus_size, class_count, samples) < 0:
        raise ValueError("sizes must be non-negative")
    return EfficiencyReport(
        pipeline_draws=ledger.count(Purpose.DISAMBIGUATION),
        exhaustive_draws=corpus_size * class_count * samples,
        by_purpose=ledger.by_purpose(),
        cache_hits=ledger.count(cache_hit=True),
    )


# --------------------------------------------------------------------- graph


@dataclass
class DyadGraph:
    """Directed agent -> patient edge counts keyed by (h1, h2, class, bucket)."""

    edges: Counter = field(default_factory=Counter)
    excluded: int = 0

    @property
    def total(self) -> int:
        return sum(self.edges.values())

    def rows(self) -> list[tuple[str, str, str, str, int]]:
        return [(*k, n) for k, n in sorted(self.edges.items())]


def _bucket(date: str | None, bucketing: Bucketing) -> str:
    if bucketing == "none" or not date:
        return "all"
    m = re.match(r"(\d{4})(?:-(\d{2}))?", date)
    if not m:
        raise ValueError(f"unrecognised date {date!r}")
    if bucketing == "year":
        return m.group(1)
    if bucketing == "month":
        if not m.group(2):
            raise ValueError(f"date {date!r} has no month")
        return f"{m.group(1)}-{m.group(2)}"
    raise ValueError(f"unknown bucketing {bucketing!r}")


def aggregate_graph(
    instances: Iterable[AffiliatedInstance],
    bucketing: Bucketing = "year",
    dates: Mapping[str, str | None] | Iterable[Sentence] | None = None,
) -> DyadGraph:
    """Count affiliated instances per directed edge; instances missing h1 or h2 are excluded."""
    if dates is not None and not isinstance(dates, Mapping):
        dates = {s.id: s.date for s in dates}
    dates = dates or {}
    g = DyadGraph()
    for inst in instances:
        if not inst.h1 or not inst.h2:
            g.excluded += 1
            continue
        bucket = _bucket(dates.get(inst.pair.sentence_id), bucketing)
        g.edges[(inst.h1, inst.h2, inst.pair.class_id, bucket)] += 1
    if g.excluded:
        logger.info("graph: excluded %d instances without both affiliations", g.excluded)
    return g


def export_edges(graph: DyadGraph, path: str | os.PathLike) -> int:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h1", "h2", "class", "bucket", "count"])
        rows = graph.rows()
        w.writerows(rows)
    return len(rows)
