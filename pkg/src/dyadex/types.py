"""Core records passed between pipeline stages, plus their file formats."""
from __future__ import annotations

import json
import logging
import os
import re
import threading
from importlib import resources
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

__all__ = [
    "StageSummary",
    "EventClassSpec",
    "Token",
    "Sentence",
    "TriggerMatch",
    "Detection",
    "DyadicArguments",
    "AffiliatedInstance",
    "tokenize",
    "load_event_specs",
    "load_corpus",
    "ace_specs",
    "read_jsonl",
    "write_jsonl",
]

_TOKEN = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Split on Unicode word boundaries; punctuation and hyphens separate tokens."""
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


@dataclass(frozen=True)
class EventClassSpec:
    id: str
    name: str
    definition: str
    keywords: tuple[str, ...] = ()
    verb_form: str | None = None

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError(f"event class {self.id!r}: name must be non-empty")
        if not self.definition.strip():
            raise ValueError(f"event class {self.id!r}: definition must be non-empty")
        object.__setattr__(self, "keywords", tuple(self.keywords))

    @property
    def verb(self) -> str:
        return self.verb_form or self.name

    @property
    def gloss(self) -> str:
        """Definition without trailing punctuation, for splicing into prompts."""
        return self.definition.strip().rstrip(".")

    @classmethod
    def from_dict(cls, d: dict) -> "EventClassSpec":
        return cls(
            id=str(d["id"]),
            name=d["name"],
            definition=d["definition"],
            keywords=tuple(d.get("keywords") or ()),
            verb_form=d.get("verb_form"),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["keywords"] = list(self.keywords)
        return d


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    date: str | None = None
    tokens: tuple[Token, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.tokens:
            object.__setattr__(self, "tokens", tuple(tokenize(self.text)))

    @classmethod
    def from_record(cls, rec: dict) -> "Sentence":
        sid = rec.get("sentence_id") or f"{rec['doc_id']}:{rec['sent_index']}"
        return cls(sid, rec["text"], rec.get("date"))


@dataclass(frozen=True)
class TriggerMatch:
    sentence_id: str
    class_id: str
    token: str
    token_index: int
    matched_stem: str
    source_term: str = ""


@dataclass(frozen=True)
class Detection:
    sentence_id: str
    class_id: str
    trigger: str
    token_index: int
    votes: tuple[int, int, int] = (0, 0, 0)

    def to_record(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "class": self.class_id,
            "trigger": self.trigger,
            "token_index": self.token_index,
            "votes": list(self.votes),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Detection":
        return cls(rec["sentence_id"], rec["class"], rec.get("trigger", ""), rec.get("token_index", -1),
                   tuple(rec.get("votes", (0, 0, 0))))

    @property
    def sort_key(self):
        return (self.sentence_id, self.token_index, self.class_id)


@dataclass(frozen=True)
class DyadicArguments:
    sentence_id: str
    class_id: str
    trigger: str
    token_index: int
    a1: str
    a2: str
    source_span: str
    modality_flag: bool = False

    def to_record(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "class": self.class_id,
            "trigger": self.trigger,
            "token_index": self.token_index,
            "a1": self.a1,
            "a2": self.a2,
            "source_span": self.source_span,
            "modality_flag": self.modality_flag,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DyadicArguments":
        return cls(rec["sentence_id"], rec["class"], rec.get("trigger", ""), rec.get("token_index", -1),
                   rec["a1"], rec["a2"], rec.get("source_span", ""), bool(rec.get("modality_flag", False)))

    @property
    def sort_key(self):
        return (self.sentence_id, self.token_index, self.class_id)


@dataclass(frozen=True)
class AffiliatedInstance:
    pair: DyadicArguments
    h1: str | None = None
    h2: str | None = None
    rebel1: bool = False
    rebel2: bool = False

    def to_record(self) -> dict:
        rec = self.pair.to_record()
        rec.update(h1=self.h1, h2=self.h2, rebel1=self.rebel1, rebel2=self.rebel2)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "AffiliatedInstance":
        return cls(DyadicArguments.from_record(rec), rec.get("h1"), rec.get("h2"),
                   bool(rec.get("rebel1")), bool(rec.get("rebel2")))


def read_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def load_event_specs(path: str | os.PathLike) -> list[EventClassSpec]:
    with open(path, encoding="utf-8") as fh:
        return [EventClassSpec.from_dict(d) for d in json.load(fh)]


def load_corpus(path: str | os.PathLike) -> list[Sentence]:
    return [Sentence.from_record(r) for r in read_jsonl(path)]


@dataclass
class StageSummary:
    """Attempt/failure counts for one pipeline stage; safe to update from worker threads."""

    stage: str
    attempted: int = 0
    failed: int = 0
    errors: list[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def attempt(self, n: int = 1) -> None:
        with self._lock:
            self.attempted += n

    def fail(self, message: str) -> None:
        with self._lock:
            self.failed += 1
            self.errors.append(message)
        logger.warning("%s: %s", self.stage, message)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "attempted": self.attempted, "failed": self.failed, "errors": list(self.errors)}


def ace_specs() -> list[EventClassSpec]:
    """The 33 ACE event subtypes, with verb forms for role questions."""
    text = resources.files("dyadex").joinpath("data/ace_classes.json").read_text(encoding="utf-8")
    return [EventClassSpec.from_dict(d) for d in json.loads(text)]
