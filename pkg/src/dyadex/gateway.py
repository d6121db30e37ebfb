"""Language-model gateway.

Every model call in the pipeline goes through :class:`Gateway`, which owns
the backend, the response cache and the query ledger, and implements the
two Monte Carlo aggregations used throughout: set union over sampled lists
and thresholded voting over sampled yes/no answers.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

__all__ = [
    "Purpose",
    "Prompt",
    "MCConfig",
    "LMResponseBatch",
    "LedgerEntry",
    "QueryLedger",
    "Backend",
    "MockBackend",
    "HTTPBackend",
    "ResponseCache",
    "Gateway",
    "UnionTrace",
    "VoteResult",
    "GatewayError",
    "RetriableBackendError",
    "ProtocolError",
    "ScriptError",
    "TransportError",
    "parse_bullets",
    "parse_bool",
    "unanimity_proportion",
]


class Purpose(str, enum.Enum):
    SYNONYM = "synonym"
    INFLECTION = "inflection"
    WORDFORM = "wordform"
    DISAMBIGUATION = "disambiguation"
    MODALITY_CHECK = "modality_check"
    MODALITY_REWRITE = "modality_rewrite"
    INSTANCE_SPLIT = "instance_split"
    AGENT_QA = "agent_qa"
    PATIENT_QA = "patient_qa"
    AFFILIATION = "affiliation"
    NAIVE_BOOLEAN = "naive_boolean"


SET_PURPOSES = frozenset({Purpose.SYNONYM, Purpose.INFLECTION, Purpose.WORDFORM})
BOOL_PURPOSES = frozenset(
    {Purpose.DISAMBIGUATION, Purpose.MODALITY_CHECK, Purpose.AFFILIATION, Purpose.NAIVE_BOOLEAN}
)


class GatewayError(Exception):
    """Base class for gateway failures."""


class TransportError(GatewayError):
    """A single backend call failed in a way worth retrying."""


class RetriableBackendError(GatewayError):
    """Retries were exhausted; ``partial`` holds whatever samples were obtained."""

    def __init__(self, message: str, partial: Sequence[str] = ()):
        super().__init__(message)
        self.partial = list(partial)


class ProtocolError(GatewayError):
    """The backend answered with a payload we cannot interpret."""


class ScriptError(LookupError):
    """A mock script has no rule for the prompt it was asked about.

    Deliberately not a :class:`GatewayError`: stages that fail closed on
    backend trouble still surface scripting mistakes.
    """


@dataclass(frozen=True)
class Prompt:
    text: str
    purpose: Purpose

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("prompt text must be non-empty")
        object.__setattr__(self, "purpose", Purpose(self.purpose))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MCConfig:
    """Sampling settings for one kind of query.

    ``vote_threshold=None`` means strict majority of the parseable samples,
    so an even split is a "no".
    """

    temperature: float = 0.0
    samples: int = 1
    vote_threshold: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.vote_threshold is not None and not 0.5 < self.vote_threshold <= 1.0:
            raise ValueError("vote_threshold must lie in (0.5, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "MCConfig":
        return cls(**{k: d[k] for k in ("temperature", "samples", "vote_threshold") if k in d})

    def to_dict(self) -> dict:
        return asdict(self)


# Defaults used by the pipeline stages.
SYNONYM_MC = MCConfig(temperature=0.67, samples=70)
FORMS_MC = MCConfig(temperature=0.0, samples=1)
BOOLEAN_MC = MCConfig(temperature=0.0, samples=9)
EXTRACTION_MC = MCConfig(temperature=0.0, samples=9)
SINGLE_MC = MCConfig(temperature=0.0, samples=1)


@dataclass
class LMResponseBatch:
    raw_texts: list[str]
    prompt_hash: str
    backend_id: str


@dataclass(frozen=True)
class LedgerEntry:
    purpose: str
    prompt_hash: str
    sample_index: int
    cache_hit: bool
    timestamp: float
    cache_key: str = ""
    temperature: float = 0.0


class QueryLedger:
    """Append-only, thread-safe record of every sample requested."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()):
        self._entries: list[LedgerEntry] = list(entries)
        self._lock = threading.Lock()

    def append(self, entry: LedgerEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def count(self, purpose: Purpose | str | None = None, *, cache_hit: bool | None = None) -> int:
        p = None if purpose is None else Purpose(purpose).value
        return sum(
            1
            for e in self.entries
            if (p is None or e.purpose == p) and (cache_hit is None or e.cache_hit == cache_hit)
        )

    def by_purpose(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.purpose] = out.get(e.purpose, 0) + 1
        return dict(sorted(out.items()))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "QueryLedger":
        with open(path, encoding="utf-8") as fh:
            return cls(LedgerEntry(**json.loads(line)) for line in fh if line.strip())


# ---------------------------------------------------------------- backends


class Backend(Protocol):
    backend_id: str
    model: str

    def generate(self, prompt: str, temperature: float, sample_indices: Sequence[int]) -> list[str]:
        """Return one response per requested sample index, in order."""
        ...


@dataclass
class _Rule:
    responses: list[str]
    prompt: str | None = None
    pattern: re.Pattern | None = None
    sample_index: int | None = None
    temperature: float | None = None

    def matches(self, text: str, index: int, temperature: float = 0.0) -> bool:
        if self.sample_index is not None and self.sample_index != index:
            return False
        if self.temperature is not None and round(self.temperature, 6) != round(temperature, 6):
            return False
        if self.prompt is not None:
            return text == self.prompt
        return bool(self.pattern.search(text))


class MockBackend:
    """Scripted backend for tests and offline runs.

    A script is a list of rules tried in order; the first rule matching
    the prompt (exact ``prompt`` or regex ``pattern``, optionally pinned to
    one ``sample_index`` or ``temperature``) answers.  A rule's ``responses`` list is indexed by
    sample index modulo its length, so a single ``response`` answers every
    draw identically.
    """

    backend_id = "mock"

    def __init__(self, rules: Sequence[dict], model: str = "scripted"):
        self.model = model
        self._rules = [self._compile(r, i) for i, r in enumerate(rules)]
        self.calls = 0

    @staticmethod
    def _compile(rule: dict, i: int) -> _Rule:
        if "response" in rule:
            responses = [rule["response"]]
        elif "responses" in rule and rule["responses"]:
            responses = list(rule["responses"])
        else:
            raise ScriptError(f"rule {i} has no response")
        if ("prompt" in rule) == ("pattern" in rule):
            raise ScriptError(f"rule {i} needs exactly one of 'prompt' or 'pattern'")
        return _Rule(
            responses=responses,
            prompt=rule.get("prompt"),
            pattern=re.compile(rule["pattern"], re.S) if "pattern" in rule else None,
            sample_index=rule.get("sample_index"),
            temperature=rule.get("temperature"),
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        rules = doc["rules"] if isinstance(doc, dict) else doc
        return cls(rules, model=doc.get("model", "scripted") if isinstance(doc, dict) else "scripted")

    @classmethod
    def constant(cls, response: str) -> "MockBackend":
        return cls([{"pattern": ".", "response": response}])

    def respond(self, prompt: str, index: int, temperature: float = 0.0) -> str:
        for rule in self._rules:
            if rule.matches(prompt, index, temperature):
                return rule.responses[index % len(rule.responses)]
        raise ScriptError(f"no scripted response for sample {index} of prompt:\n{prompt}")

    def generate(self, prompt: str, temperature: float, sample_indices: Sequence[int]) -> list[str]:
        self.calls += 1
        return [self.respond(prompt, i, temperature) for i in sample_indices]


class HTTPBackend:
    """OpenAI-compatible completions endpoint.

    ``api="chat"`` posts ``messages`` to ``/chat/completions``;
    ``api="completion"`` posts ``prompt`` to ``/completions``.  All missing
    samples of one prompt are requested in a single call via ``n``.
    """

    backend_id = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        token: str | None = None,
        api: Literal["chat", "completion"] = "chat",
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api = api
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, base_url: str, model: str, token_env: str = "OPENAI_API_KEY", **kw) -> "HTTPBackend":
        return cls(
            os.environ.get("DYADEX_BASE_URL", base_url),
            os.environ.get("DYADEX_MODEL", model),
            token=os.environ.get(token_env),
            **kw,
        )

    def generate(self, prompt: str, temperature: float, sample_indices: Sequence[int]) -> list[str]:
        n = len(sample_indices)
        body = {"model": self.model, "temperature": temperature, "n": n}
        if self.api == "chat":
            url = f"{self.base_url}/chat/completions"
            body["messages"] = [{"role": "user", "content": prompt}]
        else:
            url = f"{self.base_url}/completions"
            body["prompt"] = prompt
        try:
            resp = self._client.post(url, json=body)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            choices = resp.json()["choices"]
            if self.api == "chat":
                texts = [c["message"]["content"] for c in choices]
            else:
                texts = [c["text"] for c in choices]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed backend payload: {exc}") from exc
        if len(texts) < n or not all(isinstance(t, str) for t in texts):
            raise ProtocolError(f"expected {n} text choices, got {len(texts)}")
        return texts[:n]


# ------------------------------------------------------------------ cache


class ResponseCache:
    """Content-addressed response store.

    With a directory, each key is one file under ``<dir>/<key[:2]>/<key>``;
    without one the cache lives in memory only.
    """

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._mem: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(backend_id: str, model: str, prompt: str, temperature: float, sample_index: int) -> str:
        payload = json.dumps([backend_id, model, prompt, round(float(temperature), 6), sample_index])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / key

    def get(self, key: str) -> str | None:
        if key in self._mem:
            return self._mem[key]
        if self.directory is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        text = path.read_text(encoding="utf-8")
        self._mem[key] = text
        return text

    def put(self, key: str, text: str) -> None:
        with self._lock:
            self._mem[key] = text
            if self.directory is not None:
                path = self._path(key)
                path.parent.mkdir(exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(text, encoding="utf-8")
                tmp.replace(path)


# ---------------------------------------------------------------- parsers

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")


def parse_bullets(text: str, *, lowercase: bool = True) -> list[str]:
    """Items of a bulleted or numbered list.

    Raises ``ValueError`` when the text has no list lines at all.
    """
    items = []
    for line in text.splitlines():
        m = _BULLET.match(line)
        if not m:
            continue
        item = m.group(1).strip().strip("\"'`“”").rstrip(".,;:!?").strip()
        if lowercase:
            item = item.lower()
        if item:
            items.append(item)
    if not items:
        raise ValueError("no list items found")
    return items


def parse_bool(text: str) -> Literal["yes", "no"] | None:
    """Map a free-text answer to ``"yes"``/``"no"``, or ``None`` if neither."""
    m = re.match(r"\W*(yes|no)\b", text.strip().lower())
    return m.group(1) if m else None


# --------------------------------------------------------------- gateway


@dataclass
class UnionTrace:
    items: set[str]
    cumulative_sizes: list[int]
    parse_failures: int = 0


@dataclass(frozen=True)
class VoteResult:
    verdict: bool
    yes: int
    no: int
    unparseable: int
    all_unparseable: bool = False

    @property
    def tally(self) -> tuple[int, int, int]:
        return (self.yes, self.no, self.unparseable)


def vote_rule(yes: int, no: int, threshold: float | None = None) -> bool:
    """Decide a boolean vote from its parseable counts."""
    if yes + no == 0:
        return False
    if threshold is None:
        return yes > no
    return yes / (yes + no) >= threshold


@dataclass
class Gateway:
    """Cache, retry and ledger wrapper around a :class:`Backend`."""

    backend: Backend
    cache: ResponseCache = field(default_factory=ResponseCache)
    ledger: QueryLedger = field(default_factory=QueryLedger)
    max_attempts: int = 3
    backoff: float = 0.5
    sleep: Callable[[float], None] = time.sleep

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def complete(self, prompt: Prompt, cfg: MCConfig) -> LMResponseBatch:
        """Draw ``cfg.samples`` responses, serving repeats from the cache."""
        model = getattr(self.backend, "model", "")
        keys = [
            ResponseCache.key(self.backend_id, model, prompt.text, cfg.temperature, i)
            for i in range(cfg.samples)
        ]
        texts: list[str | None] = [self.cache.get(k) for k in keys]
        hits = [t is not None for t in texts]
        missing = [i for i, t in enumerate(texts) if t is None]
        if missing:
            fresh = self._call_with_retries(prompt, cfg, missing, texts)
            for i, text in zip(missing, fresh):
                if not isinstance(text, str):
                    raise ProtocolError(f"backend returned {type(text).__name__} instead of text")
                texts[i] = text
                self.cache.put(keys[i], text)
        now = time.time()
        for i in range(cfg.samples):
            self.ledger.append(
                LedgerEntry(prompt.purpose.value, prompt.digest, i, hits[i], now, keys[i], cfg.temperature)
            )
        return LMResponseBatch(list(texts), prompt.digest, self.backend_id)

    def _call_with_retries(self, prompt, cfg, missing, texts) -> list[str]:
        for attempt in range(self.max_attempts):
            try:
                out = self.backend.generate(prompt.text, cfg.temperature, missing)
            except TransportError as exc:
                if attempt + 1 == self.max_attempts:
                    partial = [t for t in texts if t is not None]
                    raise RetriableBackendError(
                        f"backend failed after {self.max_attempts} attempts: {exc}", partial
                    ) from exc
                delay = self.backoff * 2**attempt
                logger.warning("backend transport error (%s); retrying in %.1fs", exc, delay)
                self.sleep(delay)
                continue
            if len(out) != len(missing):
                raise ProtocolError(f"expected {len(missing)} samples, got {len(out)}")
            return out
        raise AssertionError("unreachable")

    def mc_union_trace(
        self, prompt: Prompt, cfg: MCConfig, parse_set: Callable[[str], Iterable[str]] = parse_bullets
    ) -> UnionTrace:
        batch = self.complete(prompt, cfg)
        items: set[str] = set()
        sizes = []
        failures = 0
        for text in batch.raw_texts:
            try:
                items.update(parse_set(text))
            except ValueError:
                failures += 1
            sizes.append(len(items))
        if failures:
            logger.info("%d/%d samples unparseable for %s prompt", failures, cfg.samples, prompt.purpose.value)
        return UnionTrace(items, sizes, failures)

    def mc_union(
        self, prompt: Prompt, cfg: MCConfig, parse_set: Callable[[str], Iterable[str]] = parse_bullets
    ) -> set[str]:
        """Union of the parsed sets over all samples."""
        return self.mc_union_trace(prompt, cfg, parse_set).items

    def mc_vote(
        self, prompt: Prompt, cfg: MCConfig, parse: Callable[[str], str | None] = parse_bool
    ) -> VoteResult:
        batch = self.complete(prompt, cfg)
        votes = [parse(t) for t in batch.raw_texts]
        yes, no = votes.count("yes"), votes.count("no")
        unparseable = len(votes) - yes - no
        if yes + no == 0:
            logger.warning("all %d samples unparseable for %s prompt", len(votes), prompt.purpose.value)
        return VoteResult(vote_rule(yes, no, cfg.vote_threshold), yes, no, unparseable, yes + no == 0)

    def cumulative_curve(
        self,
        prompt: Prompt,
        temperature: float,
        max_samples: int,
        parse_set: Callable[[str], Iterable[str]] = parse_bullets,
    ) -> list[int]:
        """Size of the running union after each of ``max_samples`` draws."""
        return self.mc_union_trace(prompt, MCConfig(temperature, max_samples), parse_set).cumulative_sizes


def unanimity_proportion(
    ledger: QueryLedger,
    cache: ResponseCache,
    *,
    purposes: Iterable[Purpose | str] = BOOL_PURPOSES,
    parse: Callable[[str], str | None] = parse_bool,
    temperature: float | None = None,
) -> float:
    """Fraction of multi-sample boolean queries whose parsed answers all agree.

    Queries are grouped by prompt and temperature; responses are read back
    from ``cache`` through the ledger's cache keys.
    """
    wanted = {Purpose(p).value for p in purposes}
    groups: dict[tuple[str, float], dict[int, str]] = {}
    for e in ledger.entries:
        if e.purpose not in wanted or (temperature is not None and e.temperature != temperature):
            continue
        groups.setdefault((e.prompt_hash, e.temperature), {})[e.sample_index] = e.cache_key
    total = unanimous = 0
    for keys in groups.values():
        if len(keys) < 2:
            continue
        answers = {parse(cache.get(k) or "") for k in keys.values()}
        total += 1
        unanimous += len(answers) == 1
    return unanimous / total if total else float("nan")
