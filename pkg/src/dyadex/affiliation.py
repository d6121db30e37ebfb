"""Country references, rebel-group tagging, and actor affiliation."""
from __future__ import annotations

import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Literal, Mapping, Protocol, Sequence

from .gateway import BOOLEAN_MC, Gateway, GatewayError, MCConfig, Prompt, Purpose
from .types import AffiliatedInstance, DyadicArguments, Sentence, StageSummary, Token, tokenize

logger = logging.getLogger(__name__)

__all__ = [
    "CountryGazetteer",
    "CountryMention",
    "GeocoderError",
    "Geocoder",
    "CachedGeocoder",
    "NominatimGeocoder",
    "load_gazetteer",
    "default_gazetteer",
    "make_geocoder",
    "capitalized_spans",
    "find_country_mentions",
    "detect_rebel_group",
    "affiliation_prompt",
    "resolve_affiliation",
    "affiliate",
]

MentionSource = Literal["gazetteer", "us_extension", "geocoded"]


def _is_case_sensitive(surface: str) -> bool:
    # "US", "UK", "U.S.", "USSR": acronyms must not match ordinary words like "us"
    return any(sum(c.isupper() for c in word) > 1 for word in surface.split())


@dataclass(frozen=True)
class _Entry:
    code: str
    tokens: tuple[str, ...]
    case_sensitive: bool
    source: MentionSource
    dotted: bool = False


class CountryGazetteer:
    """Surface form -> country code table with longest-match lookup over tokens."""

    def __init__(
        self,
        entries: Mapping[str, str],
        code_names: Mapping[str, str],
        us_extensions: Mapping[str, str] | None = None,
        iso2: Mapping[str, str] | None = None,
    ):
        self.code_names = dict(code_names)
        self.iso2_to_code = {k.upper(): v for k, v in (iso2 or {}).items()}
        self._table: dict[tuple[str, ...], list[_Entry]] = {}
        self.max_len = 0
        for source, table in (("gazetteer", entries), ("us_extension", us_extensions or {})):
            for surface, code in table.items():
                self._add(surface, code, source)

    def _add(self, surface: str, code: str, source: MentionSource) -> None:
        toks = tuple(t.text for t in tokenize(surface))
        if not toks:
            raise ValueError(f"surface {surface!r} has no word characters")
        if code not in self.code_names:
            raise ValueError(f"surface {surface!r}: code {code} has no display name")
        entry = _Entry(code, toks, _is_case_sensitive(surface), source, surface.rstrip().endswith("."))
        bucket = self._table.setdefault(tuple(t.lower() for t in toks), [])
        # first loaded wins among entries matching the same text
        if entry.case_sensitive:
            clash = any(e.case_sensitive and e.tokens == toks for e in bucket)
        else:
            clash = any(not e.case_sensitive for e in bucket)
        if not clash:
            bucket.append(entry)
        self.max_len = max(self.max_len, len(toks))

    @property
    def entries(self) -> dict[str, str]:
        return {" ".join(e.tokens if e.case_sensitive else k): e.code
                for k, bucket in self._table.items() for e in bucket}

    def name(self, code: str) -> str:
        return self.code_names.get(code, code)

    def _entry_at(self, tokens: Sequence[Token], i: int, require_capital: bool) -> tuple[_Entry, int] | None:
        for n in range(min(self.max_len, len(tokens) - i), 0, -1):
            window = tuple(t.text for t in tokens[i : i + n])
            if require_capital and not window[0][0].isupper():
                return None
            for e in self._table.get(tuple(w.lower() for w in window), ()):
                if not e.case_sensitive or e.tokens == window:
                    return e, n
        return None

    def lookup(self, surface: str) -> str | None:
        """Country code for an exact surface form, or ``None``."""
        toks = tokenize(surface)
        hit = self._entry_at(toks, 0, require_capital=False) if toks else None
        return hit[0].code if hit and hit[1] == len(toks) else None

    def scan(self, text: str) -> list[tuple[int, int, _Entry]]:
        """Non-overlapping (start, end, entry) matches, longest first, left to right.

        Only capitalized spans count: country references are proper nouns or
        proper adjectives, and this keeps "turkey" or "chad" the common nouns out.
        """
        tokens = tokenize(text)
        out, i = [], 0
        while i < len(tokens):
            hit = self._entry_at(tokens, i, require_capital=True)
            if hit is None:
                i += 1
                continue
            entry, n = hit
            end = tokens[i + n - 1].end
            # "U.S." keeps its final period, which is not part of any token
            if entry.dotted and text[end : end + 1] == ".":
                end += 1
            out.append((tokens[i].start, end, entry))
            i += n
        return out


def _read_tsv(path, min_fields: int) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < min_fields or not all(p.strip() for p in parts[:min_fields]):
                raise ValueError(f"{path}:{n}: expected at least {min_fields} tab-separated fields")
            rows.append([p.strip() for p in parts])
    return rows


def load_gazetteer(path, names_path=None, extensions_path=None) -> CountryGazetteer:
    """Load ``surface<TAB>code`` plus ``code<TAB>name[<TAB>iso2]`` and optional US extensions.

    ``names_path`` defaults to ``country_names.tsv`` beside ``path``.
    """
    if names_path is None:
        names_path = os.path.join(os.path.dirname(os.fspath(path)), "country_names.tsv")
    names, iso2 = {}, {}
    for row in _read_tsv(names_path, 2):
        names[row[0]] = row[1]
        if len(row) > 2 and row[2]:
            iso2[row[2]] = row[0]
    entries = {}
    for surface, code, *_ in _read_tsv(path, 2):
        entries.setdefault(surface, code)
    ext = {}
    if extensions_path is not None:
        for surface, code, *_ in _read_tsv(extensions_path, 2):
            ext.setdefault(surface, code)
    return CountryGazetteer(entries, names, ext, iso2)


def default_gazetteer(with_us_extensions: bool = True) -> CountryGazetteer:
    """The bundled country table (with US government references by default)."""
    data = resources.files("dyadex") / "data"
    with resources.as_file(data) as d:
        return load_gazetteer(
            d / "countries.tsv", d / "country_names.tsv", d / "us_extensions.tsv" if with_us_extensions else None
        )


# ----------------------------------------------------------------- geocoding


class GeocoderError(RuntimeError):
    pass


class Geocoder(Protocol):
    def lookup(self, query: str) -> list[str]:
        """Country codes (ISO alpha-2 or alpha-3) for ``query``, best first."""
        ...


def _codes(results: Iterable[dict]) -> list[str]:
    out = []
    for r in results:
        code = r.get("country_code") or (r.get("address") or {}).get("country_code")
        if code:
            out.append(str(code).upper())
    return out


class CachedGeocoder:
    """Offline geocoder over a JSON fixture ``{query: [{"country_code": ...}, ...]}``.

    Unknown queries have no result.
    """

    def __init__(self, table: Mapping[str, list[dict]]):
        self.table = {k.casefold(): list(v) for k, v in table.items()}

    @classmethod
    def from_file(cls, path) -> "CachedGeocoder":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def lookup(self, query: str) -> list[str]:
        return _codes(self.table.get(query.casefold(), ()))


class NominatimGeocoder:
    """Live OpenStreetMap Nominatim lookups, cached on disk by query string."""

    URL = "https://nominatim.openstreetmap.org/search"

    def __init__(self, cache_path=None, url: str | None = None, user_agent: str = "dyadex", client=None):
        import httpx

        self.url = url or self.URL
        self.cache_path = cache_path
        self._client = client or httpx.Client(timeout=10.0, headers={"User-Agent": user_agent})
        self._lock = threading.Lock()
        self._cache: dict[str, list[dict]] = {}
        if cache_path and os.path.exists(cache_path):
            with open(cache_path, encoding="utf-8") as fh:
                self._cache = json.load(fh)

    def lookup(self, query: str) -> list[str]:
        hit = self._cache.get(query)
        if hit is not None:
            return _codes(hit)
        import httpx

        try:
            resp = self._client.get(
                self.url, params={"q": query, "format": "json", "addressdetails": 1, "limit": 5}
            )
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise GeocoderError(f"geocoding {query!r} failed: {exc}") from exc
        results = [{"country_code": (r.get("address") or {}).get("country_code")} for r in payload]
        results = [r for r in results if r["country_code"]]
        with self._lock:
            self._cache[query] = results
            if self.cache_path:
                tmp = f"{self.cache_path}.tmp"
                with open(tmp, "w", encoding="utf-8") as fh:
                    json.dump(self._cache, fh, indent=1, sort_keys=True, ensure_ascii=False)
                os.replace(tmp, self.cache_path)
        return _codes(results)


def make_geocoder(mode: str, cache_path=None) -> Geocoder | None:
    """``off`` -> None; ``cache`` -> fixture lookups; ``live`` -> Nominatim with a disk cache."""
    if mode == "off":
        return None
    if mode == "cache":
        if cache_path is None:
            raise ValueError("geocoder mode 'cache' needs a cache file")
        return CachedGeocoder.from_file(cache_path)
    if mode == "live":
        return NominatimGeocoder(cache_path)
    raise ValueError(f"unknown geocoder mode {mode!r}")


# ------------------------------------------------------------------ mentions


@dataclass(frozen=True)
class CountryMention:
    sentence_id: str
    surface: str
    start: int
    end: int
    country_code: str
    source: MentionSource


_NOT_NAMES = frozenset(
    "a an and as at but by for from he her his i if in it its of on or our she so the their there these "
    "they this those to we when while with yesterday today on monday tuesday wednesday thursday friday "
    "saturday sunday".split()
)


def capitalized_spans(text: str) -> list[tuple[int, int]]:
    """Runs of capitalized tokens, a crude stand-in for a location tagger.

    A sentence-initial token is kept unless it is a common function word.
    """
    tokens = tokenize(text)
    spans, run = [], []
    for k, tok in enumerate(tokens):
        cap = tok.text[0].isupper() and not tok.text.isdigit()
        if cap and k == 0 and tok.text.lower() in _NOT_NAMES:
            cap = False
        contiguous = run and text[run[-1].end : tok.start].strip() == ""
        if cap and (not run or contiguous):
            run.append(tok)
            continue
        if run:
            spans.append((run[0].start, run[-1].end))
        run = [tok] if cap else []
    if run:
        spans.append((run[0].start, run[-1].end))
    return spans


Tagger = Callable[[str], Sequence[tuple[int, int]]]


def find_country_mentions(
    sentence: Sentence,
    gazetteer: CountryGazetteer,
    geocoder: Geocoder | None = None,
    tagger: Tagger = capitalized_spans,
) -> list[CountryMention]:
    """Gazetteer matches first, then geocoded tagger spans that overlap none of them.

    Results are in textual order with duplicate (country, span) pairs removed.
    """
    text = sentence.text
    found = [
        CountryMention(sentence.id, text[s:e], s, e, entry.code, entry.source)
        for s, e, entry in gazetteer.scan(text)
    ]
    if geocoder is not None:
        taken = [(m.start, m.end) for m in found]
        try:
            for s, e in tagger(text):
                if any(s < te and ts < e for ts, te in taken):
                    continue
                codes = geocoder.lookup(text[s:e])
                if not codes:
                    continue
                top = codes[0]
                code = gazetteer.iso2_to_code.get(top, top) if len(top) == 2 else top
                if code not in gazetteer.code_names:
                    logger.debug("geocoded %r to unknown code %s", text[s:e], top)
                    continue
                found.append(CountryMention(sentence.id, text[s:e], s, e, code, "geocoded"))
        except GeocoderError as exc:
            logger.warning("%s: geocoding skipped: %s", sentence.id, exc)
    unique = {(m.country_code, m.start, m.end): m for m in found}
    return sorted(unique.values(), key=lambda m: (m.start, m.end, m.country_code))


# ---------------------------------------------------------------- affiliation


def detect_rebel_group(actor_span: str) -> bool:
    return any(t.text.lower().startswith(("rebel", "insurgen")) for t in tokenize(actor_span))


def affiliation_prompt(sentence_text: str, actor: str, country: str) -> Prompt:
    return Prompt(f"{sentence_text}\nIn the text, is {actor} affiliated with {country}?", Purpose.AFFILIATION)


def _contains(actor: str, surface: str) -> bool:
    flags = 0 if _is_case_sensitive(surface) else re.IGNORECASE
    return re.search(rf"(?<!\w){re.escape(surface)}(?!\w)", actor, flags) is not None


def resolve_affiliation(
    gateway: Gateway,
    sentence_text: str,
    actor_span: str,
    mentions: Sequence[CountryMention],
    gazetteer: CountryGazetteer,
    cfg: MCConfig = BOOLEAN_MC,
) -> str | None:
    """Country code the actor belongs to, or ``None``.

    A mention inside the actor span decides without any query. Otherwise each
    mentioned country is asked about once, in order of first mention, and the
    first yes wins.
    """
    for m in mentions:
        if _contains(actor_span, m.surface):
            return m.country_code
    for code in dict.fromkeys(m.country_code for m in mentions):
        try:
            vote = gateway.mc_vote(affiliation_prompt(sentence_text, actor_span, gazetteer.name(code)), cfg)
        except GatewayError as exc:
            logger.warning("affiliation query for %r / %s failed: %s", actor_span, code, exc)
            continue
        if vote.verdict:
            return code
    return None


def _label(gazetteer: CountryGazetteer, code: str | None, rebel: bool) -> str | None:
    if code is None:
        return None
    name = gazetteer.name(code)
    return f"{name} (rebels)" if rebel else name


def affiliate(
    gateway: Gateway,
    pairs: Iterable[DyadicArguments],
    sentences: Mapping[str, Sentence] | Iterable[Sentence],
    gazetteer: CountryGazetteer,
    geocoder: Geocoder | None = None,
    cfg: MCConfig = BOOLEAN_MC,
    workers: int = 1,
    summary: StageSummary | None = None,
    tagger: Tagger = capitalized_spans,
) -> list[AffiliatedInstance]:
    if not isinstance(sentences, Mapping):
        sentences = {s.id: s for s in sentences}
    summary = summary if summary is not None else StageSummary("affiliate")
    pairs = sorted(pairs, key=lambda p: p.sort_key)
    mention_cache: dict[str, list[CountryMention]] = {}
    lock = threading.Lock()

    def mentions_for(sentence: Sentence) -> list[CountryMention]:
        with lock:
            if sentence.id not in mention_cache:
                mention_cache[sentence.id] = find_country_mentions(sentence, gazetteer, geocoder, tagger)
            return mention_cache[sentence.id]

    def run(pair: DyadicArguments) -> AffiliatedInstance:
        summary.attempt()
        sentence = sentences.get(pair.sentence_id)
        if sentence is None:
            summary.fail(f"{pair.sentence_id}: pair refers to unknown sentence")
            return AffiliatedInstance(pair)
        mentions = mentions_for(sentence)
        text = sentence.text
        r1, r2 = detect_rebel_group(pair.a1), detect_rebel_group(pair.a2)
        c1 = resolve_affiliation(gateway, text, pair.a1, mentions, gazetteer, cfg)
        c2 = resolve_affiliation(gateway, text, pair.a2, mentions, gazetteer, cfg)
        return AffiliatedInstance(pair, _label(gazetteer, c1, r1), _label(gazetteer, c2, r2),
                                  r1 and c1 is not None, r2 and c2 is not None)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run, pairs))
