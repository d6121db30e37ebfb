"""Candidate trigger lexicons.

Each event class is expanded into surface forms (the term itself, its
inflections, noun and verb forms, and Monte Carlo synonym sets of those)
which are stemmed into the class's trigger-stem set.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

from .gateway import FORMS_MC, SYNONYM_MC, Gateway, MCConfig, Prompt, Purpose
from .stemmer import stem_phrase
from .types import EventClassSpec

__all__ = [
    "TriggerStemSet",
    "synonym_prompt",
    "inflection_prompt",
    "noun_form_prompt",
    "verb_form_prompt",
    "expand_term",
    "expand_term_detailed",
    "build_trigger_set",
    "build_lexicons",
    "save_lexicon",
    "load_lexicon",
    "load_lexicon_dir",
]

Kind = Literal["term", "inflection", "noun_form", "verb_form", "synonym"]


def _where(term: str, definition: str) -> str:
    return f"where '{term}' means {definition.strip().rstrip('.')}"


def synonym_prompt(term: str, definition: str) -> Prompt:
    return Prompt(f"List synonyms of '{term}' in bullet points, {_where(term, definition)}.", Purpose.SYNONYM)


def inflection_prompt(term: str, definition: str) -> Prompt:
    return Prompt(
        f"List the inflections of '{term}' in bullet points, {_where(term, definition)}.", Purpose.INFLECTION
    )


def noun_form_prompt(term: str, definition: str) -> Prompt:
    return Prompt(f"List the noun forms of '{term}' in bullet points, {_where(term, definition)}.", Purpose.WORDFORM)


def verb_form_prompt(term: str, definition: str) -> Prompt:
    return Prompt(f"List the verb forms of '{term}' in bullet points, {_where(term, definition)}.", Purpose.WORDFORM)


def expand_term_detailed(
    gateway: Gateway,
    term: str,
    definition: str,
    synonym_cfg: MCConfig = SYNONYM_MC,
    forms_cfg: MCConfig = FORMS_MC,
) -> dict[str, Kind]:
    """Surface forms of ``term`` mapped to how each was first produced.

    Synonyms are drawn for the term and for each of its noun and verb forms,
    not for its inflections.
    """
    term = term.strip().lower()
    if not term:
        raise ValueError("term must be non-empty")
    forms: dict[str, Kind] = {term: "term"}

    def add(items: Iterable[str], kind: Kind):
        for item in sorted(items):
            forms.setdefault(item, kind)

    add(gateway.mc_union(inflection_prompt(term, definition), forms_cfg), "inflection")
    nouns = gateway.mc_union(noun_form_prompt(term, definition), forms_cfg)
    verbs = gateway.mc_union(verb_form_prompt(term, definition), forms_cfg)
    add(nouns, "noun_form")
    add(verbs, "verb_form")
    for base in dict.fromkeys([term, *sorted(nouns | verbs)]):
        add(gateway.mc_union(synonym_prompt(base, definition), synonym_cfg), "synonym")
    return forms


def expand_term(
    gateway: Gateway,
    term: str,
    definition: str,
    synonym_cfg: MCConfig = SYNONYM_MC,
    forms_cfg: MCConfig = FORMS_MC,
) -> set[str]:
    return set(expand_term_detailed(gateway, term, definition, synonym_cfg, forms_cfg))


@dataclass(frozen=True)
class TriggerStemSet:
    class_id: str
    stems: frozenset[str]
    provenance: dict[str, tuple[str, str]] = field(default_factory=dict, compare=False)
    config: dict = field(default_factory=dict, compare=False)

    def source(self, stem: str) -> str:
        return self.provenance.get(stem, ("", ""))[0]

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "stems": sorted(self.stems),
            "provenance": {s: {"source": src, "kind": kind} for s, (src, kind) in sorted(self.provenance.items())},
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TriggerStemSet":
        prov = {s: (p["source"], p["kind"]) for s, p in d.get("provenance", {}).items()}
        return cls(d["class_id"], frozenset(d["stems"]), prov, d.get("config", {}))


def build_trigger_set(
    gateway: Gateway,
    spec: EventClassSpec,
    synonym_cfg: MCConfig = SYNONYM_MC,
    forms_cfg: MCConfig = FORMS_MC,
) -> TriggerStemSet:
    provenance: dict[str, tuple[str, str]] = {}
    for source in [spec.name, *spec.keywords]:
        forms = expand_term_detailed(gateway, source, spec.definition, synonym_cfg, forms_cfg)
        for surface, kind in forms.items():
            s = stem_phrase(surface)
            if s:
                provenance.setdefault(s, (source.strip().lower(), kind))
    config = {"synonym": synonym_cfg.to_dict(), "forms": forms_cfg.to_dict(), "spec": spec.to_dict()}
    return TriggerStemSet(spec.id, frozenset(provenance), provenance, config)


def build_lexicons(
    gateway: Gateway,
    specs: Iterable[EventClassSpec],
    synonym_cfg: MCConfig = SYNONYM_MC,
    forms_cfg: MCConfig = FORMS_MC,
    workers: int = 1,
) -> dict[str, TriggerStemSet]:
    specs = list(specs)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        sets = pool.map(lambda s: build_trigger_set(gateway, s, synonym_cfg, forms_cfg), specs)
        return {s.class_id: s for s in sets}


def _lexicon_path(directory: Path, class_id: str) -> Path:
    return directory / f"{class_id}.json"


def save_lexicon(lexicon: TriggerStemSet, directory: str | os.PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = _lexicon_path(directory, lexicon.class_id)
    path.write_text(json.dumps(lexicon.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_lexicon(path: str | os.PathLike) -> TriggerStemSet:
    return TriggerStemSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_lexicon_dir(directory: str | os.PathLike) -> dict[str, TriggerStemSet]:
    out = {}
    for path in sorted(Path(directory).glob("*.json")):
        if path.name == "manifest.json":
            continue
        lex = load_lexicon(path)
        out[lex.class_id] = lex
    return out


def lexicon_is_stale(
    directory: str | os.PathLike, spec: EventClassSpec, synonym_cfg: MCConfig, forms_cfg: MCConfig
) -> bool:
    """True when the stored lexicon is missing or was built from other inputs."""
    path = _lexicon_path(Path(directory), spec.id)
    if not path.exists():
        return True
    cfg = load_lexicon(path).config
    return cfg != {"synonym": synonym_cfg.to_dict(), "forms": forms_cfg.to_dict(), "spec": spec.to_dict()}
