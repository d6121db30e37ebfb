"""Run configuration, manifests, and end-to-end orchestration of the stages."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .affiliation import affiliate, default_gazetteer, load_gazetteer, make_geocoder
from .arguments import POLICIES, ModalityAudit, extract
from .detection import StemIndex, detect, match_candidates
from .evaluation import GoldAnnotation, aggregate_graph, export_edges
from .gateway import (
    BOOLEAN_MC,
    EXTRACTION_MC,
    FORMS_MC,
    SYNONYM_MC,
    Gateway,
    GatewayError,
    HTTPBackend,
    MCConfig,
    MockBackend,
    QueryLedger,
    ResponseCache,
    ScriptError,
)
from .lexicon import build_lexicons, build_trigger_set, lexicon_is_stale, load_lexicon_dir, save_lexicon
from .types import (
    EventClassSpec,
    Sentence,
    StageSummary,
    load_corpus,
    load_event_specs,
    write_jsonl,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BackendConfig",
    "RunConfig",
    "RunManifest",
    "StageFailure",
    "make_gateway",
    "ensure_lexicons",
    "run_pipeline",
    "recall_cost_curve",
    "OUTPUT_FILES",
]

OUTPUT_FILES = {
    "detections": "detections.jsonl",
    "pairs": "pairs.jsonl",
    "affiliations": "affiliations.jsonl",
    "graph": "graph.csv",
    "ledger": "ledger.jsonl",
    "modality_audit": "modality_audit.jsonl",
    "manifest": "manifest.json",
}


class StageFailure(RuntimeError):
    """A stage raised; ``outputs`` names the files already written."""

    def __init__(self, stage: str, cause: BaseException, outputs: Mapping[str, str]):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.outputs = dict(outputs)

    @property
    def backend_failure(self) -> bool:
        return isinstance(self.cause, (GatewayError, ScriptError))


@dataclass
class BackendConfig:
    kind: str = "mock"  # "mock" or "http"
    script: str | None = None
    base_url: str | None = None
    model: str | None = None
    token_env: str = "OPENAI_API_KEY"
    api: str = "chat"

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown backend kind {self.kind!r}")


_PATH_FIELDS = ("specs", "corpus", "lexicon_dir", "cache_dir", "gazetteer", "geocoder_cache", "output_dir")
_MC_FIELDS = ("synonym", "forms", "boolean", "extraction", "affiliation")


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    synonym: MCConfig = SYNONYM_MC
    forms: MCConfig = FORMS_MC
    boolean: MCConfig = BOOLEAN_MC
    extraction: MCConfig = EXTRACTION_MC
    affiliation: MCConfig = BOOLEAN_MC
    modality_policy: str = "normalize"
    specs: str | None = None
    corpus: str | None = None
    lexicon_dir: str | None = None
    cache_dir: str | None = None
    gazetteer: str | None = None  # None -> bundled table
    geocoder: str = "off"
    geocoder_cache: str | None = None
    output_dir: str = "out"
    bucketing: str = "year"
    workers: int = 1

    def __post_init__(self):
        if self.modality_policy not in POLICIES:
            raise ValueError(f"unknown modality policy {self.modality_policy!r}")
        if self.geocoder not in ("off", "cache", "live"):
            raise ValueError(f"unknown geocoder mode {self.geocoder!r}")
        if self.bucketing not in ("year", "month", "none"):
            raise ValueError(f"unknown bucketing {self.bucketing!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | os.PathLike | None = None) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        backend = dict(d.pop("backend", {}) or {})
        kw = {k: MCConfig.from_dict(d.pop(k)) for k in _MC_FIELDS if k in d}

        def rel(p):
            if p is None or base_dir is None or os.path.isabs(p):
                return p
            return os.path.normpath(os.path.join(base_dir, p))

        for k in _PATH_FIELDS:
            if k in d:
                d[k] = rel(d[k])
        if backend.get("script"):
            backend["script"] = rel(backend["script"])
        return cls(backend=BackendConfig(**backend), **kw, **d)

    @classmethod
    def from_file(cls, path: str | os.PathLike, env: Mapping[str, str] | None = None) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            cfg = cls.from_dict(json.load(fh), base_dir=os.path.dirname(os.path.abspath(path)))
        return cfg.with_env(os.environ if env is None else env)

    def with_env(self, env: Mapping[str, str]) -> "RunConfig":
        """Apply ``DYADEX_*`` overrides: BASE_URL, MODEL, CACHE_DIR, WORKERS."""
        cfg = dataclasses.replace(self, backend=dataclasses.replace(self.backend))
        if env.get("DYADEX_BASE_URL"):
            cfg.backend.kind = "http"
            cfg.backend.base_url = env["DYADEX_BASE_URL"]
        if env.get("DYADEX_MODEL"):
            cfg.backend.model = env["DYADEX_MODEL"]
        if env.get("DYADEX_CACHE_DIR"):
            cfg.cache_dir = env["DYADEX_CACHE_DIR"]
        if env.get("DYADEX_WORKERS"):
            cfg.workers = int(env["DYADEX_WORKERS"])
        return cfg

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["backend"] = dataclasses.asdict(self.backend)
        for k in _MC_FIELDS:
            d[k] = d[k].to_dict()
        return d

    def check_paths(self, *names: str) -> None:
        """Raise FileNotFoundError for any named input path that is unset or missing."""
        for name in names:
            p = self.backend.script if name == "script" else getattr(self, name)
            if not p:
                raise FileNotFoundError(f"config: {name} is not set")
            if not os.path.exists(p):
                raise FileNotFoundError(f"config: {name} {p} does not exist")


def make_gateway(cfg: RunConfig) -> Gateway:
    b = cfg.backend
    if b.kind == "mock":
        cfg.check_paths("script")
        backend = MockBackend.from_file(b.script)
    else:
        if not b.base_url or not b.model:
            raise ValueError("http backend needs base_url and model")
        backend = HTTPBackend.from_env(b.base_url, b.model, b.token_env, api=b.api)
    return Gateway(backend, ResponseCache(cfg.cache_dir), QueryLedger())


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    ledger: dict = field(default_factory=dict)
    stages: list[dict] = field(default_factory=list)
    started: float = field(default_factory=time.time)
    seconds: float = 0.0
    status: str = "ok"

    def add_inputs(self, paths: Mapping[str, str | None]) -> None:
        for name, p in paths.items():
            if p and os.path.isfile(p):
                self.inputs[name] = file_digest(p)

    def record_ledger(self, ledger: QueryLedger) -> None:
        self.ledger = {
            "draws": len(ledger),
            "cache_hits": ledger.count(cache_hit=True),
            "by_purpose": ledger.by_purpose(),
        }

    def finish(self, path: str | os.PathLike, status: str = "ok") -> None:
        self.status = status
        self.seconds = round(time.time() - self.started, 3)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def ensure_lexicons(
    gateway: Gateway,
    specs: Sequence[EventClassSpec],
    cfg: RunConfig,
    force: bool = False,
) -> tuple[dict, list[str]]:
    """Load stored trigger sets, rebuilding those that are missing or stale.

    Returns the lexicons and the ids of classes that were (re)built.
    """
    if not cfg.lexicon_dir:
        raise FileNotFoundError("config: lexicon_dir is not set")
    stale = [s for s in specs if force or lexicon_is_stale(cfg.lexicon_dir, s, cfg.synonym, cfg.forms)]
    if stale:
        for lex in build_lexicons(gateway, stale, cfg.synonym, cfg.forms, cfg.workers).values():
            save_lexicon(lex, cfg.lexicon_dir)
    wanted = {s.id for s in specs}
    lexicons = {k: v for k, v in load_lexicon_dir(cfg.lexicon_dir).items() if k in wanted}
    return lexicons, [s.id for s in stale]


def load_affiliation_tools(cfg: RunConfig):
    gazetteer = (
        load_gazetteer(cfg.gazetteer, extensions_path=_sibling(cfg.gazetteer, "us_extensions.tsv"))
        if cfg.gazetteer
        else default_gazetteer()
    )
    if cfg.geocoder == "cache":
        cfg.check_paths("geocoder_cache")
    return gazetteer, make_geocoder(cfg.geocoder, cfg.geocoder_cache)


def _sibling(path: str, name: str) -> str | None:
    p = os.path.join(os.path.dirname(path), name)
    return p if os.path.exists(p) else None


def run_pipeline(cfg: RunConfig, gateway: Gateway | None = None) -> dict[str, str]:
    """lexicons (if stale) -> detect -> extract -> affiliate -> graph.

    Every stage writes its own file under ``cfg.output_dir``. Returns the
    output paths by name. A stage that raises stops the run with
    :class:`StageFailure`, after the manifest and ledger are written.
    """
    cfg.check_paths("specs", "corpus")
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gateway = gateway or make_gateway(cfg)
    specs = load_event_specs(cfg.specs)
    corpus = load_corpus(cfg.corpus)
    manifest = RunManifest("run", cfg.to_dict())
    manifest.add_inputs({"specs": cfg.specs, "corpus": cfg.corpus, "script": cfg.backend.script,
                         "gazetteer": cfg.gazetteer, "geocoder_cache": cfg.geocoder_cache})
    written: dict[str, str] = {}

    def path(name: str) -> str:
        return str(out_dir / OUTPUT_FILES[name])

    def stage(name: str, fn):
        try:
            return fn()
        except Exception as exc:
            gateway.ledger.save(path("ledger"))
            written["ledger"] = path("ledger")
            manifest.outputs = dict(written)
            manifest.record_ledger(gateway.ledger)
            manifest.finish(path("manifest"), status=f"failed at {name}: {exc}")
            raise StageFailure(name, exc, written) from exc

    lex_summary = StageSummary("build-lexicon")
    lexicons, rebuilt = stage("build-lexicon", lambda: ensure_lexicons(gateway, specs, cfg))
    lex_summary.attempt(len(rebuilt))
    manifest.stages.append({**lex_summary.to_dict(), "rebuilt": rebuilt})

    det_summary = StageSummary("detect")
    detections = stage("detect", lambda: detect(gateway, corpus, specs, lexicons, cfg.boolean, cfg.workers,
                                                det_summary))
    write_jsonl(path("detections"), (d.to_record() for d in detections))
    written["detections"] = path("detections")
    manifest.stages.append(det_summary.to_dict())

    ext_summary = StageSummary("extract")
    audit = ModalityAudit()
    pairs = stage("extract", lambda: extract(gateway, detections, corpus, specs, cfg.extraction,
                                             cfg.modality_policy, cfg.boolean, cfg.workers, ext_summary, audit))
    write_jsonl(path("pairs"), (p.to_record() for p in pairs))
    written["pairs"] = path("pairs")
    audit.save(path("modality_audit"))
    written["modality_audit"] = path("modality_audit")
    manifest.stages.append(ext_summary.to_dict())

    aff_summary = StageSummary("affiliate")
    gazetteer, geocoder = stage("affiliate", lambda: load_affiliation_tools(cfg))
    instances = stage("affiliate", lambda: affiliate(gateway, pairs, corpus, gazetteer, geocoder,
                                                     cfg.affiliation, cfg.workers, aff_summary))
    write_jsonl(path("affiliations"), (i.to_record() for i in instances))
    written["affiliations"] = path("affiliations")
    manifest.stages.append(aff_summary.to_dict())

    graph = aggregate_graph(instances, cfg.bucketing, corpus)
    export_edges(graph, path("graph"))
    written["graph"] = path("graph")
    manifest.stages.append({"stage": "graph", "edges": len(graph.edges), "excluded": graph.excluded})

    gateway.ledger.save(path("ledger"))
    written["ledger"] = path("ledger")
    manifest.outputs = dict(written)
    manifest.record_ledger(gateway.ledger)
    manifest.finish(path("manifest"))
    written["manifest"] = path("manifest")
    return written


def recall_cost_curve(
    gateway: Gateway,
    specs: Sequence[EventClassSpec],
    corpus: Sequence[Sentence],
    gold: Iterable[GoldAnnotation],
    sample_grid: Sequence[int],
    synonym_temperature: float = SYNONYM_MC.temperature,
    forms_cfg: MCConfig = FORMS_MC,
    boolean_samples: int = 1,
) -> list[dict]:
    """Trigger-filter recall against disambiguation cost as synonym samples grow.

    For each synonym sample count, the trigger sets are rebuilt (earlier
    samples come from the cache) and matched against the corpus. Recall is the
    share of gold (sentence, class) pairs with at least one candidate match;
    cost is the number of boolean draws the candidates would need.
    """
    gold_keys = {(g.sentence_id, g.class_id) for g in gold}
    rows = []
    for y in sample_grid:
        syn = MCConfig(synonym_temperature, y)
        indexes = {s.id: StemIndex(build_trigger_set(gateway, s, syn, forms_cfg)) for s in specs}
        matches = [m for sent in corpus for m in match_candidates(sent, indexes)]
        covered = {(m.sentence_id, m.class_id) for m in matches} & gold_keys
        rows.append({
            "samples": y,
            "stems": sum(len(ix.lexicon.stems) for ix in indexes.values()),
            "candidates": len(matches),
            "cost": len(matches) * boolean_samples,
            "recall": len(covered) / len(gold_keys) if gold_keys else 0.0,
        })
    return rows

