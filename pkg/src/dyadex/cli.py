"""Command-line entry point: ``dyadex <subcommand>``.

Exit status: 0 success, 1 usage or input error, 2 stage failure, 3 backend failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .affiliation import affiliate as run_affiliate
from .arguments import POLICIES, ModalityAudit, extract as run_extract
from .detection import VARIANTS, detect as run_detect, exhaustive_detect
from .evaluation import (
    ROLE_MAP,
    aggregate_graph,
    efficiency_report,
    export_edges,
    load_gold,
    load_role_map,
    score_detection,
    score_dyadic,
)
from .gateway import GatewayError, MCConfig, QueryLedger, ScriptError
from .lexicon import synonym_prompt
from .pipeline import (
    RunConfig,
    RunManifest,
    StageFailure,
    ensure_lexicons,
    load_affiliation_tools,
    make_gateway,
    recall_cost_curve,
    run_pipeline,
)
from .types import (
    AffiliatedInstance,
    Detection,
    DyadicArguments,
    StageSummary,
    load_corpus,
    load_event_specs,
    read_jsonl,
    write_jsonl,
)

logger = logging.getLogger("dyadex")

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------- arguments


def _backend_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="RunConfig JSON file")
    g.add_argument("--specs", help="event class specs (JSON list)")
    g.add_argument("--corpus", help="sentence corpus (JSON lines)")
    g.add_argument("--lexicon-dir")
    g.add_argument("--cache-dir", help="response cache directory")
    g.add_argument("--mock-script", help="scripted backend rules (JSON)")
    g.add_argument("--base-url", help="OpenAI-compatible endpoint")
    g.add_argument("--model")
    g.add_argument("--token-env", help="environment variable holding the API token")
    g.add_argument("--workers", type=int)


def _mc_args(p: argparse.ArgumentParser, prefix: str = "") -> None:
    short = prefix.rstrip("-") or "mc"
    p.add_argument(f"--{prefix}temperature", f"--{short}-temp", type=float)
    p.add_argument(f"--{prefix}samples", f"--{short}-samples", type=int)
    if not prefix:
        p.add_argument("--threshold", type=float, help="yes share needed (default: strict majority)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dyadex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-lexicon", help="generate trigger stem sets")
    _backend_args(p)
    _mc_args(p, "synonym-")
    p.add_argument("--classes", nargs="+", help="only these class ids")
    p.add_argument("--force", action="store_true", help="rebuild even if up to date")

    p = sub.add_parser("detect", help="stem filtering plus disambiguation")
    _backend_args(p)
    _mc_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("baseline", help="exhaustive per-class boolean queries")
    _backend_args(p)
    _mc_args(p)
    p.add_argument("--variant", choices=VARIANTS, default="about")
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="agent and patient extraction")
    _backend_args(p)
    _mc_args(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--modality-policy", type=_policy, choices=POLICIES)
    p.add_argument("--out", required=True)

    p = sub.add_parser("affiliate", help="country affiliation of each actor")
    _backend_args(p)
    _mc_args(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--gazetteer", help="surface<TAB>code TSV (default: bundled)")
    p.add_argument("--geocoder", choices=("live", "cache", "off"))
    p.add_argument("--geocoder-cache")
    p.add_argument("--out", required=True)

    p = sub.add_parser("graph", help="aggregate affiliated instances into an edge list")
    p.add_argument("--affiliations", required=True)
    p.add_argument("--corpus", help="corpus carrying dates")
    p.add_argument("--bucketing", choices=("year", "month", "none"), default="year")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="micro P/R/F1 against a gold file")
    p.add_argument("--task", choices=("detection", "dyadic"), required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--match-policy", choices=("exact", "head"), default="exact")
    p.add_argument("--role-map", help="JSON role map (default: built-in table)")
    p.add_argument("--class-map", help="JSON {pred class: gold class}")
    p.add_argument("--corpus", help="flag predictions on sentences outside this corpus")
    p.add_argument("--json", dest="json_out", help="also write the report as JSON")

    p = sub.add_parser("efficiency", help="disambiguation draws versus the exhaustive baseline")
    p.add_argument("--ledger", required=True)
    p.add_argument("--corpus-size", "--sentences", type=int)
    p.add_argument("--corpus")
    p.add_argument("--class-count", "--classes", type=int)
    p.add_argument("--specs")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--json", dest="json_out")

    p = sub.add_parser("curve", help="cumulative synonym-set size and recall against cost")
    _backend_args(p)
    p.add_argument("--classes", nargs="+")
    p.add_argument("--term", help="curve for this term instead of the classes in --specs")
    p.add_argument("--definition", help="definition for --term when it is not a spec class")
    p.add_argument("--temps", "--temperature", dest="temps", type=_floats, default=[0.67],
                   help="comma-separated temperatures")
    p.add_argument("--samples", "--max-samples", dest="max_samples", type=int, default=70)
    p.add_argument("--gold", help="gold file for recall against cost")
    p.add_argument("--grid", type=int, nargs="+", default=[1, 5, 10, 20, 40, 70])
    p.add_argument("--boolean-samples", type=int, default=9)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="all stages end to end")
    _backend_args(p)
    p.add_argument("--modality-policy", type=_policy, choices=POLICIES)
    p.add_argument("--geocoder", choices=("live", "cache", "off"))
    p.add_argument("--geocoder-cache")
    p.add_argument("--out-dir")
    return parser


def _policy(value: str) -> str:
    return value.replace("-", "_")


def _floats(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}") from None


# ------------------------------------------------------------ config merge


def _config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig().with_env(os.environ)
    simple = {
        "specs": "specs", "corpus": "corpus", "lexicon_dir": "lexicon_dir", "cache_dir": "cache_dir",
        "workers": "workers", "modality_policy": "modality_policy", "geocoder": "geocoder",
        "geocoder_cache": "geocoder_cache", "gazetteer": "gazetteer", "out_dir": "output_dir",
    }
    updates = {dst: getattr(args, src) for src, dst in simple.items() if getattr(args, src, None) is not None}
    cfg = dataclasses.replace(cfg, **updates)
    b = cfg.backend
    if getattr(args, "mock_script", None):
        b.kind, b.script = "mock", args.mock_script
    if getattr(args, "base_url", None):
        b.kind, b.base_url = "http", args.base_url
    if getattr(args, "model", None):
        b.model = args.model
    if getattr(args, "token_env", None):
        b.token_env = args.token_env
    return cfg


def _override_mc(base: MCConfig, temperature, samples, threshold=None) -> MCConfig:
    return MCConfig(
        base.temperature if temperature is None else temperature,
        base.samples if samples is None else samples,
        base.vote_threshold if threshold is None else threshold,
    )


def _side(out: str, suffix: str) -> str:
    p = Path(out)
    return str(p.with_name(p.name.split(".")[0] + suffix))


def _finish(manifest: RunManifest, gateway, path: str, ledger_path: str | None = None) -> None:
    if gateway is not None:
        manifest.record_ledger(gateway.ledger)
        if ledger_path:
            gateway.ledger.save(ledger_path)
            manifest.outputs["ledger"] = ledger_path
    manifest.finish(path)


# ------------------------------------------------------------- subcommands


def cmd_build_lexicon(args) -> int:
    cfg = _config(args)
    cfg.synonym = _override_mc(cfg.synonym, args.synonym_temperature, args.synonym_samples)
    cfg.check_paths("specs")
    specs = load_event_specs(cfg.specs)
    if args.classes:
        unknown = set(args.classes) - {s.id for s in specs}
        if unknown:
            raise UsageError(f"unknown classes: {sorted(unknown)}")
        specs = [s for s in specs if s.id in args.classes]
    gateway = make_gateway(cfg)
    manifest = RunManifest("build-lexicon", cfg.to_dict())
    manifest.add_inputs({"specs": cfg.specs, "script": cfg.backend.script})
    lexicons, rebuilt = ensure_lexicons(gateway, specs, cfg, force=args.force)
    for cid in sorted(lexicons):
        print(f"{cid}: {len(lexicons[cid].stems)} stems" + (" (rebuilt)" if cid in rebuilt else ""))
    manifest.outputs = {cid: os.path.join(cfg.lexicon_dir, f"{cid}.json") for cid in lexicons}
    manifest.stages.append({"stage": "build-lexicon", "rebuilt": rebuilt})
    _finish(manifest, gateway, os.path.join(cfg.lexicon_dir, "manifest.json"),
            os.path.join(cfg.lexicon_dir, "ledger.jsonl"))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    cfg.boolean = _override_mc(cfg.boolean, args.temperature, args.samples, args.threshold)
    cfg.check_paths("specs", "corpus")
    specs, corpus = load_event_specs(cfg.specs), load_corpus(cfg.corpus)
    gateway = make_gateway(cfg)
    manifest = RunManifest("detect", cfg.to_dict())
    manifest.add_inputs({"specs": cfg.specs, "corpus": cfg.corpus, "script": cfg.backend.script})
    lexicons, rebuilt = ensure_lexicons(gateway, specs, cfg)
    summary = StageSummary("detect")
    dets = run_detect(gateway, corpus, specs, lexicons, cfg.boolean, cfg.workers, summary)
    write_jsonl(args.out, (d.to_record() for d in dets))
    print(f"{len(dets)} detections from {summary.attempted} candidate triggers -> {args.out}")
    manifest.outputs["detections"] = args.out
    manifest.stages.append({**summary.to_dict(), "lexicons_rebuilt": rebuilt})
    _finish(manifest, gateway, _side(args.out, ".manifest.json"), _side(args.out, ".ledger.jsonl"))
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _config(args)
    cfg.boolean = _override_mc(cfg.boolean, args.temperature, args.samples, args.threshold)
    cfg.check_paths("specs", "corpus")
    specs, corpus = load_event_specs(cfg.specs), load_corpus(cfg.corpus)
    gateway = make_gateway(cfg)
    manifest = RunManifest("baseline", {**cfg.to_dict(), "variant": args.variant})
    manifest.add_inputs({"specs": cfg.specs, "corpus": cfg.corpus, "script": cfg.backend.script})
    summary = StageSummary("baseline")
    dets = exhaustive_detect(gateway, corpus, specs, args.variant, cfg.boolean, cfg.workers, summary)
    write_jsonl(args.out, (d.to_record() for d in dets))
    print(f"{len(dets)} detections from {summary.attempted} sentence-class queries -> {args.out}")
    manifest.outputs["detections"] = args.out
    manifest.stages.append(summary.to_dict())
    _finish(manifest, gateway, _side(args.out, ".manifest.json"), _side(args.out, ".ledger.jsonl"))
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _config(args)
    cfg.extraction = _override_mc(cfg.extraction, args.temperature, args.samples, args.threshold)
    cfg.check_paths("specs", "corpus")
    specs, corpus = load_event_specs(cfg.specs), load_corpus(cfg.corpus)
    dets = [Detection.from_record(r) for r in read_jsonl(args.detections)]
    gateway = make_gateway(cfg)
    manifest = RunManifest("extract", cfg.to_dict())
    manifest.add_inputs({"specs": cfg.specs, "corpus": cfg.corpus, "detections": args.detections,
                         "script": cfg.backend.script})
    summary, audit = StageSummary("extract"), ModalityAudit()
    pairs = run_extract(gateway, dets, corpus, specs, cfg.extraction, cfg.modality_policy, cfg.boolean,
                        cfg.workers, summary, audit)
    write_jsonl(args.out, (p.to_record() for p in pairs))
    audit.save(_side(args.out, ".modality_audit.jsonl"))
    print(f"{len(pairs)} dyadic pairs from {summary.attempted} detections -> {args.out}")
    manifest.outputs.update(pairs=args.out, modality_audit=_side(args.out, ".modality_audit.jsonl"))
    manifest.stages.append(summary.to_dict())
    _finish(manifest, gateway, _side(args.out, ".manifest.json"), _side(args.out, ".ledger.jsonl"))
    return EXIT_OK


def cmd_affiliate(args) -> int:
    cfg = _config(args)
    cfg.affiliation = _override_mc(cfg.affiliation, args.temperature, args.samples, args.threshold)
    cfg.check_paths("corpus")
    corpus = load_corpus(cfg.corpus)
    pairs = [DyadicArguments.from_record(r) for r in read_jsonl(args.pairs)]
    gazetteer, geocoder = load_affiliation_tools(cfg)
    gateway = make_gateway(cfg)
    manifest = RunManifest("affiliate", cfg.to_dict())
    manifest.add_inputs({"corpus": cfg.corpus, "pairs": args.pairs, "gazetteer": cfg.gazetteer,
                         "geocoder_cache": cfg.geocoder_cache, "script": cfg.backend.script})
    summary = StageSummary("affiliate")
    out = run_affiliate(gateway, pairs, corpus, gazetteer, geocoder, cfg.affiliation, cfg.workers, summary)
    write_jsonl(args.out, (i.to_record() for i in out))
    resolved = sum(1 for i in out if i.h1 and i.h2)
    print(f"{len(out)} instances, {resolved} with both affiliations -> {args.out}")
    manifest.outputs["affiliations"] = args.out
    manifest.stages.append(summary.to_dict())
    _finish(manifest, gateway, _side(args.out, ".manifest.json"), _side(args.out, ".ledger.jsonl"))
    return EXIT_OK


def cmd_graph(args) -> int:
    instances = [AffiliatedInstance.from_record(r) for r in read_jsonl(args.affiliations)]
    dates = load_corpus(args.corpus) if args.corpus else None
    manifest = RunManifest("graph", {"bucketing": args.bucketing, "corpus": args.corpus})
    manifest.add_inputs({"affiliations": args.affiliations, "corpus": args.corpus})
    graph = aggregate_graph(instances, args.bucketing, dates)
    n = export_edges(graph, args.out)
    print(f"{n} edges over {graph.total} instances ({graph.excluded} excluded) -> {args.out}")
    manifest.outputs["graph"] = args.out
    manifest.stages.append({"stage": "graph", "edges": n, "excluded": graph.excluded})
    _finish(manifest, None, _side(args.out, ".manifest.json"))
    return EXIT_OK


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_evaluate(args) -> int:
    gold = load_gold(args.gold)
    class_map = _load_json(args.class_map) if args.class_map else None
    rows = list(read_jsonl(args.pred))
    if args.task == "detection":
        ids = [s.id for s in load_corpus(args.corpus)] if args.corpus else None
        report = score_detection([Detection.from_record(r) for r in rows], gold, ids, class_map)
    else:
        role_map = load_role_map(args.role_map) if args.role_map else ROLE_MAP
        report = score_dyadic([DyadicArguments.from_record(r) for r in rows], gold, role_map,
                              args.match_policy, class_map)
    print(report.format_table())
    side = args.json_out or _side(args.pred, f".{args.task}_score.json")
    with open(side, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest("evaluate", {"task": args.task, "match_policy": args.match_policy})
    manifest.add_inputs({"pred": args.pred, "gold": args.gold, "role_map": args.role_map})
    manifest.outputs["report"] = side
    _finish(manifest, None, str(Path(side).with_suffix(".manifest.json")))
    return EXIT_OK


def cmd_efficiency(args) -> int:
    size = args.corpus_size if args.corpus_size is not None else (
        len(load_corpus(args.corpus)) if args.corpus else None)
    count = args.class_count if args.class_count is not None else (
        len(load_event_specs(args.specs)) if args.specs else None)
    if size is None or count is None:
        raise UsageError("efficiency needs --corpus-size or --corpus, and --class-count or --specs")
    report = efficiency_report(QueryLedger.load(args.ledger), size, count, args.samples)
    print(report.format_table())
    side = args.json_out or _side(args.ledger, ".efficiency.json")
    with open(side, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest("efficiency", {"corpus_size": size, "class_count": count, "samples": args.samples})
    manifest.add_inputs({"ledger": args.ledger})
    manifest.outputs["report"] = side
    _finish(manifest, None, str(Path(side).with_suffix(".manifest.json")))
    return EXIT_OK


def _curve_terms(args, cfg) -> list[tuple[str, str, str]]:
    """(label, term, definition) triples to draw synonym curves for."""
    specs = load_event_specs(cfg.specs) if cfg.specs else []
    if args.term:
        match = [s for s in specs if args.term in (s.id, s.name)]
        definition = args.definition or (match[0].definition if match else None)
        if not definition:
            raise UsageError(f"--term {args.term!r} is not a spec class; pass --definition")
        return [(args.term, match[0].name if match else args.term, definition)]
    if not specs:
        raise UsageError("curve needs --specs (or --term with --definition)")
    if args.classes:
        specs = [s for s in specs if s.id in args.classes]
    return [(s.id, s.name, s.definition) for s in specs]


def cmd_curve(args) -> int:
    cfg = _config(args)
    if cfg.specs:
        cfg.check_paths("specs")
    terms = _curve_terms(args, cfg)
    gateway = make_gateway(cfg)
    curves = {
        (label, t): gateway.cumulative_curve(synonym_prompt(term, definition), t, args.max_samples)
        for t in args.temps
        for label, term, definition in terms
    }
    recall = {}
    if args.gold:
        cfg.check_paths("corpus")
        specs = [s for s in load_event_specs(cfg.specs) if s.id in {label for label, _, _ in terms}]
        grid = sorted({y for y in args.grid if y <= args.max_samples})
        corpus, gold = load_corpus(cfg.corpus), load_gold(args.gold)
        for t in args.temps:
            recall[t] = recall_cost_curve(gateway, specs, corpus, gold, grid, t, cfg.forms, args.boolean_samples)
    outputs = {"curve": args.out}
    if args.out.endswith(".csv"):
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "temperature", "samples", "size"])
            for (label, t), sizes in curves.items():
                w.writerows([label, t, y, n] for y, n in enumerate(sizes, 1))
        if recall:
            path = _side(args.out, ".recall.csv")
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["temperature", "samples", "stems", "candidates", "cost", "recall"])
                for t, rows in recall.items():
                    w.writerows([t, r["samples"], r["stems"], r["candidates"], r["cost"], r["recall"]]
                                for r in rows)
            outputs["recall_cost"] = path
    else:
        result = {
            "cumulative": {str(t): {label: curves[(label, t)] for label, _, _ in terms} for t in args.temps},
        }
        if recall:
            result["recall_cost"] = {str(t): rows for t, rows in recall.items()}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    for (label, t), sizes in curves.items():
        print(f"{label} @ {t}: {sizes[-1] if sizes else 0} distinct synonyms after {len(sizes)} samples")
    manifest = RunManifest("curve", {**cfg.to_dict(), "temperatures": args.temps, "samples": args.max_samples})
    manifest.add_inputs({"specs": cfg.specs, "gold": args.gold, "script": cfg.backend.script})
    manifest.outputs.update(outputs)
    _finish(manifest, gateway, _side(args.out, ".manifest.json"), _side(args.out, ".ledger.jsonl"))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    outputs = run_pipeline(cfg)
    for name, path in outputs.items():
        print(f"{name}: {path}")
    return EXIT_OK


COMMANDS = {
    "build-lexicon": cmd_build_lexicon,
    "detect": cmd_detect,
    "baseline": cmd_baseline,
    "extract": cmd_extract,
    "affiliate": cmd_affiliate,
    "graph": cmd_graph,
    "evaluate": cmd_evaluate,
    "efficiency": cmd_efficiency,
    "curve": cmd_curve,
    "run": cmd_run,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dyadex {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageFailure as exc:
        print(f"dyadex {args.command}: {exc}", file=sys.stderr)
        for name, path in exc.outputs.items():
            print(f"  kept {name}: {path}", file=sys.stderr)
        return EXIT_BACKEND if exc.backend_failure else EXIT_STAGE
    except (GatewayError, ScriptError) as exc:
        print(f"dyadex {args.command}: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"dyadex {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
