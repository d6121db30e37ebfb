"""Zero-shot dyadic event extraction with sampled language-model queries."""
__version__ = "0.1.0"

from .gateway import (  # noqa: E402
    BOOLEAN_MC,
    EXTRACTION_MC,
    FORMS_MC,
    SYNONYM_MC,
    Gateway,
    MCConfig,
    MockBackend,
    HTTPBackend,
    Prompt,
    Purpose,
    QueryLedger,
    ResponseCache,
)
from .types import (  # noqa: E402
    AffiliatedInstance,
    Detection,
    DyadicArguments,
    EventClassSpec,
    Sentence,
    load_corpus,
    load_event_specs,
)
from .lexicon import build_lexicons, build_trigger_set, expand_term  # noqa: E402
from .detection import detect, exhaustive_detect, match_candidates  # noqa: E402
from .arguments import extract, extract_pair  # noqa: E402
from .affiliation import affiliate, default_gazetteer, find_country_mentions, load_gazetteer  # noqa: E402
from .evaluation import (  # noqa: E402
    aggregate_graph,
    efficiency_report,
    export_edges,
    load_gold,
    score_detection,
    score_dyadic,
)
from .pipeline import RunConfig, run_pipeline  # noqa: E402

__all__ = [
    "__version__",
    "BOOLEAN_MC",
    "EXTRACTION_MC",
    "FORMS_MC",
    "SYNONYM_MC",
    "Gateway",
    "MCConfig",
    "MockBackend",
    "HTTPBackend",
    "Prompt",
    "Purpose",
    "QueryLedger",
    "ResponseCache",
    "AffiliatedInstance",
    "Detection",
    "DyadicArguments",
    "EventClassSpec",
    "Sentence",
    "load_corpus",
    "load_event_specs",
    "build_lexicons",
    "build_trigger_set",
    "expand_term",
    "detect",
    "exhaustive_detect",
    "match_candidates",
    "extract",
    "extract_pair",
    "affiliate",
    "default_gazetteer",
    "find_country_mentions",
    "load_gazetteer",
    "aggregate_graph",
    "efficiency_report",
    "export_edges",
    "load_gold",
    "score_detection",
    "score_dyadic",
    "RunConfig",
    "run_pipeline",
]
