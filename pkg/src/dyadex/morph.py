"""English verb inflection for prompt construction (third person, participles, gerunds)."""
from __future__ import annotations

VOWELS = "aeiou"

# verb -> (third person singular, past participle, gerund); None keeps the rule.
IRREGULAR: dict[str, tuple[str | None, str | None, str | None]] = {
    "be": ("is", "been", "being"),
    "have": ("has", "had", "having"),
    "do": ("does", "done", "doing"),
    "go": ("goes", "gone", "going"),
    "bear": (None, "born", None),
    "beat": (None, "beaten", None),
    "bring": (None, "brought", None),
    "buy": (None, "bought", None),
    "catch": (None, "caught", None),
    "choose": (None, "chosen", None),
    "die": (None, "died", "dying"),
    "draw": (None, "drawn", None),
    "drive": (None, "driven", None),
    "fight": (None, "fought", None),
    "find": (None, "found", None),
    "forgive": (None, "forgiven", None),
    "freeze": (None, "frozen", None),
    "give": (None, "given", None),
    "hit": (None, "hit", "hitting"),
    "hold": (None, "held", None),
    "hurt": (None, "hurt", None),
    "keep": (None, "kept", None),
    "lead": (None, "led", None),
    "leave": (None, "left", None),
    "lie": (None, "lied", "lying"),
    "lose": (None, "lost", None),
    "meet": (None, "met", None),
    "pay": (None, "paid", None),
    "put": (None, "put", "putting"),
    "seek": (None, "sought", None),
    "sell": (None, "sold", None),
    "send": (None, "sent", None),
    "set": (None, "set", "setting"),
    "shoot": (None, "shot", None),
    "slay": (None, "slain", None),
    "spend": (None, "spent", None),
    "steal": (None, "stolen", None),
    "strike": (None, "struck", None),
    "take": (None, "taken", None),
    "teach": (None, "taught", None),
    "tell": (None, "told", None),
    "throw": (None, "thrown", None),
    "wage": (None, "waged", None),
    "win": (None, "won", "winning"),
    "write": (None, "written", None),
    # stress on the final syllable doubles the consonant
    "acquit": (None, "acquitted", "acquitting"),
    "admit": (None, "admitted", "admitting"),
    "commit": (None, "committed", "committing"),
    "compel": (None, "compelled", "compelling"),
    "control": (None, "controlled", "controlling"),
    "expel": (None, "expelled", "expelling"),
    "kidnap": (None, "kidnapped", "kidnapping"),
    "occur": (None, "occurred", "occurring"),
    "patrol": (None, "patrolled", "patrolling"),
    "permit": (None, "permitted", "permitting"),
    "prefer": (None, "preferred", "preferring"),
    "refer": (None, "referred", "referring"),
    "submit": (None, "submitted", "submitting"),
    "transfer": (None, "transferred", "transferring"),
}

PREPOSITIONS = frozenset(
    "about across after against along among around at before behind by for from in into of off on "
    "onto out over through to toward towards under upon with within without".split()
)


def _doubles_final(verb: str) -> bool:
    """Single-syllable consonant-vowel-consonant verbs double their last letter."""
    if len(verb) < 3 or verb[-1] in "wxy" + VOWELS:
        return False
    if verb[-2] not in VOWELS or verb[-3] in VOWELS:
        return False
    return sum(1 for c in verb[:-1] if c in VOWELS) == 1


def third_person(verb: str) -> str:
    v = verb.lower()
    if v in IRREGULAR and IRREGULAR[v][0]:
        return IRREGULAR[v][0]
    if v.endswith(("s", "x", "z", "ch", "sh", "o")):
        return v + "es"
    if v.endswith("y") and len(v) > 1 and v[-2] not in VOWELS:
        return v[:-1] + "ies"
    return v + "s"


def past_participle(verb: str) -> str:
    v = verb.lower()
    if v in IRREGULAR and IRREGULAR[v][1]:
        return IRREGULAR[v][1]
    if v.endswith("e"):
        return v + "d"
    if v.endswith("y") and len(v) > 1 and v[-2] not in VOWELS:
        return v[:-1] + "ied"
    if _doubles_final(v):
        return v + v[-1] + "ed"
    return v + "ed"


def gerund(verb: str) -> str:
    v = verb.lower()
    if v in IRREGULAR and IRREGULAR[v][2]:
        return IRREGULAR[v][2]
    if v.endswith("ie"):
        return v[:-2] + "ying"
    if v.endswith("e") and not v.endswith(("ee", "ye", "oe")) and len(v) > 2:
        return v[:-1] + "ing"
    if _doubles_final(v):
        return v + v[-1] + "ing"
    return v + "ing"


def split_verb_phrase(phrase: str) -> tuple[str, str, str | None]:
    """``"protest against"`` -> ``("protest", "", "against")``.

    Returns the head verb, any middle words, and a trailing preposition.
    """
    words = phrase.lower().replace("-", " ").split()
    if not words:
        raise ValueError("empty verb phrase")
    prep = words[-1] if len(words) > 1 and words[-1] in PREPOSITIONS else None
    middle = words[1:-1] if prep else words[1:]
    return words[0], " ".join(middle), prep


def gerund_phrase(phrase: str) -> str:
    """``"arrest or jail"`` -> ``"arresting or jailing"``."""
    parts = []
    for alt in phrase.split(" or "):
        head, middle, prep = split_verb_phrase(alt)
        parts.append(" ".join(p for p in (gerund(head), middle, prep) if p))
    return " or ".join(parts)
