"""English Snowball (Porter2) stemmer.

Follows the current Snowball English algorithm, including its whole-word
exception list, the fixed R1 prefixes (``gener``, ``commun``, ...) and the
``-ying``/``-ing`` special cases of step 1b.

>>> stem("running"), stem("mauled"), stem("injure")
('run', 'maul', 'injur')
"""
from __future__ import annotations

import re
from functools import lru_cache

__all__ = ["stem", "stem_phrase"]

VOWELS = frozenset("aeiouy")
DOUBLES = ("bb", "dd", "ff", "gg", "mm", "nn", "pp", "rr", "tt")
VALID_LI = frozenset("cdeghkmnrt")

EXCEPTIONS = {
    "skis": "ski",
    "skies": "sky",
    "idly": "idl",
    "gently": "gentl",
    "ugly": "ugli",
    "early": "earli",
    "only": "onli",
    "singly": "singl",
    # invariant forms
    "sky": "sky",
    "news": "news",
    "howe": "howe",
    "atlas": "atlas",
    "cosmos": "cosmos",
    "bias": "bias",
    "andes": "andes",
}

R1_PREFIXES = ("arsen", "commun", "emerg", "gener", "inter", "later", "organ", "past", "univers")

# Suffix tables are ordered longest-first; only the longest match is tried.
STEP2 = (
    ("ational", "ate"), ("tional", "tion"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("ization", "ize"), ("lessli", "less"), ("biliti", "ble"),
    ("fulli", "ful"), ("ousli", "ous"), ("entli", "ent"), ("aliti", "al"),
    ("iviti", "ive"), ("alism", "al"), ("ation", "ate"), ("ogist", "og"),
    ("anci", "ance"), ("enci", "ence"), ("abli", "able"), ("alli", "al"),
    ("izer", "ize"), ("ator", "ate"), ("bli", "ble"), ("ogi", "og"), ("li", ""),
)
STEP3 = (
    ("ational", "ate"), ("tional", "tion"), ("alize", "al"), ("icate", "ic"),
    ("iciti", "ic"), ("ative", ""), ("ical", "ic"), ("ness", ""), ("ful", ""),
)
STEP4 = (
    "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ism", "ate",
    "iti", "ous", "ive", "ize", "ion", "al", "er", "ic",
)

_WORD = re.compile(r"[a-z']+")


def _short_syllable(s: str) -> bool:
    """Whether ``s`` ends in a short syllable."""
    if s.endswith("past"):
        return True
    if len(s) >= 3 and s[-1] not in VOWELS and s[-1] not in "wxY" and s[-2] in VOWELS and s[-3] not in VOWELS:
        return True
    return len(s) == 2 and s[0] in VOWELS and s[1] not in VOWELS


def _after_vc(w: str, start: int) -> int:
    """Index just past the first vowel/non-vowel pair at or after ``start``."""
    for i in range(start + 1, len(w)):
        if w[i] not in VOWELS and w[i - 1] in VOWELS:
            return i + 1
    return len(w)


def _regions(w: str) -> tuple[int, int]:
    for prefix in R1_PREFIXES:
        if w.startswith(prefix):
            r1 = len(prefix)
            break
    else:
        r1 = _after_vc(w, 0)
    r2 = _after_vc(w, r1) if r1 < len(w) else len(w)
    return r1, r2


def _prelude(w: str) -> str:
    if w.startswith("'"):
        w = w[1:]
    chars = list(w)
    for i, c in enumerate(chars):
        if c == "y" and (i == 0 or chars[i - 1] in VOWELS):
            chars[i] = "Y"
    return "".join(chars)


def _step1a(w: str) -> str:
    for suffix in ("'s'", "'s", "'"):
        if w.endswith(suffix):
            w = w[: -len(suffix)]
            break
    if w.endswith("sses"):
        return w[:-2]
    if w.endswith(("ied", "ies")):
        head = w[:-3]
        return head + ("i" if len(head) >= 2 else "ie")
    if w.endswith(("ss", "us")):
        return w
    if w.endswith("s") and any(c in VOWELS for c in w[:-2]):
        return w[:-1]
    return w


def _step1b(w: str, r1: int) -> str:
    for suffix in ("eedly", "ingly", "edly", "eed", "ing", "ed"):
        if w.endswith(suffix):
            break
    else:
        return w
    head = w[: -len(suffix)]
    if suffix in ("eed", "eedly"):
        if len(head) >= r1 and head not in ("succ", "proc", "exc"):
            return head + "ee"
        return w
    if suffix == "ing":
        if len(head) == 2 and head[1] == "y" and head[0] not in VOWELS:
            return head[0] + "ie"
        if head in ("even", "cann", "inn", "earr", "herr", "out"):
            return w
    if not any(c in VOWELS for c in head):
        return w
    if head.endswith(("at", "bl", "iz")):
        return head + "e"
    if head.endswith(DOUBLES):
        if len(head) == 3 and head[0] in "aeo":
            return head
        return head[:-1]
    if len(head) == r1 and _short_syllable(head):
        return head + "e"
    return head


def _step1c(w: str) -> str:
    if len(w) > 2 and w[-1] in "yY" and w[-2] not in VOWELS:
        return w[:-1] + "i"
    return w


def _step2(w: str, r1: int) -> str:
    for suffix, repl in STEP2:
        if not w.endswith(suffix):
            continue
        head = w[: -len(suffix)]
        if len(head) < r1:
            return w
        if suffix == "ogi" and not head.endswith("l"):
            return w
        if suffix == "li" and (not head or head[-1] not in VALID_LI):
            return w
        return head + repl
    return w


def _step3(w: str, r1: int, r2: int) -> str:
    for suffix, repl in STEP3:
        if not w.endswith(suffix):
            continue
        head = w[: -len(suffix)]
        if len(head) < r1 or (suffix == "ative" and len(head) < r2):
            return w
        return head + repl
    return w


def _step4(w: str, r2: int) -> str:
    for suffix in STEP4:
        if not w.endswith(suffix):
            continue
        head = w[: -len(suffix)]
        if len(head) < r2:
            return w
        if suffix == "ion" and not head.endswith(("s", "t")):
            return w
        return head
    return w


def _step5(w: str, r1: int, r2: int) -> str:
    if w.endswith("e"):
        head = w[:-1]
        if len(head) >= r2 or (len(head) >= r1 and not _short_syllable(head)):
            return head
    elif w.endswith("ll") and len(w) - 1 >= r2:
        return w[:-1]
    return w


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    """Stem a single lowercase-able token.

    Tokens containing anything other than ASCII letters and apostrophes are
    returned lowercased but otherwise untouched.
    """
    w = word.lower()
    if not _WORD.fullmatch(w):
        return w
    if w in EXCEPTIONS:
        return EXCEPTIONS[w]
    if len(w) < 3:
        return w
    w = _prelude(w)
    r1, r2 = _regions(w)
    w = _step1a(w)
    w = _step1b(w, r1)
    w = _step1c(w)
    w = _step2(w, r1)
    w = _step3(w, r1, r2)
    w = _step4(w, r2)
    w = _step5(w, r1, r2)
    return w.replace("Y", "y")


def stem_phrase(phrase: str) -> str:
    """Stem each word token of ``phrase`` and rejoin them with single spaces."""
    return " ".join(stem(tok) for tok in re.findall(r"\w+", phrase))
