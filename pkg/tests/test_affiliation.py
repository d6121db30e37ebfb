import json

import httpx
import pytest

from dyadex.affiliation import (
    CachedGeocoder,
    GeocoderError,
    NominatimGeocoder,
    affiliate,
    affiliation_prompt,
    capitalized_spans,
    default_gazetteer,
    detect_rebel_group,
    find_country_mentions,
    load_gazetteer,
    make_geocoder,
    resolve_affiliation,
)
from dyadex.gateway import MCConfig, Purpose
from dyadex.types import DyadicArguments, Sentence
from conftest import DATA, make_gateway

GAZ = default_gazetteer()
FIG1 = Sentence(
    "fig:0",
    "French customs police mauled Mohsen Aminzadeh, a deputy foreign minister of Iran, at the Paris airport.",
)
THREE = MCConfig(0.0, 3)


# ------------------------------------------------------------------ gazetteer


@pytest.mark.parametrize("surface,code", [
    ("france", "FRA"), ("French", "FRA"), ("Attorney General", "USA"), ("Secretary General", "USA"),
    ("United States", "USA"), ("U.S.", "USA"), ("US", "USA"), ("Soviet Union", "SUN"), ("Moscow", "SUN"),
    ("Russia", "RUS"), ("Iranian", "IRN"), ("Contra", None), ("Atlantis", None), ("us", None),
])
def test_spot_entries(surface, code):
    assert GAZ.lookup(surface) == code


def test_us_extensions_are_optional():
    plain = default_gazetteer(with_us_extensions=False)
    assert plain.lookup("Attorney General") is None
    assert plain.lookup("France") == "FRA"


def test_display_names():
    assert GAZ.name("FRA") == "France"
    assert GAZ.name("USA") == "United States"
    assert GAZ.name("SUN") == "USSR"


def test_every_code_has_a_name():
    assert set(GAZ.entries.values()) <= set(GAZ.code_names)


def test_longest_match_wins():
    spans = [(GAZ.scan(t)[0][2].code, t[s:e]) for t in ["South Korean troops"] for s, e, _ in GAZ.scan(t)]
    assert spans == [("KOR", "South Korean")]


def test_common_nouns_do_not_match():
    assert GAZ.scan("They ate turkey in chad-coloured rooms and told us.") == []


def test_load_gazetteer_and_malformed_line(tmp_path):
    names = tmp_path / "country_names.tsv"
    names.write_text("FRA\tFrance\tFR\nUSA\tUnited States\tUS\n")
    ok = tmp_path / "g.tsv"
    ok.write_text("# comment\nfrance\tFRA\nfrench\tFRA\n")
    ext = tmp_path / "ext.tsv"
    ext.write_text("Attorney General\tUSA\n")
    g = load_gazetteer(ok, extensions_path=ext)
    assert g.lookup("French") == "FRA" and g.lookup("attorney general") == "USA"
    assert g.lookup("Germany") is None
    bad = tmp_path / "bad.tsv"
    bad.write_text("france\tFRA\nfrench FRA\n")
    with pytest.raises(ValueError, match=r"bad\.tsv:2"):
        load_gazetteer(bad, names_path=names)


# ------------------------------------------------------------------- mentions


def test_running_example_mentions():
    got = [(m.surface, m.country_code, m.source) for m in find_country_mentions(FIG1, GAZ)]
    assert got == [("French", "FRA", "gazetteer"), ("Iran", "IRN", "gazetteer")]


def test_geocoded_mention():
    geo = CachedGeocoder({"Paris": [{"country_code": "fr"}, {"country_code": "us"}]})
    (m,) = find_country_mentions(Sentence("g:0", "Paris welcomed the delegation."), GAZ, geo)
    assert (m.surface, m.country_code, m.source, m.start, m.end) == ("Paris", "FRA", "geocoded", 0, 5)


def test_no_locations():
    geo = CachedGeocoder({})
    assert find_country_mentions(Sentence("n:0", "the man left early."), GAZ, geo) == []


def test_gazetteer_spans_beat_geocoder_spans():
    geo = CachedGeocoder({"Iran": [{"country_code": "us"}], "Mohsen Aminzadeh": [{"country_code": "ir"}]})
    got = [(m.surface, m.country_code) for m in find_country_mentions(FIG1, GAZ, geo)]
    assert got == [("French", "FRA"), ("Mohsen Aminzadeh", "IRN"), ("Iran", "IRN")]


class FailingGeocoder:
    def lookup(self, query):
        raise GeocoderError("service down")


def test_geocoder_failure_keeps_gazetteer_results(caplog):
    got = find_country_mentions(Sentence("p:0", "Paris and Iran agreed."), GAZ, FailingGeocoder())
    assert [m.country_code for m in got] == ["IRN"]
    assert "geocoding skipped" in caplog.text


def test_capitalized_spans():
    text = "The delegates from Costa Rica met in San Jose on Monday."
    assert [text[s:e] for s, e in capitalized_spans(text)] == ["Costa Rica", "San Jose", "Monday"]
    text = "Paris said no."
    assert [text[s:e] for s, e in capitalized_spans(text)] == ["Paris"]


def _fixture():
    return [json.loads(line) for line in (DATA / "mentions.jsonl").read_text().splitlines() if line.strip()]


def test_labeled_multicountry_fixture_is_fully_recovered():
    geo = CachedGeocoder.from_file(DATA / "mention_geocoder.json")
    rows = _fixture()
    assert len(rows) == 25
    assert all(len({code for _, code in r["mentions"]}) > 1 for r in rows)
    hits = sum(
        [[m.surface, m.country_code] for m in find_country_mentions(Sentence(r["id"], r["text"]), GAZ, geo)]
        == r["mentions"]
        for r in rows
    )
    assert hits / len(rows) == 1.0


def test_mentions_are_pure_without_geocoder():
    s = Sentence("x:0", "Iraqi and Iranian envoys met in Geneva.")
    assert find_country_mentions(s, GAZ) == find_country_mentions(s, GAZ)


def test_make_geocoder_modes(tmp_path):
    assert make_geocoder("off") is None
    path = tmp_path / "geo.json"
    path.write_text(json.dumps({"Mosul": [{"country_code": "iq"}]}))
    assert make_geocoder("cache", path).lookup("mosul") == ["IQ"]
    with pytest.raises(ValueError):
        make_geocoder("cache")
    with pytest.raises(ValueError):
        make_geocoder("sometimes")


def test_nominatim_client_caches_to_disk(tmp_path):
    seen = []

    def handler(request):
        seen.append(dict(request.url.params))
        return httpx.Response(200, json=[{"address": {"country_code": "iq"}}, {"address": {}}])

    cache = tmp_path / "geo.json"
    client = httpx.Client(transport=httpx.MockTransport(handler))
    geo = NominatimGeocoder(cache, client=client)
    assert geo.lookup("Mosul") == ["IQ"]
    assert geo.lookup("Mosul") == ["IQ"]
    assert len(seen) == 1 and seen[0]["q"] == "Mosul" and seen[0]["format"] == "json"
    assert json.loads(cache.read_text()) == {"Mosul": [{"country_code": "iq"}]}
    # a fresh instance answers from the file without the network
    offline = NominatimGeocoder(cache, client=httpx.Client(transport=httpx.MockTransport(lambda r: 1 / 0)))
    assert offline.lookup("Mosul") == ["IQ"]


def test_nominatim_http_error_is_a_geocoder_error():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503)))
    with pytest.raises(GeocoderError):
        NominatimGeocoder(client=client).lookup("Mosul")


# ------------------------------------------------------------------ rebels


@pytest.mark.parametrize("span,flag", [
    ("Contra rebels", True), ("the insurgency", True), ("Rebel forces", True), ("Kurdish insurgents", True),
    ("customs police", False), ("Zebras", False), ("the rebuttal", False),
])
def test_rebel_flag(span, flag):
    assert detect_rebel_group(span) is flag


# ------------------------------------------------------------- affiliation


def test_affiliation_prompt():
    assert affiliation_prompt("T.", "Mohsen Aminzadeh", "Iran").text == (
        "T.\nIn the text, is Mohsen Aminzadeh affiliated with Iran?"
    )


def test_containment_needs_no_query():
    gw = make_gateway("unused")
    mentions = find_country_mentions(FIG1, GAZ)
    assert resolve_affiliation(gw, FIG1.text, "the French customs police", mentions, GAZ, THREE) == "FRA"
    assert len(gw.ledger) == 0


def test_first_yes_in_mention_order():
    gw = make_gateway([{"pattern": "affiliated with France", "response": "No"},
                       {"pattern": "affiliated with Iran", "response": "Yes"}])
    mentions = find_country_mentions(FIG1, GAZ)
    assert resolve_affiliation(gw, FIG1.text, "Mohsen Aminzadeh", mentions, GAZ, THREE) == "IRN"
    assert gw.ledger.count(Purpose.AFFILIATION) == 6


def test_no_mentions_no_affiliation():
    gw = make_gateway("Yes")
    assert resolve_affiliation(gw, "Someone left.", "Someone", [], GAZ, THREE) is None
    assert len(gw.ledger) == 0


def test_backend_failure_skips_to_next_mention():
    gw = make_gateway([{"pattern": "affiliated with Iran", "response": "Yes"}])  # France is unscripted
    from dyadex.gateway import Gateway
    from test_detection import Broken

    class HalfBroken:
        backend_id, model = "half", ""

        def generate(self, prompt, temperature, idx):
            if "France" in prompt:
                return Broken().generate(prompt, temperature, idx)
            return gw.backend.generate(prompt, temperature, idx)

    g = Gateway(HalfBroken(), sleep=lambda s: None)
    mentions = find_country_mentions(FIG1, GAZ)
    assert resolve_affiliation(g, FIG1.text, "Mohsen Aminzadeh", mentions, GAZ, THREE) == "IRN"


CONTRA = Sentence("c:0", "Washington sent aid to the Contra rebels fighting the government of Nicaragua.")


def test_affiliate_labels_and_rebels():
    pairs = [
        DyadicArguments("fig:0", "injure", "mauled", 4, "customs police", "Mohsen Aminzadeh", FIG1.text),
        DyadicArguments("c:0", "aid", "aid", 2, "Washington", "the Contra rebels", CONTRA.text),
        DyadicArguments("c:0", "aid", "sent", 1, "someone", "nobody", CONTRA.text),
    ]
    rules = [
        {"pattern": "is customs police affiliated with France", "response": "Yes"},
        {"pattern": "is Mohsen Aminzadeh affiliated with France", "response": "No"},
        {"pattern": "is Mohsen Aminzadeh affiliated with Iran", "response": "Yes"},
        {"pattern": "is Washington affiliated with United States", "response": "Yes"},
        {"pattern": "is the Contra rebels affiliated with Nicaragua", "response": "Yes"},
        {"pattern": ".", "response": "No"},
    ]
    geo = CachedGeocoder({"Washington": [{"country_code": "us"}]})
    out = affiliate(make_gateway(rules), pairs, [FIG1, CONTRA], GAZ, geo, THREE, workers=3)
    got = [(a.pair.sentence_id, a.h1, a.h2, a.rebel1, a.rebel2) for a in out]
    assert got == [
        ("c:0", None, None, False, False),
        ("c:0", "United States", "Nicaragua (rebels)", False, True),
        ("fig:0", "France", "Iran", False, False),
    ]


def test_rebel_label_requires_a_country():
    pair = DyadicArguments("r:0", "attack", "attacked", 1, "rebels", "a post", "rebels attacked a post.")
    (a,) = affiliate(make_gateway("Yes"), [pair], [Sentence("r:0", pair.source_span)], GAZ)
    assert (a.h1, a.h2, a.rebel1) == (None, None, False)
