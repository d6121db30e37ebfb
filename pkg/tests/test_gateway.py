import hashlib
import json
import random

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from dyadex.gateway import (
    BOOLEAN_MC,
    Gateway,
    HTTPBackend,
    MCConfig,
    MockBackend,
    Prompt,
    ProtocolError,
    Purpose,
    QueryLedger,
    ResponseCache,
    RetriableBackendError,
    ScriptError,
    TransportError,
    parse_bool,
    parse_bullets,
    unanimity_proportion,
    vote_rule,
)
from conftest import make_gateway

P = Prompt("List synonyms of 'attack' in bullet points.", Purpose.SYNONYM)
Q = Prompt("Is this an attack?", Purpose.DISAMBIGUATION)


# ---------------------------------------------------------------- records


def test_prompt_rejects_empty_text():
    with pytest.raises(ValueError):
        Prompt("   ", Purpose.SYNONYM)


def test_prompt_digest_is_sha256_of_text():
    assert P.digest == hashlib.sha256(P.text.encode()).hexdigest()


@pytest.mark.parametrize("kw", [{"temperature": -0.1}, {"temperature": 2.5}, {"samples": 0},
                                {"vote_threshold": 0.5}, {"vote_threshold": 1.2}])
def test_mcconfig_validation(kw):
    with pytest.raises(ValueError):
        MCConfig(**kw)


def test_mcconfig_round_trip():
    cfg = MCConfig(0.67, 70, 0.6)
    assert MCConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- parsers


def test_parse_bullets_accepts_common_markers():
    text = "Sure:\n- Assault\n* raid.\n• \"strike\"\n1. bomb\n2) Ambush!\nthanks"
    assert parse_bullets(text) == ["assault", "raid", "strike", "bomb", "ambush"]


def test_parse_bullets_keeps_case_on_request():
    assert parse_bullets("- Gunmen attacked", lowercase=False) == ["Gunmen attacked"]


def test_parse_bullets_raises_without_items():
    with pytest.raises(ValueError):
        parse_bullets("hurt, wound, harm")


@pytest.mark.parametrize("text,expected", [("Yes", "yes"), ("yes.", "yes"), ("  NO, it does not", "no"),
                                           ("No.", "no"), ("Maybe", None), ("Yesterday", None), ("", None)])
def test_parse_bool(text, expected):
    assert parse_bool(text) == expected


# ----------------------------------------------------------- mock backend


def test_mock_backend_rules_and_cycling():
    b = MockBackend([
        {"prompt": "exact", "responses": ["a", "b"]},
        {"pattern": "^pin", "sample_index": 1, "response": "pinned"},
        {"pattern": "^pin", "response": "other"},
    ])
    assert b.generate("exact", 0.0, [0, 1, 2]) == ["a", "b", "a"]
    assert b.generate("pin me", 0.0, [0, 1]) == ["other", "pinned"]
    with pytest.raises(ScriptError):
        b.generate("unscripted", 0.0, [0])


def test_mock_backend_rejects_malformed_rules():
    with pytest.raises(ScriptError):
        MockBackend([{"pattern": "x"}])
    with pytest.raises(ScriptError):
        MockBackend([{"pattern": "x", "prompt": "x", "response": "y"}])


def test_mock_backend_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"model": "m", "rules": [{"pattern": ".", "response": "Yes"}]}))
    b = MockBackend.from_file(path)
    assert b.model == "m" and b.generate("q", 0, [0]) == ["Yes"]
    path.write_text(json.dumps([{"pattern": ".", "response": "No"}]))
    assert MockBackend.from_file(path).generate("q", 0, [0]) == ["No"]


# ------------------------------------------------------------ cache/ledger


def test_cache_key_is_content_addressed():
    expected = hashlib.sha256(json.dumps(["mock", "m", "p", 0.67, 3]).encode()).hexdigest()
    assert ResponseCache.key("mock", "m", "p", 0.67, 3) == expected
    assert ResponseCache.key("mock", "m", "p", 0.670000001, 3) == expected
    assert ResponseCache.key("mock", "m", "p", 0.67, 4) != expected


def test_cache_hits_are_ledgered_and_skip_backend(tmp_path):
    gw = make_gateway("- a\n- b", cache_dir=tmp_path)
    cfg = MCConfig(0.5, 4)
    gw.complete(P, cfg)
    assert gw.backend.calls == 1
    gw.complete(P, cfg)
    assert gw.backend.calls == 1
    assert gw.ledger.count(Purpose.SYNONYM) == 8
    assert gw.ledger.count(cache_hit=True) == 4
    # a fresh gateway over the same directory is served from disk
    gw2 = make_gateway("something else", cache_dir=tmp_path)
    assert gw2.complete(P, cfg).raw_texts == ["- a\n- b"] * 4
    assert gw2.backend.calls == 0
    key = ResponseCache.key("mock", "scripted", P.text, 0.5, 0)
    assert (tmp_path / key[:2] / key).read_text() == "- a\n- b"


def test_partial_cache_requests_only_missing_samples():
    gw = make_gateway([{"pattern": ".", "responses": ["x0", "x1", "x2", "x3", "x4"]}])
    gw.complete(P, MCConfig(0.7, 2))
    batch = gw.complete(P, MCConfig(0.7, 5))
    assert batch.raw_texts == ["x0", "x1", "x2", "x3", "x4"]
    assert [e.cache_hit for e in gw.ledger.entries[2:]] == [True, True, False, False, False]


def test_ledger_entry_fields_and_round_trip(tmp_path):
    gw = make_gateway("Yes")
    gw.mc_vote(Q, MCConfig(0.0, 3))
    e = gw.ledger.entries[0]
    assert (e.purpose, e.prompt_hash, e.sample_index, e.cache_hit) == ("disambiguation", Q.digest, 0, False)
    gw.ledger.save(tmp_path / "l.jsonl")
    assert QueryLedger.load(tmp_path / "l.jsonl").entries == gw.ledger.entries


# ------------------------------------------------------------------ retries


class Flaky:
    backend_id = "flaky"
    model = "m"

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def generate(self, prompt, temperature, sample_indices):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("boom")
        return ["Yes"] * len(sample_indices)


def test_transport_errors_are_retried_with_backoff():
    delays = []
    gw = Gateway(Flaky(2), sleep=delays.append, backoff=0.5)
    assert gw.mc_vote(Q, MCConfig(0, 3)).verdict
    assert delays == [0.5, 1.0]


def test_retries_exhausted_raise_with_partial_batch():
    cache = ResponseCache()
    gw = Gateway(Flaky(99), cache=cache, sleep=lambda s: None)
    cache.put(ResponseCache.key("flaky", "m", Q.text, 0.0, 0), "No")
    with pytest.raises(RetriableBackendError) as info:
        gw.complete(Q, MCConfig(0, 3))
    assert info.value.partial == ["No"]
    assert gw.backend.calls == 3


def test_wrong_sample_count_is_protocol_error():
    class Short:
        backend_id, model = "short", ""

        def generate(self, prompt, temperature, idx):
            return ["Yes"]

    with pytest.raises(ProtocolError):
        Gateway(Short()).complete(Q, MCConfig(0, 2))


# --------------------------------------------------------------- MC union


def brute_force_union(responses):
    seen = []
    for r in responses:
        for line in r.splitlines():
            item = line[2:].strip().lower()
            if item not in seen:
                seen.append(item)
    return set(seen)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_mc_union_matches_brute_force(data):
    vocab = ["hurt", "wound", "harm", "maim", "maul", "injure", "batter", "bruise"]
    y = data.draw(st.integers(1, 70))
    draws = data.draw(st.lists(st.lists(st.sampled_from(vocab), min_size=1, max_size=5), min_size=y, max_size=y))
    responses = ["\n".join(f"- {w}" for w in d) for d in draws]
    gw = make_gateway([{"pattern": ".", "responses": responses}])
    trace = gw.mc_union_trace(P, MCConfig(0.67, y))
    assert trace.items == brute_force_union(responses)
    assert len(trace.cumulative_sizes) == y
    assert all(a <= b for a, b in zip(trace.cumulative_sizes, trace.cumulative_sizes[1:]))
    assert trace.cumulative_sizes[-1] == len(trace.items)


def test_mc_union_skips_unparseable_samples():
    gw = make_gateway([{"pattern": ".", "responses": ["- a", "no list here", "- b"]}])
    trace = gw.mc_union_trace(P, MCConfig(0.67, 3))
    assert trace.items == {"a", "b"} and trace.parse_failures == 1
    assert trace.cumulative_sizes == [1, 1, 2]


def test_cumulative_curve_is_monotone():
    rng = random.Random(7)
    responses = ["\n".join(f"- w{rng.randrange(30)}" for _ in range(3)) for _ in range(40)]
    gw = make_gateway([{"pattern": ".", "responses": responses}])
    curve = gw.cumulative_curve(P, 0.67, 40)
    assert curve == sorted(curve) and curve[-1] <= 30


# ------------------------------------------------------------------- votes


def oracle_vote(yes, no, threshold=None):
    if yes + no == 0:
        return False
    if threshold is None:
        return 2 * yes > yes + no
    return yes >= threshold * (yes + no)


@pytest.mark.parametrize("threshold", [None, 0.6, 2 / 3, 1.0])
def test_vote_rule_over_all_small_tallies(threshold):
    for yes in range(16):
        for no in range(16 - yes):
            for unparseable in (0, 1, 3):
                n = yes + no + unparseable
                if n == 0:
                    continue
                answers = ["Yes"] * yes + ["No"] * no + ["maybe"] * unparseable
                random.Random(n).shuffle(answers)
                gw = make_gateway([{"pattern": ".", "responses": answers}])
                r = gw.mc_vote(Q, MCConfig(0.0, n, threshold))
                assert r.verdict == oracle_vote(yes, no, threshold)
                assert r.tally == (yes, no, unparseable)
                assert r.all_unparseable == (yes + no == 0)


def test_tie_is_false():
    assert vote_rule(3, 3) is False
    assert vote_rule(4, 3) is True
    assert vote_rule(0, 0) is False


def test_unanimity_proportion():
    gw = make_gateway([
        {"pattern": "^a", "response": "Yes"},
        {"pattern": "^b", "responses": ["Yes", "No"]},
        {"pattern": "^c", "response": "No."},
    ])
    for t in "abc":
        gw.mc_vote(Prompt(t, Purpose.DISAMBIGUATION), BOOLEAN_MC)
    gw.mc_vote(Prompt("a single", Purpose.DISAMBIGUATION), MCConfig(0, 1))
    assert unanimity_proportion(gw.ledger, gw.cache) == pytest.approx(2 / 3)


# -------------------------------------------------------------------- HTTP


def _transport(handler):
    return httpx.MockTransport(handler)


def test_http_backend_chat_payload():
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content))
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": f"r{i}"}} for i in range(seen["n"])]})

    b = HTTPBackend("http://lm.test/v1/", "m1", token="t", transport=_transport(handler))
    assert b.generate("hello", 0.67, [3, 4]) == ["r0", "r1"]
    assert seen["url"] == "http://lm.test/v1/chat/completions"
    assert seen["messages"] == [{"role": "user", "content": "hello"}]
    assert (seen["model"], seen["temperature"], seen["n"], seen["auth"]) == ("m1", 0.67, 2, "Bearer t")


def test_http_backend_completion_api():
    def handler(request):
        body = json.loads(request.content)
        assert body["prompt"] == "p" and request.url.path.endswith("/completions")
        return httpx.Response(200, json={"choices": [{"text": "Yes"}]})

    assert HTTPBackend("http://x", "m", api="completion", transport=_transport(handler)).generate("p", 0, [0]) == ["Yes"]


@pytest.mark.parametrize("status,error", [(429, TransportError), (503, TransportError), (400, ProtocolError)])
def test_http_status_mapping(status, error):
    b = HTTPBackend("http://x", "m", transport=_transport(lambda r: httpx.Response(status, text="err")))
    with pytest.raises(error):
        b.generate("p", 0, [0])


def test_http_malformed_payload():
    b = HTTPBackend("http://x", "m", transport=_transport(lambda r: httpx.Response(200, json={"nope": 1})))
    with pytest.raises(ProtocolError):
        b.generate("p", 0, [0])


def test_http_connection_error_is_transport_error():
    def handler(request):
        raise httpx.ConnectError("refused")

    b = HTTPBackend("http://x", "m", transport=_transport(handler))
    with pytest.raises(TransportError):
        b.generate("p", 0, [0])
