import json
import math

import numpy as np
import pytest

from ragvqa.backends import MockBackend
from ragvqa.exceptions import (
    MalformedPayloadError,
    NotFoundError,
    ValidationError,
)
from ragvqa.retrieval import (
    DBPEDIA_SPARQL,
    WIKIPEDIA_API,
    WIKIPEDIA_SUMMARY,
    DiskCache,
    FixtureTransport,
    KnowledgeClient,
    KnowledgeDoc,
    RecordedTransport,
    build_query,
    dbpedia_sparql,
    detect_entity_labels,
    normalize_query,
    score_and_rank,
    sparql_escape,
)


class TestBuildQuery:
    def test_concatenates_question_draft_caption(self):
        q = build_query("what sport?", "motocross", "a motorcycle in dirt")
        assert q == "what sport? motocross a motorcycle in dirt"

    def test_empty_draft_and_caption(self):
        assert build_query("What   Sport? ", "", "") == "what sport?"

    def test_duplicate_words_dropped(self):
        q = build_query("what dog breed?", "dog", "a dog on grass")
        assert q == "what dog breed? a on grass"

    def test_deterministic(self):
        args = ("what is it?", "thing", "a thing here")
        assert build_query(*args) == build_query(*args)

    def test_empty_question_rejected(self):
        with pytest.raises(ValidationError):
            build_query("  ", "x", "y")


class TestEntityLabels:
    def test_mid_sentence_capitals_found(self):
        labels = detect_entity_labels("what city is the Eiffel Tower in?")
        assert labels == ["Eiffel Tower"]

    def test_sentence_initial_single_word_skipped(self):
        assert detect_entity_labels("What sport is this?") == []

    def test_multiword_initial_run_kept(self):
        assert detect_entity_labels("New York is big") == ["New York"]

    def test_dedup_and_limit(self):
        text = "is Paris near Paris or Lyon or Rome or Berlin?"
        assert detect_entity_labels(text) == ["Paris", "Lyon", "Rome"]


class TestSparqlBuilder:
    def test_plain_label_golden(self):
        assert dbpedia_sparql("Pizza") == (
            'SELECT ?abstract WHERE { ?s rdfs:label "Pizza"@en ; dbo:abstract '
            "?abstract . FILTER (lang(?abstract) = 'en') } LIMIT 1"
        )

    def test_quote_escaped(self):
        q = dbpedia_sparql('Joe "Hot Dog" Smith')
        assert 'rdfs:label "Joe \\"Hot Dog\\" Smith"@en' in q

    def test_backslash_escaped(self):
        q = dbpedia_sparql("a\\b")
        assert 'rdfs:label "a\\\\b"@en' in q

    def test_newline_and_tab_escaped(self):
        q = dbpedia_sparql("a\nb\tc")
        assert 'rdfs:label "a\\nb\\tc"@en' in q

    def test_empty_label_rejected(self):
        with pytest.raises(ValidationError):
            dbpedia_sparql("")

    def test_unescapable_control_char_rejected(self):
        with pytest.raises(ValidationError, match="control"):
            sparql_escape("bad\x01label")


class TestScoreAndRank:
    def _docs(self, scores, dim=2):
        docs = []
        for i, s in enumerate(scores):
            emb = np.zeros(dim)
            emb[0] = s
            docs.append(KnowledgeDoc(f"doc:{i:03d}", "wikipedia", f"t{i}", f"text {i}", emb))
        return docs

    def _query(self, dim=2):
        q = np.zeros(dim)
        q[0] = 1.0
        return q

    def test_equal_scores_uniform(self):
        rs = score_and_rank(self._query(), self._docs([2.0, 2.0, 2.0]), k=3)
        for sd in rs.docs:
            assert abs(sd.prob - 1 / 3) <= 1e-12
        assert [sd.doc.doc_id for sd in rs.docs] == ["doc:000", "doc:001", "doc:002"]

    def test_analytic_softmax(self):
        rs = score_and_rank(self._query(), self._docs([math.log(2.0), 0.0]), k=2)
        assert abs(rs.docs[0].prob - 2 / 3) <= 1e-9
        assert abs(rs.docs[1].prob - 1 / 3) <= 1e-9

    def test_k1_is_argmax(self):
        rs = score_and_rank(self._query(), self._docs([1.0, 2.0, 3.0]), k=1)
        assert len(rs.docs) == 1
        assert rs.docs[0].doc.doc_id == "doc:002"

    def test_probs_sum_to_one_after_truncation(self):
        rs = score_and_rank(self._query(), self._docs([0.3, -1.0, 2.5, 0.9]), k=2)
        assert abs(math.fsum(sd.prob for sd in rs.docs) - 1.0) <= 1e-9

    def test_shift_invariance(self):
        scores = [0.1, 1.4, -0.7]
        a = score_and_rank(self._query(), self._docs(scores), k=3)
        b = score_and_rank(self._query(), self._docs([s + 11.0 for s in scores]), k=3)
        for sa, sb in zip(a.docs, b.docs):
            assert abs(sa.prob - sb.prob) <= 1e-9

    def test_dim_mismatch_rejected(self):
        docs = self._docs([1.0], dim=3)
        with pytest.raises(ValidationError, match="dim"):
            score_and_rank(self._query(dim=2), docs, k=1)

    def test_empty_docs_rejected(self):
        with pytest.raises(ValidationError):
            score_and_rank(self._query(), [], k=1)


class TestDiskCache:
    def test_put_then_get_identical(self, tmp_path):
        cache = DiskCache(tmp_path)
        key = cache.make_key("wikipedia:search", "Hot  Dog")
        cache.put(key, '{"hello": 1}')
        entry = cache.get(key)
        assert entry.payload == '{"hello": 1}'
        assert entry.key == key

    def test_key_normalizes_query(self, tmp_path):
        cache = DiskCache(tmp_path)
        assert cache.make_key("s", "Hot  Dog") == cache.make_key("s", "hot dog")

    def test_absent_key_misses(self, tmp_path):
        assert DiskCache(tmp_path).get("0" * 64) is None

    def test_corrupt_entry_misses(self, tmp_path):
        cache = DiskCache(tmp_path)
        key = cache.make_key("s", "q")
        cache.put(key, "payload")
        (tmp_path / f"{key}.json").write_text("{broken", encoding="utf-8")
        assert cache.get(key) is None

    def test_payload_cap_enforced(self, tmp_path):
        cache = DiskCache(tmp_path, size_cap=4)
        with pytest.raises(ValidationError, match="cap"):
            cache.put("k" * 64, "too large")

    def test_persists_across_instances(self, tmp_path):
        key = DiskCache.make_key("s", "q")
        DiskCache(tmp_path).put(key, "kept")
        assert DiskCache(tmp_path).get(key).payload == "kept"


def search_payload(hits):
    return json.dumps({"query": {"search": [{"title": t, "snippet": s} for t, s in hits]}})


def recorded_client(tmp_path, responses, offline=False):
    transport = RecordedTransport(responses)
    client = KnowledgeClient(transport, DiskCache(tmp_path / "cache"), offline=offline)
    return client, transport


class TestWikipediaClient:
    def search_key(self, query, limit):
        params = {
            "action": "query", "format": "json", "list": "search",
            "srsearch": query, "srlimit": limit,
        }
        return RecordedTransport.key(WIKIPEDIA_API, params)

    def test_search_returns_stored_titles_in_order(self, tmp_path):
        hits = [("Hot dog", "snippet a"), ("Condiment", "snippet b")]
        client, _ = recorded_client(
            tmp_path, {self.search_key("hot dog condiments", 5): (200, search_payload(hits))}
        )
        assert client.wikipedia_search("hot dog condiments", 5) == hits

    def test_zero_hit_query_is_empty_not_error(self, tmp_path):
        client, _ = recorded_client(
            tmp_path, {self.search_key("zxqv", 5): (200, search_payload([]))}
        )
        assert client.wikipedia_search("zxqv", 5) == []

    def test_limit_one_truncates(self, tmp_path):
        hits = [("A", "sa"), ("B", "sb"), ("C", "sc")]
        client, _ = recorded_client(
            tmp_path, {self.search_key("multi", 1): (200, search_payload(hits))}
        )
        assert client.wikipedia_search("multi", 1) == [("A", "sa")]

    def test_malformed_search_payload_errors(self, tmp_path):
        client, _ = recorded_client(
            tmp_path, {self.search_key("bad", 5): (200, '{"unexpected": true}')}
        )
        with pytest.raises(MalformedPayloadError):
            client.wikipedia_search("bad", 5)

    def summary_key(self, title):
        return RecordedTransport.key(WIKIPEDIA_SUMMARY + title.replace(" ", "_"), None)

    def test_summary_verbatim(self, tmp_path):
        body = json.dumps({"title": "Hot dog", "extract": "A hot dog is a sausage dish."})
        client, _ = recorded_client(tmp_path, {self.summary_key("Hot dog"): (200, body)})
        assert client.wikipedia_summary("Hot dog") == "A hot dog is a sausage dish."

    def test_missing_page_raises_not_found_with_title(self, tmp_path):
        client, _ = recorded_client(tmp_path, {self.summary_key("Missing"): (404, "nope")})
        with pytest.raises(NotFoundError) as e:
            client.wikipedia_summary("Missing")
        assert e.value.title == "Missing"

    def test_search_rejects_bad_args(self, tmp_path):
        client, _ = recorded_client(tmp_path, {})
        with pytest.raises(ValidationError):
            client.wikipedia_search(" ", 5)
        with pytest.raises(ValidationError):
            client.wikipedia_search("q", 0)


class TestDbpediaClient:
    def key(self, label):
        params = {"query": dbpedia_sparql(label), "format": "application/sparql-results+json"}
        return RecordedTransport.key(DBPEDIA_SPARQL, params)

    def test_abstract_from_fixture(self, tmp_path):
        body = json.dumps({"results": {"bindings": [{"abstract": {"value": "Pizza is a dish."}}]}})
        client, _ = recorded_client(tmp_path, {self.key("Pizza"): (200, body)})
        assert client.dbpedia_abstract("Pizza") == "Pizza is a dish."

    def test_no_bindings_gives_none(self, tmp_path):
        body = json.dumps({"results": {"bindings": []}})
        client, _ = recorded_client(tmp_path, {self.key("Zxqv"): (200, body)})
        assert client.dbpedia_abstract("Zxqv") is None


class TestOfflineAndCache:
    def test_offline_miss_returns_empty_with_zero_calls(self, tmp_path):
        client, transport = recorded_client(tmp_path, {}, offline=True)
        assert client.wikipedia_search("anything", 5) == []
        assert transport.request_count == 0

    def test_cached_fetch_skips_transport(self, tmp_path):
        key = TestWikipediaClient().search_key("warm", 5)
        responses = {key: (200, search_payload([("T", "s")]))}
        client, transport = recorded_client(tmp_path, responses)
        client.wikipedia_search("warm", 5)
        assert transport.request_count == 1
        client.wikipedia_search("warm", 5)
        assert transport.request_count == 1  # second hit came from cache

    def test_warm_cache_then_offline_round_trip(self, tmp_path):
        key = TestWikipediaClient().search_key("warm", 5)
        responses = {key: (200, search_payload([("T", "s")]))}
        warm_client, warm_transport = recorded_client(tmp_path, responses)
        want = warm_client.wikipedia_search("warm", 5)
        offline_client, offline_transport = recorded_client(tmp_path, {}, offline=True)
        assert offline_client.wikipedia_search("warm", 5) == want
        assert offline_transport.request_count == 0

    def test_corrupt_cache_falls_back_to_live(self, tmp_path):
        key_url = TestWikipediaClient().search_key("broken", 5)
        responses = {key_url: (200, search_payload([("Live", "s")]))}
        client, transport = recorded_client(tmp_path, responses)
        cache_key = client.cache.make_key("wikipedia:search", "broken")
        (tmp_path / "cache" / f"{cache_key}.json").parent.mkdir(exist_ok=True)
        (tmp_path / "cache" / f"{cache_key}.json").write_text("garbage")
        assert client.wikipedia_search("broken", 5) == [("Live", "s")]
        assert transport.request_count == 1


class TestFixtureTransport:
    def test_deterministic_and_counted(self, tmp_path):
        t1 = FixtureTransport(seed=4)
        t2 = FixtureTransport(seed=4)
        params = {"action": "query", "format": "json", "list": "search",
                  "srsearch": "what sport", "srlimit": 5}
        assert t1.get(WIKIPEDIA_API, params) == t2.get(WIKIPEDIA_API, params)
        assert t1.request_count == 1

    def test_gather_produces_scoreable_docs(self, tmp_path):
        backend = MockBackend(seed=4, embedding_dim=16)
        client = KnowledgeClient(FixtureTransport(seed=4), DiskCache(tmp_path / "c"))
        docs = client.gather("what sport is Motocross", "what sport is Motocross?",
                             "a photo", backend.embed_text, pool_size=3)
        assert docs
        assert len({d.doc_id for d in docs}) == len(docs)
        rs = score_and_rank(backend.embed_text("what sport"), docs, k=2)
        assert len(rs.docs) == 2
        assert abs(math.fsum(sd.prob for sd in rs.docs) - 1.0) <= 1e-9


class TestNormalizeQuery:
    def test_lowercase_and_collapse(self):
        assert normalize_query("  Hot   DOG ") == "hot dog"


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


class FakeResponse:
    def __init__(self, status_code, text=""):
        self.status_code = status_code
        self.text = text


class TestHttpTransport:
    def make(self, responses):
        from ragvqa.retrieval import HttpTransport

        clock = FakeClock()
        transport = HttpTransport(min_interval=0.1, attempts=3,
                                  sleep=clock.sleep, clock=clock)
        calls = []

        class StubSession:
            def get(self, url, params=None, timeout=None):
                calls.append(url)
                item = responses.pop(0)
                if isinstance(item, Exception):
                    raise item
                return item

        transport.session = StubSession()
        return transport, clock, calls

    def test_spacing_between_calls_to_same_host(self):
        transport, clock, _ = self.make([FakeResponse(200, "a"), FakeResponse(200, "b")])
        transport.get("http://h/x")
        transport.get("http://h/y")
        assert clock.sleeps and clock.sleeps[0] <= 0.1

    def test_retries_server_errors_with_backoff(self):
        transport, clock, calls = self.make(
            [FakeResponse(500), FakeResponse(503), FakeResponse(200, "ok")]
        )
        status, body = transport.get("http://h/x")
        assert (status, body) == (200, "ok")
        assert len(calls) == 3
        assert 0.5 in clock.sleeps and 1.0 in clock.sleeps

    def test_gives_up_after_attempts(self):
        import requests

        from ragvqa.retrieval import TransportError

        transport, _, calls = self.make(
            [requests.ConnectionError("x")] * 3
        )
        with pytest.raises(TransportError, match="3 attempts"):
            transport.get("http://h/x")
        assert len(calls) == 3
        assert transport.request_count == 3

    def test_404_returned_without_retry(self):
        transport, _, calls = self.make([FakeResponse(404, "missing")])
        assert transport.get("http://h/x") == (404, "missing")
        assert len(calls) == 1
