"""External-knowledge retrieval: Wikipedia/DBpedia clients, disk cache,
dual-encoder scoring and top-k selection.

All fetching goes through a Transport that counts requests, so offline
determinism (zero live calls with a warm cache) is checkable.
"""

import hashlib
import json
import logging
import math
import os
import re
import time
import urllib.parse
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .backends import DEFAULT_VOCAB
from .exceptions import (
    MalformedPayloadError,
    NotFoundError,
    RetrievalError,
    ValidationError,
)
from .hashing import mix, text_key

logger = logging.getLogger(__name__)

WIKIPEDIA_API = "https://en.wikipedia.org/w/api.php"
WIKIPEDIA_SUMMARY = "https://en.wikipedia.org/api/rest_v1/page/summary/"
DBPEDIA_SPARQL = "https://dbpedia.org/sparql"

DEFAULT_CACHE_CAP = 1 << 20  # bytes per cached payload


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str  # source-qualified, e.g. "wiki:Hot_dog"
    source: str  # "wikipedia" | "dbpedia"
    title: str
    text: str
    embedding: np.ndarray

    def __post_init__(self):
        if not self.text:
            raise ValidationError(f"doc {self.doc_id}: empty text")


@dataclass(frozen=True)
class ScoredDoc:
    doc: KnowledgeDoc
    raw_score: float
    prob: float


@dataclass(frozen=True)
class RetrievalSet:
    query_key: str
    docs: tuple[ScoredDoc, ...]  # prob descending, ties by doc_id ascending
    k: int

    def max_prob(self) -> float:
        return self.docs[0].prob if self.docs else 0.0


@dataclass(frozen=True)
class CacheEntry:
    key: str
    fetched_at: str
    payload: str


# ---------------------------------------------------------------------------
# query construction

def build_query(question: str, draft_answer: str, caption: str) -> str:
    """Lowercased concatenation of question, draft answer and caption words
    with later duplicate words dropped."""
    if not question.strip():
        raise ValidationError("question must be non-empty")
    seen = set()
    out = []
    for part in (question, draft_answer, caption):
        for word in part.lower().split():
            if word not in seen:
                seen.add(word)
                out.append(word)
    return " ".join(out)


def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


_CAP_WORD = re.compile(r"^[A-Z][A-Za-z'\-]*$")


def detect_entity_labels(text: str, limit: int = 3) -> list[str]:
    """Capitalized-word runs used as DBpedia lookup labels.

    A run starting at the very first word only counts when it spans more
    than one word, which drops sentence-initial capitalization.
    """
    words = text.split()
    runs = []
    current: list[str] = []
    start = 0
    for i, w in enumerate(words):
        stripped = w.strip(".,!?;:()\"'")
        if stripped and _CAP_WORD.match(stripped):
            if not current:
                start = i
            current.append(stripped)
        else:
            if current and (start > 0 or len(current) > 1):
                runs.append(" ".join(current))
            current = []
    if current and (start > 0 or len(current) > 1):
        runs.append(" ".join(current))
    seen = set()
    labels = []
    for r in runs:
        if r not in seen:
            seen.add(r)
            labels.append(r)
    return labels[:limit]


# ---------------------------------------------------------------------------
# SPARQL builder

_SPARQL_ESCAPES = {
    "\\": "\\\\",
    '"': '\\"',
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
    "\b": "\\b",
    "\f": "\\f",
}


def sparql_escape(label: str) -> str:
    out = []
    for ch in label:
        if ch in _SPARQL_ESCAPES:
            out.append(_SPARQL_ESCAPES[ch])
        elif ord(ch) < 0x20:
            raise ValidationError(f"label contains unescapable control character {ch!r}")
        else:
            out.append(ch)
    return "".join(out)


def dbpedia_sparql(entity_label: str) -> str:
    """English-abstract lookup query for a label, byte-stable."""
    if not entity_label:
        raise ValidationError("entity label must be non-empty")
    escaped = sparql_escape(entity_label)
    return (
        "SELECT ?abstract WHERE { ?s rdfs:label \"%s\"@en ; dbo:abstract ?abstract . "
        "FILTER (lang(?abstract) = 'en') } LIMIT 1" % escaped
    )


# ---------------------------------------------------------------------------
# transports

class TransportError(RetrievalError):
    """Live fetch failed after retries; safe to retry later."""


class Transport:
    """Request/response transport with a call counter."""

    def __init__(self):
        self.request_count = 0

    def get(self, url: str, params: dict | None = None) -> tuple[int, str]:
        raise NotImplementedError


class HttpTransport(Transport):
    """Live HTTP transport: polite spacing per host plus retry backoff."""

    def __init__(self, min_interval: float = 0.1, attempts: int = 3,
                 timeout: float = 30.0, sleep=time.sleep, clock=time.monotonic):
        super().__init__()
        self.min_interval = min_interval
        self.attempts = attempts
        self.timeout = timeout
        self._sleep = sleep
        self._clock = clock
        self._last_call: dict[str, float] = {}
        import requests

        self.session = requests.Session()
        self.session.headers["User-Agent"] = "ragvqa/0.1 (research pipeline)"

    def _throttle(self, host: str):
        last = self._last_call.get(host)
        now = self._clock()
        if last is not None and now - last < self.min_interval:
            self._sleep(self.min_interval - (now - last))
        self._last_call[host] = self._clock()

    def get(self, url: str, params: dict | None = None) -> tuple[int, str]:
        import requests

        host = urllib.parse.urlparse(url).netloc
        delay = 0.5
        last_error = None
        for attempt in range(self.attempts):
            self._throttle(host)
            self.request_count += 1
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
                if resp.status_code >= 500:
                    last_error = f"server error {resp.status_code}"
                else:
                    return resp.status_code, resp.text
            except requests.RequestException as e:
                last_error = str(e)
            if attempt < self.attempts - 1:
                self._sleep(delay)
                delay *= 2
        raise TransportError(f"GET {url} failed after {self.attempts} attempts: {last_error}")


class FixtureTransport(Transport):
    """Deterministic offline stand-in for the live endpoints.

    Responses are synthesized from the request itself via the 64-bit
    mixer, mirroring how the mock backend stands in for the models.  Used
    by tests and desk-scale cache warming; not a claim about real content.
    """

    def __init__(self, seed: int = 0, hits_per_query: int = 5):
        super().__init__()
        self.seed = seed
        self.hits_per_query = hits_per_query

    def _word(self, *parts: int) -> str:
        return DEFAULT_VOCAB[mix(self.seed, *parts) % len(DEFAULT_VOCAB)]

    def _extract_for(self, title: str) -> str:
        k = text_key(title)
        return "{} is a {} commonly associated with {} and {}.".format(
            title, self._word(k, 1), self._word(k, 2), self._word(k, 3)
        )

    def get(self, url: str, params: dict | None = None) -> tuple[int, str]:
        self.request_count += 1
        params = params or {}
        if url.startswith(WIKIPEDIA_API) or "w/api.php" in url:
            query = str(params.get("srsearch", ""))
            qk = text_key(normalize_query(query))
            hits = []
            for i in range(self.hits_per_query):
                title = "{} {}".format(
                    self._word(qk, i, 10).capitalize(), self._word(qk, i, 20).capitalize()
                )
                hits.append({"title": title, "snippet": self._word(qk, i, 30)})
            return 200, json.dumps({"query": {"search": hits}})
        if "/page/summary/" in url:
            title = urllib.parse.unquote(url.rsplit("/", 1)[1]).replace("_", " ")
            return 200, json.dumps({"title": title, "extract": self._extract_for(title)})
        if "sparql" in url:
            m = re.search(r'rdfs:label "((?:[^"\\]|\\.)*)"@en', str(params.get("query", "")))
            label = m.group(1) if m else "thing"
            binding = {"abstract": {"value": self._extract_for(label)}}
            return 200, json.dumps({"results": {"bindings": [binding]}})
        return 404, "not found"


class RecordedTransport(Transport):
    """Plays back canned (status, body) responses keyed by URL + params."""

    def __init__(self, responses: dict[str, tuple[int, str]]):
        super().__init__()
        self.responses = responses

    @staticmethod
    def key(url: str, params: dict | None = None) -> str:
        canon = json.dumps(params or {}, sort_keys=True)
        return f"{url}|{canon}"

    def get(self, url: str, params: dict | None = None) -> tuple[int, str]:
        self.request_count += 1
        key = self.key(url, params)
        if key not in self.responses:
            raise TransportError(f"no recorded response for {key}")
        return self.responses[key]


# ---------------------------------------------------------------------------
# disk cache

class DiskCache:
    """One JSON record file per key; atomic writes, corrupt entries miss."""

    def __init__(self, cache_dir: str | Path, size_cap: int = DEFAULT_CACHE_CAP):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.size_cap = size_cap

    @staticmethod
    def make_key(source: str, query: str) -> str:
        raw = f"{source}\n{normalize_query(query)}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> CacheEntry | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            rec = json.loads(path.read_text(encoding="utf-8"))
            return CacheEntry(rec["key"], rec["fetched_at"], rec["payload"])
        except (json.JSONDecodeError, KeyError, TypeError, OSError) as e:
            logger.warning("corrupt cache entry %s dropped: %s", key, e)
            return None

    def put(self, key: str, payload: str) -> CacheEntry:
        if len(payload.encode("utf-8")) > self.size_cap:
            raise ValidationError(f"cache payload exceeds cap of {self.size_cap} bytes")
        entry = CacheEntry(
            key=key,
            fetched_at=datetime.now(timezone.utc).isoformat(),
            payload=payload,
        )
        path = self._path(key)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps({"key": entry.key, "fetched_at": entry.fetched_at,
                        "payload": entry.payload}),
            encoding="utf-8",
        )
        os.replace(tmp, path)
        return entry


# ---------------------------------------------------------------------------
# knowledge clients

class KnowledgeClient:
    """Cached access to Wikipedia search/summary and DBpedia abstracts."""

    def __init__(self, transport: Transport, cache: DiskCache, offline: bool = False):
        self.transport = transport
        self.cache = cache
        self.offline = offline

    def _fetch(self, source: str, query: str, url: str, params: dict | None) -> str | None:
        key = self.cache.make_key(source, query)
        entry = self.cache.get(key)
        if entry is not None:
            return entry.payload
        if self.offline:
            logger.info("offline: cache miss for %s %r", source, query)
            return None
        status, body = self.transport.get(url, params)
        if status == 404:
            raise NotFoundError(query)
        if status != 200:
            raise TransportError(f"{source} fetch for {query!r} returned {status}")
        self.cache.put(key, body)
        return body

    def wikipedia_search(self, query: str, limit: int) -> list[tuple[str, str]]:
        if not query.strip():
            raise ValidationError("search query must be non-empty")
        if limit < 1:
            raise ValidationError("limit must be >= 1")
        params = {
            "action": "query",
            "format": "json",
            "list": "search",
            "srsearch": query,
            "srlimit": limit,
        }
        body = self._fetch("wikipedia:search", query, WIKIPEDIA_API, params)
        if body is None:
            return []
        try:
            hits = json.loads(body)["query"]["search"]
            return [(h["title"], h.get("snippet", "")) for h in hits[:limit]]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise MalformedPayloadError(f"bad wikipedia search payload: {e}") from e

    def wikipedia_summary(self, title: str) -> str:
        url = WIKIPEDIA_SUMMARY + urllib.parse.quote(title.replace(" ", "_"), safe="")
        body = self._fetch("wikipedia:summary", title, url, None)
        if body is None:
            raise NotFoundError(title)
        try:
            extract = json.loads(body).get("extract", "")
        except json.JSONDecodeError as e:
            raise MalformedPayloadError(f"bad wikipedia summary payload: {e}") from e
        if not extract:
            raise NotFoundError(title)
        return extract

    def dbpedia_abstract(self, entity_label: str) -> str | None:
        query = dbpedia_sparql(entity_label)
        params = {"query": query, "format": "application/sparql-results+json"}
        body = self._fetch("dbpedia", entity_label, DBPEDIA_SPARQL, params)
        if body is None:
            return None
        try:
            bindings = json.loads(body)["results"]["bindings"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise MalformedPayloadError(f"bad sparql payload: {e}") from e
        if not bindings:
            return None
        return bindings[0]["abstract"]["value"]

    def gather(self, query: str, question: str, caption: str,
               embed_fn, pool_size: int = 5) -> list[KnowledgeDoc]:
        """Assemble the candidate pool: wiki summaries plus one DBpedia
        abstract per detected entity label, deduped by doc_id."""
        docs: list[KnowledgeDoc] = []
        seen: set[str] = set()

        def add(doc_id: str, source: str, title: str, text: str):
            if doc_id in seen or not text:
                return
            seen.add(doc_id)
            docs.append(KnowledgeDoc(doc_id, source, title, text, embed_fn(text)))

        for title, _snippet in self.wikipedia_search(query, pool_size):
            try:
                extract = self.wikipedia_summary(title)
            except NotFoundError:
                logger.warning("wikipedia page missing for hit %r", title)
                continue
            add("wiki:" + title.replace(" ", "_"), "wikipedia", title, extract)

        for label in detect_entity_labels(f"{question} {caption}"):
            try:
                abstract = self.dbpedia_abstract(label)
            except NotFoundError:
                continue
            if abstract:
                add("dbpedia:" + label.replace(" ", "_"), "dbpedia", label, abstract)
        return docs


# ---------------------------------------------------------------------------
# scoring

def score_and_rank(query_embedding: np.ndarray, docs: list[KnowledgeDoc], k: int) -> RetrievalSet:
    """Dot-product scores, top-k selection, softmax over the selected set.

    Softmax uses max-subtraction for stability; the probabilities within
    the returned set sum to one.  Ties break by doc_id ascending.
    """
    if not docs:
        raise ValidationError("docs must be non-empty")
    if k < 1:
        raise ValidationError("k must be >= 1")
    q = np.asarray(query_embedding, dtype=np.float64)
    for d in docs:
        if d.embedding.shape != q.shape:
            raise ValidationError(
                f"dim mismatch: query {q.shape} vs doc {d.doc_id} {d.embedding.shape}"
            )
    raw = [(float(np.dot(d.embedding, q)), d) for d in docs]
    raw.sort(key=lambda t: (-t[0], t[1].doc_id))
    top = raw[:k]
    m = max(s for s, _ in top)
    weights = [math.exp(s - m) for s, _ in top]
    total = math.fsum(weights)
    scored = tuple(
        ScoredDoc(doc=d, raw_score=s, prob=w / total)
        for (s, d), w in zip(top, weights)
    )
    return RetrievalSet(query_key="", docs=scored, k=k)


def retrieve_for_query(client: KnowledgeClient, query: str, question: str, caption: str,
                       query_embedding: np.ndarray, embed_fn,
                       k: int, pool_size: int) -> RetrievalSet:
    """Full retrieval step: gather the pool, then score and rank."""
    docs = client.gather(query, question, caption, embed_fn, pool_size)
    if not docs:
        return RetrievalSet(query_key=normalize_query(query), docs=(), k=k)
    ranked = score_and_rank(query_embedding, docs, k)
    return RetrievalSet(query_key=normalize_query(query), docs=ranked.docs, k=k)
