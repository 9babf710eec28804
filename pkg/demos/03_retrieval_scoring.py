"""
Knowledge retrieval and dual-encoder scoring
============================================

Retrieval pools Wikipedia search summaries with DBpedia abstracts, embeds
every passage, scores passages against the query embedding by dot
product, and softmax-normalizes the top-k.  Everything fetched goes
through a counting transport and a disk cache, so offline runs replay a
warm cache with zero live calls.

This demo uses the deterministic fixture transport (no network).
"""

import tempfile

from ragvqa.backends import MockBackend
from ragvqa.retrieval import (
    DiskCache,
    FixtureTransport,
    KnowledgeClient,
    build_query,
    dbpedia_sparql,
    score_and_rank,
)

# The retrieval query concatenates question, draft answer and caption,
# dropping duplicate words.
query = build_query("what sport?", "motocross", "a motorcycle in dirt")
print("query:", query)

# DBpedia lookups are built from a fixed SPARQL template (label escaped).
print(dbpedia_sparql("Hot dog"))

backend = MockBackend(seed=42)
cache_dir = tempfile.mkdtemp()
transport = FixtureTransport(seed=42)
client = KnowledgeClient(transport, DiskCache(cache_dir))

docs = client.gather(query, "what sport?", "a motorcycle in dirt",
                     backend.embed_text, pool_size=5)
print(f"\npooled {len(docs)} docs with {transport.request_count} fetches")

ranked = score_and_rank(backend.embed_text(query), docs, k=3)
for sd in ranked.docs:
    print(f"  {sd.prob:.4f}  {sd.doc.doc_id}: {sd.doc.text[:60]}")
print("probs sum to:", sum(sd.prob for sd in ranked.docs))

# A second gather is served entirely from the cache.
before = transport.request_count
client.gather(query, "what sport?", "a motorcycle in dirt",
              backend.embed_text, pool_size=5)
print("extra fetches on the second pass:", transport.request_count - before)
