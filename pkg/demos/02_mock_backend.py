"""
Deterministic mock backend
==========================

The mock implements all three model roles (vision QA, generation, text
embedding) by seeded hashing, so a full pipeline run is a pure function
of (config, seed, dataset).  Two instances with the same seed agree
bit-for-bit; different seeds give different models.
"""

import numpy as np

from ragvqa.backends import MockBackend
from ragvqa.imaging import partition, synthesize_image

image = synthesize_image("demo:mock", 32, 32)
grid = partition(image, 2, 2)
question = "what sport is this?"

a = MockBackend(seed=42)
b = MockBackend(seed=42)
c = MockBackend(seed=7)

ra = a.vision_qa(image, grid, question)
rb = b.vision_qa(image, grid, question)
print("draft answer:", ra.draft_answer)
print("caption:     ", ra.caption)
print("distribution:", [(ans, round(p, 4)) for ans, p in ra.answer_distribution])
print("same seed agrees:", ra == rb)
print("different seed differs:",
      not np.array_equal(a.embed_text("cat"), c.embed_text("cat")))

# Generation is greedy and returns per-token log-probabilities.
gen = a.generate("Question: " + question + "\nAnswer:", max_tokens=6)
print("generated:", gen.text)
print("logprobs: ", [round(lp, 3) for lp in gen.token_logprobs])

# Embeddings are unit vectors; the dimension is configurable (default 384).
emb = a.embed_text("motocross")
print("embedding dim:", emb.shape[0], "norm:", round(float(np.linalg.norm(emb)), 9))

# The same wire protocol checks that gate a remote server also run
# in-process against the mock:
from ragvqa.wire import run_backend_conformance

print("conformance checks passed:", len(run_backend_conformance(a)))
