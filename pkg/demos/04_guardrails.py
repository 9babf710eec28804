"""
Guardrails: OOD gating and hallucination detection
==================================================

Two independent checks run on every answer:

* a confidence score mixing retrieval confidence with generation
  confidence, thresholded at lambda to flag out-of-distribution inputs;
* a grounding score (mean cosine between the predicted answer's
  embedding and each ground-truth answer's embedding), thresholded at
  tau to flag hallucinations (strictly below tau counts).
"""

import math

import numpy as np

from ragvqa.backends import GenerationResult, MockBackend, VisionQaResult
from ragvqa.guardrails import confidence, cosine, gate, grounding_score
from ragvqa.retrieval import KnowledgeDoc, RetrievalSet, ScoredDoc

backend = MockBackend(seed=42)

# Cosine similarity is the basic primitive.
print("cos([0.6,0.8],[1,0]) =", cosine(np.array([0.6, 0.8]), np.array([1.0, 0.0])))

# Grounding: a prediction identical to every annotator answer scores 1.0.
report = grounding_score("motocross", ["motocross"] * 10, backend, tau=0.5)
print("identical answers ->", report.g_mean, "hallucinated:", report.hallucinated)

report = grounding_score("lantern", ["motocross"] * 6 + ["tennis"] * 4, backend, tau=0.5)
print(f"unrelated answer  -> g_mean={report.g_mean:+.4f} hallucinated: {report.hallucinated}")

# Confidence combines the max retrieval probability with the geometric
# mean token probability of the generated answer.
def scored(prob, i):
    doc = KnowledgeDoc(f"wiki:D{i}", "wikipedia", "t", "text", np.ones(2))
    return ScoredDoc(doc, 0.0, prob)

retrieval = RetrievalSet("q", (scored(0.5, 0), scored(0.3, 1), scored(0.2, 2)), 3)
vqa = VisionQaResult("motocross", "a photo", np.ones(4) / 2.0,
                     (("motocross", 0.7), ("tennis", 0.3)))
gen = GenerationResult("motocross", (math.log(0.5), math.log(0.5)))

conf = confidence(vqa, retrieval, gen, alpha=0.5)
print(f"\ns_fused={conf.s_fused:.3f} s_visual={conf.s_visual:.3f} "
      f"s_textual={conf.s_textual:.3f} -> s_combined={conf.s_combined:.3f}")

# The gate is inclusive: a score exactly at lambda stays in-distribution.
for lam in (0.3, conf.s_combined, 0.9):
    print(f"lambda={lam:.3f} -> {gate(conf, lam).label}")
