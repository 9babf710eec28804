"""OOD gating and grounding-score hallucination detection."""

import math
from dataclasses import dataclass

import numpy as np

from .backends import GenerationResult, VisionQaResult
from .dataset import normalize_answer
from .exceptions import ValidationError
from .retrieval import RetrievalSet

DEFAULT_TAU = 0.5
DEFAULT_LAMBDA = 0.5
DEFAULT_ALPHA = 0.5


@dataclass(frozen=True)
class ConfidenceScore:
    s_fused: float    # max retrieval probability
    s_visual: float   # max softmax probability of the vision head
    s_textual: float  # geometric-mean token probability
    s_combined: float
    degraded: bool = False  # set when retrieval was empty


@dataclass(frozen=True)
class GateDecision:
    label: str  # "ID" | "OOD"
    threshold: float
    score: float


@dataclass(frozen=True)
class GroundingReport:
    g_mean: float
    per_gt_cosines: tuple[float, ...]
    tau: float
    hallucinated: bool


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding.

    Computed as dot / sqrt(|a|^2 * |b|^2) with exact summation, so
    identical vectors score exactly 1.0 and results are platform-stable.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dim mismatch: {a.shape} vs {b.shape}")
    dot = math.fsum(float(x) * float(y) for x, y in zip(a, b))
    na2 = math.fsum(float(x) * float(x) for x in a)
    nb2 = math.fsum(float(y) * float(y) for y in b)
    if na2 == 0.0 or nb2 == 0.0:
        raise ValidationError("cosine of a zero-norm vector is undefined")
    return max(-1.0, min(1.0, dot / math.sqrt(na2 * nb2)))


def _embeddable(answer: str) -> str:
    # Normalization can strip an answer like "the" down to nothing; fall
    # back to the raw form so the embedder always gets non-empty text.
    return normalize_answer(answer) or answer.strip().lower() or "unanswerable"


def grounding_score(pred: str, gt_answers: list[str], embedder, tau: float) -> GroundingReport:
    """Mean cosine between the prediction and each ground-truth answer.

    Hallucination flags on strict inequality: a mean exactly at the
    threshold does not count.
    """
    if not gt_answers:
        raise ValidationError("gt_answers must be non-empty")
    if not -1.0 < tau < 1.0:
        raise ValidationError(f"tau must lie in (-1, 1), got {tau}")
    v_pred = embedder.embed_text(_embeddable(pred))
    cosines = tuple(
        cosine(v_pred, embedder.embed_text(_embeddable(gt))) for gt in gt_answers
    )
    g_mean = math.fsum(cosines) / len(cosines)
    return GroundingReport(g_mean, cosines, tau, hallucinated=g_mean < tau)


def confidence(vqa: VisionQaResult, retrieval: RetrievalSet, gen: GenerationResult,
               alpha: float = DEFAULT_ALPHA) -> ConfidenceScore:
    """Hybrid score mixing retrieval confidence with generation confidence.

    s_combined = alpha * max retrieval prob + (1 - alpha) * geometric-mean
    token probability; the visual max-softmax rides along for analysis.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if not gen.token_logprobs:
        raise ValidationError("generation result carries no token logprobs")
    s_visual = max(p for _, p in vqa.answer_distribution)
    s_textual = math.exp(math.fsum(gen.token_logprobs) / len(gen.token_logprobs))
    degraded = not retrieval.docs
    s_fused = 0.0 if degraded else retrieval.max_prob()
    s_combined = alpha * s_fused + (1.0 - alpha) * s_textual
    return ConfidenceScore(s_fused, s_visual, s_textual, s_combined, degraded)


def gate(score: ConfidenceScore, lam: float) -> GateDecision:
    """Threshold rule: in-distribution iff the combined score >= lambda."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    label = "ID" if score.s_combined >= lam else "OOD"
    return GateDecision(label, lam, score.s_combined)
