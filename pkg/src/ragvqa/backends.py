"""Model-backend contracts and the deterministic mock implementation.

Three roles are behind one interface: vision question answering, text
generation and text embedding.  The mock realizes all three by seeded
hashing so a full pipeline run is a pure function of (config, seed, data).
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .hashing import bytes_key, mix, text_key, unit_float
from .imaging import PatchGrid, RawImage

DEFAULT_EMBEDDING_DIM = 384

# Small answer vocabulary for desk-scale runs.  Deliberately overlaps the
# test fixtures' ground-truth answers so accuracy metrics are exercisable;
# this is scaffolding, not a statement about model quality.
DEFAULT_VOCAB = (
    "motocross", "frisbee", "umbrella", "mustard", "ketchup", "surfing",
    "kite", "train", "giraffe", "pizza", "broccoli", "clock", "skateboard",
    "winter", "summer", "rain", "engine", "sailboat", "tennis", "chef",
    "library", "mountain", "river", "camera", "laptop", "guitar", "horse",
    "penguin", "cactus", "desert", "harbor", "bridge", "lantern", "marble",
    "cotton", "velvet", "thunder", "breeze", "compass", "anchor",
)


@dataclass(frozen=True, eq=False)
class VisionQaResult:
    draft_answer: str
    caption: str
    joint_embedding: np.ndarray
    answer_distribution: tuple[tuple[str, float], ...]

    def __eq__(self, other):
        return (
            isinstance(other, VisionQaResult)
            and self.draft_answer == other.draft_answer
            and self.caption == other.caption
            and np.array_equal(self.joint_embedding, other.joint_embedding)
            and self.answer_distribution == other.answer_distribution
        )


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_logprobs: tuple[float, ...]

    def sequence_logprob(self) -> float:
        return math.fsum(self.token_logprobs)


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str  # "mock" | "remote"
    model_name: str
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    endpoint: str = ""

    def __post_init__(self):
        if self.kind == "remote" and not self.endpoint.startswith(("http://", "https://")):
            raise ValidationError(f"remote backend needs a well-formed URL, got {self.endpoint!r}")


class Backend:
    """Interface all backends implement; see MockBackend and RemoteBackend."""

    descriptor: BackendDescriptor

    @property
    def embedding_dim(self) -> int:
        return self.descriptor.embedding_dim

    def vision_qa(self, image: RawImage, patches: PatchGrid, question: str) -> VisionQaResult:
        raise NotImplementedError

    def generate(self, prompt: str, max_tokens: int) -> GenerationResult:
        raise NotImplementedError

    def score_completion(self, prompt: str, completion: str) -> GenerationResult:
        """Per-token log-probabilities of a fixed completion under a prompt."""
        raise NotImplementedError

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError


def _hashed_unit_vector(key: int, dim: int) -> np.ndarray:
    values = np.empty(dim, dtype=np.float64)
    for i in range(dim):
        values[i] = 2.0 * unit_float(mix(key, i)) - 1.0
    norm = math.sqrt(math.fsum(float(v) * float(v) for v in values))
    if norm == 0.0:
        values[0] = 1.0
        norm = 1.0
    return values / norm


class MockBackend(Backend):
    """Seeded stand-in for the frozen vision/generation/embedding models.

    Every output is derived from splitmix64 over (seed, input hashes), so
    two instances with equal seeds agree bit-for-bit on any input.
    """

    def __init__(
        self,
        seed: int,
        embedding_dim: int = DEFAULT_EMBEDDING_DIM,
        vocabulary: tuple[str, ...] = DEFAULT_VOCAB,
    ):
        if not vocabulary:
            raise ValidationError("mock vocabulary must be non-empty")
        self.seed = seed
        self.vocabulary = tuple(vocabulary)
        self.descriptor = BackendDescriptor(
            kind="mock", model_name=f"mock-{seed}", embedding_dim=embedding_dim
        )

    def _word(self, *parts: int) -> str:
        return self.vocabulary[mix(self.seed, *parts) % len(self.vocabulary)]

    def vision_qa(self, image: RawImage, patches: PatchGrid, question: str) -> VisionQaResult:
        if not question.strip():
            raise ValidationError("question must be non-empty")
        qkey = text_key(question)
        ikey = bytes_key(image.data)
        # Concatenated patch hash: the grid layout reaches the backend.
        pkey = mix(patches.rows, patches.cols, *(bytes_key(p.data) for p in patches.patches))

        dist = self._answer_distribution(qkey, ikey, pkey)
        draft = dist[0][0]
        caption = "a photo of {} near {}".format(
            self._word(ikey, 2), self._word(pkey, 3)
        )
        joint = _hashed_unit_vector(mix(self.seed, qkey, ikey, pkey), self.embedding_dim)
        return VisionQaResult(draft, caption, joint, dist)

    def _answer_distribution(self, qkey: int, ikey: int, pkey: int) -> tuple[tuple[str, float], ...]:
        candidates = []
        seen = set()
        i = 0
        while len(candidates) < 4 and i < 32:
            w = self._word(qkey, 11, i)
            if w not in seen:
                seen.add(w)
                candidates.append(w)
            i += 1
        scores = [unit_float(mix(self.seed, qkey, ikey, pkey, 13, j)) * 3.0 for j in range(len(candidates))]
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        total = math.fsum(weights)
        pairs = sorted(
            ((c, w / total) for c, w in zip(candidates, weights)),
            key=lambda p: (-p[1], p[0]),
        )
        return tuple(pairs)

    # Copy bias: when the prompt carries the pipeline's draft-answer line,
    # the mock echoes it (the way small frozen LMs latch onto an answer
    # already in context).  Keeps generation a pure function of the prompt
    # while letting desk-scale accuracy metrics fire.
    _ECHO_RE = re.compile(r"\nInitial answer: (.+)\n")

    def generate(self, prompt: str, max_tokens: int) -> GenerationResult:
        if not prompt:
            raise ValidationError("prompt must be non-empty")
        if max_tokens < 1:
            raise ValidationError("max_tokens must be >= 1")
        pkey = text_key(prompt)
        echo = self._ECHO_RE.search(prompt)
        if echo and echo.group(1).strip():
            tokens = echo.group(1).split()[:max_tokens]
        else:
            n = 1 + mix(self.seed, pkey, 5) % min(max_tokens, 4)
            tokens = [self._word(pkey, 7, i) for i in range(n)]
        text = " ".join(tokens)
        return GenerationResult(text, self._token_logprobs(pkey, tokens))

    def score_completion(self, prompt: str, completion: str) -> GenerationResult:
        if not prompt:
            raise ValidationError("prompt must be non-empty")
        tokens = completion.split()
        if not tokens:
            raise ValidationError("completion must contain at least one token")
        pkey = text_key(prompt)
        return GenerationResult(completion, self._token_logprobs(pkey, tokens))

    def _token_logprobs(self, pkey: int, tokens: list[str]) -> tuple[float, ...]:
        lps = []
        for i, tok in enumerate(tokens):
            u = unit_float(mix(self.seed, pkey, text_key(tok), i, 17))
            lps.append(-(0.05 + 2.0 * u))
        return tuple(lps)

    def embed_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValidationError("cannot embed empty text")
        return _hashed_unit_vector(mix(self.seed, text_key(text)), self.embedding_dim)
