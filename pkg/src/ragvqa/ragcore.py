"""Prompt assembly, generation and marginalization over retrieved docs.

The emitted answer comes from one greedy generation over the merged
context; the marginal answer probability mixes per-doc sequence
likelihoods with the retrieval probabilities.
"""

import math
from dataclasses import dataclass

from .backends import Backend, GenerationResult, VisionQaResult
from .exceptions import BackendError, ValidationError
from .retrieval import RetrievalSet, ScoredDoc

TEMPLATE_ID = "context-v1"
DEFAULT_SNIPPET_BUDGET = 300
DEFAULT_MAX_TOKENS = 8


@dataclass(frozen=True)
class AugmentedPrompt:
    template_id: str
    rendered: str
    question: str
    caption: str
    draft_answer: str
    snippets: tuple[str, ...]


@dataclass(frozen=True)
class AnswerCandidate:
    text: str
    per_doc_logprob: tuple[tuple[str, float], ...]  # (doc_id, sequence logprob)
    marginal_prob: float


def render_prompt(question: str, caption: str, draft_answer: str,
                  docs: RetrievalSet,
                  snippet_budget: int = DEFAULT_SNIPPET_BUDGET) -> AugmentedPrompt:
    """Fixed prompt template; snippets appear one per line, prob-descending."""
    if not question.strip():
        raise ValidationError("question must be non-empty")
    snippets = tuple(sd.doc.text[:snippet_budget] for sd in docs.docs)
    rendered = (
        "Context:\n"
        + "\n".join(snippets)
        + "\nImage: {}\nInitial answer: {}\nQuestion: {}\nAnswer:".format(
            caption, draft_answer, question
        )
    )
    return AugmentedPrompt(TEMPLATE_ID, rendered, question, caption, draft_answer, snippets)


def _single_doc_prompt(sd: ScoredDoc, snippet_budget: int = DEFAULT_SNIPPET_BUDGET) -> str:
    return "Context:\n{}\nAnswer:".format(sd.doc.text[:snippet_budget])


def marginalize(candidates: list[str], retrieval: RetrievalSet, generator: Backend,
                prompt_fn=None) -> list[AnswerCandidate]:
    """Mix per-doc candidate likelihoods with retrieval probabilities.

    marginal(c) = sum over retrieved z of p(z) * exp(seq logprob of c | z).
    Candidates come back sorted by marginal descending, ties by text.
    """
    if not retrieval.docs:
        raise ValidationError("retrieval set must be non-empty for marginalization")
    if prompt_fn is None:
        prompt_fn = _single_doc_prompt

    unique = list(dict.fromkeys(candidates))
    out = []
    for cand in unique:
        per_doc = []
        acc = []
        for sd in retrieval.docs:
            try:
                scored = generator.score_completion(prompt_fn(sd), cand)
            except Exception as e:
                raise BackendError(
                    f"scoring candidate {cand!r} under doc {sd.doc.doc_id} failed: {e}"
                ) from e
            lp = scored.sequence_logprob()
            per_doc.append((sd.doc.doc_id, lp))
            acc.append(sd.prob * math.exp(lp))
        out.append(AnswerCandidate(cand, tuple(per_doc), math.fsum(acc)))
    out.sort(key=lambda c: (-c.marginal_prob, c.text))
    return out


@dataclass(frozen=True)
class AnswerOutcome:
    text: str
    generation: GenerationResult
    prompt: AugmentedPrompt
    retrieval: RetrievalSet


def answer(question: str, vqa: VisionQaResult, retrieval: RetrievalSet,
           generator: Backend, max_tokens: int = DEFAULT_MAX_TOKENS,
           snippet_budget: int = DEFAULT_SNIPPET_BUDGET) -> AnswerOutcome:
    """Greedy generation from the merged-context prompt.

    Degrades gracefully: with an empty retrieval set the prompt still
    carries the caption and draft answer.
    """
    prompt = render_prompt(question, vqa.caption, vqa.draft_answer, retrieval, snippet_budget)
    gen = generator.generate(prompt.rendered, max_tokens)
    return AnswerOutcome(text=gen.text, generation=gen, prompt=prompt, retrieval=retrieval)
