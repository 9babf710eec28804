"""Per-sample orchestration tying imaging, backends, retrieval, generation
and guardrails together."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import guardrails, ragcore
from .backends import Backend, MockBackend
from .config import PipelineConfig
from .dataset import Sample
from .evaluation import VqaOutcome, soft_accuracy
from .exceptions import StageFailure
from .imaging import ImageProvider, partition
from .retrieval import (
    DiskCache,
    FixtureTransport,
    HttpTransport,
    KnowledgeClient,
    RetrievalSet,
    Transport,
    build_query,
    normalize_query,
    retrieve_for_query,
)
from .wire import RemoteBackend

logger = logging.getLogger(__name__)

# Stage labels map to exit-code families in the CLI.
STAGE_IMAGING = "imaging"
STAGE_BACKEND = "backend"
STAGE_RETRIEVAL = "retrieval"
STAGE_GENERATION = "generation"
STAGE_GUARDRAILS = "guardrails"


@dataclass
class RunResult:
    outcomes: list[VqaOutcome]
    failures: list[dict]
    transport_requests: int


def make_backend(config: PipelineConfig) -> Backend:
    b = config.backend
    if b.kind == "mock":
        if b.vocabulary:
            vocab = tuple(w.strip() for w in b.vocabulary.split(",") if w.strip())
            return MockBackend(seed=b.seed, embedding_dim=b.embedding_dim, vocabulary=vocab)
        return MockBackend(seed=b.seed, embedding_dim=b.embedding_dim)
    return RemoteBackend(b.endpoint, model_name=b.model_name, embedding_dim=b.embedding_dim)


def make_transport(config: PipelineConfig) -> Transport:
    if config.retrieval.transport == "fixture":
        return FixtureTransport(seed=config.backend.seed)
    return HttpTransport()


def make_image_provider(config: PipelineConfig) -> ImageProvider:
    images_dir = config.dataset.images_dir or None
    # Opaque refs synthesize deterministically under the mock backend;
    # remote runs must point at real files.
    return ImageProvider(images_dir, allow_synthetic=config.backend.kind == "mock")


def _stage(stage: str, sample_id: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageFailure:
        raise
    except Exception as e:
        raise StageFailure(stage, sample_id, e) from e


def run_sample(sample: Sample, backend: Backend, client: KnowledgeClient,
               config: PipelineConfig, provider: ImageProvider) -> tuple[VqaOutcome, dict]:
    """Run the full pipeline for one sample; returns (outcome, trace)."""
    sid = sample.sample_id
    image = _stage(STAGE_IMAGING, sid, provider.resolve, sample.image_ref)
    grid = _stage(STAGE_IMAGING, sid, partition, image, config.grid.rows, config.grid.cols)
    vqa = _stage(STAGE_BACKEND, sid, backend.vision_qa, image, grid, sample.question)

    query = build_query(sample.question, vqa.draft_answer, vqa.caption)
    if config.retrieval.query_source == "text":
        q_emb = _stage(STAGE_BACKEND, sid, backend.embed_text,
                       normalize_query(f"{sample.question} {vqa.caption}"))
    else:
        q_emb = vqa.joint_embedding
    retrieval = _stage(
        STAGE_RETRIEVAL, sid, retrieve_for_query,
        client, query, sample.question, vqa.caption, q_emb,
        backend.embed_text, config.retrieval.k, config.retrieval.pool_size,
    )

    ans = _stage(STAGE_GENERATION, sid, ragcore.answer,
                 sample.question, vqa, retrieval, backend,
                 config.prompt.max_tokens, config.prompt.snippet_budget)

    marginal_prob = None
    if retrieval.docs:
        candidates = [ans.text, vqa.draft_answer]
        candidates += [a for a, _ in vqa.answer_distribution[:3]]

        def doc_prompt(sd):
            single = RetrievalSet(retrieval.query_key, (sd,), 1)
            return ragcore.render_prompt(
                sample.question, vqa.caption, vqa.draft_answer, single,
                config.prompt.snippet_budget,
            ).rendered

        ranked = _stage(STAGE_GENERATION, sid, ragcore.marginalize,
                        candidates, retrieval, backend, doc_prompt)
        marginal_prob = next(c.marginal_prob for c in ranked if c.text == ans.text)

    conf = _stage(STAGE_GUARDRAILS, sid, guardrails.confidence,
                  vqa, retrieval, ans.generation, config.guardrails.alpha)
    grounding = _stage(STAGE_GUARDRAILS, sid, guardrails.grounding_score,
                       ans.text, list(sample.gt_answers), backend, config.guardrails.tau)
    decision = guardrails.gate(conf, config.guardrails.lam)

    outcome = VqaOutcome(
        sample_id=sid,
        category=sample.category.value,
        split=sample.split,
        predicted_answer=ans.text,
        retrieval_summary=tuple((sd.doc.doc_id, sd.prob) for sd in retrieval.docs),
        confidence=conf,
        grounding=grounding,
        gate=decision,
        soft_accuracy=soft_accuracy(ans.text, sample.gt_answers),
        answer_marginal_prob=marginal_prob,
    )
    trace = {
        "sample_id": sid,
        "question": sample.question,
        "draft_answer": vqa.draft_answer,
        "caption": vqa.caption,
        "query": query,
        "prompt": ans.prompt.rendered,
        "retrieval": [
            {"doc_id": sd.doc.doc_id, "source": sd.doc.source,
             "raw_score": sd.raw_score, "prob": sd.prob}
            for sd in retrieval.docs
        ],
        "token_logprobs": list(ans.generation.token_logprobs),
    }
    return outcome, trace


def run_samples(samples: list[Sample], backend: Backend, config: PipelineConfig,
                transport: Transport | None = None) -> tuple[RunResult, list[dict]]:
    """Run the pipeline over samples in dataset order.

    Per-sample failures do not abort the run; they are collected into the
    failure manifest.  Returns (result, traces).
    """
    if transport is None:
        transport = make_transport(config)
    cache = DiskCache(config.retrieval.cache_dir)
    client = KnowledgeClient(transport, cache, offline=config.retrieval.offline)
    provider = make_image_provider(config)

    def one(sample: Sample):
        return run_sample(sample, backend, client, config, provider)

    results: list[tuple[VqaOutcome, dict] | StageFailure] = [None] * len(samples)
    if config.parallel > 1:
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            futures = {i: pool.submit(one, s) for i, s in enumerate(samples)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except StageFailure as e:
                    results[i] = e
    else:
        for i, s in enumerate(samples):
            try:
                results[i] = one(s)
            except StageFailure as e:
                results[i] = e

    outcomes, traces, failures = [], [], []
    for r in results:
        if isinstance(r, StageFailure):
            logger.error("%s", r)
            failures.append({"sample_id": r.sample_id, "stage": r.stage, "error": str(r.cause)})
        else:
            outcome, trace = r
            outcomes.append(outcome)
            traces.append(trace)
    return RunResult(outcomes, failures, transport.request_count), traces


def warm_cache(samples: list[Sample], backend: Backend, config: PipelineConfig,
               transport: Transport | None = None) -> int:
    """Pre-fetch knowledge for every sample; returns live request count.

    Issues exactly the fetches a run would, so a later offline run hits
    the cache for everything.
    """
    if transport is None:
        transport = make_transport(config)
    cache = DiskCache(config.retrieval.cache_dir)
    client = KnowledgeClient(transport, cache, offline=False)
    provider = make_image_provider(config)
    for sample in samples:
        image = provider.resolve(sample.image_ref)
        grid = partition(image, config.grid.rows, config.grid.cols)
        vqa = backend.vision_qa(image, grid, sample.question)
        query = build_query(sample.question, vqa.draft_answer, vqa.caption)
        client.gather(query, sample.question, vqa.caption, backend.embed_text,
                      config.retrieval.pool_size)
    return transport.request_count
