"""Retrieval-augmented visual question answering with OOD gating and
hallucination detection.

The package is organized around the pipeline stages: dataset ingestion,
patch-grid imaging, pluggable model backends (deterministic mock plus a
remote wire-protocol client), external-knowledge retrieval with disk
caching, prompt assembly and marginalization, guardrails, and the
evaluation harness.
"""

__version__ = "0.1.0"

from .backends import Backend, GenerationResult, MockBackend, VisionQaResult
from .config import PipelineConfig, parse_config
from .dataset import (
    KnowledgeCategory,
    Sample,
    load_dataset,
    normalize_answer,
    split_membership,
    subsample,
)
from .evaluation import (
    RunReport,
    VqaOutcome,
    aggregate,
    bce_loss,
    emit_report,
    soft_accuracy,
)
from .guardrails import (
    ConfidenceScore,
    GateDecision,
    GroundingReport,
    confidence,
    cosine,
    gate,
    grounding_score,
)
from .imaging import PatchGrid, RawImage, partition, reassemble
from .ragcore import AnswerCandidate, AugmentedPrompt, marginalize, render_prompt
from .retrieval import (
    DiskCache,
    KnowledgeClient,
    KnowledgeDoc,
    RetrievalSet,
    build_query,
    dbpedia_sparql,
    score_and_rank,
)
from .wire import RemoteBackend, run_backend_conformance, verify_protocol
