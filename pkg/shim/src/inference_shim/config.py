"""Shim configuration."""

import json
from dataclasses import dataclass
from pathlib import Path

PROTOCOL_VERSION = "v1"

DEFAULT_VISION_MODEL = "Salesforce/blip-vqa-base"
DEFAULT_GENERATOR_MODEL = "EleutherAI/gpt-neo-1.3B"
DEFAULT_EMBEDDER_MODEL = "sentence-transformers/all-MiniLM-L6-v2"


@dataclass(frozen=True)
class ShimConfig:
    host: str = "127.0.0.1"
    port: int = 8191
    # "transformers" loads the real checkpoints; "stub" serves deterministic
    # hash-based outputs for protocol validation without weights.
    adapter_mode: str = "transformers"
    vision_model: str = DEFAULT_VISION_MODEL
    generator_model: str = DEFAULT_GENERATOR_MODEL
    embedder_model: str = DEFAULT_EMBEDDER_MODEL
    device: str = "cpu"
    max_batch_size: int = 1
    embedding_dim: int = 384
    stub_seed: int = 0

    @staticmethod
    def load(path: str | Path) -> "ShimConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return ShimConfig(**doc)
