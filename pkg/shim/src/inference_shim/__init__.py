"""Inference service exposing frozen vision-QA, text-generation and
text-embedding models behind the v1 wire protocol."""

__version__ = "0.1.0"

from .config import ShimConfig
from .server import create_app
