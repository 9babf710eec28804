"""Pipeline configuration: file + environment + flag layering, validation,
and the reproducibility digest."""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

ENV_PREFIX = "RAGVQA_"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "mock" | "remote"
    model_name: str = "mock"
    embedding_dim: int = 384
    endpoint: str = ""
    seed: int = 42
    vocabulary: str = ""  # comma-separated mock answer words; empty = default


@dataclass(frozen=True)
class GridConfig:
    rows: int = 2
    cols: int = 2


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 3
    pool_size: int = 5
    offline: bool = False
    cache_dir: str = "cache"
    transport: str = "live"  # "live" | "fixture"
    query_source: str = "joint"  # "joint" | "text"


@dataclass(frozen=True)
class GuardrailsConfig:
    tau: float = 0.5
    lam: float = 0.5
    alpha: float = 0.5


@dataclass(frozen=True)
class DatasetConfig:
    annotations: str = ""
    questions: str = ""
    images_dir: str = ""


@dataclass(frozen=True)
class SubsampleConfig:
    n: int = 0  # 0 means the full set
    seed: int = 0


@dataclass(frozen=True)
class PromptConfig:
    snippet_budget: int = 300
    max_tokens: int = 8


@dataclass(frozen=True)
class PipelineConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    guardrails: GuardrailsConfig = field(default_factory=GuardrailsConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    subsample: SubsampleConfig = field(default_factory=SubsampleConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    output_dir: str = "runs/latest"
    parallel: int = 1
    trace: bool = False

    def with_grid(self, rows: int, cols: int) -> "PipelineConfig":
        return dataclasses.replace(self, grid=GridConfig(rows, cols))

    def to_dict(self) -> dict:
        return {
            "backend": dataclasses.asdict(self.backend),
            "grid": dataclasses.asdict(self.grid),
            "retrieval": dataclasses.asdict(self.retrieval),
            "guardrails": dataclasses.asdict(self.guardrails),
            "dataset": dataclasses.asdict(self.dataset),
            "subsample": dataclasses.asdict(self.subsample),
            "prompt": dataclasses.asdict(self.prompt),
            "output_dir": self.output_dir,
            "parallel": self.parallel,
            "trace": self.trace,
        }

    def digest(self) -> str:
        """Hash of every result-affecting key (output_dir, parallel and
        trace are presentation-only and excluded)."""
        d = self.to_dict()
        for key in ("output_dir", "parallel", "trace"):
            d.pop(key)
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


_RANGES = {
    "guardrails.tau": (lambda c: c.guardrails.tau, -1.0, 1.0, "(-1, 1)", False),
    "guardrails.lambda": (lambda c: c.guardrails.lam, 0.0, 1.0, "[0, 1]", True),
    "guardrails.alpha": (lambda c: c.guardrails.alpha, 0.0, 1.0, "[0, 1]", True),
}


def validate(config: PipelineConfig) -> PipelineConfig:
    for key, (getter, lo, hi, bounds, inclusive) in _RANGES.items():
        v = getter(config)
        ok = lo <= v <= hi if inclusive else lo < v < hi
        if not ok:
            raise ConfigError(f"{key} must lie in {bounds}, got {v}")
    if config.grid.rows < 1 or config.grid.cols < 1:
        raise ConfigError(f"grid must be at least 1x1, got {config.grid.rows}x{config.grid.cols}")
    if config.retrieval.k < 1:
        raise ConfigError(f"retrieval.k must be >= 1, got {config.retrieval.k}")
    if config.retrieval.pool_size < 1:
        raise ConfigError(f"retrieval.pool_size must be >= 1, got {config.retrieval.pool_size}")
    if config.backend.kind not in ("mock", "remote"):
        raise ConfigError(f"backend.kind must be mock or remote, got {config.backend.kind!r}")
    if config.backend.kind == "remote" and not config.backend.endpoint:
        raise ConfigError("backend.endpoint is required for remote backends")
    if config.retrieval.transport not in ("live", "fixture"):
        raise ConfigError(f"retrieval.transport must be live or fixture, got {config.retrieval.transport!r}")
    if config.retrieval.query_source not in ("joint", "text"):
        raise ConfigError(f"retrieval.query_source must be joint or text, got {config.retrieval.query_source!r}")
    if config.subsample.n < 0:
        raise ConfigError(f"subsample.n must be >= 0, got {config.subsample.n}")
    if config.parallel < 1:
        raise ConfigError(f"parallel must be >= 1, got {config.parallel}")
    if config.prompt.max_tokens < 1:
        raise ConfigError(f"prompt.max_tokens must be >= 1, got {config.prompt.max_tokens}")
    if config.backend.embedding_dim < 1:
        raise ConfigError(f"backend.embedding_dim must be >= 1, got {config.backend.embedding_dim}")
    return config


# "lambda" is the documented key; the dataclass field is lam because of the
# Python keyword.
_KEY_ALIASES = {"lambda": "lam"}

_SECTIONS = {
    "backend": BackendConfig,
    "grid": GridConfig,
    "retrieval": RetrievalConfig,
    "guardrails": GuardrailsConfig,
    "dataset": DatasetConfig,
    "subsample": SubsampleConfig,
    "prompt": PromptConfig,
}


def _coerce(section: str, cls, values: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for raw_key, value in values.items():
        key = _KEY_ALIASES.get(raw_key, raw_key)
        if key not in fields:
            raise ConfigError(f"unknown config key {section}.{raw_key}")
        target = fields[key].type
        try:
            if target in (int, "int"):
                value = int(value)
            elif target in (float, "float"):
                value = float(value)
            elif target in (bool, "bool"):
                if isinstance(value, str):
                    value = value.lower() in ("1", "true", "yes", "on")
                else:
                    value = bool(value)
            else:
                value = str(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {section}.{raw_key}: {e}") from e
        kwargs[key] = value
    return kwargs


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for section, values in update.items():
        if isinstance(values, dict):
            out[section] = {**out.get(section, {}), **values}
        else:
            out[section] = values
    return out


def _env_overrides(env) -> dict:
    """RAGVQA_SECTION__KEY=value; double underscore separates the levels."""
    out: dict = {}
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        if "__" in rest:
            section, key = rest.split("__", 1)
            out.setdefault(section, {})[key] = value
        else:
            out[rest] = value
    return out


def parse_config(path: str | Path | None = None, overrides: dict | None = None,
                 env=None) -> PipelineConfig:
    """Build a validated config; precedence: defaults < file < env < flags."""
    layered: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            file_doc = json.loads(p.read_text(encoding="utf-8") or "{}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(file_doc, dict):
            raise ConfigError("config file must hold a JSON object")
        layered = _merge(layered, file_doc)
    layered = _merge(layered, _env_overrides(os.environ if env is None else env))
    layered = _merge(layered, overrides or {})

    kwargs = {}
    for section, cls in _SECTIONS.items():
        values = layered.pop(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        kwargs[section] = cls(**_coerce(section, cls, values))
    for scalar, caster in (("output_dir", str), ("parallel", int), ("trace", None)):
        if scalar in layered:
            value = layered.pop(scalar)
            if scalar == "trace":
                value = value.lower() in ("1", "true", "yes", "on") if isinstance(value, str) else bool(value)
            else:
                value = caster(value)
            kwargs[scalar] = value
    if layered:
        raise ConfigError(f"unknown config key {sorted(layered)[0]!r}")
    return validate(PipelineConfig(**kwargs))
