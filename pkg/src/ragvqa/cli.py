"""Command-line surface: run, eval, ablate, retrieve, cache-warm."""

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import evaluation, pipeline
from .config import PipelineConfig, parse_config
from .dataset import load_dataset, subsample, write_manifest
from .exceptions import (
    BackendError,
    ConfigError,
    DatasetError,
    RagVqaError,
    RetrievalError,
    StageFailure,
)
from .retrieval import DiskCache, KnowledgeClient, score_and_rank

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_BACKEND = 4
EXIT_RETRIEVAL = 5

_STAGE_EXIT = {
    pipeline.STAGE_IMAGING: EXIT_DATASET,
    pipeline.STAGE_BACKEND: EXIT_BACKEND,
    pipeline.STAGE_GENERATION: EXIT_BACKEND,
    pipeline.STAGE_GUARDRAILS: EXIT_BACKEND,
    pipeline.STAGE_RETRIEVAL: EXIT_RETRIEVAL,
}

_GRID_RE = re.compile(r"^(\d+)\s*[x×]\s*(\d+)$")


def _parse_grid(text: str) -> tuple[int, int]:
    m = _GRID_RE.match(text.strip())
    if not m:
        raise ConfigError(f"grid must look like 2x2, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragvqa",
        description="Retrieval-augmented VQA pipeline with OOD gating and "
                    "hallucination detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--grid", help="patch grid, e.g. 2x2")
        p.add_argument("--top-k", type=int, dest="top_k")
        p.add_argument("--pool-size", type=int, dest="pool_size")
        p.add_argument("--tau", type=float)
        p.add_argument("--lambda", type=float, dest="lam")
        p.add_argument("--alpha", type=float)
        p.add_argument("--offline", action="store_true", default=None)
        p.add_argument("--subsample", type=int, metavar="N")
        p.add_argument("--seed", type=int, metavar="S")
        p.add_argument("--parallel", type=int, metavar="N")
        p.add_argument("--trace", action="store_true", default=None)
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--annotations")
        p.add_argument("--questions")
        p.add_argument("--images-dir", dest="images_dir")

    for name, doc in (
        ("run", "run the full pipeline and write outcomes"),
        ("eval", "recompute reports from stored outcomes"),
        ("ablate", "run the pipeline once per grid size"),
        ("retrieve", "one-off retrieval for a query (debugging)"),
        ("cache-warm", "pre-fetch knowledge for a dataset into the cache"),
    ):
        p = sub.add_parser(name, help=doc)
        add_common(p)
        if name == "retrieve":
            p.add_argument("--query", required=True)
        if name == "ablate":
            p.add_argument("--grids", default="2x2,3x3,4x4",
                           help="comma-separated grid list")
    return parser


def _overrides_from_args(args) -> dict:
    o: dict = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    if args.grid:
        rows, cols = _parse_grid(args.grid)
        put("grid", "rows", rows)
        put("grid", "cols", cols)
    put("retrieval", "k", args.top_k)
    put("retrieval", "pool_size", args.pool_size)
    put("retrieval", "offline", args.offline)
    put("guardrails", "tau", args.tau)
    put("guardrails", "lambda", args.lam)
    put("guardrails", "alpha", args.alpha)
    put("subsample", "n", args.subsample)
    put("subsample", "seed", args.seed)
    put("dataset", "annotations", args.annotations)
    put("dataset", "questions", args.questions)
    put("dataset", "images_dir", args.images_dir)
    if args.parallel is not None:
        o["parallel"] = args.parallel
    if args.trace is not None:
        o["trace"] = args.trace
    if args.output_dir is not None:
        o["output_dir"] = args.output_dir
    return o


def _load_samples(config: PipelineConfig):
    if not config.dataset.annotations or not config.dataset.questions:
        raise DatasetError("dataset.annotations and dataset.questions must be set")
    samples = load_dataset(config.dataset.annotations, config.dataset.questions)
    if config.subsample.n:
        samples = subsample(samples, config.subsample.n, config.subsample.seed)
    return samples


class _RunLock:
    """One pipeline run per output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run: {self.path}"
            ) from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _emit_run_artifacts(config: PipelineConfig, result, traces) -> None:
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_outcomes(result.outcomes, out_dir / "outcomes.jsonl")
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if result.failures:
        (out_dir / "failures.json").write_text(
            json.dumps(result.failures, indent=2) + "\n", encoding="utf-8"
        )
    if result.outcomes:
        _emit_reports(config, result.outcomes)
    if config.trace:
        trace_dir = out_dir / "trace"
        trace_dir.mkdir(exist_ok=True)
        for t in traces:
            (trace_dir / f"{t['sample_id']}.json").write_text(
                json.dumps(t, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
            )


def _emit_reports(config: PipelineConfig, outcomes) -> None:
    digest = config.digest()
    grid = (config.grid.rows, config.grid.cols)
    reports = []
    for split in ("ID", "OOD", "ALL"):
        if any(split == "ALL" or o.split == split for o in outcomes):
            reports.append(evaluation.aggregate(outcomes, split, grid, digest))
    sweep = evaluation.sweep_thresholds(outcomes)
    evaluation.emit_report(reports, config.output_dir, sweep)


def _cmd_run(config: PipelineConfig) -> int:
    samples = _load_samples(config)
    backend = pipeline.make_backend(config)
    with _RunLock(Path(config.output_dir)):
        result, traces = pipeline.run_samples(samples, backend, config)
        _emit_run_artifacts(config, result, traces)
        write_manifest(samples, Path(config.output_dir) / "manifest.jsonl")
    print(f"run: {len(result.outcomes)} outcomes, {len(result.failures)} failures, "
          f"{result.transport_requests} live fetches -> {config.output_dir}")
    if result.failures:
        return _STAGE_EXIT.get(result.failures[0]["stage"], EXIT_BACKEND)
    return EXIT_OK


def _cmd_eval(config: PipelineConfig) -> int:
    out_dir = Path(config.output_dir)
    outcomes_path = out_dir / "outcomes.jsonl"
    if not outcomes_path.exists():
        raise DatasetError(f"no outcomes found at {outcomes_path}")
    stored = out_dir / "config.json"
    if stored.exists():
        # Reports must match the original run, so replay its exact config
        # (keeping the directory we were pointed at).
        config = dataclasses.replace(parse_config(stored), output_dir=str(out_dir))
    outcomes = evaluation.read_outcomes(outcomes_path)
    _emit_reports(config, outcomes)
    print(f"eval: {len(outcomes)} outcomes -> {out_dir / 'reports.json'}")
    return EXIT_OK


def _cmd_ablate(config: PipelineConfig, grids_arg: str) -> int:
    grids = [_parse_grid(g) for g in grids_arg.split(",") if g.strip()]
    samples = _load_samples(config)
    backend = pipeline.make_backend(config)
    with _RunLock(Path(config.output_dir)):
        reports = evaluation.ablate_grids(samples, backend, config, grids)
        evaluation.emit_report(reports, config.output_dir)
    for r in reports:
        print(f"grid {r.grid[0]}x{r.grid[1]}: accuracy {r.accuracy:.4f}, "
              f"grounding {r.grounding_mean:.4f}")
    return EXIT_OK


def _cmd_retrieve(config: PipelineConfig, query: str) -> int:
    backend = pipeline.make_backend(config)
    transport = pipeline.make_transport(config)
    cache = DiskCache(config.retrieval.cache_dir)
    client = KnowledgeClient(transport, cache, offline=config.retrieval.offline)
    docs = client.gather(query, query, "", backend.embed_text, config.retrieval.pool_size)
    if not docs:
        print(json.dumps({"query": query, "docs": []}))
        return EXIT_OK
    ranked = score_and_rank(backend.embed_text(query), docs, config.retrieval.k)
    print(json.dumps({
        "query": query,
        "docs": [
            {"doc_id": sd.doc.doc_id, "title": sd.doc.title, "prob": sd.prob,
             "raw_score": sd.raw_score, "text": sd.doc.text[:200]}
            for sd in ranked.docs
        ],
    }, ensure_ascii=False, indent=2))
    return EXIT_OK


def _cmd_cache_warm(config: PipelineConfig) -> int:
    samples = _load_samples(config)
    backend = pipeline.make_backend(config)
    fetched = pipeline.warm_cache(samples, backend, config)
    print(f"cache-warm: {len(samples)} samples, {fetched} fetches -> "
          f"{config.retrieval.cache_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config, _overrides_from_args(args))
        if args.command == "run":
            return _cmd_run(config)
        if args.command == "eval":
            return _cmd_eval(config)
        if args.command == "ablate":
            return _cmd_ablate(config, args.grids)
        if args.command == "retrieve":
            return _cmd_retrieve(config, args.query)
        if args.command == "cache-warm":
            return _cmd_cache_warm(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATASET
    except StageFailure as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return _STAGE_EXIT.get(e.stage, EXIT_BACKEND)
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except RetrievalError as e:
        print(f"retrieval error: {e}", file=sys.stderr)
        return EXIT_RETRIEVAL
    except RagVqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
