"""Metrics and reporting: soft accuracy, BCE, split aggregates, grid ablation."""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .dataset import normalize_answer
from .exceptions import ValidationError
from .guardrails import ConfidenceScore, GateDecision, GroundingReport

BCE_EPS = 1e-12


@dataclass(frozen=True)
class VqaOutcome:
    """Per-sample pipeline result, the unit the harness aggregates."""

    sample_id: str
    category: str
    split: str  # "ID" | "OOD"
    predicted_answer: str
    retrieval_summary: tuple[tuple[str, float], ...]  # (doc_id, prob)
    confidence: ConfidenceScore
    grounding: GroundingReport
    gate: GateDecision
    soft_accuracy: float
    answer_marginal_prob: float | None = None


@dataclass(frozen=True)
class RunReport:
    split: str  # "ID" | "OOD" | "ALL"
    n: int
    accuracy: float
    grounding_mean: float
    hallucination_rate: float
    bce: float
    grid: tuple[int, int]
    config_digest: str


def soft_accuracy(pred: str, gt_answers: list[str] | tuple[str, ...]) -> float:
    """Multi-annotator credit: min(matching answers / 3, 1)."""
    if len(gt_answers) != 10:
        raise ValidationError(f"expected 10 ground-truth answers, got {len(gt_answers)}")
    norm_pred = normalize_answer(pred)
    m = sum(1 for gt in gt_answers if normalize_answer(gt) == norm_pred)
    return min(m / 3.0, 1.0)


def bce_loss(labels: list[int], probs: list[float]) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0/1."""
    if len(labels) != len(probs):
        raise ValidationError(f"length mismatch: {len(labels)} labels vs {len(probs)} probs")
    if not labels:
        raise ValidationError("bce_loss needs at least one prediction")
    total = []
    for y, p in zip(labels, probs):
        if y not in (0, 1):
            raise ValidationError(f"labels must be 0 or 1, got {y}")
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"probability out of range: {p}")
        p = min(max(p, BCE_EPS), 1.0 - BCE_EPS)
        total.append(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    return -math.fsum(total) / len(labels)


def aggregate(outcomes: list[VqaOutcome], split: str,
              grid: tuple[int, int] = (2, 2), config_digest: str = "") -> RunReport:
    """Aggregate one split ("ID", "OOD" or "ALL") into a report."""
    if split not in ("ID", "OOD", "ALL"):
        raise ValidationError(f"unknown split {split!r}")
    selected = [o for o in outcomes if split == "ALL" or o.split == split]
    if not selected:
        raise ValidationError(f"no outcomes for split {split}")
    n = len(selected)
    accuracy = math.fsum(o.soft_accuracy for o in selected) / n
    grounding_mean = math.fsum(o.grounding.g_mean for o in selected) / n
    hallucination_rate = sum(1 for o in selected if o.grounding.hallucinated) / n
    labels = [1 if o.soft_accuracy > 0 else 0 for o in selected]
    probs = [o.confidence.s_combined for o in selected]
    return RunReport(
        split=split,
        n=n,
        accuracy=accuracy,
        grounding_mean=grounding_mean,
        hallucination_rate=hallucination_rate,
        bce=bce_loss(labels, probs),
        grid=grid,
        config_digest=config_digest,
    )


def sweep_thresholds(outcomes: list[VqaOutcome], points: int = 11) -> list[dict]:
    """Recompute threshold-dependent rates over an even grid in [0, 1].

    Grounding means and combined scores are stored per sample, so both
    sweeps replay from outcomes without touching any backend.
    """
    if not outcomes:
        raise ValidationError("no outcomes to sweep")
    rows = []
    n = len(outcomes)
    for i in range(points):
        t = i / (points - 1)
        rows.append(
            {
                "threshold": t,
                "hallucination_rate": sum(1 for o in outcomes if o.grounding.g_mean < t) / n,
                "ood_rate": sum(1 for o in outcomes if o.confidence.s_combined < t) / n,
            }
        )
    return rows


def ablate_grids(samples, backend, config, grids=((2, 2), (3, 3), (4, 4))) -> list[RunReport]:
    """One full pipeline run per grid size, all else held fixed."""
    from . import pipeline  # local import to avoid a cycle

    if not grids:
        raise ValidationError("grids must be non-empty")
    reports = []
    for rows, cols in grids:
        cfg = config.with_grid(rows, cols)
        result, _traces = pipeline.run_samples(samples, backend, cfg)
        reports.append(aggregate(result.outcomes, "ALL", grid=(rows, cols),
                                 config_digest=cfg.digest()))
    return reports


# ---------------------------------------------------------------------------
# serialization

def outcome_to_record(o: VqaOutcome) -> dict:
    return {
        "sample_id": o.sample_id,
        "category": o.category,
        "split": o.split,
        "predicted_answer": o.predicted_answer,
        "retrieval_summary": [[d, p] for d, p in o.retrieval_summary],
        "confidence": {
            "s_fused": o.confidence.s_fused,
            "s_visual": o.confidence.s_visual,
            "s_textual": o.confidence.s_textual,
            "s_combined": o.confidence.s_combined,
            "degraded": o.confidence.degraded,
        },
        "grounding": {
            "g_mean": o.grounding.g_mean,
            "per_gt_cosines": list(o.grounding.per_gt_cosines),
            "tau": o.grounding.tau,
            "hallucinated": o.grounding.hallucinated,
        },
        "gate": {
            "label": o.gate.label,
            "threshold": o.gate.threshold,
            "score": o.gate.score,
        },
        "soft_accuracy": o.soft_accuracy,
        "answer_marginal_prob": o.answer_marginal_prob,
    }


def record_to_outcome(rec: dict) -> VqaOutcome:
    return VqaOutcome(
        sample_id=rec["sample_id"],
        category=rec["category"],
        split=rec["split"],
        predicted_answer=rec["predicted_answer"],
        retrieval_summary=tuple((d, p) for d, p in rec["retrieval_summary"]),
        confidence=ConfidenceScore(**rec["confidence"]),
        grounding=GroundingReport(
            g_mean=rec["grounding"]["g_mean"],
            per_gt_cosines=tuple(rec["grounding"]["per_gt_cosines"]),
            tau=rec["grounding"]["tau"],
            hallucinated=rec["grounding"]["hallucinated"],
        ),
        gate=GateDecision(**rec["gate"]),
        soft_accuracy=rec["soft_accuracy"],
        answer_marginal_prob=rec.get("answer_marginal_prob"),
    )


def write_outcomes(outcomes: list[VqaOutcome], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(outcome_to_record(o), ensure_ascii=False) + "\n")


def read_outcomes(path: str | Path) -> list[VqaOutcome]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(record_to_outcome(json.loads(line)))
    return out


def report_to_record(r: RunReport) -> dict:
    return {
        "split": r.split,
        "n": r.n,
        "accuracy": r.accuracy,
        "grounding_mean": r.grounding_mean,
        "hallucination_rate": r.hallucination_rate,
        "bce": r.bce,
        "grid": [r.grid[0], r.grid[1]],
        "config_digest": r.config_digest,
    }


def record_to_report(rec: dict) -> RunReport:
    return RunReport(
        split=rec["split"],
        n=rec["n"],
        accuracy=rec["accuracy"],
        grounding_mean=rec["grounding_mean"],
        hallucination_rate=rec["hallucination_rate"],
        bce=rec["bce"],
        grid=(rec["grid"][0], rec["grid"][1]),
        config_digest=rec["config_digest"],
    )


def emit_report(reports: list[RunReport], out_dir: str | Path,
                sweep_rows: list[dict] | None = None) -> None:
    """Write the machine-readable report plus a columnar summary table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "reports.json").write_text(
        json.dumps([report_to_record(r) for r in reports], indent=2) + "\n",
        encoding="utf-8",
    )
    with (out_dir / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["split", "n", "accuracy", "grounding_mean", "hallucination_rate",
             "bce", "grid_rows", "grid_cols", "config_digest"]
        )
        for r in reports:
            writer.writerow(
                [r.split, r.n, f"{r.accuracy:.8g}", f"{r.grounding_mean:.8g}",
                 f"{r.hallucination_rate:.8g}", f"{r.bce:.8g}",
                 r.grid[0], r.grid[1], r.config_digest]
            )
    if sweep_rows:
        with (out_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "hallucination_rate", "ood_rate"])
            for row in sweep_rows:
                writer.writerow(
                    [f"{row['threshold']:.8g}", f"{row['hallucination_rate']:.8g}",
                     f"{row['ood_rate']:.8g}"]
                )


def read_reports(path: str | Path) -> list[RunReport]:
    recs = json.loads(Path(path).read_text(encoding="utf-8"))
    return [record_to_report(rec) for rec in recs]
