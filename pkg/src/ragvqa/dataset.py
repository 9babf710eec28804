"""OK-VQA style annotation ingestion, answer normalization and ID/OOD splits."""

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .exceptions import DatasetError, ValidationError
from .hashing import mix


class KnowledgeCategory(Enum):
    VEHICLES_TRANSPORTATION = "Vehicles & Transportation"
    BRANDS_COMPANIES_PRODUCTS = "Brands, Companies & Products"
    OBJECTS_MATERIALS_CLOTHING = "Objects, Materials & Clothing"
    SPORTS_RECREATION = "Sports & Recreation"
    COOKING_FOOD = "Cooking & Food"
    GEOGRAPHY_HISTORY_LANGUAGE_CULTURE = "Geography, History, Language & Culture"
    PEOPLE_EVERYDAY_LIFE = "People & Everyday Life"
    PLANTS_ANIMALS = "Plants & Animals"
    SCIENCE_TECHNOLOGY = "Science & Technology"
    WEATHER_CLIMATE = "Weather & Climate"
    OTHER = "Other"


# The public annotation files carry short question_type codes rather than
# the full category labels; both spellings of the conjunction are accepted.
_CATEGORY_CODES = {
    "VT": KnowledgeCategory.VEHICLES_TRANSPORTATION,
    "BCP": KnowledgeCategory.BRANDS_COMPANIES_PRODUCTS,
    "OMC": KnowledgeCategory.OBJECTS_MATERIALS_CLOTHING,
    "SR": KnowledgeCategory.SPORTS_RECREATION,
    "CF": KnowledgeCategory.COOKING_FOOD,
    "GHLC": KnowledgeCategory.GEOGRAPHY_HISTORY_LANGUAGE_CULTURE,
    "PEL": KnowledgeCategory.PEOPLE_EVERYDAY_LIFE,
    "PA": KnowledgeCategory.PLANTS_ANIMALS,
    "ST": KnowledgeCategory.SCIENCE_TECHNOLOGY,
    "WC": KnowledgeCategory.WEATHER_CLIMATE,
    "other": KnowledgeCategory.OTHER,
}

_CATEGORY_LABELS = {c.value: c for c in KnowledgeCategory}
_CATEGORY_LABELS.update(
    {c.value.replace(" & ", " and "): c for c in KnowledgeCategory}
)

OOD_CATEGORIES = frozenset(
    {
        KnowledgeCategory.VEHICLES_TRANSPORTATION,
        KnowledgeCategory.BRANDS_COMPANIES_PRODUCTS,
        KnowledgeCategory.SPORTS_RECREATION,
        KnowledgeCategory.SCIENCE_TECHNOLOGY,
        KnowledgeCategory.WEATHER_CLIMATE,
    }
)


def parse_category(label: str) -> KnowledgeCategory:
    """Resolve a category label or question_type code to the enum."""
    key = label.strip()
    if key in _CATEGORY_LABELS:
        return _CATEGORY_LABELS[key]
    if key in _CATEGORY_CODES:
        return _CATEGORY_CODES[key]
    raise ValidationError(f"unrecognized knowledge category: {label!r}")


def split_membership(category: KnowledgeCategory) -> str:
    """Return "OOD" or "ID" for a category."""
    return "OOD" if category in OOD_CATEGORIES else "ID"


@dataclass(frozen=True)
class Sample:
    """One question with its image reference and the 10 annotator answers."""

    sample_id: str
    image_ref: str
    question: str
    gt_answers: tuple[str, ...]
    category: KnowledgeCategory

    def __post_init__(self):
        if len(self.gt_answers) != 10:
            raise ValidationError(
                f"sample {self.sample_id}: expected 10 answers, got {len(self.gt_answers)}"
            )
        if not self.question.strip():
            raise ValidationError(f"sample {self.sample_id}: empty question")

    @property
    def split(self) -> str:
        return split_membership(self.category)


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)
_WS_RE = re.compile(r"\s+")
_ARTICLES = {"a", "an", "the"}


def normalize_answer(raw: str) -> str:
    """Canonicalize an answer string for comparison.

    Lowercases, maps punctuation to spaces, collapses whitespace and strips
    leading articles.  Idempotent by construction.
    """
    text = _PUNCT_RE.sub(" ", raw.lower())
    words = _WS_RE.split(text.strip())
    while words and words[0] in _ARTICLES:
        words = words[1:]
    return " ".join(w for w in words if w)


def load_dataset(annotations_path: str | Path, questions_path: str | Path) -> list[Sample]:
    """Load samples from a question/annotation file pair.

    The question file carries question text keyed by question_id; the
    annotation file carries the 10 answer records, image id and category.
    The two files must cover exactly the same question ids.
    """
    annotations_path = Path(annotations_path)
    questions_path = Path(questions_path)
    for p in (annotations_path, questions_path):
        if not p.exists():
            raise DatasetError(f"file not found: {p}")

    try:
        ann_doc = json.loads(annotations_path.read_text(encoding="utf-8"))
        q_doc = json.loads(questions_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"malformed annotation container: {e}") from e

    questions = {}
    for rec in q_doc.get("questions", []):
        questions[rec["question_id"]] = rec

    annotations = {}
    for rec in ann_doc.get("annotations", []):
        annotations[rec["question_id"]] = rec

    only_q = set(questions) - set(annotations)
    only_a = set(annotations) - set(questions)
    if only_q or only_a:
        missing = sorted(only_q | only_a)[0]
        raise DatasetError(
            f"question_id {missing} present in only one of the two files"
        )

    samples = []
    for qid in sorted(annotations):
        ann = annotations[qid]
        q = questions[qid]
        answers = [a["answer"] for a in ann.get("answers", [])]
        if len(answers) != 10:
            raise DatasetError(
                f"question_id {qid}: expected 10 answers, got {len(answers)}"
            )
        category = parse_category(str(ann.get("question_type", "other")))
        image_id = ann.get("image_id", q.get("image_id"))
        samples.append(
            Sample(
                sample_id=str(qid),
                image_ref=f"image:{image_id}",
                question=q["question"],
                gt_answers=tuple(answers),
                category=category,
            )
        )
    return samples


def subsample(samples: list[Sample], n: int, seed: int) -> list[Sample]:
    """Deterministic pseudo-random subset of size n, stable across platforms.

    Each index is keyed through the 64-bit mixer; the n smallest keys win
    and the chosen samples keep their original order.
    """
    if n > len(samples):
        raise ValidationError(f"cannot subsample {n} from {len(samples)} samples")
    if n == len(samples):
        return list(samples)
    keyed = sorted(range(len(samples)), key=lambda i: (mix(seed, i), i))
    chosen = sorted(keyed[:n])
    return [samples[i] for i in chosen]


def write_manifest(samples: list[Sample], path: str | Path) -> None:
    """Emit one normalized record per sample (JSON lines)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "sample_id": s.sample_id,
                "image_ref": s.image_ref,
                "question": s.question,
                "gt_answers": list(s.gt_answers),
                "normalized_answers": [normalize_answer(a) for a in s.gt_answers],
                "category": s.category.value,
                "split": s.split,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_manifest(path: str | Path) -> list[Sample]:
    """Load samples back from a manifest written by write_manifest."""
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            samples.append(
                Sample(
                    sample_id=rec["sample_id"],
                    image_ref=rec["image_ref"],
                    question=rec["question"],
                    gt_answers=tuple(rec["gt_answers"]),
                    category=parse_category(rec["category"]),
                )
            )
    return samples
