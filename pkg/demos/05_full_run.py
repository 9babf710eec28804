"""
End-to-end evaluation run
=========================

Loads an annotation fixture, warms the knowledge cache, runs the whole
pipeline offline twice, and shows that the outcomes are byte-identical
with zero live fetches.  Uses the mock backend and fixture transport, so
this runs anywhere in a couple of seconds.

The same flow via the CLI:

    ragvqa cache-warm --config config.json
    ragvqa run --config config.json --offline
    ragvqa eval --output-dir runs/latest
"""

import json
import tempfile
from pathlib import Path

from ragvqa.cli import main

tmp = Path(tempfile.mkdtemp())

# A three-question dataset in the public annotation layout.
questions = {"questions": [
    {"question_id": 1, "image_id": 11, "question": "what sport is this?"},
    {"question_id": 2, "image_id": 12, "question": "what is on the hot dog?"},
    {"question_id": 3, "image_id": 13, "question": "what animal is shown?"},
]}
annotations = {"annotations": [
    {"question_id": 1, "image_id": 11, "question_type": "SR",
     "answers": [{"answer": "motocross"}] * 6 + [{"answer": "tennis"}] * 4},
    {"question_id": 2, "image_id": 12, "question_type": "CF",
     "answers": [{"answer": "mustard"}] * 5 + [{"answer": "ketchup"}] * 5},
    {"question_id": 3, "image_id": 13, "question_type": "PA",
     "answers": [{"answer": "giraffe"}] * 7 + [{"answer": "horse"}] * 3},
]}
(tmp / "questions.json").write_text(json.dumps(questions))
(tmp / "annotations.json").write_text(json.dumps(annotations))

config = {
    "dataset": {"annotations": str(tmp / "annotations.json"),
                "questions": str(tmp / "questions.json")},
    "retrieval": {"transport": "fixture", "cache_dir": str(tmp / "cache")},
    "guardrails": {"tau": 0.5, "lambda": 0.5, "alpha": 0.5},
}
(tmp / "config.json").write_text(json.dumps(config))

print("== cache-warm ==")
main(["cache-warm", "--config", str(tmp / "config.json")])

print("\n== two offline runs ==")
for out in ("r1", "r2"):
    main(["run", "--config", str(tmp / "config.json"), "--offline",
          "--output-dir", str(tmp / out)])

b1 = (tmp / "r1" / "outcomes.jsonl").read_bytes()
b2 = (tmp / "r2" / "outcomes.jsonl").read_bytes()
print("\nbyte-identical outcomes:", b1 == b2)

print("\n== per-split report ==")
reports = json.loads((tmp / "r1" / "reports.json").read_text())
for r in reports:
    print(f"{r['split']:>4}: n={r['n']} accuracy={r['accuracy']:.4f} "
          f"grounding={r['grounding_mean']:+.4f} "
          f"hallucination_rate={r['hallucination_rate']:.2f} bce={r['bce']:.4f}")

print("\n== grid ablation ==")
main(["ablate", "--config", str(tmp / "config.json"),
      "--output-dir", str(tmp / "ablate")])
