"""Shared fixtures: a small OK-VQA-format dataset and mock backends."""

import json

import pytest

from ragvqa.backends import MockBackend

# (question_id, question, category code, majority answer, minority answer)
FIXTURE_ITEMS = [
    (101, "what sport is this?", "SR", "motocross", "tennis"),
    (102, "what is on the hot dog?", "CF", "mustard", "ketchup"),
    (103, "what animal is shown?", "PA", "giraffe", "horse"),
    (104, "what season is it?", "WC", "winter", "summer"),
    (105, "what device is on the desk?", "ST", "laptop", "camera"),
    (106, "what vehicle is pictured?", "VT", "train", "sailboat"),
    (107, "what brand product is shown?", "BCP", "camera", "laptop"),
    (108, "what material is the shirt?", "OMC", "cotton", "velvet"),
    (109, "what landmark is behind them?", "GHLC", "bridge", "harbor"),
    (110, "what is the person holding?", "PEL", "umbrella", "lantern"),
    (111, "what could this be used for?", "other", "compass", "anchor"),
    (112, "what food is on the plate?", "CF", "pizza", "broccoli"),
]


def write_okvqa_files(dirpath, items=FIXTURE_ITEMS):
    """Write a question/annotation file pair in the public layout."""
    questions = {
        "questions": [
            {"question_id": qid, "image_id": 9000 + qid, "question": q}
            for qid, q, _, _, _ in items
        ]
    }
    annotations = {
        "annotations": [
            {
                "question_id": qid,
                "image_id": 9000 + qid,
                "question_type": code,
                "answers": [
                    {"answer": major if i < 6 else minor, "answer_id": i + 1}
                    for i in range(10)
                ],
            }
            for qid, _, code, major, minor in items
        ]
    }
    qpath = dirpath / "questions.json"
    apath = dirpath / "annotations.json"
    qpath.write_text(json.dumps(questions), encoding="utf-8")
    apath.write_text(json.dumps(annotations), encoding="utf-8")
    return apath, qpath


@pytest.fixture(scope="session")
def okvqa_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("okvqa")
    return write_okvqa_files(d)


@pytest.fixture
def mock_backend():
    return MockBackend(seed=42)


@pytest.fixture
def small_backend():
    """Low-dimensional mock for loops where 384 dims would be slow."""
    return MockBackend(seed=7, embedding_dim=16)


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per criterion at session end

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}: {name}")
