"""Execution judge against the real harness, when it is installed.

The primary suite never requires the harness (the protocol stub covers it);
these tests only add end-to-end confidence when both packages are present.
"""

from __future__ import annotations

import importlib.util
import sys
import time

import pytest

from conftest import code_example

from sftcurate.datamodel import Decision
from sftcurate.judges import JudgeKind, JudgeSpec, SandboxClient, judge_code

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("sandbox_runner") is None,
    reason="sandbox_runner harness not installed")

HARNESS_CMD = (sys.executable, "-m", "sandbox_runner")
PREDICTION = ("def add_list(list1, list2):\n"
              "  return list(map(lambda x, y:x+y, list1, list2))")


def wrap(code: str) -> str:
    return f"[[BEGIN]]\n{code}\n[[DONE]]"


def spec(timeout_s: float = 5.0) -> JudgeSpec:
    return JudgeSpec(kind=JudgeKind.CODE_EXECUTION, sandbox_cmd=HARNESS_CMD,
                     test_timeout_s=timeout_s)


def test_model_prediction_passes_corpus_asserts():
    example = code_example()
    with SandboxClient(HARNESS_CMD) as sandbox:
        verdict = judge_code(wrap(PREDICTION), example.fields["tests"],
                             spec(), sandbox)
    assert verdict.decision is Decision.ACCEPT
    assert [t["passed"] for t in verdict.evidence["tests"]] == [True] * 3


def test_gold_code_passes_its_own_tests():
    example = code_example()
    with SandboxClient(HARNESS_CMD) as sandbox:
        verdict = judge_code(wrap(example.gold), example.fields["tests"],
                             spec(), sandbox)
    assert verdict.decision is Decision.ACCEPT


def test_broken_code_rejected_with_three_failures():
    example = code_example()
    with SandboxClient(HARNESS_CMD) as sandbox:
        verdict = judge_code(wrap("value = undefined_name"),
                             example.fields["tests"], spec(), sandbox)
    assert verdict.decision is Decision.REJECT
    assert [t["passed"] for t in verdict.evidence["tests"]] == [False] * 3


def test_ingested_gold_code_accepted_across_a_corpus(tmp_path):
    """Every gold program in a corpus file passes its own tests."""
    import json

    from sftcurate.datamodel import TaskKind
    from sftcurate.ingest import DatasetFile, load_dataset

    records = [
        {"text": "Add two lists elementwise.",
         "test_list": ["assert add_list([1,2],[3,4]) == [4,6]",
                       "assert add_list([],[]) == []",
                       "assert add_list([5],[5]) == [10]"],
         "code": "def add_list(a,b):\n  return [x+y for x,y in zip(a,b)]"},
        {"text": "Square a number.",
         "test_list": ["assert square(3) == 9", "assert square(0) == 0",
                       "assert square(-2) == 4"],
         "code": "def square(n):\n  return n*n"},
        {"text": "Reverse words in a sentence.",
         "test_list": ["assert rev('a b') == 'b a'",
                       "assert rev('x') == 'x'",
                       "assert rev('1 2 3') == '3 2 1'"],
         "code": "def rev(s):\n  return ' '.join(reversed(s.split()))"},
    ]
    path = tmp_path / "corpus.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    examples = load_dataset(DatasetFile(path, TaskKind.CODE_GENERATION))
    with SandboxClient(HARNESS_CMD) as sandbox:
        for example in examples:
            verdict = judge_code(wrap(example.gold), example.fields["tests"],
                                 spec(), sandbox)
            assert verdict.decision is Decision.ACCEPT, example.id


def test_busy_loop_rejected_via_timeouts_within_budget():
    example = code_example()
    timeout_s = 1.0
    started = time.monotonic()
    with SandboxClient(HARNESS_CMD) as sandbox:
        verdict = judge_code(wrap("def add_list(a, b):\n  while True: pass"),
                             example.fields["tests"], spec(timeout_s),
                             sandbox)
    elapsed = time.monotonic() - started
    assert verdict.decision is Decision.REJECT
    assert all(t["error"] == "timeout" for t in verdict.evidence["tests"])
    assert elapsed <= 3 * timeout_s + 2.0  # overhead: one worker spawn
