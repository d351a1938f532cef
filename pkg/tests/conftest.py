from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sftcurate.datamodel import TaskExample, TaskKind
from sftcurate.inference import EndpointConfig
from sftcurate.prompting import TemplateSet


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        number, name = marker.args
        status = ("PASS" if report.passed
                  else "SKIP" if report.skipped else "FAIL")
        print(f"\nACCEPTANCE {number} ({name}): {status}")


@pytest.fixture(scope="session")
def templates() -> TemplateSet:
    return TemplateSet()


#: stand-alone stdin/stdout program speaking the sandbox JSON line protocol,
#: scripted off markers in the candidate code
STUB_SANDBOX = r'''
import json, sys
for line in sys.stdin:
    if not line.strip():
        continue
    try:
        job = json.loads(line)
        code = job["code"]
        n = len(job["tests"])
    except Exception as exc:
        print(json.dumps({"results": [], "fatal": f"bad job: {exc}"}),
              flush=True)
        continue
    if "FATAL" in code:
        resp = {"results": [{"passed": False, "error": "not run"}] * n,
                "fatal": "scripted harness failure"}
    elif "FAIL_ONE" in code:
        resp = {"results": [{"passed": i > 0,
                             "error": None if i > 0 else "AssertionError"}
                            for i in range(n)],
                "fatal": None}
    elif "TIMEOUT" in code:
        resp = {"results": [{"passed": False, "error": "timeout"}] * n,
                "fatal": None}
    elif "SHORT" in code:
        resp = {"results": [{"passed": True, "error": None}], "fatal": None}
    else:
        resp = {"results": [{"passed": True, "error": None}] * n,
                "fatal": None}
    print(json.dumps(resp), flush=True)
'''


@pytest.fixture(scope="session")
def stub_sandbox_cmd(tmp_path_factory) -> tuple[str, ...]:
    path = tmp_path_factory.mktemp("stub") / "stub_sandbox.py"
    path.write_text(STUB_SANDBOX, encoding="utf-8")
    return (sys.executable, str(path))


@pytest.fixture
def fast_endpoint_cfg():
    """Endpoint config with near-zero backoff so retry tests stay quick."""

    def make(base_url: str = "http://mock.invalid", **overrides) -> EndpointConfig:
        settings = dict(base_url=base_url, model_id="mock",
                        max_retries=3, max_parallel=4,
                        backoff_base_s=0.001, backoff_cap_s=0.002,
                        timeout_s=10.0)
        settings.update(overrides)
        return EndpointConfig(**settings)

    return make


def scripted_math_responder(prediction_ok: list[bool],
                            paraphrase_ok: list[bool],
                            answers: list[int],
                            fail_prediction_for: set[int] = frozenset(),
                            fail_paraphrase_for: set[int] = frozenset()):
    """Responder for math-task curation runs.

    Emits a final number matching the example's gold answer when the script
    says the stage should be judged correct; scripted endpoint failures
    return HTTP 500. Scoring requests get deterministic logprobs.
    """
    import re

    from llm_mocks import Reply, default_scoring, is_scoring_request, \
        scored_target

    def responder(payload):
        if is_scoring_request(payload):
            return Reply(text="",
                         token_logprobs=default_scoring(scored_target(payload)))
        content = "\n".join(m["content"] for m in payload["messages"])
        match = re.search(r"Problem number (\d+):", content)
        assert match, f"unrecognized prompt: {content[:120]}"
        i = int(match.group(1))
        is_paraphrase = "Reference solution:" in content
        if i in (fail_paraphrase_for if is_paraphrase else fail_prediction_for):
            return Reply(status=500)
        ok = (paraphrase_ok if is_paraphrase else prediction_ok)[i]
        answer = answers[i] if ok else answers[i] + 1
        stage = "paraphrase" if is_paraphrase else "prediction"
        return Reply(text=f"scripted {stage} for {i}. #### {answer}")

    return responder


def math_example(i: int, answer: int = 18) -> TaskExample:
    return TaskExample(
        id=f"train-{i}",
        task=TaskKind.MATH_WORD_PROBLEM,
        fields={"question": f"Problem number {i}: how many eggs?"},
        gold=f"She sells the rest for {answer} dollars. #### {answer}",
    )


def code_example(i: int = 1) -> TaskExample:
    return TaskExample(
        id=f"train-{i}",
        task=TaskKind.CODE_GENERATION,
        fields={
            "description": "Write a function to add two lists using map "
                           "and lambda function.",
            "tests": [
                "assert add_list([1, 2, 3], [4, 5, 6]) == [5, 7, 9]",
                "assert add_list([1, 2], [3, 4]) == [4, 6]",
                "assert add_list([10, 20, 30], [15, 25, 35]) == [25, 45, 65]",
            ],
        },
        gold=("def add_list(nums1,nums2):\n"
              "  result = map(lambda x, y:x+y, nums1, nums2)\n"
              "  return list(result)"),
    )


def rc_example(i: int = 1, answerable: bool = True) -> TaskExample:
    return TaskExample(
        id=f"train-{i}",
        task=TaskKind.READING_COMPREHENSION,
        fields={
            "context": f"Paragraph {i}. The harbor opened in 1854 and "
                       "closed a century later.",
            "question": "When did the harbor open?",
            "answerable": answerable,
        },
        gold="1854" if answerable else "Answer not in context.",
    )
