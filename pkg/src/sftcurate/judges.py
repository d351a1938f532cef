"""Equivalence judges: last-number match, sandboxed test execution, and
reference-guided LLM grading, plus judge calibration against human labels.

The execution judge talks to an external harness over a JSON line protocol:
one request object per line on the harness's stdin
(``{"code": str, "tests": [str], "timeout_s": number}``), one response
object per line on its stdout
(``{"results": [{"passed": bool, "error": str|null}], "fatal": str|null}``).
Any program speaking that protocol will do.
"""

from __future__ import annotations

import enum
import json
import queue
import re
import subprocess
import threading
from dataclasses import dataclass
from typing import Any, Sequence

from .datamodel import (
    Decision,
    SamplingParams,
    TaskExample,
    TaskKind,
    Verdict,
)
from .inference import EndpointConfig, InferenceClient, InferenceError
from .prompting import (
    MarkerError,
    TemplateSet,
    extract_code,
    extract_final_number,
    numbers_equal,
    render,
)


class JudgeKind(enum.Enum):
    LAST_NUMBER = "last_number"
    CODE_EXECUTION = "code_execution"
    LLM_JUDGE = "llm_judge"


_DEFAULT_JUDGE: dict[TaskKind, JudgeKind] = {
    TaskKind.MATH_WORD_PROBLEM: JudgeKind.LAST_NUMBER,
    TaskKind.CODE_GENERATION: JudgeKind.CODE_EXECUTION,
    TaskKind.READING_COMPREHENSION: JudgeKind.LLM_JUDGE,
}


def default_judge_kind(task: TaskKind) -> JudgeKind:
    return _DEFAULT_JUDGE[task]


@dataclass(frozen=True)
class JudgeSpec:
    """Which judge to run and how.

    ``endpoint`` applies to the LLM judge (None means: reuse the curation
    endpoint); ``sandbox_cmd``/``test_timeout_s`` apply to the execution
    judge. ``override`` permits a kind that differs from the task's default
    binding.
    """

    kind: JudgeKind
    endpoint: EndpointConfig | None = None
    template: str = "judge"
    sandbox_cmd: tuple[str, ...] | None = None
    test_timeout_s: float = 5.0
    max_judge_tokens: int = 16
    override: bool = False


def check_judge_compat(spec: JudgeSpec, task: TaskKind) -> None:
    expected = default_judge_kind(task)
    if spec.kind is not expected and not spec.override:
        raise ValueError(
            f"judge kind {spec.kind.value} does not match the default for "
            f"{task.value} ({expected.value}); set override to force it")


# -- heuristic judge ---------------------------------------------------------

def judge_last_number(candidate: str, gold: str) -> Verdict:
    """Accept iff both sides have a final number and they compare equal."""
    cand_n = extract_final_number(candidate)
    gold_n = extract_final_number(gold)
    evidence: dict[str, Any] = {"candidate_number": cand_n,
                                "gold_number": gold_n}
    if cand_n is None or gold_n is None:
        sides = [name for name, value in
                 (("candidate", cand_n), ("gold", gold_n)) if value is None]
        evidence["missing_number"] = sides
        return Verdict(Decision.REJECT, evidence)
    decision = Decision.ACCEPT if numbers_equal(cand_n, gold_n) else Decision.REJECT
    return Verdict(decision, evidence)


# -- execution judge ---------------------------------------------------------

class SandboxUnavailable(Exception):
    """The harness could not be started or stopped answering."""


def _job_deadline(n_tests: int, timeout_s: float) -> float:
    # harness budget per job, plus slack for worker startup
    return n_tests * (timeout_s + 0.5) + 10.0


class SandboxClient:
    """One harness child process; requests are serialized per process."""

    def __init__(self, cmd: Sequence[str]):
        self.cmd = list(cmd)
        self._proc: subprocess.Popen[str] | None = None
        self._lock = threading.Lock()

    def _ensure_proc(self) -> subprocess.Popen[str]:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1)
            except OSError as exc:
                raise SandboxUnavailable(
                    f"cannot start sandbox {self.cmd!r}: {exc}") from exc
        return self._proc

    def run(self, code: str, tests: Sequence[str],
            timeout_s: float) -> dict[str, Any]:
        with self._lock:
            proc = self._ensure_proc()
            request = json.dumps({"code": code, "tests": list(tests),
                                  "timeout_s": timeout_s})
            try:
                assert proc.stdin is not None
                proc.stdin.write(request + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self.close()
                raise SandboxUnavailable(f"sandbox pipe broken: {exc}") from exc

            line: list[str] = []

            def read() -> None:
                assert proc.stdout is not None
                line.append(proc.stdout.readline())

            reader = threading.Thread(target=read, daemon=True)
            reader.start()
            reader.join(_job_deadline(len(tests), timeout_s))
            if reader.is_alive() or not line or not line[0]:
                self.close()
                raise SandboxUnavailable("sandbox produced no response line")
            try:
                response = json.loads(line[0])
            except json.JSONDecodeError as exc:
                self.close()
                raise SandboxUnavailable(
                    f"sandbox wrote invalid JSON: {exc}") from exc
            if not isinstance(response, dict) or "results" not in response:
                self.close()
                raise SandboxUnavailable("sandbox response missing 'results'")
            return response

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is not None and proc.poll() is None:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "SandboxClient":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


class SandboxPool:
    """Fixed pool of harness processes; distinct candidates may run in
    parallel in distinct processes."""

    def __init__(self, cmd: Sequence[str], size: int = 1):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._clients: queue.Queue[SandboxClient] = queue.Queue()
        self._all = [SandboxClient(cmd) for _ in range(size)]
        for client in self._all:
            self._clients.put(client)

    def run(self, code: str, tests: Sequence[str],
            timeout_s: float) -> dict[str, Any]:
        client = self._clients.get()
        try:
            return client.run(code, tests, timeout_s)
        finally:
            self._clients.put(client)

    def close(self) -> None:
        for client in self._all:
            client.close()

    def __enter__(self) -> "SandboxPool":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def judge_code(candidate_completion: str, tests: Sequence[str],
               spec: JudgeSpec,
               sandbox: SandboxClient | SandboxPool | None = None) -> Verdict:
    """Extract the marked code block and run it against the assertions.

    Accept iff extraction succeeds and every test passes. Extraction failure
    is a Reject (the candidate broke the protocol); harness trouble is a
    JudgeError.
    """
    try:
        code = extract_code(candidate_completion)
    except MarkerError as exc:
        return Verdict(Decision.REJECT, {
            "extraction_error": f"markers missing: {exc.missing}",
            "tests": [],
        })

    owned = None
    if sandbox is None:
        if spec.sandbox_cmd is None:
            return Verdict(Decision.JUDGE_ERROR,
                           {"reason": "no sandbox command configured"})
        sandbox = owned = SandboxClient(spec.sandbox_cmd)
    try:
        response = sandbox.run(code, tests, spec.test_timeout_s)
    except SandboxUnavailable as exc:
        return Verdict(Decision.JUDGE_ERROR, {"reason": str(exc)})
    finally:
        if owned is not None:
            owned.close()

    results = response.get("results") or []
    fatal = response.get("fatal")
    if fatal:
        return Verdict(Decision.JUDGE_ERROR,
                       {"reason": f"sandbox fatal: {fatal}",
                        "tests": results})
    if len(results) != len(tests):
        return Verdict(Decision.JUDGE_ERROR,
                       {"reason": f"sandbox returned {len(results)} results "
                                  f"for {len(tests)} tests",
                        "tests": results})
    passed = all(bool(r.get("passed")) for r in results)
    decision = Decision.ACCEPT if passed and tests else Decision.REJECT
    return Verdict(decision, {"tests": results})


# -- LLM judge ---------------------------------------------------------------

_DECISION_TOKEN = re.compile(r"\b(true|false)\b", re.IGNORECASE)


def parse_judge_decision(text: str) -> str | None:
    """First standalone TRUE/FALSE token (case-insensitive), or None."""
    m = _DECISION_TOKEN.search(text)
    return m.group(1).upper() if m else None


def judge_llm(question: str, candidate: str, gold: str, spec: JudgeSpec,
              client: InferenceClient, templates: TemplateSet) -> Verdict:
    """Reference-guided grading: greedy judge completion parsed for TRUE."""
    template = templates.get(TaskKind.READING_COMPREHENSION, spec.template)
    available = {"question": question, "prediction": candidate, "gold": gold}
    bindings = {slot: available[slot] for slot in template.placeholders
                if slot in available}
    messages = render(template, bindings)
    params = SamplingParams(temperature=0.0,
                            max_new_tokens=spec.max_judge_tokens)
    try:
        completion = client.complete(messages, params)
    except InferenceError as exc:
        return Verdict(Decision.JUDGE_ERROR,
                       {"reason": f"judge endpoint failure: {exc}"})
    token = parse_judge_decision(completion.text)
    if token is None:
        return Verdict(Decision.JUDGE_ERROR,
                       {"reason": "no TRUE/FALSE token in judge output",
                        "raw": completion.text})
    decision = Decision.ACCEPT if token == "TRUE" else Decision.REJECT
    return Verdict(decision, {"raw": completion.text, "token": token})


# -- calibration -------------------------------------------------------------

@dataclass(frozen=True)
class JudgeCalibration:
    """Judge-vs-human agreement over a labeled sample."""

    total: int
    accuracy: float
    true_positive: int = 0
    true_negative: int = 0
    false_positive: int = 0
    false_negative: int = 0
    judge_errors: int = 0


def calibrate_judge(labeled: Sequence[tuple[str, str, str, bool]],
                    spec: JudgeSpec, client: InferenceClient,
                    templates: TemplateSet) -> JudgeCalibration:
    """Accuracy of the LLM judge against human labels.

    JudgeError rows count as disagreement and are reported separately.
    """
    if not labeled:
        raise ValueError("calibration needs at least one labeled row")
    tp = tn = fp = fn = errors = 0
    for question, candidate, gold, human_label in labeled:
        verdict = judge_llm(question, candidate, gold, spec, client, templates)
        if verdict.decision is Decision.JUDGE_ERROR:
            errors += 1
        elif verdict.accepted and human_label:
            tp += 1
        elif verdict.accepted:
            fp += 1
        elif human_label:
            fn += 1
        else:
            tn += 1
    accuracy = (tp + tn) / len(labeled)
    return JudgeCalibration(total=len(labeled), accuracy=accuracy,
                            true_positive=tp, true_negative=tn,
                            false_positive=fp, false_negative=fn,
                            judge_errors=errors)


# -- dispatch ----------------------------------------------------------------

def judge_candidate(example: TaskExample, candidate_text: str,
                    spec: JudgeSpec, *,
                    client: InferenceClient | None = None,
                    templates: TemplateSet | None = None,
                    sandbox: SandboxClient | SandboxPool | None = None
                    ) -> Verdict:
    """Route one candidate to the judge that ``spec.kind`` selects."""
    if spec.kind is JudgeKind.LAST_NUMBER:
        return judge_last_number(candidate_text, example.gold)
    if spec.kind is JudgeKind.CODE_EXECUTION:
        return judge_code(candidate_text, example.fields["tests"], spec,
                          sandbox=sandbox)
    if client is None or templates is None:
        return Verdict(Decision.JUDGE_ERROR,
                       {"reason": "LLM judge needs a client and templates"})
    return judge_llm(str(example.fields.get("question", "")), candidate_text,
                     example.gold, spec, client, templates)
