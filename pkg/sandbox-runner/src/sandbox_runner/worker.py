"""Single-job worker: define the candidate, run each assertion, report.

Reads one job object from stdin and emits one JSON line per test result as
it completes, followed by ``{"done": true, "fatal": ...}``. Incremental
output lets the parent harness salvage partial results when it has to kill
a runaway worker.

Per-test timeouts use SIGALRM, which preempts pure-Python busy loops; the
harness's kill-on-deadline is the backstop for code that defeats signals.
"""

from __future__ import annotations

import contextlib
import io
import json
import signal
import sys


class _TestTimeout(BaseException):
    """Raised by the alarm handler; BaseException so candidate ``except
    Exception`` blocks cannot swallow it."""


@contextlib.contextmanager
def _time_limit(seconds: float):
    def handler(signum, frame):
        raise _TestTimeout()

    previous = signal.signal(signal.SIGALRM, handler)
    signal.setitimer(signal.ITIMER_REAL, seconds)
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
        signal.signal(signal.SIGALRM, previous)


def _summary(exc: BaseException, limit: int = 200) -> str:
    text = f"{type(exc).__name__}: {exc}".splitlines()[0].strip()
    if text.endswith(":"):
        text = text[:-1]
    return text[:limit]


def _apply_rlimits(timeout_s: float, n_tests: int) -> None:
    """Best-effort belt under --restricted; not a security boundary."""
    import resource

    cpu = int(n_tests * (timeout_s + 0.5)) + 5
    resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu))
    soft = 2 * 1024 ** 3
    try:
        resource.setrlimit(resource.RLIMIT_AS, (soft, soft))
    except (ValueError, OSError):
        pass


def run(job: dict, emit) -> None:
    code = job["code"]
    tests = job["tests"]
    timeout_s = float(job["timeout_s"])

    try:
        compiled = compile(code, "<candidate>", "exec")
    except SyntaxError as exc:
        reason = _summary(exc)
        for _ in tests:
            emit({"passed": False, "error": reason})
        emit({"done": True,
              "fatal": f"candidate code does not parse: {reason}"})
        return

    namespace: dict = {"__name__": "__candidate__"}
    try:
        with contextlib.redirect_stdout(io.StringIO()):
            with _time_limit(timeout_s):
                exec(compiled, namespace)
    except _TestTimeout:
        for _ in tests:
            emit({"passed": False, "error": "timeout"})
        emit({"done": True, "fatal": None})
        return
    except BaseException as exc:
        reason = _summary(exc)
        for _ in tests:
            emit({"passed": False, "error": reason})
        emit({"done": True, "fatal": None})
        return

    for test in tests:
        test_ns = dict(namespace)
        try:
            test_code = compile(test, "<test>", "exec")
            with contextlib.redirect_stdout(io.StringIO()):
                with _time_limit(timeout_s):
                    exec(test_code, test_ns)
        except _TestTimeout:
            emit({"passed": False, "error": "timeout"})
        except BaseException as exc:
            emit({"passed": False, "error": _summary(exc)})
        else:
            emit({"passed": True, "error": None})
    emit({"done": True, "fatal": None})


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    restricted = "--restricted" in argv
    line = sys.stdin.readline()
    if not line.strip():
        return 1
    job = json.loads(line)
    if restricted:
        _apply_rlimits(float(job["timeout_s"]), len(job["tests"]))

    out = sys.stdout

    def emit(obj: dict) -> None:
        out.write(json.dumps(obj) + "\n")
        out.flush()

    run(job, emit)
    return 0


if __name__ == "__main__":
    sys.exit(main())
