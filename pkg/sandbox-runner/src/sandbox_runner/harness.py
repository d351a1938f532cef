"""Line-protocol front end: one worker subprocess per job, killed on
deadline.

Every input line yields exactly one JSON output line, even for malformed
input (then with ``fatal`` set). The per-job wall-clock budget is
``len(tests) * (timeout_s + 0.5)``; workers normally finish well inside it
because each test carries its own alarm, and the kill-on-deadline backstop
covers candidates that defeat signals.

There is no filesystem or network lockdown by default: corpus code is
assumed benign. ``--restricted`` adds best-effort resource limits in the
worker, but hardened sandboxing remains the operator's responsibility.
"""

from __future__ import annotations

import argparse
import json
import queue
import subprocess
import sys
import threading
import time
from typing import Any

_EOF = object()


def _validated(job: Any) -> tuple[str, list[str], float] | str:
    """Returns (code, tests, timeout_s) or an error string."""
    if not isinstance(job, dict):
        return "job is not an object"
    code = job.get("code")
    tests = job.get("tests")
    timeout_s = job.get("timeout_s")
    if not isinstance(code, str):
        return "missing or non-string 'code'"
    if (not isinstance(tests, list) or not tests
            or not all(isinstance(t, str) for t in tests)):
        return "'tests' must be a non-empty list of strings"
    if not isinstance(timeout_s, (int, float)) or timeout_s <= 0:
        return "'timeout_s' must be a positive number"
    return code, list(tests), float(timeout_s)


def _worker_cmd(restricted: bool) -> list[str]:
    cmd = [sys.executable, "-m", "sandbox_runner.worker"]
    if restricted:
        cmd.append("--restricted")
    return cmd


def run_job(code: str, tests: list[str], timeout_s: float, *,
            restricted: bool = False) -> dict[str, Any]:
    """Execute one job in a fresh worker; always returns a protocol dict."""
    n = len(tests)
    budget = n * (timeout_s + 0.5)
    # leave room to assemble the reply inside the budget
    deadline = time.monotonic() + budget - min(0.3, budget * 0.1)

    try:
        proc = subprocess.Popen(
            _worker_cmd(restricted), stdin=subprocess.PIPE,
            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
    except OSError as exc:
        return {"results": [], "fatal": f"cannot start worker: {exc}"}

    try:
        assert proc.stdin is not None
        proc.stdin.write(json.dumps({"code": code, "tests": tests,
                                     "timeout_s": timeout_s}) + "\n")
        proc.stdin.flush()
    except (BrokenPipeError, OSError) as exc:
        proc.kill()
        proc.wait()
        return {"results": [], "fatal": f"worker pipe failed: {exc}"}

    lines: queue.Queue[Any] = queue.Queue()

    def reader() -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            lines.put(line)
        lines.put(_EOF)

    threading.Thread(target=reader, daemon=True).start()

    results: list[dict[str, Any]] = []
    fatal: str | None = None
    done = False
    hit_deadline = False
    worker_eof = False
    while not done:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            hit_deadline = True
            break
        try:
            line = lines.get(timeout=remaining)
        except queue.Empty:
            hit_deadline = True
            break
        if line is _EOF:
            worker_eof = True
            break
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            fatal = "worker wrote a non-JSON line"
            done = True
            break
        if isinstance(obj, dict) and obj.get("done"):
            fatal = obj.get("fatal")
            done = True
        else:
            results.append({"passed": bool(obj.get("passed")),
                            "error": obj.get("error")})
        if len(results) > n:
            fatal = "worker reported too many results"
            done = True

    if proc.poll() is None:
        proc.kill()
    proc.wait()

    if len(results) < n:
        if hit_deadline:
            filler = "timeout"
        else:
            filler = "not run"
            if fatal is None:
                code_or_signal = proc.returncode
                fatal = (f"worker exited before finishing "
                         f"(exit status {code_or_signal})")
        results += [{"passed": False, "error": filler}] * (n - len(results))
    elif not done and worker_eof and fatal is None:
        # all results in but no done-line: salvage as a crash-free reply
        fatal = None
    return {"results": results[:n], "fatal": fatal}


def respond(line: str, *, restricted: bool = False) -> dict[str, Any]:
    """One protocol response for one raw input line."""
    try:
        job = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"results": [], "fatal": f"invalid job JSON: {exc.msg}"}
    validated = _validated(job)
    if isinstance(validated, str):
        return {"results": [], "fatal": f"invalid job: {validated}"}
    code, tests, timeout_s = validated
    return run_job(code, tests, timeout_s, restricted=restricted)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sandbox-runner",
        description="Run candidate Python programs against assertion tests; "
                    "JSON line protocol on stdin/stdout.")
    parser.add_argument(
        "--restricted", action="store_true",
        help="apply best-effort CPU/memory rlimits in workers; NOT a "
             "security boundary - hardened sandboxing is the operator's "
             "responsibility")
    args = parser.parse_args(argv)

    for line in sys.stdin:
        if not line.strip():
            response: dict[str, Any] = {"results": [],
                                        "fatal": "empty input line"}
        else:
            response = respond(line, restricted=args.restricted)
        sys.stdout.write(json.dumps(response) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
