from __future__ import annotations

import json
import subprocess
import sys

import pytest


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


HARNESS_CMD = (sys.executable, "-m", "sandbox_runner")


def run_harness(lines: list[str], timeout: float = 60.0) -> tuple[list[dict], int]:
    """Feed raw lines to a fresh harness process; returns (responses, exit)."""
    proc = subprocess.run(
        HARNESS_CMD, input="".join(line + "\n" for line in lines),
        capture_output=True, text=True, timeout=timeout)
    responses = [json.loads(line) for line in proc.stdout.splitlines()]
    return responses, proc.returncode


def job_line(code: str, tests: list[str], timeout_s: float = 5.0) -> str:
    return json.dumps({"code": code, "tests": tests, "timeout_s": timeout_s})
