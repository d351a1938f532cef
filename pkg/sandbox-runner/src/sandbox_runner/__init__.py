"""Assertion-test harness for candidate Python programs.

Speaks a JSON line protocol on stdin/stdout: one request object per line
(``{"code": str, "tests": [str], "timeout_s": number}``), one response per
line (``{"results": [{"passed": bool, "error": str|null}], "fatal":
str|null}``). Each job runs in a fresh child worker that can be killed on
timeout, so runaway candidate code is truly preempted and jobs cannot leak
state into each other.
"""

__version__ = "0.1.0"
