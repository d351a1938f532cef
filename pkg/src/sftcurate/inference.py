"""Client for an OpenAI-compatible chat-completions endpoint.

Single and batched completions with bounded parallelism, retry with
exponential backoff and full jitter, log-probability scoring of fixed
targets, and a content-addressed on-disk response cache so curation runs are
resumable and, with a warm cache, fully offline.

The wire protocol is POST {base_url}/v1/chat/completions. Scoring a fixed
target sends the target as a trailing assistant message with
``{"echo": true, "max_tokens": 0, "logprobs": true}``; endpoints that do not
support that raise UnsupportedScoring.
"""

from __future__ import annotations

import json
import hashlib
import logging
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import requests

from .datamodel import (
    FinishReason,
    Message,
    ModelCompletion,
    SamplingParams,
    TokenLogprob,
)

logger = logging.getLogger(__name__)


class InferenceError(Exception):
    """Base class for endpoint failures."""


class AuthMissing(InferenceError):
    """The configured auth environment variable is not set."""


class MalformedResponse(InferenceError):
    """The endpoint returned a body the client cannot interpret."""


class ExhaustedRetries(InferenceError):
    """The request failed permanently; ``last_status`` is the final HTTP
    status, or None for transport-level failures."""

    def __init__(self, message: str, last_status: int | None = None,
                 attempts: int = 0):
        super().__init__(message)
        self.last_status = last_status
        self.attempts = attempts


class UnsupportedScoring(InferenceError):
    """The endpoint cannot score a provided continuation."""


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for one served model."""

    base_url: str
    model_id: str
    auth_env: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    max_parallel: int = 4
    backoff_base_s: float = 0.5
    backoff_factor: float = 2.0
    backoff_cap_s: float = 30.0

    def __post_init__(self) -> None:
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def completions_url(self) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/v1"):
            return f"{base}/chat/completions"
        return f"{base}/v1/chat/completions"

    @property
    def models_url(self) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/v1"):
            return f"{base}/models"
        return f"{base}/v1/models"


class TransportError(Exception):
    """Connection-level failure; transient ones are retried."""

    def __init__(self, message: str, transient: bool = True):
        super().__init__(message)
        self.transient = transient


#: A transport takes (url, headers, payload, timeout_s) and returns
#: (http_status, body_text). Tests substitute in-process fakes.
Transport = Callable[[str, dict[str, str], dict[str, Any], float],
                     tuple[int, str]]


def http_transport(url: str, headers: dict[str, str],
                   payload: dict[str, Any], timeout_s: float) -> tuple[int, str]:
    try:
        resp = requests.post(url, headers=headers, json=payload,
                             timeout=timeout_s)
    except requests.Timeout as exc:
        raise TransportError(f"timeout after {timeout_s}s") from exc
    except requests.ConnectionError as exc:
        raise TransportError(str(exc)) from exc
    return resp.status_code, resp.text


def endpoint_reachable(cfg: EndpointConfig, timeout_s: float = 5.0) -> bool:
    """Probe GET /v1/models; any HTTP answer counts as reachable."""
    try:
        requests.get(cfg.models_url, timeout=timeout_s)
    except requests.RequestException:
        return False
    return True


def cache_key(model_id: str, messages: Sequence[Message],
              params: SamplingParams, *, op: str = "complete",
              target: str | None = None) -> str:
    """Collision-resistant digest of everything that identifies a request."""
    identity = {
        "op": op,
        "model": model_id,
        "messages": list(messages),
        "params": {
            "temperature": params.temperature,
            "max_new_tokens": params.max_new_tokens,
            "want_logprobs": params.want_logprobs,
        },
    }
    if target is not None:
        identity["target"] = target
    canonical = json.dumps(identity, sort_keys=True, ensure_ascii=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def completion_to_dict(completion: ModelCompletion) -> dict[str, Any]:
    return {
        "text": completion.text,
        "model_id": completion.model_id,
        "finish_reason": completion.finish_reason.value,
        "params": {
            "temperature": completion.params.temperature,
            "max_new_tokens": completion.params.max_new_tokens,
            "want_logprobs": completion.params.want_logprobs,
        },
        "token_logprobs": (
            None if completion.token_logprobs is None
            else [[t.token, t.logprob] for t in completion.token_logprobs]),
        "total_logprob": completion.total_logprob,
    }


def completion_from_dict(data: dict[str, Any]) -> ModelCompletion:
    tls = data["token_logprobs"]
    return ModelCompletion(
        text=data["text"],
        model_id=data["model_id"],
        params=SamplingParams(**data["params"]),
        finish_reason=FinishReason(data["finish_reason"]),
        token_logprobs=(None if tls is None
                        else tuple(TokenLogprob(t, lp) for t, lp in tls)),
        total_logprob=data["total_logprob"],
    )


class ResponseCache:
    """Content-addressed completion cache: one JSON file per key.

    Layout is ``<root>/<first 2 hex of key>/<key>.json``; writes go to a
    temp file and are renamed into place, so entries are atomic per key and
    survive process restarts. Corrupt entries degrade to misses.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> ModelCompletion | None:
        path = self._path(key)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            completion = completion_from_dict(data)
        except FileNotFoundError:
            with self._lock:
                self.misses += 1
            return None
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            logger.warning("corrupt cache entry %s (%s); treating as miss",
                           path, exc)
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return completion

    def put(self, key: str, completion: ModelCompletion) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = json.dumps(completion_to_dict(completion), sort_keys=True,
                          ensure_ascii=False)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(body)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def is_empty(self) -> bool:
        return not any(self.root.glob("*/*.json"))


_TRANSIENT_STATUSES = frozenset({429}) | frozenset(range(500, 600))


class InferenceClient:
    """Thread-safe client; owns retry, caching, and batch parallelism."""

    def __init__(self, cfg: EndpointConfig, *,
                 cache: ResponseCache | None = None,
                 transport: Transport = http_transport,
                 rng: random.Random | None = None):
        self.cfg = cfg
        self.cache = cache
        self.transport = transport
        self._rng = rng or random.Random()
        self._counter_lock = threading.Lock()
        self.network_requests = 0
        self.retries = 0

    # -- request plumbing ---------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.cfg.auth_env:
            token = os.environ.get(self.cfg.auth_env)
            if not token:
                raise AuthMissing(
                    f"auth environment variable {self.cfg.auth_env!r} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _sleep_backoff(self, attempt: int) -> None:
        delay = min(self.cfg.backoff_cap_s,
                    self.cfg.backoff_base_s * self.cfg.backoff_factor ** attempt)
        time.sleep(delay * self._rng.random())  # full jitter

    def _post(self, payload: dict[str, Any]) -> dict[str, Any]:
        """POST with retries; returns the parsed 200 body."""
        headers = self._headers()
        url = self.cfg.completions_url
        last_status: int | None = None
        attempts = 0
        for attempt in range(self.cfg.max_retries + 1):
            attempts += 1
            if attempt > 0:
                with self._counter_lock:
                    self.retries += 1
            try:
                with self._counter_lock:
                    self.network_requests += 1
                status, body = self.transport(url, headers, payload,
                                              self.cfg.timeout_s)
            except TransportError as exc:
                last_status = None
                if exc.transient and attempt < self.cfg.max_retries:
                    self._sleep_backoff(attempt)
                    continue
                raise ExhaustedRetries(f"transport failure: {exc}",
                                       last_status=None,
                                       attempts=attempts) from exc
            if status == 200:
                try:
                    parsed = json.loads(body)
                except json.JSONDecodeError as exc:
                    raise MalformedResponse(
                        f"endpoint returned unparseable body: {exc}") from exc
                if not isinstance(parsed, dict):
                    raise MalformedResponse("endpoint body is not an object")
                return parsed
            last_status = status
            if status in _TRANSIENT_STATUSES and attempt < self.cfg.max_retries:
                self._sleep_backoff(attempt)
                continue
            raise ExhaustedRetries(
                f"endpoint returned HTTP {status}", last_status=status,
                attempts=attempts)
        raise ExhaustedRetries("retries exhausted", last_status=last_status,
                               attempts=attempts)

    @staticmethod
    def _parse_choice(parsed: dict[str, Any]) -> dict[str, Any]:
        try:
            choice = parsed["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("response has no choices") from exc
        if not isinstance(choice, dict):
            raise MalformedResponse("choice is not an object")
        return choice

    @staticmethod
    def _parse_token_logprobs(choice: dict[str, Any]
                              ) -> tuple[TokenLogprob, ...] | None:
        lp = choice.get("logprobs")
        if not isinstance(lp, dict):
            return None
        content = lp.get("content")
        if not isinstance(content, list):
            return None
        out = []
        for item in content:
            try:
                out.append(TokenLogprob(str(item["token"]),
                                        float(item["logprob"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"bad logprob entry: {item!r}") from exc
        return tuple(out)

    # -- operations ---------------------------------------------------------

    def complete(self, messages: Sequence[Message],
                 params: SamplingParams) -> ModelCompletion:
        """One chat completion; cached when a cache is attached."""
        key = cache_key(self.cfg.model_id, messages, params)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit

        payload: dict[str, Any] = {
            "model": self.cfg.model_id,
            "messages": list(messages),
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        }
        if params.want_logprobs:
            payload["logprobs"] = True
        parsed = self._post(payload)
        choice = self._parse_choice(parsed)
        message = choice.get("message")
        if not isinstance(message, dict) or not isinstance(
                message.get("content"), str):
            raise MalformedResponse("choice has no message content")
        reason_raw = choice.get("finish_reason")
        if reason_raw == "stop":
            reason = FinishReason.STOP
        elif reason_raw == "length":
            reason = FinishReason.LENGTH
        else:
            reason = FinishReason.ERROR
        completion = ModelCompletion(
            text=message["content"],
            model_id=str(parsed.get("model") or self.cfg.model_id),
            params=params,
            finish_reason=reason,
            token_logprobs=self._parse_token_logprobs(choice),
        )
        if self.cache is not None:
            self.cache.put(key, completion)
        return completion

    def complete_batch(self, jobs: Iterable[tuple[str, Sequence[Message],
                                                  SamplingParams]]
                       ) -> dict[str, ModelCompletion | InferenceError]:
        """Run all jobs with at most ``max_parallel`` requests in flight.

        Per-job failures land in the result map; the batch never aborts.
        """
        jobs = list(jobs)
        results: dict[str, ModelCompletion | InferenceError] = {}
        if not jobs:
            return results

        def run(job: tuple[str, Sequence[Message], SamplingParams]
                ) -> tuple[str, ModelCompletion | InferenceError]:
            job_id, messages, params = job
            try:
                return job_id, self.complete(messages, params)
            except InferenceError as exc:
                return job_id, exc

        with ThreadPoolExecutor(max_workers=self.cfg.max_parallel) as pool:
            for job_id, outcome in pool.map(run, jobs):
                results[job_id] = outcome
        return results

    def score_text(self, messages: Sequence[Message], fixed_target: str,
                   *, max_new_tokens: int = 1) -> float:
        """Total log-probability of ``fixed_target`` conditioned on messages."""
        if fixed_target == "":
            return 0.0
        params = SamplingParams(temperature=0.0, max_new_tokens=max_new_tokens,
                                want_logprobs=True)
        key = cache_key(self.cfg.model_id, messages, params, op="score",
                        target=fixed_target)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None and hit.total_logprob is not None:
                return hit.total_logprob

        payload = {
            "model": self.cfg.model_id,
            "messages": list(messages) + [
                {"role": "assistant", "content": fixed_target}],
            "temperature": 0.0,
            "max_tokens": 0,
            "echo": True,
            "logprobs": True,
        }
        try:
            parsed = self._post(payload)
        except ExhaustedRetries as exc:
            if exc.last_status is not None and 400 <= exc.last_status < 500 \
                    and exc.last_status != 429:
                raise UnsupportedScoring(
                    f"endpoint rejected echo scoring with HTTP "
                    f"{exc.last_status}") from exc
            raise
        choice = self._parse_choice(parsed)
        token_logprobs = self._parse_token_logprobs(choice)
        if token_logprobs is None:
            raise UnsupportedScoring(
                "endpoint returned no logprobs for echo scoring")
        completion = ModelCompletion(
            text=fixed_target,
            model_id=str(parsed.get("model") or self.cfg.model_id),
            params=params,
            finish_reason=FinishReason.STOP,
            token_logprobs=token_logprobs,
        )
        if self.cache is not None:
            self.cache.put(key, completion)
        assert completion.total_logprob is not None
        return completion.total_logprob
