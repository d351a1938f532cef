"""End-to-end curation: predict, judge, paraphrase, judge, select.

For each example the base model first answers the task; if the judge accepts
the answer it becomes the training target. Otherwise the model restates the
gold response conditioned on both the input and the gold; an accepted
restatement becomes the target, and the gold response itself is the final
fallback. Verdicts and provenance are retained per example for audit.

A failed judge never admits an unverified model response: JudgeError is
treated as a rejection at that stage (and counted), so every non-gold target
was positively judged correct.
"""

from __future__ import annotations

import enum
import logging
import os
import random
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .datamodel import (
    CuratedExample,
    CurationReport,
    Decision,
    Provenance,
    SamplingParams,
    TaskExample,
    Verdict,
    classify_provenance,
)
from .inference import (
    EndpointConfig,
    InferenceClient,
    InferenceError,
    ResponseCache,
    Transport,
    UnsupportedScoring,
    http_transport,
)
from .judges import (
    JudgeKind,
    JudgeSpec,
    SandboxPool,
    check_judge_compat,
    judge_candidate,
)
from .prompting import TemplateSet, render_for

logger = logging.getLogger(__name__)

STAGES = ("predict", "judge_prediction", "paraphrase", "judge_paraphrase")


class Fallback(enum.Enum):
    GOLD = "gold"
    SKIP = "skip"


@dataclass(frozen=True)
class CurationConfig:
    """Everything one curation run needs besides the dataset itself."""

    endpoint: EndpointConfig
    judge: JudgeSpec
    templates: TemplateSet
    fallback_on_error: Fallback = Fallback.GOLD
    capture_logprobs: bool = False
    temperature: float = 0.0
    max_new_tokens: int = 1024

    @property
    def sampling(self) -> SamplingParams:
        return SamplingParams(temperature=self.temperature,
                              max_new_tokens=self.max_new_tokens)


@dataclass(frozen=True)
class LogprobSample:
    """One scored text for the log-probability comparison export."""

    example_id: str
    category: str  # "gold", "paraphrase", or "model"
    total_logprob: float


def _reproducible() -> bool:
    return bool(os.environ.get("SOURCE_DATE_EPOCH"))


class Curator:
    """Holds the clients and counters for one run; examples are curated
    concurrently up to the endpoint's parallelism bound, with the calls for
    a single example strictly ordered."""

    def __init__(self, cfg: CurationConfig, *,
                 cache: ResponseCache | None = None,
                 transport: Transport = http_transport,
                 rng: random.Random | None = None,
                 sandbox: SandboxPool | None = None):
        self.cfg = cfg
        self.client = InferenceClient(cfg.endpoint, cache=cache,
                                      transport=transport, rng=rng)
        if cfg.judge.endpoint is None or cfg.judge.endpoint == cfg.endpoint:
            self.judge_client = self.client
        else:
            self.judge_client = InferenceClient(cfg.judge.endpoint,
                                                cache=cache,
                                                transport=transport, rng=rng)
        self._sandbox = sandbox
        self._owns_sandbox = False
        if (sandbox is None and cfg.judge.kind is JudgeKind.CODE_EXECUTION
                and cfg.judge.sandbox_cmd is not None):
            self._sandbox = SandboxPool(
                cfg.judge.sandbox_cmd,
                size=min(cfg.endpoint.max_parallel, 4))
            self._owns_sandbox = True
        self._lock = threading.Lock()
        self.judge_error_count = 0
        self.inference_error_count = 0
        self.skipped_count = 0
        self.paraphrase_calls = 0
        self.timings_s: dict[str, float] = {stage: 0.0 for stage in STAGES}

    def close(self) -> None:
        if self._owns_sandbox and self._sandbox is not None:
            self._sandbox.close()

    def __enter__(self) -> "Curator":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # -- internals ----------------------------------------------------------

    def _timed(self, stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            elapsed = time.perf_counter() - start
            with self._lock:
                self.timings_s[stage] += elapsed

    def _judge(self, stage: str, example: TaskExample,
               candidate: str) -> Verdict:
        verdict = self._timed(stage, judge_candidate, example, candidate,
                              self.cfg.judge, client=self.judge_client,
                              templates=self.cfg.templates,
                              sandbox=self._sandbox)
        if verdict.decision is Decision.JUDGE_ERROR:
            with self._lock:
                self.judge_error_count += 1
            logger.warning("judge error on %s at %s: %s", example.id, stage,
                           verdict.evidence.get("reason"))
        return verdict

    def _fallback(self, example: TaskExample, error: InferenceError,
                  prediction_verdict: Verdict | None) -> CuratedExample | None:
        """Apply the configured error policy; None means the example is
        skipped (and the caller counts it)."""
        with self._lock:
            self.inference_error_count += 1
        logger.warning("inference error on %s: %s", example.id, error)
        if self.cfg.fallback_on_error is Fallback.SKIP:
            return None
        return CuratedExample(
            example_id=example.id,
            training_prompt=tuple(self._train_prompt(example)),
            target=example.gold,
            provenance=Provenance.GOLD,
            prediction_verdict=prediction_verdict,
            paraphrase_verdict=None,
            inference_error=str(error),
        )

    def _train_prompt(self, example: TaskExample):
        return render_for(example, self.cfg.templates, "train")

    def _curate_one(self, example: TaskExample) -> CuratedExample | None:
        cfg = self.cfg
        params = cfg.sampling

        predict_messages = render_for(example, cfg.templates, "predict")
        try:
            prediction = self._timed("predict", self.client.complete,
                                     predict_messages, params)
        except InferenceError as exc:
            return self._fallback(example, exc, prediction_verdict=None)

        prediction_verdict = self._judge("judge_prediction", example,
                                         prediction.text)
        if prediction_verdict.accepted:
            return CuratedExample(
                example_id=example.id,
                training_prompt=tuple(self._train_prompt(example)),
                target=prediction.text,
                provenance=Provenance.MODEL_RESPONSE,
                prediction_verdict=prediction_verdict,
            )

        paraphrase_messages = render_for(example, cfg.templates, "paraphrase")
        with self._lock:
            self.paraphrase_calls += 1
        try:
            paraphrase = self._timed("paraphrase", self.client.complete,
                                     paraphrase_messages, params)
        except InferenceError as exc:
            return self._fallback(example, exc,
                                  prediction_verdict=prediction_verdict)

        paraphrase_verdict = self._judge("judge_paraphrase", example,
                                         paraphrase.text)
        if paraphrase_verdict.accepted:
            target = paraphrase.text
        else:
            target = example.gold
        return CuratedExample(
            example_id=example.id,
            training_prompt=tuple(self._train_prompt(example)),
            target=target,
            provenance=classify_provenance(prediction_verdict,
                                           paraphrase_verdict),
            prediction_verdict=prediction_verdict,
            paraphrase_verdict=paraphrase_verdict,
        )

    # -- operations ----------------------------------------------------------

    def curate_example(self, example: TaskExample) -> CuratedExample:
        """Curate a single example; under the skip policy an inference
        failure propagates to the caller instead of being swallowed."""
        check_judge_compat(self.cfg.judge, example.task)
        curated = self._curate_one(example)
        if curated is None:
            raise InferenceError(
                f"example {example.id} skipped by fallback policy")
        return curated

    def curate_dataset(self, examples: list[TaskExample]
                       ) -> tuple[list[CuratedExample], CurationReport]:
        """Curate all examples, preserving input order; per-example failures
        never abort the run."""
        for example in examples:
            check_judge_compat(self.cfg.judge, example.task)
        slots: list[CuratedExample | None] = [None] * len(examples)
        if examples:
            with ThreadPoolExecutor(
                    max_workers=self.cfg.endpoint.max_parallel) as pool:
                for i, curated in enumerate(pool.map(self._curate_one,
                                                     examples)):
                    slots[i] = curated
        curated_list = [c for c in slots if c is not None]
        with self._lock:
            self.skipped_count += sum(1 for c in slots if c is None)
        report = self.build_report(curated_list)
        return curated_list, report

    def build_report(self, curated: list[CuratedExample]) -> CurationReport:
        counts = Counter(c.provenance for c in curated)
        timings = dict(self.timings_s)
        if _reproducible():
            timings = {stage: 0.0 for stage in timings}
        return CurationReport.from_counts(
            dict(counts),
            judge_error_count=self.judge_error_count,
            inference_error_count=self.inference_error_count,
            skipped_count=self.skipped_count,
            timings_s=timings,
        )

    def collect_logprob_samples(self, examples: list[TaskExample]
                                ) -> list[LogprobSample]:
        """Score gold, paraphrase, and prediction under the base model for
        every example where both the prediction and the paraphrase are judged
        acceptable.

        Unlike curation, the paraphrase is generated unconditionally here:
        the comparison needs all three texts for the same example.
        """
        if not self.cfg.capture_logprobs:
            raise ValueError("collect_logprob_samples requires "
                             "capture_logprobs=true")
        for example in examples:
            check_judge_compat(self.cfg.judge, example.task)
        params = self.cfg.sampling
        unsupported = threading.Event()

        def score_one(example: TaskExample) -> list[LogprobSample]:
            if unsupported.is_set():
                return []
            predict_messages = render_for(example, self.cfg.templates,
                                          "predict")
            try:
                prediction = self.client.complete(predict_messages, params)
                if not self._judge("judge_prediction", example,
                                   prediction.text).accepted:
                    return []
                paraphrase_messages = render_for(example, self.cfg.templates,
                                                 "paraphrase")
                with self._lock:
                    self.paraphrase_calls += 1
                paraphrase = self.client.complete(paraphrase_messages, params)
                if not self._judge("judge_paraphrase", example,
                                   paraphrase.text).accepted:
                    return []
                rows = []
                for category, text in (("gold", example.gold),
                                       ("paraphrase", paraphrase.text),
                                       ("model", prediction.text)):
                    rows.append(LogprobSample(
                        example_id=example.id, category=category,
                        total_logprob=self.client.score_text(
                            predict_messages, text)))
                return rows
            except UnsupportedScoring as exc:
                logger.warning("endpoint cannot score fixed texts (%s); "
                               "no samples collected", exc)
                unsupported.set()
                return []
            except InferenceError as exc:
                with self._lock:
                    self.inference_error_count += 1
                logger.warning("inference error on %s: %s", example.id, exc)
                return []

        samples: list[LogprobSample] = []
        if examples:
            with ThreadPoolExecutor(
                    max_workers=self.cfg.endpoint.max_parallel) as pool:
                for rows in pool.map(score_one, examples):
                    samples.extend(rows)
        if unsupported.is_set():
            return []
        return samples


# -- module-level convenience wrappers ---------------------------------------

def curate_example(example: TaskExample, cfg: CurationConfig,
                   **kwargs) -> CuratedExample:
    with Curator(cfg, **kwargs) as curator:
        return curator.curate_example(example)


def curate_dataset(examples: list[TaskExample], cfg: CurationConfig,
                   **kwargs) -> tuple[list[CuratedExample], CurationReport]:
    with Curator(cfg, **kwargs) as curator:
        return curator.curate_dataset(examples)


def collect_logprob_samples(examples: list[TaskExample], cfg: CurationConfig,
                            **kwargs) -> list[LogprobSample]:
    with Curator(cfg, **kwargs) as curator:
        return curator.collect_logprob_samples(examples)
