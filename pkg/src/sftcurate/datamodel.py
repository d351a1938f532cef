"""Domain types shared by the curation pipeline.

Immutable value objects only: no I/O, no network. Everything here is safe to
share or copy between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any


class TaskKind(enum.Enum):
    """The three supported task families.

    Each variant binds to exactly one default judge kind and one
    prompt-template family (the directory name under ``templates/``).
    """

    MATH_WORD_PROBLEM = "math"
    CODE_GENERATION = "code"
    READING_COMPREHENSION = "rc"

    @property
    def template_family(self) -> str:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "TaskKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown task kind {name!r}; expected one of "
                         f"{[k.value for k in cls]}")


#: Required field slots per task kind, as ingested from the corpus.
#:   math: {"question": str}
#:   code: {"description": str, "tests": list[str]}
#:   rc:   {"context": str, "question": str, "answerable": bool}
REQUIRED_FIELDS: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.MATH_WORD_PROBLEM: ("question",),
    TaskKind.CODE_GENERATION: ("description", "tests"),
    TaskKind.READING_COMPREHENSION: ("context", "question", "answerable"),
}


@dataclass(frozen=True)
class TaskExample:
    """One (input, gold response) pair from a corpus.

    ``fields`` holds the named input slots for the task kind; ``gold`` is the
    reference response, kept verbatim from the corpus.
    """

    id: str
    task: TaskKind
    fields: dict[str, Any]
    gold: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("example id must be non-empty")
        if not self.gold:
            raise ValueError(f"example {self.id}: gold must be non-empty")
        missing = [f for f in REQUIRED_FIELDS[self.task] if f not in self.fields]
        if missing:
            raise ValueError(f"example {self.id}: missing fields {missing}")


class FinishReason(enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class SamplingParams:
    """Decoding parameters for one request.

    Curation runs use temperature 0 (greedy); a non-zero temperature is an
    explicit override that ends up recorded in the run manifest.
    """

    temperature: float = 0.0
    max_new_tokens: int = 1024
    want_logprobs: bool = False

    def __post_init__(self) -> None:
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float


@dataclass(frozen=True)
class ModelCompletion:
    """One endpoint response.

    When per-token log-probabilities are present, ``total_logprob`` is their
    sum (natural log, per common completions-API convention); a missing total
    is filled in, a mismatched one is rejected.
    """

    text: str
    model_id: str
    params: SamplingParams
    finish_reason: FinishReason = FinishReason.STOP
    token_logprobs: tuple[TokenLogprob, ...] | None = None
    total_logprob: float | None = None

    def __post_init__(self) -> None:
        if self.token_logprobs is not None:
            total = math.fsum(t.logprob for t in self.token_logprobs)
            if self.total_logprob is None:
                object.__setattr__(self, "total_logprob", total)
            elif abs(self.total_logprob - total) > 1e-6:
                raise ValueError(
                    f"total_logprob {self.total_logprob} disagrees with "
                    f"token sum {total}")


class Decision(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    JUDGE_ERROR = "judge_error"


@dataclass(frozen=True)
class Verdict:
    """A judge's decision plus the raw evidence that produced it.

    Accept/Reject always carry task-specific evidence; JudgeError carries a
    ``reason`` string in its evidence.
    """

    decision: Decision
    evidence: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.decision is Decision.JUDGE_ERROR and "reason" not in self.evidence:
            raise ValueError("JudgeError verdicts must carry a reason")

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT


class Provenance(enum.Enum):
    """Which of the three sources supplied a training target."""

    MODEL_RESPONSE = "model_response"
    GOLD_PARAPHRASE = "gold_paraphrase"
    GOLD = "gold"


def classify_provenance(prediction_verdict: Verdict,
                        paraphrase_verdict: Verdict | None) -> Provenance:
    """Map the two judge verdicts onto the unique provenance variant.

    Precondition: ``paraphrase_verdict`` must be absent when the prediction
    was accepted (the pipeline never paraphrases in that case); violating it
    is a programming error.
    """
    if prediction_verdict.accepted:
        if paraphrase_verdict is not None:
            raise ValueError("paraphrase verdict present although the "
                             "prediction was accepted")
        return Provenance.MODEL_RESPONSE
    if paraphrase_verdict is not None and paraphrase_verdict.accepted:
        return Provenance.GOLD_PARAPHRASE
    return Provenance.GOLD


Message = dict[str, str]


@dataclass(frozen=True)
class CuratedExample:
    """The chosen training target for one example, with audit trail.

    ``training_prompt`` is the rendered train-template chat messages; the
    assistant target is appended at serialization time. ``inference_error``
    marks gold-fallback records produced because an endpoint call failed;
    only those records may lack a prediction verdict.
    """

    example_id: str
    training_prompt: tuple[Message, ...]
    target: str
    provenance: Provenance
    prediction_verdict: Verdict | None
    paraphrase_verdict: Verdict | None = None
    inference_error: str | None = None

    def __post_init__(self) -> None:
        if self.inference_error is not None:
            if self.provenance is not Provenance.GOLD:
                raise ValueError("inference-error fallback must carry gold "
                                 "provenance")
            return
        if self.prediction_verdict is None:
            raise ValueError("prediction verdict required unless the record "
                             "is an inference-error fallback")
        expected = classify_provenance(self.prediction_verdict,
                                       self.paraphrase_verdict)
        if expected is not self.provenance:
            raise ValueError(f"provenance {self.provenance} inconsistent with "
                             f"verdicts (expected {expected})")


@dataclass(frozen=True)
class CurationReport:
    """Provenance counts/proportions and per-stage statistics for a run."""

    total: int
    counts: dict[Provenance, int]
    proportions: dict[Provenance, float]
    judge_error_count: int = 0
    inference_error_count: int = 0
    skipped_count: int = 0
    timings_s: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.total:
            raise ValueError("provenance counts do not sum to total")
        if self.total > 0:
            s = sum(self.proportions.values())
            if abs(s - 1.0) > 5e-4:
                raise ValueError(f"proportions sum to {s}, not 1.0 +/- 5e-4")

    @classmethod
    def from_counts(cls, counts: dict[Provenance, int], *,
                    judge_error_count: int = 0,
                    inference_error_count: int = 0,
                    skipped_count: int = 0,
                    timings_s: dict[str, float] | None = None,
                    ) -> "CurationReport":
        full = {p: counts.get(p, 0) for p in Provenance}
        total = sum(full.values())
        if total:
            proportions = {p: round(c / total, 4) for p, c in full.items()}
        else:
            proportions = {p: 0.0 for p in Provenance}
        return cls(total=total, counts=full, proportions=proportions,
                   judge_error_count=judge_error_count,
                   inference_error_count=inference_error_count,
                   skipped_count=skipped_count,
                   timings_s=dict(timings_s or {}))
