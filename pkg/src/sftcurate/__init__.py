"""Selective fine-tuning data curation.

For each training example: get the base model's prediction, judge it against
the gold response, fall back to a model-generated paraphrase of the gold
answer, and finally to the gold answer itself; emit a training-ready dataset
plus provenance diagnostics.
"""

from .datamodel import (
    CuratedExample,
    CurationReport,
    Decision,
    ModelCompletion,
    Provenance,
    SamplingParams,
    TaskExample,
    TaskKind,
    Verdict,
    classify_provenance,
)
from .curator import CurationConfig, Curator, Fallback, LogprobSample
from .inference import EndpointConfig, InferenceClient, ResponseCache
from .judges import JudgeKind, JudgeSpec
from .prompting import TemplateSet

__version__ = "0.1.0"

__all__ = [
    "CuratedExample",
    "CurationConfig",
    "CurationReport",
    "Curator",
    "Decision",
    "EndpointConfig",
    "Fallback",
    "InferenceClient",
    "JudgeKind",
    "JudgeSpec",
    "LogprobSample",
    "ModelCompletion",
    "Provenance",
    "ResponseCache",
    "SamplingParams",
    "TaskExample",
    "TaskKind",
    "TemplateSet",
    "Verdict",
    "classify_provenance",
    "__version__",
]
