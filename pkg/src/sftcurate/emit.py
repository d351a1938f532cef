"""Serializers for curated datasets, reports, histogram exports, and run
manifests.

Everything written here is UTF-8; training data is line-delimited JSON in
chat-messages form so it feeds common SFT trainers directly, with provenance
carried per record so downstream ablations need no re-run.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from .datamodel import (
    CuratedExample,
    CurationReport,
    Message,
    Provenance,
    TaskExample,
    TaskKind,
)

TOOL_VERSION = "0.1.0"

#: Informational defaults for the downstream fine-tuning stage; recorded in
#: the manifest, never acted on here.
DOWNSTREAM_FINETUNE_DEFAULTS = {
    "adapter": "lora",
    "rank": 8,
    "scaling_factor": 16,
    "dropout": 0.1,
    "learning_rate": 1e-4,
    "decoding": "greedy",
}

_REPORT_COLUMNS = (
    ("Model responses", Provenance.MODEL_RESPONSE),
    ("Gold paraphrases", Provenance.GOLD_PARAPHRASE),
    ("Gold responses", Provenance.GOLD),
)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path: Path | str) -> str:
    return sha256_hex(Path(path).read_bytes())


def _check_writable(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass force to overwrite")


# -- training file -----------------------------------------------------------

@dataclass(frozen=True)
class TrainingRecord:
    """One parsed line of a curated training file."""

    id: str
    messages: tuple[Message, ...]
    provenance: Provenance
    inference_error: str | None = None


def curated_to_record(curated: CuratedExample) -> dict[str, Any]:
    record: dict[str, Any] = {
        "id": curated.example_id,
        "messages": list(curated.training_prompt) + [
            {"role": "assistant", "content": curated.target}],
        "provenance": curated.provenance.value,
    }
    if curated.inference_error is not None:
        record["inference_error"] = curated.inference_error
    return record


def write_training_file(curated: Sequence[CuratedExample], path: Path | str,
                        *, force: bool = False) -> str:
    """Write one JSON record per curated example; returns the content digest."""
    path = Path(path)
    _check_writable(path, force)
    content = "".join(
        json.dumps(curated_to_record(c), ensure_ascii=False) + "\n"
        for c in curated)
    data = content.encode("utf-8")
    path.write_bytes(data)
    return sha256_hex(data)


def read_training_file(path: Path | str) -> list[TrainingRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(TrainingRecord(
                    id=obj["id"],
                    messages=tuple(obj["messages"]),
                    provenance=Provenance(obj["provenance"]),
                    inference_error=obj.get("inference_error"),
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(
                    f"{path} line {line_no}: bad record ({exc})") from exc
    return records


def write_jsonl(records: Sequence[dict[str, Any]], path: Path | str, *,
                force: bool = False) -> str:
    """Generic line-delimited JSON writer; returns the content digest."""
    path = Path(path)
    _check_writable(path, force)
    content = "".join(json.dumps(r, ensure_ascii=False) + "\n"
                      for r in records)
    data = content.encode("utf-8")
    path.write_bytes(data)
    return sha256_hex(data)


# -- dataset re-serialization -------------------------------------------------

def example_to_record(example: TaskExample) -> dict[str, Any]:
    """Inverse of the ingest schema, id included so round trips are exact."""
    if example.task is TaskKind.MATH_WORD_PROBLEM:
        body: dict[str, Any] = {"question": example.fields["question"],
                                "answer": example.gold}
    elif example.task is TaskKind.CODE_GENERATION:
        body = {"text": example.fields["description"],
                "test_list": list(example.fields["tests"]),
                "code": example.gold}
    else:
        body = {"context": example.fields["context"],
                "question": example.fields["question"],
                "answer": example.gold,
                "answerable": example.fields["answerable"]}
    return {"id": example.id, **body}


def write_dataset(examples: Sequence[TaskExample], path: Path | str, *,
                  force: bool = False) -> str:
    path = Path(path)
    _check_writable(path, force)
    content = "".join(
        json.dumps(example_to_record(e), ensure_ascii=False) + "\n"
        for e in examples)
    data = content.encode("utf-8")
    path.write_bytes(data)
    return sha256_hex(data)


# -- provenance report --------------------------------------------------------

def _percentages(report: CurationReport) -> list[str]:
    if report.total:
        return [f"{100.0 * report.counts[p] / report.total:.1f}%"
                for _, p in _REPORT_COLUMNS]
    return ["0.0%" for _ in _REPORT_COLUMNS]


def format_proportions_row(report: CurationReport) -> str:
    """The one-line summary, e.g. ``49.5% / 42.1% / 8.4%``."""
    return " / ".join(_percentages(report))


def format_report_table(report: CurationReport) -> str:
    """Aligned two-row table: provenance column headers, then percentages."""
    headers = [name for name, _ in _REPORT_COLUMNS]
    values = _percentages(report)
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    header_row = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    value_row = "  ".join(v.ljust(w) for v, w in zip(values, widths))
    return (f"{header_row}\n{value_row}\n"
            f"total: {report.total}  judge errors: {report.judge_error_count}"
            f"  inference errors: {report.inference_error_count}"
            f"  skipped: {report.skipped_count}\n")


def report_to_dict(report: CurationReport) -> dict[str, Any]:
    return {
        "total": report.total,
        "counts": {p.value: report.counts[p] for p in Provenance},
        "proportions": {p.value: report.proportions[p] for p in Provenance},
        "judge_error_count": report.judge_error_count,
        "inference_error_count": report.inference_error_count,
        "skipped_count": report.skipped_count,
        "timings_s": dict(report.timings_s),
    }


def report_from_dict(data: dict[str, Any]) -> CurationReport:
    return CurationReport(
        total=data["total"],
        counts={p: data["counts"][p.value] for p in Provenance},
        proportions={p: data["proportions"][p.value] for p in Provenance},
        judge_error_count=data.get("judge_error_count", 0),
        inference_error_count=data.get("inference_error_count", 0),
        skipped_count=data.get("skipped_count", 0),
        timings_s=dict(data.get("timings_s", {})),
    )


def write_report(report: CurationReport, path: Path | str, *,
                 force: bool = False) -> None:
    """Write ``<path>`` as JSON and a sibling ``.txt`` with the table."""
    path = Path(path)
    _check_writable(path, force)
    path.write_text(json.dumps(report_to_dict(report), indent=2,
                               ensure_ascii=False) + "\n", encoding="utf-8")
    text_path = path.with_suffix(".txt")
    text_path.write_text(format_report_table(report), encoding="utf-8")


# -- histogram export ----------------------------------------------------------

@dataclass(frozen=True)
class HistogramRow:
    category: str
    bin_lo: float
    bin_hi: float
    count: int


def export_histogram(samples: Sequence[tuple[str, float]],
                     bin_width: float) -> list[HistogramRow]:
    """Per-category counts over shared uniform bins aligned to multiples of
    ``bin_width`` and covering [min, max] of all samples.

    Zero-count bins are emitted so categories share an axis; per-category
    counts always sum to that category's sample count.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if not samples:
        return []
    lo_idx = min(math.floor(v / bin_width) for _, v in samples)
    hi_idx = max(math.floor(v / bin_width) for _, v in samples)
    categories: list[str] = []
    counts: dict[str, dict[int, int]] = {}
    for category, value in samples:
        if category not in counts:
            categories.append(category)
            counts[category] = {}
        idx = math.floor(value / bin_width)
        counts[category][idx] = counts[category].get(idx, 0) + 1
    rows = []
    for category in categories:
        for idx in range(lo_idx, hi_idx + 1):
            rows.append(HistogramRow(
                category=category,
                bin_lo=idx * bin_width,
                bin_hi=(idx + 1) * bin_width,
                count=counts[category].get(idx, 0)))
    return rows


def write_histogram(rows: Sequence[HistogramRow], path: Path | str, *,
                    force: bool = False) -> None:
    path = Path(path)
    _check_writable(path, force)
    lines = ["class\tbin_lo\tbin_hi\tcount"]
    lines += [f"{r.category}\t{r.bin_lo}\t{r.bin_hi}\t{r.count}"
              for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- run manifest ---------------------------------------------------------------

def manifest_timestamp() -> str:
    """Current UTC time; pinned when SOURCE_DATE_EPOCH is set so repeated
    runs can produce byte-identical manifests."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.replace(microsecond=0).isoformat()


@dataclass(frozen=True)
class RunManifest:
    """Snapshot of everything that identifies one curation run."""

    tool_version: str
    created_at: str
    config: dict[str, Any]
    template_digests: dict[str, str]
    dataset_digest: str
    dataset_count: int
    training_file: str
    training_file_digest: str
    report: CurationReport
    downstream_finetune: dict[str, Any] = field(
        default_factory=lambda: dict(DOWNSTREAM_FINETUNE_DEFAULTS))

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_version": self.tool_version,
            "created_at": self.created_at,
            "config": self.config,
            "template_digests": self.template_digests,
            "dataset_digest": self.dataset_digest,
            "dataset_count": self.dataset_count,
            "training_file": self.training_file,
            "training_file_digest": self.training_file_digest,
            "report": report_to_dict(self.report),
            "downstream_finetune": self.downstream_finetune,
        }


def dataset_digest(examples: Sequence[TaskExample]) -> str:
    canonical = json.dumps([example_to_record(e) for e in examples],
                           sort_keys=True, ensure_ascii=True,
                           separators=(",", ":"))
    return sha256_hex(canonical.encode("utf-8"))


def write_manifest(manifest: RunManifest, path: Path | str, *,
                   force: bool = False) -> None:
    path = Path(path)
    _check_writable(path, force)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True,
                               ensure_ascii=False) + "\n", encoding="utf-8")


def read_manifest(path: Path | str) -> dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
