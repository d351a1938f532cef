"""Corpus readers: line-delimited JSON into validated TaskExample lists.

Input schema per task kind (one JSON object per line):
  math: {"question": str, "answer": str}
  code: {"text": str, "test_list": [str, str, str], "code": str}
  rc:   {"context": str, "question": str, "answer": str, "answerable": bool}

Records may carry an optional "id"; otherwise ids are synthesized as
``<split>-<line#>`` with 1-based line numbers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .datamodel import TaskExample, TaskKind
from .prompting import extract_final_number


class Split(enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class DatasetFile:
    path: Path
    task: TaskKind
    split: Split = Split.TRAIN


class DatasetError(Exception):
    """Parse or validation failure; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


_SCHEMA_FIELDS: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.MATH_WORD_PROBLEM: ("question", "answer"),
    TaskKind.CODE_GENERATION: ("text", "test_list", "code"),
    TaskKind.READING_COMPREHENSION: ("context", "question", "answer",
                                     "answerable"),
}


def _example_from_record(record: dict[str, Any], task: TaskKind,
                         example_id: str, line: int) -> TaskExample:
    for name in _SCHEMA_FIELDS[task]:
        if name not in record:
            raise DatasetError(f"missing field {name!r}", line)
    if task is TaskKind.MATH_WORD_PROBLEM:
        fields: dict[str, Any] = {"question": record["question"]}
        gold = record["answer"]
    elif task is TaskKind.CODE_GENERATION:
        tests = record["test_list"]
        if not isinstance(tests, list) or not all(isinstance(t, str) for t in tests):
            raise DatasetError("field 'test_list' must be a list of strings",
                               line)
        fields = {"description": record["text"], "tests": list(tests)}
        gold = record["code"]
    else:
        if not isinstance(record["answerable"], bool):
            raise DatasetError("field 'answerable' must be a boolean", line)
        fields = {"context": record["context"],
                  "question": record["question"],
                  "answerable": record["answerable"]}
        gold = record["answer"]
    try:
        return TaskExample(id=example_id, task=task, fields=fields, gold=gold)
    except ValueError as exc:
        raise DatasetError(str(exc), line) from exc


def load_dataset(file: DatasetFile) -> list[TaskExample]:
    """Read all records in file order; ids must end up unique."""
    examples: list[TaskExample] = []
    seen: set[str] = set()
    with open(file.path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", line_no) from exc
            if not isinstance(record, dict):
                raise DatasetError("record is not a JSON object", line_no)
            example_id = str(record.get("id") or f"{file.split.value}-{line_no}")
            if example_id in seen:
                raise DatasetError(f"duplicate id {example_id!r}", line_no)
            seen.add(example_id)
            examples.append(_example_from_record(record, file.task,
                                                 example_id, line_no))
    return examples


def validate_dataset(examples: list[TaskExample]) -> list[str]:
    """Non-fatal sanity checks; returns one warning string per finding."""
    warnings: list[str] = []
    for ex in examples:
        if ex.task is TaskKind.MATH_WORD_PROBLEM:
            if extract_final_number(ex.gold) is None:
                warnings.append(
                    f"{ex.id}: gold has no extractable final number")
        elif ex.task is TaskKind.CODE_GENERATION:
            n = len(ex.fields["tests"])
            if n != 3:
                warnings.append(f"{ex.id}: expected 3 tests, found {n}")
        else:
            if not str(ex.fields["context"]).strip():
                warnings.append(f"{ex.id}: empty context")
    return warnings
