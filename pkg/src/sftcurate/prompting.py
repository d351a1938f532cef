"""Prompt templating and completion parsing.

Renders the four prompt families (predict, paraphrase, train, judge) from
task examples, and extracts structured payloads back out of completions:
marker-delimited code blocks and final numeric answers.

Template files are plain UTF-8 text with ``### role`` section headers and
``{{slot}}`` placeholders; lines before the first header are comments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .datamodel import Message, TaskExample, TaskKind

CODE_BEGIN = "[[BEGIN]]"
CODE_DONE = "[[DONE]]"

#: Relative tolerance for comparing extracted final answers: integral gold
#: answers must match model renderings like "216.0".
NUMERIC_RTOL = 1e-6

_ROLE_HEADER = re.compile(r"^###\s*(system|user|assistant)\s*$")
_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")

FAMILIES = ("predict", "paraphrase", "train", "judge")


class TemplateError(Exception):
    """Malformed template file or bad render bindings."""


class MarkerError(Exception):
    """Code extraction failed; ``missing`` names which marker was absent."""

    def __init__(self, missing: str):
        super().__init__(f"code markers missing: {missing}")
        self.missing = missing  # "begin", "done", or "both"


@dataclass(frozen=True)
class PromptTemplate:
    """An ordered list of (role, text) segments with declared placeholders."""

    name: str
    segments: tuple[tuple[str, str], ...]
    placeholders: frozenset[str]

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        segments: list[tuple[str, str]] = []
        role: str | None = None
        lines: list[str] = []

        def flush() -> None:
            if role is not None:
                segments.append((role, "\n".join(lines).strip()))

        for line in text.splitlines():
            m = _ROLE_HEADER.match(line)
            if m:
                flush()
                role = m.group(1)
                lines = []
            elif role is not None:
                lines.append(line)
            # lines before the first header are comments
        flush()
        if not segments:
            raise TemplateError(f"template {name!r} has no '### role' sections")
        placeholders = frozenset(
            slot for _, seg in segments for slot in _PLACEHOLDER.findall(seg))
        return cls(name=name, segments=tuple(segments),
                   placeholders=placeholders)


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> list[Message]:
    """Substitute ``bindings`` into the template, verbatim and deterministic.

    Bindings must cover the declared placeholders exactly: a missing slot and
    an unknown slot are both errors.
    """
    missing = template.placeholders - bindings.keys()
    if missing:
        raise TemplateError(
            f"template {template.name!r}: missing slot(s) {sorted(missing)}")
    unknown = bindings.keys() - template.placeholders
    if unknown:
        raise TemplateError(
            f"template {template.name!r}: unknown slot(s) {sorted(unknown)}")

    def substitute(seg: str) -> str:
        return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), seg)

    return [{"role": role, "content": substitute(seg)}
            for role, seg in template.segments]


def extract_code(completion_text: str) -> str:
    """Return the text strictly between the first begin/done marker pair.

    Surrounding whitespace is trimmed. Raises MarkerError instead of guessing
    when either marker is absent.
    """
    begin = completion_text.find(CODE_BEGIN)
    if begin < 0:
        missing = "both" if CODE_DONE not in completion_text else "begin"
        raise MarkerError(missing)
    start = begin + len(CODE_BEGIN)
    done = completion_text.find(CODE_DONE, start)
    if done < 0:
        raise MarkerError("done")
    return completion_text[start:done].strip()


def _is_digit(ch: str) -> bool:
    return "0" <= ch <= "9"


def _number_tokens(text: str) -> list[float]:
    """All maximal numeric tokens in order.

    Grammar: optional sign (only when not directly preceded by a digit, so
    "2016-2017" yields 2016 and 2017 but "net -4" yields -4), digits with
    optional comma thousands grouping, optional ".digits" fraction. A bare
    trailing period is not part of the token.
    """
    out: list[float] = []
    for m in re.finditer(
            r"[-+]?(?:\d{1,3}(?:,\d{3})+(?!\d)|\d+)(?:\.\d+)?", text):
        tok = m.group(0)
        if tok[0] in "+-":
            prev = text[m.start() - 1] if m.start() > 0 else ""
            if _is_digit(prev):
                tok = tok[1:]
        out.append(float(tok.replace(",", "")))
    return out


def extract_final_number(text: str) -> float | None:
    """The last numeric token in the text, or None when there is none.

    Text after a ``#### `` marker is preferred when it contains a number
    (gold math answers tag the final answer that way); otherwise the whole
    text is scanned.
    """
    marker = text.rfind("####")
    if marker >= 0:
        tail = _number_tokens(text[marker + 4:])
        if tail:
            return tail[-1]
    tokens = _number_tokens(text)
    return tokens[-1] if tokens else None


def numbers_equal(a: float, b: float) -> bool:
    """Final-answer equality: |a-b| <= rtol * max(1, |a|, |b|)."""
    return abs(a - b) <= NUMERIC_RTOL * max(1.0, abs(a), abs(b))


class TemplateSet:
    """Loads and caches the per-task template files under one root.

    Layout: ``<root>/<task>/<family>.txt`` with task in {math, code, rc} and
    family in {predict, paraphrase, train, judge}; judge exists only for rc.
    """

    def __init__(self, root: Path | None = None):
        if root is None:
            root = Path(str(resources.files("sftcurate") / "templates"))
        self.root = Path(root)
        self._cache: dict[tuple[TaskKind, str], PromptTemplate] = {}

    def path_for(self, task: TaskKind, family: str) -> Path:
        return self.root / task.template_family / f"{family}.txt"

    def get(self, task: TaskKind, family: str) -> PromptTemplate:
        if family not in FAMILIES:
            raise TemplateError(f"unknown template family {family!r}")
        key = (task, family)
        if key not in self._cache:
            path = self.path_for(task, family)
            if not path.is_file():
                raise TemplateError(f"no template file {path}")
            name = f"{task.template_family}/{family}"
            self._cache[key] = PromptTemplate.parse(
                name, path.read_text(encoding="utf-8"))
        return self._cache[key]


def bindings_for(example: TaskExample, template: PromptTemplate, *,
                 prediction: str | None = None) -> dict[str, str]:
    """Build the binding map a template needs from an example's fields.

    Available slots are the example's fields (lists joined by newlines,
    booleans lowercased) plus ``gold`` and, when given, ``prediction``.
    Only the template's declared placeholders are passed through.
    """
    available: dict[str, str] = {}
    for name, value in example.fields.items():
        if isinstance(value, (list, tuple)):
            available[name] = "\n".join(str(v) for v in value)
        elif isinstance(value, bool):
            available[name] = "true" if value else "false"
        else:
            available[name] = str(value)
    available["gold"] = example.gold
    if prediction is not None:
        available["prediction"] = prediction

    missing = template.placeholders - available.keys()
    if missing:
        raise TemplateError(
            f"template {template.name!r} needs slot(s) {sorted(missing)} "
            f"not present on example {example.id}")
    return {slot: available[slot] for slot in template.placeholders}


def render_for(example: TaskExample, templates: TemplateSet, family: str, *,
               prediction: str | None = None) -> list[Message]:
    """Render one template family for an example in a single step."""
    template = templates.get(example.task, family)
    return render(template, bindings_for(example, template,
                                         prediction=prediction))
