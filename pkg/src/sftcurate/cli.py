"""Command-line entry point wiring the pipeline together.

Subcommands: ``curate`` (produce the training file, manifest, and report),
``stats`` (recompute the provenance report from a curated file), ``score``
(log-probability comparison export), and ``judge-eval`` (judge calibration
against human labels).

Configuration is a JSON document whose keys mirror the curation and endpoint
settings; command-line flags override file values, and the effective config
is echoed into the run manifest. Exit codes: 0 success, 1 when per-example
inference errors were absorbed by the fallback policy, 2 on fatal
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path
from typing import Any, Sequence

from . import emit
from .curator import CurationConfig, Curator, Fallback
from .datamodel import CurationReport, Provenance, TaskKind
from .inference import (
    EndpointConfig,
    InferenceClient,
    InferenceError,
    ResponseCache,
    endpoint_reachable,
)
from .ingest import DatasetError, DatasetFile, Split, load_dataset, validate_dataset
from .judges import JudgeKind, JudgeSpec, calibrate_judge, default_judge_kind
from .prompting import TemplateError, TemplateSet

EXIT_OK = 0
EXIT_EXAMPLE_ERRORS = 1
EXIT_CONFIG = 2

DEFAULTS: dict[str, Any] = {
    "dataset": None,
    "task": None,
    "split": "train",
    "endpoint_url": "http://127.0.0.1:8000",
    "model": None,
    "auth_env": None,
    "timeout_s": 60.0,
    "max_retries": 3,
    "parallelism": 4,
    "backoff_base_s": 0.5,
    "backoff_factor": 2.0,
    "backoff_cap_s": 30.0,
    "out_dir": "out",
    "cache_dir": None,  # default: <out_dir>/cache
    "templates_dir": None,
    "fallback": "gold",
    "capture_logprobs": False,
    "temperature": 0.0,
    "max_new_tokens": 1024,
    "max_judge_tokens": 16,
    "judge_kind": None,  # default: the task's binding
    "judge_override": False,
    "judge_endpoint_url": None,
    "judge_model": None,
    "sandbox_cmd": None,
    "test_timeout_s": 5.0,
    "bin_width": 10.0,
    "force": False,
}


class ConfigError(Exception):
    pass


def build_effective_config(args: argparse.Namespace) -> dict[str, Any]:
    """defaults < config file < explicit flags."""
    effective = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {config_path} is not a JSON object")
        unknown = loaded.keys() - effective.keys()
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        effective.update(loaded)
    for key in effective:
        value = getattr(args, key, None)
        if value is not None:
            effective[key] = value
    return effective


def _endpoint_from(cfg: dict[str, Any], url_key: str,
                   model_key: str) -> EndpointConfig:
    model = cfg[model_key]
    if not model:
        raise ConfigError(f"{model_key} is required")
    return EndpointConfig(
        base_url=cfg[url_key],
        model_id=model,
        auth_env=cfg["auth_env"],
        timeout_s=float(cfg["timeout_s"]),
        max_retries=int(cfg["max_retries"]),
        max_parallel=int(cfg["parallelism"]),
        backoff_base_s=float(cfg["backoff_base_s"]),
        backoff_factor=float(cfg["backoff_factor"]),
        backoff_cap_s=float(cfg["backoff_cap_s"]),
    )


def _judge_spec_from(cfg: dict[str, Any], task: TaskKind) -> JudgeSpec:
    kind = (JudgeKind(cfg["judge_kind"]) if cfg["judge_kind"]
            else default_judge_kind(task))
    judge_endpoint = None
    if cfg["judge_endpoint_url"]:
        judge_endpoint = _endpoint_from(
            cfg, "judge_endpoint_url",
            "judge_model" if cfg["judge_model"] else "model")
    sandbox_cmd = cfg["sandbox_cmd"]
    if isinstance(sandbox_cmd, str):
        sandbox_cmd = tuple(shlex.split(sandbox_cmd))
    elif sandbox_cmd is not None:
        sandbox_cmd = tuple(sandbox_cmd)
    return JudgeSpec(
        kind=kind,
        endpoint=judge_endpoint,
        sandbox_cmd=sandbox_cmd,
        test_timeout_s=float(cfg["test_timeout_s"]),
        max_judge_tokens=int(cfg["max_judge_tokens"]),
        override=bool(cfg["judge_override"]),
    )


def _curation_setup(cfg: dict[str, Any]
                    ) -> tuple[CurationConfig, ResponseCache, Path, TaskKind]:
    if not cfg["dataset"]:
        raise ConfigError("dataset is required")
    if not cfg["task"]:
        raise ConfigError("task is required")
    try:
        task = TaskKind.from_name(cfg["task"])
    except ValueError as exc:
        raise ConfigError(str(exc))
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cfg["cache_dir"]) if cfg["cache_dir"] else out_dir / "cache"
    try:
        curation_cfg = CurationConfig(
            endpoint=_endpoint_from(cfg, "endpoint_url", "model"),
            judge=_judge_spec_from(cfg, task),
            templates=TemplateSet(Path(cfg["templates_dir"])
                                  if cfg["templates_dir"] else None),
            fallback_on_error=Fallback(cfg["fallback"]),
            capture_logprobs=bool(cfg["capture_logprobs"]),
            temperature=float(cfg["temperature"]),
            max_new_tokens=int(cfg["max_new_tokens"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    return curation_cfg, ResponseCache(cache_dir), out_dir, task


def _load_examples(cfg: dict[str, Any], task: TaskKind):
    file = DatasetFile(path=Path(cfg["dataset"]), task=task,
                       split=Split(cfg["split"]))
    examples = load_dataset(file)
    for warning in validate_dataset(examples):
        print(f"warning: {warning}", file=sys.stderr)
    return examples


def _config_snapshot(cfg: dict[str, Any]) -> dict[str, Any]:
    return {key: cfg[key] for key in sorted(cfg)}


def _preflight(curation_cfg: CurationConfig, cache: ResponseCache) -> None:
    if cache.is_empty() and not endpoint_reachable(curation_cfg.endpoint):
        raise ConfigError(
            f"endpoint {curation_cfg.endpoint.base_url} unreachable and the "
            f"cache at {cache.root} is cold")


def cmd_curate(args: argparse.Namespace) -> int:
    cfg = build_effective_config(args)
    curation_cfg, cache, out_dir, task = _curation_setup(cfg)
    examples = _load_examples(cfg, task)
    _preflight(curation_cfg, cache)

    with Curator(curation_cfg, cache=cache) as curator:
        curated, report = curator.curate_dataset(examples)

    force = bool(cfg["force"])
    training_path = out_dir / "curated.jsonl"
    digest = emit.write_training_file(curated, training_path, force=force)
    emit.write_report(report, out_dir / "report.json", force=force)

    templates = curation_cfg.templates
    families = ["predict", "paraphrase", "train"]
    if curation_cfg.judge.kind is JudgeKind.LLM_JUDGE:
        families.append("judge")
    template_digests = {
        family: emit.file_digest(templates.path_for(
            task if family != "judge" else TaskKind.READING_COMPREHENSION,
            family))
        for family in families}
    manifest = emit.RunManifest(
        tool_version=emit.TOOL_VERSION,
        created_at=emit.manifest_timestamp(),
        config=_config_snapshot(cfg),
        template_digests=template_digests,
        dataset_digest=emit.dataset_digest(examples),
        dataset_count=len(examples),
        training_file=training_path.name,
        training_file_digest=digest,
        report=report,
    )
    emit.write_manifest(manifest, out_dir / "manifest.json", force=force)

    print(emit.format_report_table(report), end="")
    print(emit.format_proportions_row(report))
    if report.inference_error_count > 0:
        return EXIT_EXAMPLE_ERRORS
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    records = emit.read_training_file(args.curated_file)
    counts: dict[Provenance, int] = {}
    inference_errors = 0
    for record in records:
        counts[record.provenance] = counts.get(record.provenance, 0) + 1
        if record.inference_error is not None:
            inference_errors += 1
    report = CurationReport.from_counts(
        counts, inference_error_count=inference_errors)
    print(emit.format_report_table(report), end="")
    print(emit.format_proportions_row(report))
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    cfg = build_effective_config(args)
    cfg["capture_logprobs"] = True
    curation_cfg, cache, out_dir, task = _curation_setup(cfg)
    examples = _load_examples(cfg, task)
    _preflight(curation_cfg, cache)

    with Curator(curation_cfg, cache=cache) as curator:
        samples = curator.collect_logprob_samples(examples)

    force = bool(cfg["force"])
    emit.write_jsonl(
        [{"id": s.example_id, "class": s.category,
          "total_logprob": s.total_logprob} for s in samples],
        out_dir / "logprob_samples.jsonl", force=force)
    rows = emit.export_histogram(
        [(s.category, s.total_logprob) for s in samples],
        bin_width=float(cfg["bin_width"]))
    emit.write_histogram(rows, out_dir / "histogram.tsv", force=force)
    print(f"scored {len(samples)} samples over "
          f"{len(samples) // 3 if samples else 0} qualifying examples")
    return EXIT_OK


def cmd_judge_eval(args: argparse.Namespace) -> int:
    cfg = build_effective_config(args)
    endpoint = _endpoint_from(cfg, "endpoint_url", "model")
    labeled = []
    with open(args.labeled_file, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            labeled.append((row["question"], row["candidate"], row["gold"],
                            bool(row["human_label"])))
    if not labeled:
        raise ConfigError(f"{args.labeled_file} has no labeled rows")

    spec = JudgeSpec(kind=JudgeKind.LLM_JUDGE,
                     max_judge_tokens=int(cfg["max_judge_tokens"]))
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = Path(cfg["cache_dir"]) if cfg["cache_dir"] else out_dir / "cache"
    client = InferenceClient(endpoint, cache=ResponseCache(cache_dir))
    templates = TemplateSet(Path(cfg["templates_dir"])
                            if cfg["templates_dir"] else None)
    result = calibrate_judge(labeled, spec, client, templates)
    print(f"accuracy: {result.accuracy:.3f} over {result.total} rows")
    print(f"confusion: TP={result.true_positive} TN={result.true_negative} "
          f"FP={result.false_positive} FN={result.false_negative} "
          f"judge_errors={result.judge_errors}")
    return EXIT_OK


def _add_shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--dataset", help="line-delimited JSON corpus file")
    parser.add_argument("--task", choices=[k.value for k in TaskKind])
    parser.add_argument("--split", choices=[s.value for s in Split])
    parser.add_argument("--endpoint-url", dest="endpoint_url")
    parser.add_argument("--model", help="served model id")
    parser.add_argument("--auth-env", dest="auth_env",
                        help="environment variable holding the API token")
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--fallback", choices=[f.value for f in Fallback])
    parser.add_argument("--capture-logprobs", dest="capture_logprobs",
                        action="store_const", const=True)
    parser.add_argument("--templates-dir", dest="templates_dir")
    parser.add_argument("--sandbox-cmd", dest="sandbox_cmd",
                        help="command line for the test-execution harness")
    parser.add_argument("--judge-kind", dest="judge_kind",
                        choices=[k.value for k in JudgeKind])
    parser.add_argument("--judge-override", dest="judge_override",
                        action="store_const", const=True)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    parser.add_argument("--bin-width", dest="bin_width", type=float)
    parser.add_argument("--force", action="store_const", const=True,
                        help="overwrite existing output files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sftcurate",
        description="Curate fine-tuning targets from model responses judged "
                    "correct, gold paraphrases, and gold responses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_curate = sub.add_parser("curate", help="run the curation pipeline")
    _add_shared_flags(p_curate)
    p_curate.set_defaults(func=cmd_curate)

    p_stats = sub.add_parser("stats",
                             help="recompute the provenance report from a "
                                  "curated file")
    p_stats.add_argument("curated_file")
    p_stats.set_defaults(func=cmd_stats)

    p_score = sub.add_parser("score",
                             help="export log-probability histogram data")
    _add_shared_flags(p_score)
    p_score.set_defaults(func=cmd_score)

    p_eval = sub.add_parser("judge-eval",
                            help="calibrate the LLM judge against human "
                                 "labels")
    p_eval.add_argument("labeled_file")
    _add_shared_flags(p_eval)
    p_eval.set_defaults(func=cmd_judge_eval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, DatasetError, TemplateError,
            InferenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
