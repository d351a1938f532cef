from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sftcurate.datamodel import (
    CuratedExample,
    CurationReport,
    Decision,
    Provenance,
    Verdict,
)
from sftcurate.emit import (
    HistogramRow,
    RunManifest,
    TOOL_VERSION,
    export_histogram,
    file_digest,
    format_proportions_row,
    format_report_table,
    manifest_timestamp,
    read_manifest,
    read_training_file,
    report_from_dict,
    report_to_dict,
    write_histogram,
    write_manifest,
    write_training_file,
)

ACCEPT = Verdict(Decision.ACCEPT, {"ok": True})
REJECT = Verdict(Decision.REJECT, {"ok": False})


def curated(i: int, provenance: Provenance) -> CuratedExample:
    prompt = ({"role": "user", "content": f"prompt {i}"},)
    if provenance is Provenance.MODEL_RESPONSE:
        return CuratedExample(example_id=f"e{i}", training_prompt=prompt,
                              target=f"target {i}", provenance=provenance,
                              prediction_verdict=ACCEPT)
    paraphrase = ACCEPT if provenance is Provenance.GOLD_PARAPHRASE else REJECT
    return CuratedExample(example_id=f"e{i}", training_prompt=prompt,
                          target=f"target {i}", provenance=provenance,
                          prediction_verdict=REJECT,
                          paraphrase_verdict=paraphrase)


# -- training file ---------------------------------------------------------------

def test_training_file_round_trip(tmp_path):
    items = [curated(0, Provenance.MODEL_RESPONSE),
             curated(1, Provenance.GOLD_PARAPHRASE),
             curated(2, Provenance.GOLD)]
    path = tmp_path / "out.jsonl"
    write_training_file(items, path)
    records = read_training_file(path)
    assert len(records) == 3
    for item, record in zip(items, records):
        assert record.id == item.example_id
        assert record.provenance is item.provenance
        assert record.messages[:-1] == item.training_prompt
        assert record.messages[-1] == {"role": "assistant",
                                       "content": item.target}


def test_training_file_schema_and_field_order(tmp_path):
    path = tmp_path / "one.jsonl"
    write_training_file([curated(7, Provenance.MODEL_RESPONSE)], path)
    raw = path.read_text(encoding="utf-8")
    assert raw.endswith("\n")
    record = json.loads(raw)
    assert list(record) == ["id", "messages", "provenance"]
    assert record["messages"][-1]["role"] == "assistant"


def test_training_file_empty_and_digest(tmp_path):
    path = tmp_path / "empty.jsonl"
    digest = write_training_file([], path)
    assert path.read_bytes() == b""
    import hashlib
    assert digest == hashlib.sha256(b"").hexdigest()


def test_training_file_deterministic_digest(tmp_path):
    items = [curated(i, Provenance.GOLD) for i in range(4)]
    d1 = write_training_file(items, tmp_path / "a.jsonl")
    d2 = write_training_file(items, tmp_path / "b.jsonl")
    assert d1 == d2
    assert (tmp_path / "a.jsonl").read_bytes() == \
        (tmp_path / "b.jsonl").read_bytes()


def test_training_file_refuses_overwrite(tmp_path):
    path = tmp_path / "x.jsonl"
    write_training_file([], path)
    with pytest.raises(FileExistsError):
        write_training_file([], path)
    write_training_file([curated(1, Provenance.GOLD)], path, force=True)
    assert read_training_file(path)[0].id == "e1"


def test_inference_error_flag_round_trips(tmp_path):
    flagged = CuratedExample(
        example_id="err", training_prompt=({"role": "user", "content": "p"},),
        target="gold text", provenance=Provenance.GOLD,
        prediction_verdict=None, inference_error="endpoint down")
    path = tmp_path / "f.jsonl"
    write_training_file([flagged], path)
    record = read_training_file(path)[0]
    assert record.inference_error == "endpoint down"


# -- report -----------------------------------------------------------------------

def report_from(counts: tuple[int, int, int]) -> CurationReport:
    model, para, gold = counts
    return CurationReport.from_counts({
        Provenance.MODEL_RESPONSE: model,
        Provenance.GOLD_PARAPHRASE: para,
        Provenance.GOLD: gold,
    })


def test_proportions_row_matches_published_format():
    assert format_proportions_row(report_from((495, 421, 84))) == \
        "49.5% / 42.1% / 8.4%"


def test_proportions_row_degenerate():
    assert format_proportions_row(report_from((1, 0, 0))) == \
        "100.0% / 0.0% / 0.0%"


def test_proportions_row_rounding_sum_tolerated():
    row = format_proportions_row(report_from((1, 1, 1)))
    assert row == "33.3% / 33.3% / 33.3%"
    total = sum(float(part.rstrip("%")) for part in row.split(" / "))
    assert total == pytest.approx(99.9)


def test_report_table_layout():
    table = format_report_table(report_from((495, 421, 84)))
    lines = table.splitlines()
    assert lines[0].split() == ["Model", "responses", "Gold", "paraphrases",
                                "Gold", "responses"]
    assert lines[1].split() == ["49.5%", "42.1%", "8.4%"]
    # columns are aligned
    assert lines[0].index("Gold paraphrases") == lines[1].index("42.1%")


def test_report_json_round_trip(tmp_path):
    report = CurationReport.from_counts(
        {Provenance.MODEL_RESPONSE: 2, Provenance.GOLD: 1},
        judge_error_count=1, inference_error_count=2, skipped_count=3,
        timings_s={"predict": 1.5})
    assert report_from_dict(report_to_dict(report)) == report


def test_write_report_emits_json_and_text(tmp_path):
    from sftcurate.emit import write_report
    report = report_from((2, 1, 1))
    write_report(report, tmp_path / "report.json")
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["total"] == 4
    assert data["counts"]["model_response"] == 2
    text = (tmp_path / "report.txt").read_text()
    assert "Model responses" in text
    assert "50.0%" in text


# -- histogram ----------------------------------------------------------------------

def test_histogram_published_values_land_in_expected_bins():
    rows = export_histogram([("gold", -84.32), ("model", -36.64)],
                            bin_width=10.0)
    by_key = {(r.category, r.bin_lo, r.bin_hi): r.count for r in rows}
    assert by_key[("gold", -90.0, -80.0)] == 1
    assert by_key[("model", -40.0, -30.0)] == 1
    # the two classes share one axis: six bins each, all others empty
    assert len(rows) == 12
    assert sum(r.count for r in rows) == 2


def test_histogram_all_equal_single_bin():
    rows = export_histogram([("a", 5.0)] * 7, bin_width=2.0)
    assert rows == [HistogramRow("a", 4.0, 6.0, 7)]


def test_histogram_empty_and_bad_width():
    assert export_histogram([], 10.0) == []
    with pytest.raises(ValueError):
        export_histogram([("a", 1.0)], 0.0)


@given(st.lists(st.tuples(st.sampled_from(["gold", "paraphrase", "model"]),
                          st.floats(min_value=-200, max_value=0,
                                    allow_nan=False)),
                min_size=1, max_size=200))
def test_histogram_conservation(samples):
    rows = export_histogram(samples, bin_width=10.0)
    for category in {c for c, _ in samples}:
        total = sum(r.count for r in rows if r.category == category)
        assert total == sum(1 for c, _ in samples if c == category)


def test_write_histogram_tsv(tmp_path):
    rows = export_histogram([("gold", -84.32), ("model", -36.64)], 10.0)
    write_histogram(rows, tmp_path / "hist.tsv")
    lines = (tmp_path / "hist.tsv").read_text().splitlines()
    assert lines[0] == "class\tbin_lo\tbin_hi\tcount"
    assert "gold\t-90.0\t-80.0\t1" in lines


# -- manifest -----------------------------------------------------------------------

def test_manifest_timestamp_honors_reproducible_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    assert manifest_timestamp() == "2023-11-14T22:13:20+00:00"
    monkeypatch.delenv("SOURCE_DATE_EPOCH")
    assert manifest_timestamp() != "2023-11-14T22:13:20+00:00"


def test_manifest_round_trip_and_digest_consistency(tmp_path):
    items = [curated(0, Provenance.MODEL_RESPONSE)]
    training = tmp_path / "curated.jsonl"
    digest = write_training_file(items, training)
    manifest = RunManifest(
        tool_version=TOOL_VERSION,
        created_at="2024-01-01T00:00:00+00:00",
        config={"model": "mock"},
        template_digests={"predict": "abc"},
        dataset_digest="d" * 64,
        dataset_count=1,
        training_file=training.name,
        training_file_digest=digest,
        report=report_from((1, 0, 0)),
    )
    path = tmp_path / "manifest.json"
    write_manifest(manifest, path)
    loaded = read_manifest(path)
    assert loaded["training_file_digest"] == file_digest(training)
    assert loaded["report"]["total"] == 1
    assert loaded["downstream_finetune"]["rank"] == 8
    assert loaded["downstream_finetune"]["scaling_factor"] == 16
