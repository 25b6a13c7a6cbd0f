from __future__ import annotations

import json
from fractions import Fraction

import pytest

from ctxdecode.harness import (
    EvaluationReport,
    ValidationError,
    emit_report,
    load_manifest,
    render_csv,
    render_json,
    run_alpha_sweep,
    run_beam_sweep,
    run_eval,
)
from ctxdecode.metrics import DistanceMetric, wer
from ctxdecode.rerank import proxy_distance
from ctxdecode.synthetic import CorpusSpec, generate_manifest_records, write_manifest
from ctxdecode.textnorm import NormalizationConfig


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def simple_record(utt_id="u1", reference="ا ب ج", texts=("ا ب ج", "ا ب خ"), beam=2, proxies=None):
    return {
        "id": utt_id,
        "reference": reference,
        "nbest": {str(beam): [{"rank": i, "text": t} for i, t in enumerate(texts, start=1)]},
        "proxies": proxies or {"p": "ا ب ج"},
    }


def test_load_manifest_normalizes_and_validates(tmp_path):
    path = tmp_path / "m.jsonl"
    write_jsonl(
        path,
        [
            {
                "id": "u1",
                "reference": "مُحَمَّد ٩٢",
                "audio": "u1.wav",
                "nbest": {"2": [{"rank": 1, "text": "أحمد"}, {"rank": 2, "text": "محمد", "score": -1.5}]},
                "proxies": {"sysA": "مُحمد"},
            }
        ],
    )
    records = load_manifest(path)
    assert len(records) == 1
    record = records[0]
    assert record.reference == "محمد 92"
    assert record.nbest[2].candidates[0].text == "احمد"
    assert record.nbest[2].candidates[1].model_score == -1.5
    assert record.proxies["sysA"] == "محمد"
    assert record.audio == "u1.wav"


def test_load_manifest_error_reporting(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "u1", "reference": "x", "nbest": {"1": [{"rank": 1, "text": "x"}]}}\nnot json\n')
    with pytest.raises(ValidationError, match="line 2"):
        load_manifest(path)

    write_jsonl(path, [simple_record("dup"), simple_record("dup")])
    with pytest.raises(ValidationError, match="duplicate id"):
        load_manifest(path)

    write_jsonl(path, [{"id": "u1", "reference": "x", "nbest": {}}])
    with pytest.raises(ValidationError, match="nbest"):
        load_manifest(path)

    write_jsonl(path, [{"id": "u1", "reference": "x", "nbest": {"2": [{"rank": 2, "text": "x"}]}}])
    with pytest.raises(ValidationError, match="contiguous"):
        load_manifest(path)

    write_jsonl(path, [{"id": "u1", "reference": "x", "nbest": {"0": [{"rank": 1, "text": "x"}]}}])
    with pytest.raises(ValidationError, match="positive"):
        load_manifest(path)


def test_load_manifest_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with caplog.at_level("WARNING"):
        assert load_manifest(path) == []
    assert any("no records" in r.message for r in caplog.records)


def test_load_manifest_first_pass_designation(tmp_path):
    path = tmp_path / "m.jsonl"
    write_jsonl(path, [simple_record(proxies={"sysA": "ا ب"})])
    records = load_manifest(path, first_pass="sysA")
    assert records[0].first_pass == "sysA"
    with pytest.raises(ValidationError, match="first-pass"):
        load_manifest(path, first_pass="missing")


def test_run_eval_oracle_zero_when_reference_present(tmp_path):
    path = tmp_path / "m.jsonl"
    write_jsonl(
        path,
        [
            simple_record("u1", "ا ب", texts=("خ خ", "ا ب")),
            simple_record("u2", "ج د", texts=("ج د", "ق ق")),
        ],
    )
    corpus = load_manifest(path)
    report = run_eval(corpus, ["top1", "oracle"], 2, DistanceMetric.WER)
    rows = {row["policy"]: row for row in report.rows}
    assert rows["oracle"]["wer"] == 0.0
    assert rows["top1"]["wer"] == pytest.approx(2 / 4)


def test_run_eval_proxy_equals_reference_matches_oracle():
    records = generate_manifest_records(CorpusSpec(utterances=30, seed=5))
    for record in records:
        record["proxies"]["truth"] = record["reference"]
    corpus = _corpus_from_records(records)
    report = run_eval(corpus, ["nearest", "oracle"], 10, DistanceMetric.WER, proxy_names=["truth"])
    rows = {row["policy"]: row for row in report.rows}
    assert rows["nearest"]["wer"] == rows["oracle"]["wer"]
    assert rows["nearest"]["cer"] == rows["oracle"]["cer"]


def _corpus_from_records(records, cfg=None, tmp_dir=None):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory(dir=tmp_dir) as d:
        path = Path(d) / "m.jsonl"
        write_manifest(records, path)
        return load_manifest(path, cfg)


def test_beam_sweep_fallback_and_notes():
    records = generate_manifest_records(CorpusSpec(utterances=10, seed=6))
    corpus = _corpus_from_records(records)
    report = run_beam_sweep(corpus, ["top1", "oracle"], range(2, 11), DistanceMetric.WER)
    assert any("prefix-truncation" in note for note in report.notes)
    oracle_rates = [row["wer"] for row in report.rows if row["policy"] == "oracle"]
    assert all(b <= a for a, b in zip(oracle_rates, oracle_rates[1:]))
    top1_rates = {row["wer"] for row in report.rows if row["policy"] == "top1"}
    assert len(top1_rates) == 1  # nested prefixes keep rank 1 fixed


def test_beam_sweep_strict_rejects_fallback():
    records = generate_manifest_records(CorpusSpec(utterances=5, seed=6))
    corpus = _corpus_from_records(records)
    with pytest.raises(ValidationError, match="fallback"):
        run_beam_sweep(corpus, ["top1"], [2], DistanceMetric.WER, strict=True)


def test_beam_sweep_unusable_beam_errors():
    records = generate_manifest_records(CorpusSpec(utterances=3, seed=6, beam_size=5))
    corpus = _corpus_from_records(records)
    with pytest.raises(ValidationError, match="no records usable"):
        run_beam_sweep(corpus, ["top1"], [7], DistanceMetric.WER)


def test_run_eval_validation_errors():
    records = generate_manifest_records(CorpusSpec(utterances=3, seed=6))
    corpus = _corpus_from_records(records)
    with pytest.raises(ValidationError, match="unknown policy"):
        run_eval(corpus, ["best"], 10, DistanceMetric.WER)
    with pytest.raises(ValidationError, match="proxy"):
        run_eval(corpus, ["nearest"], 10, DistanceMetric.WER)
    with pytest.raises(ValidationError, match="no records"):
        run_eval([], ["top1"], 10, DistanceMetric.WER)
    with pytest.raises(ValidationError, match="lacks proxies"):
        run_eval(corpus, ["nearest"], 10, DistanceMetric.WER, proxy_names=["nosuch"])


def test_alpha_sweep_endpoints_match_single_proxy_runs():
    records = generate_manifest_records(CorpusSpec(utterances=25, seed=8))
    corpus = _corpus_from_records(records)
    alphas = [0.0, 0.5, 1.0]
    sweep = run_alpha_sweep(corpus, "sysA", "sysB", alphas, DistanceMetric.WER, 10)
    eval_a = run_eval(corpus, ["nearest"], 10, DistanceMetric.WER, proxy_names=["sysA"])
    eval_b = run_eval(corpus, ["nearest"], 10, DistanceMetric.WER, proxy_names=["sysB"])
    by_alpha = {row["alpha"]: row for row in sweep.rows}
    assert by_alpha[1.0]["wer"] == eval_a.rows[0]["wer"]
    assert by_alpha[1.0]["cer"] == eval_a.rows[0]["cer"]
    assert by_alpha[0.0]["wer"] == eval_b.rows[0]["wer"]
    assert by_alpha[0.0]["cer"] == eval_b.rows[0]["cer"]
    assert by_alpha[1.0]["deviation_pp"] == 0.0


def test_alpha_sweep_toy_corpus_brute_force(tmp_path):
    path = tmp_path / "toy.jsonl"
    records = [
        {
            "id": "u1",
            "reference": "ا ب ج د",
            "nbest": {"3": [{"rank": 1, "text": "ا ب ق د"}, {"rank": 2, "text": "ا ب ج ق"}, {"rank": 3, "text": "ق ق ق ق"}]},
            "proxies": {"A": "ا ب ج ق", "B": "ا ب ق د"},
        },
        {
            "id": "u2",
            "reference": "س ص ع",
            "nbest": {"3": [{"rank": 1, "text": "س ص ع"}, {"rank": 2, "text": "س ق ع"}, {"rank": 3, "text": "س ص"}]},
            "proxies": {"A": "س ص ق", "B": "س ص ع"},
        },
    ]
    write_jsonl(path, records)
    corpus = load_manifest(path)
    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
    sweep = run_alpha_sweep(corpus, "A", "B", alphas, DistanceMetric.WER, 3)
    for row in sweep.rows:
        alpha = row["alpha"]
        errors = 0
        length = 0
        for record in records:
            candidates = [c["text"] for c in record["nbest"]["3"]]
            scores = [
                Fraction(alpha).limit_denominator() * proxy_distance(DistanceMetric.WER, c, record["proxies"]["A"])
                + Fraction(1 - alpha).limit_denominator() * proxy_distance(DistanceMetric.WER, c, record["proxies"]["B"])
                for c in candidates
            ]
            best = min(range(len(candidates)), key=lambda i: (scores[i], i))
            pair = wer(candidates[best], record["reference"])
            errors += pair.errors
            length += pair.ref_len
        assert row["wer"] == pytest.approx(errors / length)


def test_sentence_mean_behind_flag_never_default(tmp_path):
    # unequal reference lengths make pooled and sentence-mean rates differ
    path = tmp_path / "m.jsonl"
    write_jsonl(
        path,
        [
            simple_record("u1", "ا ب", texts=("ا خ", "خ خ")),
            simple_record("u2", "ا ب ج د ه و ز ح", texts=("ا ب ج د ه و ز ح", "خ خ")),
        ],
    )
    corpus = load_manifest(path)
    pooled = run_eval(corpus, ["top1"], 2, DistanceMetric.WER)
    mean = run_eval(corpus, ["top1"], 2, DistanceMetric.WER, sentence_mean=True)
    assert pooled.rows[0]["wer"] == pytest.approx(1 / 10)
    assert mean.rows[0]["wer"] == pytest.approx((1 / 2 + 0 / 8) / 2)
    assert "rates=sentence-mean" in mean.notes
    assert "rates=sentence-mean" not in pooled.notes


def test_jobs_do_not_change_results():
    records = generate_manifest_records(CorpusSpec(utterances=20, seed=10))
    corpus = _corpus_from_records(records)
    one = run_eval(corpus, ["top1", "nearest", "oracle"], 10, DistanceMetric.WER, proxy_names=["sysA"], jobs=1)
    many = run_eval(corpus, ["top1", "nearest", "oracle"], 10, DistanceMetric.WER, proxy_names=["sysA"], jobs=8)
    assert render_csv(one) == render_csv(many)


def test_report_rates_recomputable_from_selections():
    records = generate_manifest_records(CorpusSpec(utterances=15, seed=11))
    corpus = _corpus_from_records(records)
    report = run_eval(corpus, ["nearest"], 10, DistanceMetric.WER, proxy_names=["sysA"])
    selections = report.selections["nearest@10"]
    by_id = {record.id: record for record in corpus}
    errors = sum(wer(s.chosen_text, by_id[s.utterance_id].reference).errors for s in selections)
    length = sum(wer(s.chosen_text, by_id[s.utterance_id].reference).ref_len for s in selections)
    assert report.rows[0]["wer"] == pytest.approx(errors / length)


def test_render_csv_shape_and_json_round_trip(tmp_path):
    report = EvaluationReport(
        kind="eval",
        columns=["policy", "beam_size", "metric", "proxies", "utterances", "wer", "cer"],
        rows=[
            {"policy": "top1", "beam_size": 10, "metric": "wer", "proxies": "", "utterances": 3, "wer": 0.123456, "cer": 0.05}
        ],
        config_digest="abc123",
        utterance_count=3,
    )
    csv_text = render_csv(report)
    lines = csv_text.splitlines()
    assert lines[0] == "# ctxdecode report kind=eval"
    assert lines[1] == "# config_digest=abc123"
    assert lines[2] == "policy,beam_size,metric,proxies,utterances,wer,cer"
    assert lines[3] == "top1,10,wer,,3,0.1235,0.0500"

    payload = json.loads(render_json(report))
    assert payload["rows"][0]["wer"] == float("0.1235")
    csv_wer = lines[3].split(",")[5]
    assert float(csv_wer) == payload["rows"][0]["wer"]

    emit_report(report, "csv", tmp_path / "r.csv")
    emit_report(report, "json", tmp_path / "r.json")
    assert (tmp_path / "r.csv").read_text() == csv_text
    with pytest.raises(ValidationError):
        emit_report(report, "yaml", tmp_path / "r.yaml")


def test_empty_policy_set_yields_header_only_csv():
    records = generate_manifest_records(CorpusSpec(utterances=3, seed=12))
    corpus = _corpus_from_records(records)
    report = run_eval(corpus, [], 10, DistanceMetric.WER)
    csv_text = render_csv(report)
    data_lines = [l for l in csv_text.splitlines() if not l.startswith("#")]
    assert data_lines == ["policy,beam_size,metric,proxies,utterances,wer,cer"]


def test_synthetic_manifest_deterministic(tmp_path):
    spec = CorpusSpec(utterances=12, seed=13)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_manifest(generate_manifest_records(spec), a)
    write_manifest(generate_manifest_records(spec), b)
    assert a.read_bytes() == b.read_bytes()
    # normalization at load is the identity on generated texts
    corpus = load_manifest(a, NormalizationConfig())
    raw = [json.loads(line) for line in a.read_text().splitlines()]
    assert all(record.reference == entry["reference"] for record, entry in zip(corpus, raw))
