from __future__ import annotations

import json

import numpy as np
import pytest

from ctxdecode import __version__
from ctxdecode.audio import Waveform, read_wav, write_wav
from ctxdecode.cli import main
from ctxdecode.synthetic import CorpusSpec, generate_manifest_records, write_manifest


@pytest.fixture
def manifest(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(generate_manifest_records(CorpusSpec(utterances=12, seed=3)), path)
    return path


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_help_json(capsys):
    code, out = run_cli(["--help-json"], capsys)
    assert code == 0
    payload = json.loads(out)
    for command in ("normalize", "score", "index", "prompt", "prefix", "rerank", "eval", "sweep-beam", "sweep-alpha"):
        assert command in payload["commands"]


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["normalize", "--frobnicate"])
    assert exc.value.code == 2


def test_no_subcommand_exits_2(capsys):
    assert main([]) == 2


def test_normalize_files_and_config(tmp_path, capsys):
    src = tmp_path / "in.txt"
    src.write_text("مُحَمَّد ٩٢\nhello ٥\n", encoding="utf-8")
    out = tmp_path / "out.txt"
    assert main(["normalize", "--in", str(src), "--out", str(out)]) == 0
    assert out.read_text(encoding="utf-8") == "محمد 92\n5\n"

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"drop_latin_tokens": False, "convert_eastern_numerals": False}))
    code, printed = run_cli(["normalize", "--in", str(src), "--config", str(cfg)], capsys)
    assert code == 0
    assert printed == "محمد ٩٢\nhello ٥\n"

    toml_cfg = tmp_path / "cfg.toml"
    toml_cfg.write_text("[normalization]\ndrop_latin_tokens = false\n")
    code, printed = run_cli(["normalize", "--in", str(src), "--config", str(toml_cfg)], capsys)
    assert code == 0
    assert printed.splitlines()[1] == "hello 5"

    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"normalization": {"no_such_flag": True}}))
    assert main(["normalize", "--in", str(src), "--config", str(bad_cfg)]) == 2


def test_normalize_reads_stdin():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "ctxdecode.cli", "normalize"],
        input="مُحَمَّد ٩٢\n",
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout == "محمد 92\n"


def test_score_paired_files(tmp_path, capsys):
    hyp = tmp_path / "hyp.txt"
    ref = tmp_path / "ref.txt"
    hyp.write_text("ا ب ج\nا خ\n", encoding="utf-8")
    ref.write_text("ا ب ج\nا ب\n", encoding="utf-8")
    code, out = run_cli(["score", "--metric", "wer", "--hyp", str(hyp), "--ref", str(ref)], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "unit,errors,ref_len,rate"
    assert lines[1] == "1,0,3,0.0000"
    assert lines[2] == "2,1,2,0.5000"
    assert lines[3] == "pooled,1,5,0.2000"

    hyp.write_text("ا\n", encoding="utf-8")
    assert main(["score", "--metric", "wer", "--hyp", str(hyp), "--ref", str(ref)]) == 2


def test_score_bleu_and_manifest(tmp_path, manifest, capsys):
    code, out = run_cli(["score", "--metric", "bleu", "--manifest", str(manifest)], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "unit,distance"
    assert lines[-1].startswith("mean,")

    code, out = run_cli(["score", "--metric", "cer", "--manifest", str(manifest), "--proxy", "sysA"], capsys)
    assert code == 0
    assert out.splitlines()[-1].startswith("pooled,")

    assert main(["score", "--metric", "cer", "--manifest", str(manifest), "--proxy", "nosuch"]) == 2
    assert main(["score", "--metric", "wer"]) == 2


def test_index_build_and_query(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    with open(corpus, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"id": "d1", "text": "ابو بكر"}, ensure_ascii=False) + "\n")
        fh.write(json.dumps({"id": "d2", "text": "عمر بن الخطاب", "audio": "d2.wav"}, ensure_ascii=False) + "\n")
    index_path = tmp_path / "index.bin"
    assert main(["index", "build", "--corpus", str(corpus), "--out", str(index_path)]) == 0
    assert index_path.exists() and (tmp_path / "index.bin.meta.json").exists()

    queries = tmp_path / "q.txt"
    queries.write_text("ابو بكر\nxyzzy\n", encoding="utf-8")
    code, out = run_cli(["index", "query", "--index", str(index_path), "--k", "2", "--in", str(queries)], capsys)
    assert code == 0
    first, second = [json.loads(line) for line in out.splitlines()]
    assert first["hits"][0]["doc_id"] == "d1"
    assert first["hits"][0]["similarity"] == pytest.approx(1.0, abs=1e-9)
    assert second["hits"] == []

    bad = tmp_path / "bad.jsonl"
    bad.write_text("{}\n")
    assert main(["index", "build", "--corpus", str(bad), "--out", str(index_path)]) == 2


def test_prompt_build_strategies(tmp_path, capsys):
    src = tmp_path / "fp.txt"
    src.write_text("utt1\tا ب ج\nد ه\n", encoding="utf-8")
    code, out = run_cli(["prompt", "build", "--strategy", "reverse", "--in", str(src)], capsys)
    assert code == 0
    plans = [json.loads(line) for line in out.splitlines()]
    assert plans[0]["id"] == "utt1"
    assert plans[0]["prompt_text"] == "ج ب ا"
    assert plans[1]["id"] == "line-000002"
    assert plans[1]["prompt_text"] == "ه د"

    code, out = run_cli(["prompt", "build", "--strategy", "shuffle", "--seed", "9", "--in", str(src)], capsys)
    assert code == 0
    again_code, again_out = run_cli(["prompt", "build", "--strategy", "shuffle", "--seed", "9", "--in", str(src)], capsys)
    assert out == again_out

    assert main(["prompt", "build", "--strategy", "retrieve", "--in", str(src)]) == 2


def test_prompt_build_retrieve(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(json.dumps({"id": "d1", "text": "ا ب ج"}, ensure_ascii=False) + "\n", encoding="utf-8")
    index_path = tmp_path / "i.bin"
    assert main(["index", "build", "--corpus", str(corpus), "--out", str(index_path)]) == 0
    src = tmp_path / "fp.txt"
    src.write_text("ا ب\nقطعا مختلف تماما\n", encoding="utf-8")
    code, out = run_cli(["prompt", "build", "--strategy", "retrieve", "--index", str(index_path), "--in", str(src)], capsys)
    assert code == 0
    plans = [json.loads(line) for line in out.splitlines()]
    assert plans[0]["prompt_text"] == "ا ب ج"
    assert plans[1]["no_context"] is True


def test_prefix_audio_cli(tmp_path):
    ctx, test, out = tmp_path / "c.wav", tmp_path / "t.wav", tmp_path / "o.wav"
    write_wav(ctx, Waveform(samples=np.full(16000, 5, dtype=np.int16)))
    write_wav(test, Waveform(samples=np.full(32000, -5, dtype=np.int16)))
    assert main(["prefix", "audio", "--ctx", str(ctx), "--test", str(test), "--silence", "1.0", "--out", str(out)]) == 0
    merged = read_wav(out)
    assert len(merged) == 64000
    assert not merged.samples[16000:32000].any()

    # format violation is a hard error
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFFgarbage")
    assert main(["prefix", "audio", "--ctx", str(bad), "--test", str(test), "--out", str(out)]) in (1, 2)


def test_rerank_cli(tmp_path, manifest, capsys):
    code, out = run_cli(
        ["rerank", "--manifest", str(manifest), "--policy", "nearest", "--metric", "wer", "--proxy", "sysA"],
        capsys,
    )
    assert code == 0
    results = [json.loads(line) for line in out.splitlines()]
    assert len(results) == 12
    assert all(1 <= r["chosen_rank"] <= 10 for r in results)

    code, out = run_cli(["rerank", "--manifest", str(manifest), "--policy", "oracle", "--beam", "5"], capsys)
    assert code == 0
    assert all(1 <= json.loads(line)["chosen_rank"] <= 5 for line in out.splitlines())

    assert main(["rerank", "--manifest", str(manifest), "--policy", "nearest"]) == 2
    weighted = main(
        ["rerank", "--manifest", str(manifest), "--policy", "nearest", "--proxy", "sysA:2", "--proxy", "sysB:1"]
    )
    assert weighted == 0
    assert main(["rerank", "--manifest", str(manifest), "--policy", "nearest", "--proxy", "sysA:2", "--proxy", "sysB"]) == 2


def test_eval_cli_csv_and_json(tmp_path, manifest, capsys):
    code, out = run_cli(["eval", "--manifest", str(manifest), "--proxy", "sysA"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "# ctxdecode report kind=eval"
    assert lines[3].startswith("top1,10,wer")

    out_json = tmp_path / "r.json"
    assert main(["eval", "--manifest", str(manifest), "--proxy", "sysA", "--format", "json", "--out", str(out_json)]) == 0
    payload = json.loads(out_json.read_text())
    assert payload["report"] == "eval"
    assert {row["policy"] for row in payload["rows"]} == {"top1", "nearest", "oracle"}

    assert main(["eval", "--manifest", str(tmp_path / "missing.jsonl"), "--proxy", "sysA"]) == 1
    assert main(["eval", "--manifest", str(manifest)]) == 2  # nearest without proxy


def test_eval_digest_stable_across_jobs_but_not_inputs(tmp_path, manifest, capsys):
    _, out1 = run_cli(["eval", "--manifest", str(manifest), "--proxy", "sysA", "--jobs", "1"], capsys)
    _, out4 = run_cli(["eval", "--manifest", str(manifest), "--proxy", "sysA", "--jobs", "4"], capsys)
    assert out1 == out4
    _, other_metric = run_cli(["eval", "--manifest", str(manifest), "--proxy", "sysA", "--metric", "cer"], capsys)
    digest = lambda text: [l for l in text.splitlines() if l.startswith("# config_digest")][0]
    assert digest(out1) != digest(other_metric)


def test_sweep_beam_cli(manifest, capsys):
    code, out = run_cli(
        ["sweep-beam", "--manifest", str(manifest), "--proxy", "sysA", "--beam-min", "2", "--beam-max", "4"],
        capsys,
    )
    assert code == 0
    rows = [l for l in out.splitlines() if not l.startswith("#") and not l.startswith("policy")]
    assert len(rows) == 3 * 3
    assert any("note=beam_fallback" in l for l in out.splitlines())


def test_sweep_alpha_cli(manifest, capsys):
    code, out = run_cli(
        ["sweep-alpha", "--manifest", str(manifest), "--p1", "sysA", "--p2", "sysB", "--alpha-step", "0.5"],
        capsys,
    )
    assert code == 0
    rows = [l for l in out.splitlines() if not l.startswith("#") and not l.startswith("alpha")]
    assert len(rows) == 3
    assert rows[-1].startswith("1.0000") and rows[-1].endswith("0.0000")
    assert main(["sweep-alpha", "--manifest", str(manifest), "--p1", "sysA", "--p2", "sysA"]) == 2
    assert main(["sweep-alpha", "--manifest", str(manifest), "--p1", "sysA", "--p2", "sysB", "--alpha-step", "0.3"]) == 2


def test_synth_cli_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["synth", "--out", str(a), "--utterances", "5", "--seed", "2"]) == 0
    assert main(["synth", "--out", str(b), "--utterances", "5", "--seed", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 5


def test_shipped_manifest_matches_generator(tmp_path):
    from conftest import REPO_ROOT

    regenerated = tmp_path / "regen.jsonl"
    assert main(["synth", "--out", str(regenerated)]) == 0
    assert regenerated.read_bytes() == (REPO_ROOT / "data" / "synthetic.jsonl").read_bytes()
