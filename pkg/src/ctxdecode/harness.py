"""Dataset ingestion, experiment orchestration, and report emission.

Manifests are JSONL, one utterance per line:

    {"id": str, "reference": str, "audio": str?,
     "nbest": {"<B>": [{"rank": int, "text": str, "score": float?}]},
     "proxies": {"<system>": str}}

All texts are normalized at load time with the run's NormalizationConfig, so
every downstream selection and score sees the same preprocessed form.

Corpus rates pool summed errors over summed reference lengths. When a record
lacks an n-best list for a requested beam size, the sweep truncates the
smallest available list with enough candidates to its first B entries
(prefix truncation); every such fallback is flagged in the report notes, and
``strict`` turns it into an error. Reports are deterministic: identical
inputs, config, and seeds reproduce byte-identical CSV regardless of the
worker count used for per-utterance selection.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from ctxdecode.metrics import DistanceMetric, ScorePair, cer, corpus_rates, wer
from ctxdecode.rerank import (
    Candidate,
    NBestList,
    ProxySet,
    SelectionResult,
    select_nearest,
    select_oracle,
    select_top1,
)
from ctxdecode.textnorm import NormalizationConfig, normalize

log = logging.getLogger(__name__)

POLICY_NAMES = ("top1", "nearest", "oracle")


class ValidationError(ValueError):
    """Bad manifest, schema, or run configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class UtteranceRecord:
    """One evaluation unit with normalized reference, n-best lists, and proxies."""

    id: str
    reference: str
    nbest: dict[int, NBestList]
    proxies: dict[str, str]
    audio: str | None = None
    first_pass: str | None = None


@dataclass
class EvaluationReport:
    """Aggregated rows plus enough context to recompute them.

    ``selections`` keeps the per-utterance choices behind every row so any
    reported rate can be recomputed; only ``rows`` and metadata are emitted.
    """

    kind: str
    columns: list[str]
    rows: list[dict]
    config_digest: str
    utterance_count: int
    notes: list[str] = field(default_factory=list)
    selections: dict[str, list[SelectionResult]] = field(default_factory=dict)


def _require(condition: bool, line_no: int, message: str) -> None:
    if not condition:
        raise ValidationError(f"manifest line {line_no}: {message}")


def load_manifest(
    path: str | Path,
    cfg: NormalizationConfig | None = None,
    first_pass: str | None = None,
) -> list[UtteranceRecord]:
    """Load and validate a JSONL manifest, normalizing every text field.

    Raises ValidationError with the offending line number on malformed JSON,
    schema violations, or duplicate ids. An empty file yields an empty corpus
    with a warning.
    """
    if cfg is None:
        cfg = NormalizationConfig()
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"manifest line {line_no}: malformed JSON ({exc.msg})") from None
            _require(isinstance(raw, dict), line_no, "record must be a JSON object")
            _require(isinstance(raw.get("id"), str) and raw["id"] != "", line_no, "missing string 'id'")
            utt_id = raw["id"]
            _require(utt_id not in seen, line_no, f"duplicate id {utt_id!r}")
            seen.add(utt_id)
            _require(isinstance(raw.get("reference"), str), line_no, "missing string 'reference'")
            _require(isinstance(raw.get("nbest"), dict) and raw["nbest"], line_no, "missing non-empty 'nbest' map")
            audio = raw.get("audio")
            _require(audio is None or isinstance(audio, str), line_no, "'audio' must be a string path")

            nbest: dict[int, NBestList] = {}
            for key, entries in raw["nbest"].items():
                _require(key.isdigit() and int(key) > 0, line_no, f"beam size key {key!r} must be a positive integer")
                _require(isinstance(entries, list) and entries, line_no, f"nbest[{key}] must be a non-empty list")
                cands = []
                for entry in entries:
                    _require(isinstance(entry, dict), line_no, f"nbest[{key}] entries must be objects")
                    _require(isinstance(entry.get("rank"), int), line_no, f"nbest[{key}] entry missing integer 'rank'")
                    _require(isinstance(entry.get("text"), str), line_no, f"nbest[{key}] entry missing string 'text'")
                    score = entry.get("score")
                    _require(
                        score is None or isinstance(score, (int, float)),
                        line_no,
                        f"nbest[{key}] entry 'score' must be a number",
                    )
                    cands.append(
                        Candidate(
                            rank=entry["rank"],
                            text=normalize(entry["text"], cfg).text,
                            model_score=None if score is None else float(score),
                        )
                    )
                try:
                    nbest[int(key)] = NBestList(candidates=tuple(cands), beam_size=int(key))
                except ValueError as exc:
                    raise ValidationError(f"manifest line {line_no}: {exc}") from None

            proxies_raw = raw.get("proxies", {})
            _require(isinstance(proxies_raw, dict), line_no, "'proxies' must be a map")
            proxies = {}
            for name, text in proxies_raw.items():
                _require(isinstance(text, str), line_no, f"proxy {name!r} must map to a string")
                proxies[name] = normalize(text, cfg).text
            if first_pass is not None:
                _require(first_pass in proxies, line_no, f"designated first-pass proxy {first_pass!r} not present")

            records.append(
                UtteranceRecord(
                    id=utt_id,
                    reference=normalize(raw["reference"], cfg).text,
                    nbest=nbest,
                    proxies=proxies,
                    audio=audio,
                    first_pass=first_pass,
                )
            )
    if not records:
        log.warning("manifest %s contains no records", path)
    return records


def _nbest_for(record: UtteranceRecord, beam_size: int) -> tuple[NBestList | None, bool]:
    """The record's list for a beam size, falling back to prefix truncation.

    Returns (list, used_fallback); (None, False) when nothing is usable.
    """
    exact = record.nbest.get(beam_size)
    if exact is not None:
        return exact, False
    for key in sorted(record.nbest):
        if len(record.nbest[key].candidates) >= beam_size:
            return record.nbest[key].take_top(beam_size), True
    return None, False


def _proxy_set(record: UtteranceRecord, proxy_names: Sequence[str], weights: Sequence[float] | None) -> ProxySet:
    missing = [name for name in proxy_names if name not in record.proxies]
    if missing:
        raise ValidationError(f"utterance {record.id!r} lacks proxies {missing}")
    pairs = tuple((name, record.proxies[name]) for name in proxy_names)
    if weights is None:
        return ProxySet.uniform(list(pairs))
    return ProxySet(proxies=pairs, weights=tuple(weights))


def _select(
    record: UtteranceRecord,
    nbest: NBestList,
    policy: str,
    metric: DistanceMetric,
    proxy_names: Sequence[str],
    weights: Sequence[float] | None,
) -> SelectionResult:
    if policy == "top1":
        return select_top1(nbest, utterance_id=record.id)
    if policy == "oracle":
        return select_oracle(nbest, record.reference, utterance_id=record.id)
    if policy == "nearest":
        return select_nearest(nbest, _proxy_set(record, proxy_names, weights), metric, utterance_id=record.id)
    raise ValidationError(f"unknown policy {policy!r}")


def _map_utterances(work: Callable, items: list, jobs: int) -> list:
    """Order-preserving per-utterance map; output is identical for any jobs."""
    if jobs <= 1:
        return [work(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(work, items))


def _fmt_rate(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.4f}"


def _pool(selections: list[SelectionResult], references: list[str]) -> tuple[ScorePair, ScorePair]:
    return corpus_rates([(sel.chosen_text, ref) for sel, ref in zip(selections, references)])


def _sentence_mean(selections: list[SelectionResult], references: list[str]) -> tuple[float, float]:
    """Mean of per-sentence rates; never the default (pooled rates are)."""
    wer_rates = [wer(sel.chosen_text, ref).rate for sel, ref in zip(selections, references)]
    cer_rates = [cer(sel.chosen_text, ref).rate for sel, ref in zip(selections, references)]
    return sum(wer_rates) / len(wer_rates), sum(cer_rates) / len(cer_rates)


def _rates(
    selections: list[SelectionResult], references: list[str], sentence_mean: bool
) -> tuple[float, float]:
    if sentence_mean:
        return _sentence_mean(selections, references)
    wer_pool, cer_pool = _pool(selections, references)
    return wer_pool.rate, cer_pool.rate


def _sweep_rows(
    corpus: list[UtteranceRecord],
    policies: Sequence[str],
    beam_sizes: Sequence[int],
    metric: DistanceMetric,
    proxy_names: Sequence[str],
    weights: Sequence[float] | None,
    jobs: int,
    strict: bool,
    kind: str,
    config_digest: str,
    sentence_mean: bool,
) -> EvaluationReport:
    if not corpus:
        raise ValidationError("no records in corpus")
    for policy in policies:
        if policy not in POLICY_NAMES:
            raise ValidationError(f"unknown policy {policy!r}; expected one of {POLICY_NAMES}")
    if "nearest" in policies and not proxy_names:
        raise ValidationError("nearest selection requires at least one --proxy")

    report = EvaluationReport(
        kind=kind,
        columns=["policy", "beam_size", "metric", "proxies", "utterances", "wer", "cer"],
        rows=[],
        config_digest=config_digest,
        utterance_count=len(corpus),
    )
    if sentence_mean:
        report.notes.append("rates=sentence-mean")
    fallback_ids: list[str] = []
    for beam_size in beam_sizes:
        usable: list[tuple[UtteranceRecord, NBestList]] = []
        for record in corpus:
            nbest, fell_back = _nbest_for(record, beam_size)
            if nbest is None:
                message = f"utterance {record.id!r} has no n-best list usable for beam size {beam_size}"
                if strict:
                    raise ValidationError(message)
                log.warning("%s", message)
                continue
            if fell_back:
                if strict:
                    raise ValidationError(
                        f"utterance {record.id!r} requires prefix-truncation fallback for beam size {beam_size}"
                    )
                fallback_ids.append(record.id)
            usable.append((record, nbest))
        if not usable:
            raise ValidationError(f"no records usable for beam size {beam_size}")

        references = [record.reference for record, _ in usable]
        for policy in policies:
            proxies_label = "+".join(proxy_names) if policy == "nearest" else ""
            selections = _map_utterances(
                lambda pair: _select(pair[0], pair[1], policy, metric, proxy_names, weights),
                usable,
                jobs,
            )
            wer_rate, cer_rate = _rates(selections, references, sentence_mean)
            report.rows.append(
                {
                    "policy": policy,
                    "beam_size": beam_size,
                    "metric": metric.value,
                    "proxies": proxies_label,
                    "utterances": len(usable),
                    "wer": wer_rate,
                    "cer": cer_rate,
                }
            )
            report.selections[f"{policy}@{beam_size}"] = selections
    if fallback_ids:
        report.notes.append(
            f"beam_fallback=prefix-truncation utterances={len(set(fallback_ids))}"
        )
    return report


def run_eval(
    corpus: list[UtteranceRecord],
    policies: Sequence[str],
    beam_size: int,
    metric: DistanceMetric,
    proxy_names: Sequence[str] = (),
    weights: Sequence[float] | None = None,
    jobs: int = 1,
    strict: bool = False,
    config_digest: str = "",
    sentence_mean: bool = False,
) -> EvaluationReport:
    """Policy comparison at a single beam size."""
    return _sweep_rows(
        corpus, policies, [beam_size], metric, proxy_names, weights, jobs, strict, "eval",
        config_digest, sentence_mean,
    )


def run_beam_sweep(
    corpus: list[UtteranceRecord],
    policies: Sequence[str],
    beam_sizes: Sequence[int],
    metric: DistanceMetric,
    proxy_names: Sequence[str] = (),
    weights: Sequence[float] | None = None,
    jobs: int = 1,
    strict: bool = False,
    config_digest: str = "",
    sentence_mean: bool = False,
) -> EvaluationReport:
    """Pooled WER/CER per policy across beam sizes (default grid 2..10)."""
    return _sweep_rows(
        corpus, policies, list(beam_sizes), metric, proxy_names, weights, jobs, strict, "beam-sweep",
        config_digest, sentence_mean,
    )


def run_alpha_sweep(
    corpus: list[UtteranceRecord],
    p1: str,
    p2: str,
    alphas: Sequence[float],
    metric: DistanceMetric,
    beam_size: int,
    jobs: int = 1,
    strict: bool = False,
    config_digest: str = "",
    sentence_mean: bool = False,
) -> EvaluationReport:
    """Two-proxy interpolation sweep: per-alpha pooled rates plus deviation.

    Deviation is WER(alpha) minus WER of single-proxy p1 selection, in
    percentage points; the alpha = 1.0 and 0.0 rows coincide bit-exactly with
    the single-proxy runs because zero-weight proxies are skipped.
    """
    if not corpus:
        raise ValidationError("no records in corpus")
    if p1 == p2:
        raise ValidationError("alpha sweep requires two distinct proxies")
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError(f"alpha {alpha} outside [0, 1]")

    usable: list[tuple[UtteranceRecord, NBestList]] = []
    fallback_count = 0
    for record in corpus:
        nbest, fell_back = _nbest_for(record, beam_size)
        if nbest is None:
            message = f"utterance {record.id!r} has no n-best list usable for beam size {beam_size}"
            if strict:
                raise ValidationError(message)
            log.warning("%s", message)
            continue
        if fell_back:
            if strict:
                raise ValidationError(
                    f"utterance {record.id!r} requires prefix-truncation fallback for beam size {beam_size}"
                )
            fallback_count += 1
        usable.append((record, nbest))
    if not usable:
        raise ValidationError(f"no records usable for beam size {beam_size}")
    references = [record.reference for record, _ in usable]

    def nearest_with(weights_pair: tuple[float, float]):
        def work(pair):
            record, nbest = pair
            proxies = _proxy_set(record, (p1, p2), weights_pair)
            return select_nearest(nbest, proxies, metric, utterance_id=record.id)

        return _map_utterances(work, usable, jobs)

    baseline = _map_utterances(
        lambda pair: select_nearest(
            pair[1], _proxy_set(pair[0], (p1,), None), metric, utterance_id=pair[0].id
        ),
        usable,
        jobs,
    )
    base_wer_rate, _ = _rates(baseline, references, sentence_mean)

    report = EvaluationReport(
        kind="alpha-sweep",
        columns=["alpha", "beam_size", "metric", "p1", "p2", "utterances", "wer", "cer", "deviation_pp"],
        rows=[],
        config_digest=config_digest,
        utterance_count=len(corpus),
        selections={"baseline_p1": baseline},
    )
    if sentence_mean:
        report.notes.append("rates=sentence-mean")
    if fallback_count:
        report.notes.append(f"beam_fallback=prefix-truncation utterances={fallback_count}")
    for alpha in alphas:
        selections = nearest_with((alpha, 1.0 - alpha))
        wer_rate, cer_rate = _rates(selections, references, sentence_mean)
        report.rows.append(
            {
                "alpha": alpha,
                "beam_size": beam_size,
                "metric": metric.value,
                "p1": p1,
                "p2": p2,
                "utterances": len(usable),
                "wer": wer_rate,
                "cer": cer_rate,
                "deviation_pp": (wer_rate - base_wer_rate) * 100.0,
            }
        )
        report.selections[f"alpha@{alpha:.4f}"] = selections
    return report


def _format_cell(column: str, value) -> str:
    if column in ("wer", "cer", "deviation_pp"):
        return _fmt_rate(value)
    if column == "alpha":
        return f"{value:.4f}"
    return str(value)


def render_csv(report: EvaluationReport) -> str:
    """Stable-order CSV with provenance comment lines; rates at 4 decimals."""
    lines = [f"# ctxdecode report kind={report.kind}", f"# config_digest={report.config_digest}"]
    for note in report.notes:
        lines.append(f"# note={note}")
    lines.append(",".join(report.columns))
    for row in report.rows:
        lines.append(",".join(_format_cell(col, row[col]) for col in report.columns))
    return "\n".join(lines) + "\n"


def render_json(report: EvaluationReport) -> str:
    """JSON mirror of the CSV rows; numeric cells carry the same 4-decimal values."""
    rows = []
    for row in report.rows:
        out = {}
        for col in report.columns:
            cell = _format_cell(col, row[col])
            if col in ("wer", "cer", "deviation_pp", "alpha"):
                out[col] = float(cell)
            else:
                out[col] = row[col]
        rows.append(out)
    payload = {
        "report": report.kind,
        "config_digest": report.config_digest,
        "notes": report.notes,
        "utterances": report.utterance_count,
        "rows": rows,
    }
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def emit_report(report: EvaluationReport, fmt: str, out_path: str | Path) -> None:
    """Write the report as csv or json."""
    if fmt == "csv":
        content = render_csv(report)
    elif fmt == "json":
        content = render_json(report)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    Path(out_path).write_text(content, encoding="utf-8")
