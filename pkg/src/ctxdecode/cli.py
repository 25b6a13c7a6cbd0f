"""Command-line entry point.

Subcommands map one-to-one onto the library: normalize, score, index
build/query, prompt build, prefix audio, rerank, eval, sweep-beam,
sweep-alpha, synth. Data goes to stdout or --out; logs go to stderr.

Exit codes: 0 success, 1 runtime failure (providers, I/O), 2 validation
failure (bad flags, malformed manifests or configs).

Reproducibility: all randomness flows from --seed (per-utterance seeds are
derived by stable hashing), and every report embeds a digest of the run's
semantic configuration plus input content. Execution-only knobs (--jobs,
output paths) are excluded from the digest, so worker count never changes
output bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from ctxdecode import __version__
from ctxdecode.harness import (
    ValidationError,
    emit_report,
    load_manifest,
    render_csv,
    render_json,
    run_alpha_sweep,
    run_beam_sweep,
    run_eval,
)
from ctxdecode.metrics import DistanceMetric, cer, corpus_rates, sentence_bleu, wer
from ctxdecode.prompt import PrefixPlan, PrefixSource, PromptStrategy, build_prompt
from ctxdecode.providers import ProviderError
from ctxdecode.retrieval import TfIdfIndex, build_index
from ctxdecode.rng import derive_seed
from ctxdecode.synthetic import CorpusSpec, generate_manifest_records, write_manifest
from ctxdecode.textnorm import NormalizationConfig, normalize

log = logging.getLogger("ctxdecode")

_NORM_FIELDS = {
    "strip_diacritics",
    "normalize_hamza_madda",
    "convert_eastern_numerals",
    "drop_latin_tokens",
    "punctuation_keep_set",
}


@dataclass
class RunConfig:
    """Everything a subcommand run depends on, serializable for provenance.

    ``digest()`` covers the semantic fields plus input content hashes;
    ``jobs`` and output paths are execution-only and excluded, so the same
    inputs give the same digest regardless of parallelism.
    """

    command: str
    normalization: NormalizationConfig
    seed: int = 0
    jobs: int = 1
    strict: bool = False
    metric: str | None = None
    extras: dict = field(default_factory=dict)

    def digest(self) -> str:
        payload = {
            "command": self.command,
            "normalization": self.normalization.as_dict(),
            "seed": self.seed,
            "strict": self.strict,
            "metric": self.metric,
            **self.extras,
        }
        canonical = json.dumps(payload, ensure_ascii=False, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".toml"):
        import tomli

        return tomli.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path}: malformed JSON ({exc.msg})") from None


def _normalization_config(config: dict) -> NormalizationConfig:
    flags = config.get("normalization", config)
    unknown = set(flags) - _NORM_FIELDS if flags is not config else set()
    if unknown:
        raise ValidationError(f"unknown normalization keys: {sorted(unknown)}")
    relevant = {k: v for k, v in flags.items() if k in _NORM_FIELDS}
    try:
        return NormalizationConfig.from_dict(relevant)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid normalization config: {exc}") from None


def _read_lines(path: str | None):
    stream = open(path, "r", encoding="utf-8") if path else sys.stdin
    try:
        for line in stream:
            yield line.rstrip("\n")
    finally:
        if path:
            stream.close()


def _open_out(path: str | None):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _write_out(path: str | None, content: str) -> None:
    if path:
        Path(path).write_text(content, encoding="utf-8")
    else:
        sys.stdout.write(content)


def _file_sha256(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_proxies(entries: list[str]) -> tuple[list[str], list[float] | None]:
    """Parse repeated --proxy name[:weight] flags; weights normalized to sum 1."""
    if not entries:
        return [], None
    names: list[str] = []
    weights: list[float] = []
    weighted = 0
    for entry in entries:
        name, sep, raw_weight = entry.partition(":")
        if not name:
            raise ValidationError(f"invalid proxy spec {entry!r}")
        names.append(name)
        if sep:
            try:
                weights.append(float(raw_weight))
            except ValueError:
                raise ValidationError(f"invalid proxy weight in {entry!r}") from None
            weighted += 1
        else:
            weights.append(1.0)
    if weighted not in (0, len(entries)):
        raise ValidationError("either all --proxy flags carry weights or none do")
    if weighted == 0:
        return names, None
    total = sum(weights)
    if total <= 0:
        raise ValidationError("proxy weights must sum to a positive value")
    return names, [w / total for w in weights]


# -- subcommand implementations --------------------------------------------------


def _cmd_normalize(args) -> int:
    cfg = _normalization_config(_load_config_file(args.config))
    out = _open_out(args.out)
    try:
        for line in _read_lines(getattr(args, "in")):
            out.write(normalize(line, cfg).text + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_score(args) -> int:
    cfg = _normalization_config(_load_config_file(args.config))
    metric = DistanceMetric.parse(args.metric)

    pairs: list[tuple[str, str, str]] = []  # (unit label, hyp, ref)
    if args.manifest:
        records = load_manifest(args.manifest, cfg)
        for record in records:
            if args.proxy:
                if args.proxy not in record.proxies:
                    raise ValidationError(f"utterance {record.id!r} lacks proxy {args.proxy!r}")
                hyp = record.proxies[args.proxy]
            else:
                best_beam = max(record.nbest)
                hyp = record.nbest[best_beam].candidates[0].text
            pairs.append((record.id, hyp, record.reference))
    else:
        if not (args.hyp and args.ref):
            raise ValidationError("score requires either --manifest or both --hyp and --ref")
        hyps = [normalize(line, cfg).text for line in _read_lines(args.hyp)]
        refs = [normalize(line, cfg).text for line in _read_lines(args.ref)]
        if len(hyps) != len(refs):
            raise ValidationError(f"--hyp has {len(hyps)} lines but --ref has {len(refs)}")
        pairs = [(str(i), h, r) for i, (h, r) in enumerate(zip(hyps, refs), start=1)]
    if not pairs:
        raise ValidationError("nothing to score")

    lines = []
    if metric is DistanceMetric.ONE_MINUS_BLEU:
        lines.append("unit,distance")
        distances = [1.0 - sentence_bleu(h, r) for _, h, r in pairs]
        for (unit, _, _), d in zip(pairs, distances):
            lines.append(f"{unit},{d:.4f}")
        lines.append(f"mean,{sum(distances) / len(distances):.4f}")
    else:
        score_fn = wer if metric is DistanceMetric.WER else cer
        lines.append("unit,errors,ref_len,rate")
        for unit, h, r in pairs:
            pair = score_fn(h, r)
            lines.append(f"{unit},{pair.errors},{pair.ref_len},{pair.rate:.4f}")
        pooled_wer, pooled_cer = corpus_rates([(h, r) for _, h, r in pairs])
        pooled = pooled_wer if metric is DistanceMetric.WER else pooled_cer
        lines.append(f"pooled,{pooled.errors},{pooled.ref_len},{pooled.rate:.4f}")
    _write_out(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_index_build(args) -> int:
    cfg = _normalization_config(_load_config_file(args.config))
    corpus = []
    with open(args.corpus, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{args.corpus}:{line_no}: malformed JSON ({exc.msg})") from None
            if not isinstance(record.get("id"), str) or not isinstance(record.get("text"), str):
                raise ValidationError(f"{args.corpus}:{line_no}: record needs string 'id' and 'text'")
            corpus.append((record["id"], normalize(record["text"], cfg).text, record.get("audio")))
    try:
        index = build_index(corpus, n_min=args.n_min, n_max=args.n_max)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    index.save(args.out)
    log.info("indexed %d documents with %d features", len(index), len(index.vocab))
    return 0


def _cmd_index_query(args) -> int:
    cfg = _normalization_config(_load_config_file(args.config))
    try:
        index = TfIdfIndex.load(args.index)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    out = _open_out(args.out)
    try:
        for line in _read_lines(getattr(args, "in")):
            hits = index.query(normalize(line, cfg).text, k=args.k)
            out.write(
                json.dumps(
                    {
                        "query": line,
                        "hits": [
                            {"doc_id": h.doc_id, "similarity": h.similarity, "rank": h.rank} for h in hits
                        ],
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_prompt_build(args) -> int:
    cfg = _normalization_config(_load_config_file(args.config))
    strategy = PromptStrategy.parse(args.strategy)
    index = None
    if strategy is PromptStrategy.RETRIEVED_TEXT:
        if not args.index:
            raise ValidationError("--index is required for the retrieve strategy")
        index = TfIdfIndex.load(args.index)
    out = _open_out(args.out)
    try:
        for line_no, line in enumerate(_read_lines(getattr(args, "in")), start=1):
            if "\t" in line:
                utt_id, text = line.split("\t", 1)
            else:
                utt_id, text = f"line-{line_no:06d}", line
            seed = derive_seed(args.seed, utt_id) if strategy is PromptStrategy.SHUFFLED else None
            plan = build_prompt(normalize(text, cfg).text, strategy, index=index, seed=seed)
            payload = json.loads(plan.to_json())
            payload["id"] = utt_id
            out.write(json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_prefix_audio(args) -> int:
    plan = PrefixPlan(
        context_text="",
        context_audio=args.ctx,
        test_audio=args.test,
        source=PrefixSource.RETRIEVED_EXEMPLAR,
        silence_s=args.silence,
    )
    plan.materialize(out_path=args.out, strict=args.strict)
    return 0


def _cmd_rerank(args) -> int:
    cfg = _normalization_config(_load_config_file(args.config))
    metric = DistanceMetric.parse(args.metric)
    proxy_names, weights = _parse_proxies(args.proxy)
    if args.policy == "nearest" and not proxy_names:
        raise ValidationError("nearest policy requires at least one --proxy")
    records = load_manifest(args.manifest, cfg)
    if not records:
        raise ValidationError(f"manifest {args.manifest} contains no records")

    from ctxdecode.harness import _nbest_for, _select  # shared selection plumbing

    out = _open_out(args.out)
    try:
        for record in records:
            if args.beam is None:
                nbest = record.nbest[max(record.nbest)]
            else:
                nbest, _ = _nbest_for(record, args.beam)
                if nbest is None:
                    raise ValidationError(
                        f"utterance {record.id!r} has no n-best list usable for beam size {args.beam}"
                    )
            result = _select(record, nbest, args.policy, metric, proxy_names, weights)
            out.write(result.to_json() + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def _run_config(args, command: str, extras: dict) -> RunConfig:
    cfg = _normalization_config(_load_config_file(args.config))
    return RunConfig(
        command=command,
        normalization=cfg,
        seed=args.seed,
        jobs=args.jobs,
        strict=args.strict,
        metric=args.metric,
        extras=extras,
    )


def _cmd_eval(args) -> int:
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    proxy_names, weights = _parse_proxies(args.proxy)
    run_config = _run_config(
        args,
        "eval",
        {
            "manifest_sha256": _file_sha256(args.manifest),
            "beam_size": args.beam,
            "policies": policies,
            "proxies": proxy_names,
            "weights": weights,
            "sentence_mean": args.sentence_mean,
        },
    )
    corpus = load_manifest(args.manifest, run_config.normalization)
    report = run_eval(
        corpus,
        policies,
        args.beam,
        DistanceMetric.parse(args.metric),
        proxy_names,
        weights,
        jobs=args.jobs,
        strict=args.strict,
        config_digest=run_config.digest(),
        sentence_mean=args.sentence_mean,
    )
    _emit(args, report)
    return 0


def _cmd_sweep_beam(args) -> int:
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    proxy_names, weights = _parse_proxies(args.proxy)
    beams = list(range(args.beam_min, args.beam_max + 1))
    if not beams:
        raise ValidationError(f"empty beam range {args.beam_min}..{args.beam_max}")
    run_config = _run_config(
        args,
        "sweep-beam",
        {
            "manifest_sha256": _file_sha256(args.manifest),
            "beam_sizes": beams,
            "policies": policies,
            "proxies": proxy_names,
            "weights": weights,
            "sentence_mean": args.sentence_mean,
        },
    )
    corpus = load_manifest(args.manifest, run_config.normalization)
    report = run_beam_sweep(
        corpus,
        policies,
        beams,
        DistanceMetric.parse(args.metric),
        proxy_names,
        weights,
        jobs=args.jobs,
        strict=args.strict,
        config_digest=run_config.digest(),
        sentence_mean=args.sentence_mean,
    )
    _emit(args, report)
    return 0


def _cmd_sweep_alpha(args) -> int:
    steps = round(1.0 / args.alpha_step)
    if abs(steps * args.alpha_step - 1.0) > 1e-9 or steps < 1:
        raise ValidationError(f"--alpha-step {args.alpha_step} must evenly divide 1.0")
    alphas = [i / steps for i in range(steps + 1)]
    run_config = _run_config(
        args,
        "sweep-alpha",
        {
            "manifest_sha256": _file_sha256(args.manifest),
            "beam_size": args.beam,
            "p1": args.p1,
            "p2": args.p2,
            "alphas": alphas,
            "sentence_mean": args.sentence_mean,
        },
    )
    corpus = load_manifest(args.manifest, run_config.normalization)
    report = run_alpha_sweep(
        corpus,
        args.p1,
        args.p2,
        alphas,
        DistanceMetric.parse(args.metric),
        args.beam,
        jobs=args.jobs,
        strict=args.strict,
        config_digest=run_config.digest(),
        sentence_mean=args.sentence_mean,
    )
    _emit(args, report)
    return 0


def _emit(args, report) -> None:
    if args.out:
        emit_report(report, args.format, args.out)
    else:
        sys.stdout.write(render_csv(report) if args.format == "csv" else render_json(report))


def _cmd_synth(args) -> int:
    spec = CorpusSpec(
        utterances=args.utterances,
        beam_size=args.beam,
        seed=args.seed,
        candidate_sub_rate=args.candidate_sub_rate,
        candidate_del_rate=args.candidate_del_rate,
        proxy_a_sub_rate=args.proxy_a_sub_rate,
        proxy_a_del_rate=args.proxy_a_del_rate,
        proxy_b_sub_rate=args.proxy_b_sub_rate,
        proxy_b_del_rate=args.proxy_b_del_rate,
    )
    write_manifest(generate_manifest_records(spec), args.out)
    log.info("wrote %d synthetic utterances to %s", spec.utterances, args.out)
    return 0


# -- parser ----------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, *, jobs: bool = False) -> None:
    parser.add_argument("--config", help="TOML/JSON config file (normalization flags)")
    if jobs:
        parser.add_argument("--seed", type=int, default=0, help="run seed (all randomness derives from it)")
        parser.add_argument("--jobs", type=int, default=1, help="worker parallelism; output is identical for any value")
        parser.add_argument("--strict", action="store_true", help="turn fallback warnings into errors")
        parser.add_argument(
            "--sentence-mean",
            action="store_true",
            help="report means of per-sentence rates instead of pooled rates (never the default)",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxdecode",
        description="Context-aware decoding toolkit: normalization, retrieval, prompts, n-best selection, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"ctxdecode {__version__}")
    parser.add_argument(
        "--help-json", action="store_true", help="print a machine-readable description of all subcommands"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("normalize", help="normalize UTF-8 lines from stdin or a file")
    _add_common(p)
    p.add_argument("--in", dest="in", help="input file (default stdin)")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("score", help="per-line and pooled scores over paired files or a manifest")
    _add_common(p)
    p.add_argument("--metric", required=True, choices=["wer", "cer", "bleu"])
    p.add_argument("--hyp", help="hypothesis file, one utterance per line")
    p.add_argument("--ref", help="reference file, one utterance per line")
    p.add_argument("--manifest", help="JSONL manifest (scores top-1 against the reference)")
    p.add_argument("--proxy", help="with --manifest: score this proxy instead of top-1")
    p.add_argument("--out", help="output CSV file (default stdout)")
    p.set_defaults(func=_cmd_score)

    p_index = sub.add_parser("index", help="build or query the TF-IDF retrieval index")
    index_sub = p_index.add_subparsers(dest="index_command")
    p = index_sub.add_parser("build", help="build an index from a JSONL corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True, help='JSONL corpus: {"id", "text", "audio"?}')
    p.add_argument("--out", required=True, help="index output path")
    p.add_argument("--n-min", type=int, default=3)
    p.add_argument("--n-max", type=int, default=5)
    p.set_defaults(func=_cmd_index_build)
    p = index_sub.add_parser("query", help="query an index with lines from stdin or a file")
    _add_common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--in", dest="in", help="query file (default stdin)")
    p.add_argument("--out", help="output JSONL file (default stdout)")
    p.set_defaults(func=_cmd_index_query)

    p_prompt = sub.add_parser("prompt", help="build prompt plans")
    prompt_sub = p_prompt.add_subparsers(dest="prompt_command")
    p = prompt_sub.add_parser("build", help="build prompt plans from first-pass lines")
    _add_common(p)
    p.add_argument("--strategy", required=True, choices=[s.value for s in PromptStrategy])
    p.add_argument("--seed", type=int, default=0, help="run seed for shuffles")
    p.add_argument("--index", help="TF-IDF index path (required for retrieve)")
    p.add_argument("--in", dest="in", help="input lines, optionally id<TAB>text (default stdin)")
    p.add_argument("--out", help="output JSONL file (default stdout)")
    p.set_defaults(func=_cmd_prompt_build)

    p_prefix = sub.add_parser("prefix", help="materialize prefix audio")
    prefix_sub = p_prefix.add_subparsers(dest="prefix_command")
    p = prefix_sub.add_parser("audio", help="concatenate context and test audio around a silence gap")
    p.add_argument("--ctx", required=True, help="context WAV (mono 16 kHz PCM16)")
    p.add_argument("--test", required=True, help="test WAV (mono 16 kHz PCM16)")
    p.add_argument("--silence", type=float, default=1.0, help="silence gap in seconds")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--strict", action="store_true", help="error instead of warning on over-budget duration")
    p.set_defaults(func=_cmd_prefix_audio)

    p = sub.add_parser("rerank", help="per-utterance selection over a manifest, emitted as JSONL")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", required=True, choices=["top1", "nearest", "oracle"])
    p.add_argument("--metric", default="wer", choices=["wer", "cer", "bleu"])
    p.add_argument("--proxy", action="append", default=[], help="proxy system name[:weight]; repeatable")
    p.add_argument("--beam", type=int, help="beam size (default: each record's largest list)")
    p.add_argument("--out", help="output JSONL file (default stdout)")
    p.set_defaults(func=_cmd_rerank)

    for name, handler, help_text in (
        ("eval", _cmd_eval, "policy comparison at one beam size"),
        ("sweep-beam", _cmd_sweep_beam, "policy comparison across beam sizes"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p, jobs=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--metric", default="wer", choices=["wer", "cer", "bleu"])
        p.add_argument("--policies", default="top1,nearest,oracle", help="comma-separated policies")
        p.add_argument("--proxy", action="append", default=[], help="proxy system name[:weight]; repeatable")
        if name == "eval":
            p.add_argument("--beam", type=int, default=10)
        else:
            p.add_argument("--beam-min", type=int, default=2)
            p.add_argument("--beam-max", type=int, default=10)
        p.add_argument("--format", default="csv", choices=["csv", "json"])
        p.add_argument("--out", help="output file (default stdout)")
        p.set_defaults(func=handler)

    p = sub.add_parser("sweep-alpha", help="two-proxy interpolation sweep")
    _add_common(p, jobs=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--metric", default="wer", choices=["wer", "cer", "bleu"])
    p.add_argument("--p1", required=True, help="first proxy system name")
    p.add_argument("--p2", required=True, help="second proxy system name")
    p.add_argument("--alpha-step", type=float, default=0.1, help="grid step over [0, 1]")
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=_cmd_sweep_alpha)

    p = sub.add_parser("synth", help="generate the seeded synthetic evaluation manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--utterances", type=int, default=1000)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--seed", type=int, default=1337)
    p.add_argument("--candidate-sub-rate", type=float, default=0.28)
    p.add_argument("--candidate-del-rate", type=float, default=0.08)
    p.add_argument("--proxy-a-sub-rate", type=float, default=0.10)
    p.add_argument("--proxy-a-del-rate", type=float, default=0.03)
    p.add_argument("--proxy-b-sub-rate", type=float, default=0.16)
    p.add_argument("--proxy-b-del-rate", type=float, default=0.05)
    p.set_defaults(func=_cmd_synth)

    return parser


def _help_json(parser: argparse.ArgumentParser) -> str:
    commands = {}
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse introspection
        for name, sub in action.choices.items():
            options = []
            for opt in sub._actions:
                if opt.option_strings:
                    options.append(
                        {
                            "flags": opt.option_strings,
                            "required": bool(opt.required),
                            "help": opt.help or "",
                        }
                    )
            commands[name] = {"description": sub.description or sub.prog, "options": options}
    return json.dumps({"program": "ctxdecode", "version": __version__, "commands": commands}, indent=2, sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.help_json:
        print(_help_json(parser))
        return 0
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 2
    except ProviderError as exc:
        log.error("%s", exc)
        return 1
    except ValueError as exc:
        log.error("%s", exc)
        return 2
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
