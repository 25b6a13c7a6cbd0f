"""Seeded synthetic workloads for desk-scale evaluation and acceptance runs.

The corpus generator draws a reference per utterance from a synthetic Arabic
word vocabulary, then derives candidates and proxies by corrupting the
reference with random word substitutions and deletions at configurable rates.
Proxies corrupted less than the candidates make proxy-guided selection
land between top-1 and the oracle, mirroring the shape of real beam-size
curves. Texts are already in normalized form, so loading them back through
the default normalization pipeline is the identity.

Everything derives from SplitMix64 streams seeded per utterance by stable
hashing, so the same seed produces byte-identical manifests regardless of
platform or generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ctxdecode.rng import SplitMix64, derive_seed

ARABIC_LETTERS = "ابتثجحخدذرزسشصضطظعغفقكلمنهوي"


@dataclass(frozen=True)
class CorpusSpec:
    """Knobs for the synthetic corpus; defaults give the acceptance workload."""

    utterances: int = 1000
    beam_size: int = 10
    vocab_size: int = 240
    min_words: int = 5
    max_words: int = 12
    candidate_sub_rate: float = 0.28
    candidate_del_rate: float = 0.08
    proxy_a_sub_rate: float = 0.10
    proxy_a_del_rate: float = 0.03
    proxy_b_sub_rate: float = 0.16
    proxy_b_del_rate: float = 0.05
    seed: int = 1337


def _make_vocab(spec: CorpusSpec) -> list[str]:
    rng = SplitMix64(derive_seed(spec.seed, "vocab"))
    vocab: list[str] = []
    seen: set[str] = set()
    while len(vocab) < spec.vocab_size:
        length = 2 + rng.below(5)
        word = "".join(ARABIC_LETTERS[rng.below(len(ARABIC_LETTERS))] for _ in range(length))
        if word not in seen:
            seen.add(word)
            vocab.append(word)
    return vocab


def _corrupt(words: list[str], sub_rate: float, del_rate: float, vocab: list[str], rng: SplitMix64) -> str:
    out: list[str] = []
    for word in words:
        roll = rng.random()
        if roll < del_rate:
            continue
        if roll < del_rate + sub_rate:
            out.append(vocab[rng.below(len(vocab))])
        else:
            out.append(word)
    return " ".join(out)


def generate_manifest_records(spec: CorpusSpec | None = None) -> list[dict]:
    """JSON-ready manifest records for the synthetic corpus."""
    if spec is None:
        spec = CorpusSpec()
    vocab = _make_vocab(spec)
    records: list[dict] = []
    for i in range(spec.utterances):
        utt_id = f"utt-{i:05d}"
        rng = SplitMix64(derive_seed(spec.seed, "utt", utt_id))
        n_words = spec.min_words + rng.below(spec.max_words - spec.min_words + 1)
        reference = [vocab[rng.below(len(vocab))] for _ in range(n_words)]
        candidates = [
            _corrupt(reference, spec.candidate_sub_rate, spec.candidate_del_rate, vocab, rng)
            for _ in range(spec.beam_size)
        ]
        proxy_a = _corrupt(reference, spec.proxy_a_sub_rate, spec.proxy_a_del_rate, vocab, rng)
        proxy_b = _corrupt(reference, spec.proxy_b_sub_rate, spec.proxy_b_del_rate, vocab, rng)
        records.append(
            {
                "id": utt_id,
                "reference": " ".join(reference),
                "nbest": {
                    str(spec.beam_size): [
                        {"rank": rank, "text": text}
                        for rank, text in enumerate(candidates, start=1)
                    ]
                },
                "proxies": {"sysA": proxy_a, "sysB": proxy_b},
            }
        )
    return records


def write_manifest(records: list[dict], path: str | Path) -> None:
    """Write manifest records as canonical JSONL (sorted keys, no padding)."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def make_retrieval_corpus(n_docs: int, seed: int = 1337, min_words: int = 4, max_words: int = 8) -> list[tuple[str, str]]:
    """(doc_id, text) pairs with a unique numeric token per doc, so every
    document is its own strict nearest neighbor."""
    rng = SplitMix64(derive_seed(seed, "retrieval-vocab"))
    vocab: list[str] = []
    while len(vocab) < 400:
        length = 2 + rng.below(5)
        vocab.append("".join(ARABIC_LETTERS[rng.below(len(ARABIC_LETTERS))] for _ in range(length)))
    docs: list[tuple[str, str]] = []
    for i in range(n_docs):
        doc_rng = SplitMix64(derive_seed(seed, "doc", str(i)))
        n_words = min_words + doc_rng.below(max_words - min_words + 1)
        words = [vocab[doc_rng.below(len(vocab))] for _ in range(n_words)]
        words.append(str(10_000_000 + i))  # disambiguating token
        docs.append((f"doc-{i:06d}", " ".join(words)))
    return docs
