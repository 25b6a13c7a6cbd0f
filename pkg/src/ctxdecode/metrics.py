"""Text-level distances: edit distance, WER, CER, sentence BLEU, and pooling.

WER and CER are edit distance divided by reference length; corpus scores pool
summed errors over summed reference lengths (never a mean of sentence rates).
BLEU is word 4-gram with uniform weights, brevity penalty, and add-epsilon
smoothing (eps = 0.1 on the numerator and denominator of any zero modified
precision at orders 2-4; a zero unigram precision yields BLEU 0). The
smoothing convention keeps d(a, a) == 0 for every input, including texts
shorter than the maximum n-gram order.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from ctxdecode.textnorm import NormalizedText

BLEU_MAX_ORDER = 4
BLEU_SMOOTH_EPS = 0.1


class DistanceMetric(enum.Enum):
    WER = "wer"
    CER = "cer"
    ONE_MINUS_BLEU = "bleu"

    @classmethod
    def parse(cls, name: str) -> "DistanceMetric":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown metric {name!r}; expected one of wer, cer, bleu") from None


@dataclass(frozen=True)
class ScorePair:
    """Error count and reference length for one scored pair (or a pooled sum)."""

    errors: int
    ref_len: int

    @property
    def rate(self) -> float:
        if self.ref_len > 0:
            return self.errors / self.ref_len
        return 0.0 if self.errors == 0 else math.inf


def _text(t: NormalizedText | str) -> str:
    return t.text if isinstance(t, NormalizedText) else t


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs.

    Rolling single-row DP: O(len(a) * len(b)) time, O(min(len(a), len(b)))
    memory.
    """
    if len(a) > len(b):
        a, b = b, a
    if not a:
        return len(b)
    prev = list(range(len(a) + 1))
    for j, bj in enumerate(b, start=1):
        cur = [j]
        for i, ai in enumerate(a, start=1):
            if ai == bj:
                cur.append(prev[i - 1])
            else:
                cur.append(1 + min(prev[i - 1], prev[i], cur[-1]))
        prev = cur
    return prev[-1]


def wer(hyp: NormalizedText | str, ref: NormalizedText | str) -> ScorePair:
    """Word-level edit distance over whitespace tokens of normalized text.

    An empty reference against a non-empty hypothesis counts every
    hypothesis word as an error with ref_len 0 (rate is the +inf sentinel);
    pooled arithmetic stays well-defined because it sums raw counts.
    """
    h = _text(hyp).split()
    r = _text(ref).split()
    return ScorePair(errors=edit_distance(h, r), ref_len=len(r))


def cer(hyp: NormalizedText | str, ref: NormalizedText | str) -> ScorePair:
    """Character-level edit distance; spaces count as characters."""
    h = _text(hyp)
    r = _text(ref)
    return ScorePair(errors=edit_distance(h, r), ref_len=len(r))


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(hyp: NormalizedText | str, ref: NormalizedText | str) -> float:
    """Sentence BLEU in [0, 1] (see module docstring for the smoothing rule).

    Two empty texts score 1.0 by convention; one-sided emptiness scores 0.0.
    """
    h = _text(hyp).split()
    r = _text(ref).split()
    if not h and not r:
        return 1.0
    if not h or not r:
        return 0.0

    log_precision_sum = 0.0
    for n in range(1, BLEU_MAX_ORDER + 1):
        total = max(len(h) - n + 1, 0)
        ref_counts = _ngram_counts(r, n)
        matched = sum(min(count, ref_counts[g]) for g, count in _ngram_counts(h, n).items())
        if n == 1:
            if matched == 0:
                return 0.0
            p = matched / total
        elif matched == 0:
            p = BLEU_SMOOTH_EPS / (total + BLEU_SMOOTH_EPS)
        else:
            p = matched / total
        log_precision_sum += math.log(p)

    geo_mean = math.exp(log_precision_sum / BLEU_MAX_ORDER)
    brevity = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    return brevity * geo_mean


def distance(metric: DistanceMetric, hyp: NormalizedText | str, ref: NormalizedText | str) -> float:
    """Dispatch to the metric's distance form: WER/CER rate or 1 - BLEU."""
    if metric is DistanceMetric.WER:
        return wer(hyp, ref).rate
    if metric is DistanceMetric.CER:
        return cer(hyp, ref).rate
    if metric is DistanceMetric.ONE_MINUS_BLEU:
        return 1.0 - sentence_bleu(hyp, ref)
    raise ValueError(f"unhandled metric {metric!r}")


def corpus_rates(
    pairs: Sequence[tuple[NormalizedText | str, NormalizedText | str]],
) -> tuple[ScorePair, ScorePair]:
    """Pooled corpus (WER, CER): summed errors over summed reference lengths."""
    if not pairs:
        raise ValueError("corpus_rates requires at least one (hyp, ref) pair")
    w_err = w_len = c_err = c_len = 0
    for hyp, ref in pairs:
        w = wer(hyp, ref)
        c = cer(hyp, ref)
        w_err += w.errors
        w_len += w.ref_len
        c_err += c.errors
        c_len += c.ref_len
    return ScorePair(w_err, w_len), ScorePair(c_err, c_len)
