"""Proxy-guided n-best selection.

Given an n-best list from a decoder and one or more proxy transcriptions from
auxiliary systems, selection picks the candidate minimizing a (weighted)
text-level distance to the proxies; the oracle picks the candidate with the
lowest WER against the true reference and upper-bounds every policy.

Scoring conventions:
- Hypothesis-to-proxy WER/CER treats the proxy as the pseudo-reference
  denominator. When the proxy is empty the score falls back to symmetric
  normalization by max(len(h), len(g)) so it stays finite and ordered.
- WER/CER scores are exact rationals (``fractions.Fraction``) and weighted
  sums stay exact, making argmin results platform-independent; BLEU distances
  are floats compared with a 1e-12 tie tolerance.
- Zero-weight proxies are skipped entirely, so a (1.0, 0.0) weighting is
  bit-identical to single-proxy selection.
- All ties break toward the lowest (best) original rank, respecting the
  decoder's own preference.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

from ctxdecode.metrics import DistanceMetric, edit_distance, sentence_bleu, wer
from ctxdecode.textnorm import NormalizedText

BLEU_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Candidate:
    rank: int
    text: str
    model_score: float | None = None


@dataclass(frozen=True)
class NBestList:
    """Rank-ordered candidate transcriptions from one decoder run."""

    candidates: tuple[Candidate, ...]
    beam_size: int

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("n-best list must contain at least one candidate")
        ranks = [c.rank for c in self.candidates]
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"candidate ranks must be contiguous from 1, got {ranks}")

    @classmethod
    def from_texts(cls, texts: list[str], beam_size: int | None = None) -> "NBestList":
        cands = tuple(Candidate(rank=i, text=t) for i, t in enumerate(texts, start=1))
        return cls(candidates=cands, beam_size=beam_size if beam_size is not None else len(cands))

    def take_top(self, b: int) -> "NBestList":
        """Prefix truncation to the first b candidates."""
        if not (1 <= b <= len(self.candidates)):
            raise ValueError(f"cannot take top {b} of {len(self.candidates)} candidates")
        return NBestList(candidates=self.candidates[:b], beam_size=b)


@dataclass(frozen=True)
class ProxySet:
    """Named proxy transcriptions with non-negative weights summing to one."""

    proxies: tuple[tuple[str, str], ...]  # (system name, text)
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.proxies:
            raise ValueError("proxy set must contain at least one proxy")
        if len(self.weights) != len(self.proxies):
            raise ValueError("one weight per proxy required")
        if any(w < 0 for w in self.weights):
            raise ValueError("proxy weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"proxy weights must sum to 1, got {sum(self.weights)}")

    @classmethod
    def single(cls, name: str, text: NormalizedText | str) -> "ProxySet":
        return cls(proxies=((name, _text(text)),), weights=(1.0,))

    @classmethod
    def uniform(cls, proxies: list[tuple[str, NormalizedText | str]]) -> "ProxySet":
        n = len(proxies)
        return cls(
            proxies=tuple((name, _text(t)) for name, t in proxies),
            weights=tuple(1.0 / n for _ in range(n)),
        )

    @classmethod
    def pair(cls, p1: tuple[str, NormalizedText | str], p2: tuple[str, NormalizedText | str], alpha: float) -> "ProxySet":
        """Two proxies weighted (alpha, 1 - alpha)."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        return cls(
            proxies=((p1[0], _text(p1[1])), (p2[0], _text(p2[1]))),
            weights=(alpha, 1.0 - alpha),
        )


class PolicyKind(enum.Enum):
    TOP1 = "top1"
    NEAREST = "nearest"
    INTERPOLATED = "interpolated"
    ORACLE = "oracle"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    metric: DistanceMetric | None = None
    weights: tuple[float, ...] | None = None

    def label(self) -> str:
        parts = [self.kind.value]
        if self.metric is not None:
            parts.append(self.metric.value)
        return "/".join(parts)


@dataclass(frozen=True)
class SelectionResult:
    chosen_rank: int
    chosen_text: str
    score: float
    policy: Policy
    utterance_id: str | None = field(default=None, compare=False)

    def to_json(self) -> str:
        payload = {
            "id": self.utterance_id,
            "chosen_rank": self.chosen_rank,
            "chosen_text": self.chosen_text,
            "score": self.score,
            "policy": self.policy.label(),
        }
        if self.policy.weights is not None:
            payload["weights"] = list(self.policy.weights)
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)


def _text(t: NormalizedText | str) -> str:
    return t.text if isinstance(t, NormalizedText) else t


def proxy_distance(metric: DistanceMetric, hyp: str, proxy: str) -> Fraction | float:
    """Distance from a hypothesis to a proxy acting as pseudo-reference.

    WER/CER return exact Fractions; the empty-proxy fallback divides by
    max(len(h), len(g)) instead of the empty reference. BLEU returns a float.
    """
    if metric is DistanceMetric.ONE_MINUS_BLEU:
        return 1.0 - sentence_bleu(hyp, proxy)
    if metric is DistanceMetric.WER:
        h, g = hyp.split(), proxy.split()
    elif metric is DistanceMetric.CER:
        h, g = list(hyp), list(proxy)
    else:
        raise ValueError(f"unhandled metric {metric!r}")
    errors = edit_distance(h, g)
    denom = len(g) if g else max(len(h), len(g))
    if denom == 0:
        return Fraction(0)
    return Fraction(errors, denom)


def _weighted_score(text: str, proxies: ProxySet, metric: DistanceMetric) -> Fraction | float:
    """Sum of weight_i * distance(text, proxy_i), skipping zero weights."""
    total: Fraction | float = Fraction(0)
    for (name, proxy_text), weight in zip(proxies.proxies, proxies.weights):
        if weight == 0.0:
            continue
        d = proxy_distance(metric, text, proxy_text)
        term = Fraction(weight) * d if isinstance(d, Fraction) else weight * d
        total = total + term
    return total


def _argmin_by_rank(scores: list[Fraction | float]) -> int:
    """Index of the smallest score; earlier (lower-rank) wins ties.

    Exact rationals compare exactly; floats treat differences within the BLEU
    tolerance as ties.
    """
    best = 0
    for i in range(1, len(scores)):
        s, b = scores[i], scores[best]
        if isinstance(s, Fraction) and isinstance(b, Fraction):
            if s < b:
                best = i
        elif float(s) < float(b) - BLEU_TIE_TOLERANCE:
            best = i
    return best


def select_top1(nbest: NBestList, utterance_id: str | None = None) -> SelectionResult:
    """The decoder's own preference: rank 1."""
    top = nbest.candidates[0]
    return SelectionResult(
        chosen_rank=top.rank,
        chosen_text=top.text,
        score=0.0,
        policy=Policy(PolicyKind.TOP1),
        utterance_id=utterance_id,
    )


def select_nearest(
    nbest: NBestList,
    proxies: ProxySet,
    metric: DistanceMetric,
    utterance_id: str | None = None,
) -> SelectionResult:
    """Candidate minimizing the weighted distance to the proxy set."""
    scores = [_weighted_score(c.text, proxies, metric) for c in nbest.candidates]
    best = _argmin_by_rank(scores)
    kind = PolicyKind.NEAREST if len(proxies.proxies) == 1 else PolicyKind.INTERPOLATED
    return SelectionResult(
        chosen_rank=nbest.candidates[best].rank,
        chosen_text=nbest.candidates[best].text,
        score=float(scores[best]),
        policy=Policy(kind, metric=metric, weights=proxies.weights),
        utterance_id=utterance_id,
    )


def select_oracle(
    nbest: NBestList,
    reference: NormalizedText | str,
    utterance_id: str | None = None,
) -> SelectionResult:
    """Candidate with the lowest WER against the true reference (upper bound)."""
    ref = _text(reference)
    scores: list[Fraction | float] = []
    for c in nbest.candidates:
        pair = wer(c.text, ref)
        if pair.ref_len > 0:
            scores.append(Fraction(pair.errors, pair.ref_len))
        else:
            scores.append(Fraction(0) if pair.errors == 0 else math.inf)
    best = _argmin_by_rank(scores)
    return SelectionResult(
        chosen_rank=nbest.candidates[best].rank,
        chosen_text=nbest.candidates[best].text,
        score=float(scores[best]),
        policy=Policy(PolicyKind.ORACLE),
        utterance_id=utterance_id,
    )


def interpolate_scores(
    nbest: NBestList,
    p1: NormalizedText | str,
    p2: NormalizedText | str,
    alpha: float,
    metric: DistanceMetric,
) -> list[float]:
    """Per-candidate alpha * d(h, p1) + (1 - alpha) * d(h, p2)."""
    proxies = ProxySet.pair(("p1", p1), ("p2", p2), alpha)
    return [float(_weighted_score(c.text, proxies, metric)) for c in nbest.candidates]
