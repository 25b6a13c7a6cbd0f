"""Construction of decoder prompts and encoder/decoder audio-text prefixes.

Prompt plans carry the contextual text handed to a promptable ASR provider:
the first-pass hypothesis itself, a word-order transform of it (reversal or
a seeded shuffle, which disrupt sequential coherence while preserving the
word multiset and thereby suppress prompt-continuation output), or the
nearest retrieved sentence from a fixed text index.

Prefix plans pair a contextual transcript with contextual audio that is
prepended to the test utterance around a fixed silence gap (default one
second); the contextual transcript is handed to the provider verbatim as the
decoder prefix. Token-level framing (special tokens etc.) is owned by the
provider, never by this module.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass

from ctxdecode.audio import Waveform, concat_with_silence, read_wav, write_wav
from ctxdecode.retrieval import RetrievalHit, TfIdfIndex
from ctxdecode.rng import SplitMix64
from ctxdecode.textnorm import NormalizedText

log = logging.getLogger(__name__)

# Promptable models stop using context well before this; refuse to truncate
# silently and let the caller decide.
DURATION_BUDGET_S = 30.0


class PromptStrategy(enum.Enum):
    FIRST_PASS = "first-pass"
    SHUFFLED = "shuffle"
    REVERSED = "reverse"
    RETRIEVED_TEXT = "retrieve"

    @classmethod
    def parse(cls, name: str) -> "PromptStrategy":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown prompt strategy {name!r}; expected one of "
                f"{', '.join(s.value for s in cls)}"
            ) from None


class PrefixSource(enum.Enum):
    RETRIEVED_EXEMPLAR = "retrieved-exemplar"
    SPEAKER_TTS = "speaker-tts"
    SELF_PREFIX = "self-prefix"


@dataclass(frozen=True)
class PromptPlan:
    """Provider-ready contextual text plus where it came from.

    ``no_context`` marks the documented empty fallback (empty first pass, or
    retrieval with no hit) so harnesses can report prompt coverage instead of
    silently sending an empty prompt.
    """

    strategy: PromptStrategy
    prompt_text: str
    provenance: str
    seed: int | None = None
    no_context: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy.value,
                "prompt_text": self.prompt_text,
                "provenance": self.provenance,
                "seed": self.seed,
                "no_context": self.no_context,
            },
            ensure_ascii=False,
            sort_keys=True,
        )


def _words(t: NormalizedText | str) -> list[str]:
    return (t.text if isinstance(t, NormalizedText) else t).split()


def reverse_words(t: NormalizedText | str) -> str:
    """Word-level reversal; involutive."""
    return " ".join(reversed(_words(t)))


def shuffle_words(t: NormalizedText | str, seed: int) -> str:
    """Deterministic Fisher-Yates word permutation driven by SplitMix64.

    Same (text, seed) gives the same permutation on every platform; the word
    multiset is always preserved.
    """
    words = _words(t)
    SplitMix64(seed).shuffle(words)
    return " ".join(words)


def build_prompt(
    first_pass: NormalizedText | str,
    strategy: PromptStrategy,
    index: TfIdfIndex | None = None,
    seed: int | None = None,
) -> PromptPlan:
    """Build the prompt plan for one utterance from its first-pass hypothesis.

    RETRIEVED_TEXT requires ``index`` and uses the top-1 hit; when the query
    has no overlap with the index the plan degrades to the no-context
    fallback. SHUFFLED requires ``seed``.
    """
    text = first_pass.text if isinstance(first_pass, NormalizedText) else first_pass

    if strategy is PromptStrategy.FIRST_PASS:
        plan = PromptPlan(strategy, text, provenance="first-pass")
    elif strategy is PromptStrategy.REVERSED:
        plan = PromptPlan(strategy, reverse_words(text), provenance="first-pass/reversed")
    elif strategy is PromptStrategy.SHUFFLED:
        if seed is None:
            raise ValueError("shuffle strategy requires a seed")
        plan = PromptPlan(strategy, shuffle_words(text, seed), provenance="first-pass/shuffled", seed=seed)
    elif strategy is PromptStrategy.RETRIEVED_TEXT:
        if index is None:
            raise ValueError("retrieve strategy requires an index")
        hits = index.query(text, k=1)
        if not hits:
            return PromptPlan(strategy, "", provenance="retrieval:no-hit", no_context=True)
        retrieved, _ = index.doc_meta(hits[0].doc_id)
        plan = PromptPlan(strategy, retrieved, provenance=f"retrieval:{hits[0].doc_id}")
    else:
        raise ValueError(f"unhandled strategy {strategy!r}")

    if not plan.prompt_text:
        return PromptPlan(plan.strategy, "", provenance=plan.provenance, seed=plan.seed, no_context=True)
    return plan


@dataclass(frozen=True)
class PrefixPlan:
    """Recipe for a contextual (audio, text) prefix around a test utterance."""

    context_text: str
    context_audio: str
    test_audio: str
    source: PrefixSource
    silence_s: float = 1.0

    def __post_init__(self):
        if self.silence_s < 0:
            raise ValueError("silence duration must be non-negative")
        if not self.context_audio:
            raise ValueError("prefix plan requires context audio")
        if not self.test_audio:
            raise ValueError("prefix plan requires test audio")

    @property
    def decoder_prefix_text(self) -> str:
        """The contextual transcript, handed to the decoder verbatim."""
        return self.context_text

    def materialize(self, out_path: str | None = None, strict: bool = False) -> Waveform:
        """Load both waveforms, concatenate around the silence gap, and
        optionally write the result.

        Combined duration beyond the provider prompt window (30 s) logs a
        warning, or raises under ``strict``; the audio is never truncated.
        """
        ctx = read_wav(self.context_audio)
        test = read_wav(self.test_audio)
        combined = ctx.duration_s + self.silence_s + test.duration_s
        if combined > DURATION_BUDGET_S:
            message = (
                f"prefix audio runs {combined:.2f}s, over the {DURATION_BUDGET_S:.0f}s budget"
            )
            if strict:
                raise ValueError(message)
            log.warning("%s", message)
        merged = concat_with_silence(ctx, test, self.silence_s)
        if out_path is not None:
            write_wav(out_path, merged)
        return merged

    def to_json(self) -> str:
        return json.dumps(
            {
                "context_text": self.context_text,
                "context_audio": self.context_audio,
                "test_audio": self.test_audio,
                "source": self.source.value,
                "silence_s": self.silence_s,
            },
            ensure_ascii=False,
            sort_keys=True,
        )


def build_prefix(
    source: PrefixSource,
    test_audio: str,
    hit: RetrievalHit | None = None,
    index: TfIdfIndex | None = None,
    context_text: str | NormalizedText | None = None,
    context_audio: str | None = None,
    silence_s: float = 1.0,
) -> PrefixPlan:
    """Assemble a PrefixPlan from a retrieval hit or provider-synthesized audio.

    RETRIEVED_EXEMPLAR takes ``hit`` (plus the ``index`` it came from) and
    requires the hit's document to carry an audio path. SPEAKER_TTS and
    SELF_PREFIX take ``context_text`` plus the provider-synthesized
    ``context_audio`` (for SELF_PREFIX the context text is the utterance's own
    first-pass hypothesis).
    """
    if source is PrefixSource.RETRIEVED_EXEMPLAR:
        if hit is None or index is None:
            raise ValueError("retrieved-exemplar prefix requires a retrieval hit and its index")
        text, audio = index.doc_meta(hit.doc_id)
        if not audio:
            raise ValueError(f"retrieved document {hit.doc_id!r} has no audio path")
        return PrefixPlan(
            context_text=text,
            context_audio=audio,
            test_audio=test_audio,
            source=source,
            silence_s=silence_s,
        )

    if context_text is None or context_audio is None:
        raise ValueError(f"{source.value} prefix requires context text and synthesized audio")
    text = context_text.text if isinstance(context_text, NormalizedText) else context_text
    return PrefixPlan(
        context_text=text,
        context_audio=context_audio,
        test_audio=test_audio,
        source=source,
        silence_s=silence_s,
    )
