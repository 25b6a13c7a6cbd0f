from __future__ import annotations

from pathlib import Path

import pytest

from ctxdecode.rng import SplitMix64

REPO_ROOT = Path(__file__).resolve().parents[1]

ARABIC_LETTERS = "ابتثجحخدذرزسشصضطظعغفقكلمنهوي"
HARAKAT = "ًٌٍَُِّْٰـ"
EASTERN_DIGITS = "٠١٢٣٤٥٦٧٨٩"
PUNCT = "،؛؟.!,:()[]\"'%@-"
LATIN_WORDS = ["hello", "world", "asr", "Test", "abc123"]


@pytest.fixture
def rng():
    return SplitMix64(0xC0FFEE)


def fuzz_line(rng: SplitMix64) -> str:
    """Random mixed Arabic/Latin line with diacritics, digits, punctuation."""
    parts = []
    for _ in range(1 + rng.below(8)):
        kind = rng.below(5)
        if kind == 0:
            parts.append(LATIN_WORDS[rng.below(len(LATIN_WORDS))])
        elif kind == 1:
            parts.append("".join(EASTERN_DIGITS[rng.below(10)] for _ in range(1 + rng.below(4))))
        else:
            chars = []
            for _ in range(1 + rng.below(6)):
                chars.append(ARABIC_LETTERS[rng.below(len(ARABIC_LETTERS))])
                if rng.below(3) == 0:
                    chars.append(HARAKAT[rng.below(len(HARAKAT))])
            parts.append("".join(chars))
        if rng.below(4) == 0:
            parts.append(PUNCT[rng.below(len(PUNCT))])
    return " ".join(parts)


def random_tokens(rng: SplitMix64, max_len: int = 8, alphabet: int = 5) -> list[str]:
    letters = "abcde"[:alphabet]
    return [letters[rng.below(alphabet)] for _ in range(rng.below(max_len + 1))]
