"""Arabic text normalization applied before any metric, retrieval, or selection.

Pipeline (fixed order):
1. Unicode NFC composition
2. Punctuation removal (Unicode P* categories plus Arabic marks), except a
   configurable keep-set (default ``%`` and ``@``); removed marks become
   spaces so adjoining words never merge
3. Diacritic removal: Arabic combining marks U+064B..U+065F, the superscript
   alef U+0670, and tatweel U+0640
4. Hamza/Madda seat folding on alef only (أ إ آ ٱ -> ا); waw/ya seats (ؤ ئ)
   and the standalone hamza are left untouched
5. Eastern Arabic-Indic digit mapping to ASCII: U+0660..U+0669 and the
   extended U+06F0..U+06F9 map codepoint-by-codepoint in logical order
   (so the two-codepoint string ٩٢ becomes "92"; right-to-left rendering
   displays the same codepoints visually reversed)
6. Latin-script token removal (tokens containing any Latin letter are
   dropped; ASCII digits survive)
7. Whitespace collapse and a final NFC pass

Every step is a pure character-level function, so normalization is total on
valid Unicode text and idempotent.
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache

# Removal list for step 3. Harakat and related combining marks, the
# superscript (dagger) alef, and tatweel. Tatweel is not formally a
# diacritic; it is pure elongation and is removed by the same switch.
DIACRITIC_CODEPOINTS = frozenset(
    [chr(cp) for cp in range(0x064B, 0x0660)]  # U+064B..U+065F
    + ["ٰ", "ـ"]
)

# Alef-seat hamza/madda carriers folded to bare alef.
ALEF_FOLD = {
    "آ": "ا",  # ALEF WITH MADDA ABOVE
    "أ": "ا",  # ALEF WITH HAMZA ABOVE
    "إ": "ا",  # ALEF WITH HAMZA BELOW
    "ٱ": "ا",  # ALEF WASLA
}

# Arabic-Indic and Extended Arabic-Indic digits, both mapped onto ASCII.
EASTERN_DIGIT_MAP = {chr(0x0660 + i): str(i) for i in range(10)}
EASTERN_DIGIT_MAP.update({chr(0x06F0 + i): str(i) for i in range(10)})

# Arabic punctuation named explicitly on top of the Unicode P* categories.
ARABIC_PUNCTUATION = frozenset("؟،؛")  # ؟ ، ؛


def _is_punctuation(ch: str) -> bool:
    return ch in ARABIC_PUNCTUATION or unicodedata.category(ch).startswith("P")


@lru_cache(maxsize=1)
def all_punctuation() -> frozenset[str]:
    """The full punctuation class (every removable mark) as a keep-set value.

    Using it as ``punctuation_keep_set`` disables punctuation removal
    entirely; with every other flag off, normalization degrades to NFC plus
    whitespace collapse.
    """
    return frozenset(ch for ch in map(chr, range(0x110000)) if _is_punctuation(ch))


def _is_latin_letter(ch: str) -> bool:
    if "a" <= ch <= "z" or "A" <= ch <= "Z":
        return True
    if not ch.isalpha():
        return False
    return "LATIN" in unicodedata.name(ch, "")


@dataclass(frozen=True)
class NormalizationConfig:
    """Switches for the normalization pipeline. All on by default."""

    strip_diacritics: bool = True
    normalize_hamza_madda: bool = True
    convert_eastern_numerals: bool = True
    drop_latin_tokens: bool = True
    punctuation_keep_set: frozenset[str] = field(default_factory=lambda: frozenset("%@"))

    def __post_init__(self):
        for ch in self.punctuation_keep_set:
            if not _is_punctuation(ch):
                raise ValueError(f"keep-set character {ch!r} is not punctuation")

    def as_dict(self) -> dict:
        return {
            "strip_diacritics": self.strip_diacritics,
            "normalize_hamza_madda": self.normalize_hamza_madda,
            "convert_eastern_numerals": self.convert_eastern_numerals,
            "drop_latin_tokens": self.drop_latin_tokens,
            "punctuation_keep_set": "".join(sorted(self.punctuation_keep_set)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizationConfig":
        kwargs = dict(data)
        if "punctuation_keep_set" in kwargs:
            kwargs["punctuation_keep_set"] = frozenset(kwargs["punctuation_keep_set"])
        return cls(**kwargs)


@dataclass(frozen=True)
class NormalizedText:
    """Normalized text plus a digest of the raw input it came from.

    ``text`` is NFC, whitespace-collapsed, and free of every character class
    removed by the active config.
    """

    text: str
    source_hash: str

    def words(self) -> list[str]:
        return self.text.split()


def normalize(raw: str, cfg: NormalizationConfig | None = None) -> NormalizedText:
    """Run the full pipeline on ``raw`` under ``cfg`` (defaults: all flags on).

    Total on valid Unicode input; never raises on text content.
    """
    if cfg is None:
        cfg = NormalizationConfig()
    text = unicodedata.normalize("NFC", raw)

    out: list[str] = []
    for ch in text:
        if ch in cfg.punctuation_keep_set:
            out.append(ch)
        elif _is_punctuation(ch):
            out.append(" ")
        elif cfg.strip_diacritics and ch in DIACRITIC_CODEPOINTS:
            continue
        elif cfg.normalize_hamza_madda and ch in ALEF_FOLD:
            out.append(ALEF_FOLD[ch])
        elif cfg.convert_eastern_numerals and ch in EASTERN_DIGIT_MAP:
            out.append(EASTERN_DIGIT_MAP[ch])
        else:
            out.append(ch)
    text = "".join(out)

    if cfg.drop_latin_tokens:
        text = " ".join(tok for tok in text.split() if not any(_is_latin_letter(c) for c in tok))

    text = unicodedata.normalize("NFC", " ".join(text.split()))
    return NormalizedText(text=text, source_hash=hashlib.sha256(raw.encode("utf-8")).hexdigest())


def tokenize_words(t: NormalizedText | str) -> list[str]:
    """Split normalized text into word tokens (single-space separated)."""
    text = t.text if isinstance(t, NormalizedText) else t
    return text.split()
