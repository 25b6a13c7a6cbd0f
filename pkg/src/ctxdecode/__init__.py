"""Context-aware decoding toolkit for ASR.

Building blocks for contextual test-time adaptation of speech recognizers:
Arabic-oriented text normalization, word/character error metrics, TF-IDF
character n-gram retrieval, prompt and audio-prefix construction, proxy-guided
n-best selection, and a batch evaluation harness. Everything is deterministic
given a seed; no model inference happens inside this package (external ASR/TTS
systems are reached through the ``providers`` adapters).
"""

__version__ = "0.1.0"

from ctxdecode.textnorm import NormalizationConfig, NormalizedText, normalize, tokenize_words
from ctxdecode.metrics import DistanceMetric, ScorePair, cer, corpus_rates, distance, edit_distance, sentence_bleu, wer

__all__ = [
    "__version__",
    "NormalizationConfig",
    "NormalizedText",
    "normalize",
    "tokenize_words",
    "DistanceMetric",
    "ScorePair",
    "edit_distance",
    "wer",
    "cer",
    "sentence_bleu",
    "distance",
    "corpus_rates",
]
