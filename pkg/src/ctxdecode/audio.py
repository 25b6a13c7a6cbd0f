"""Mono 16 kHz 16-bit PCM waveform handling for prefix construction.

The toolkit never resamples: any WAV that is not mono/16 kHz/PCM16 is a hard
error, since resampling quality is a separate problem owned by the caller.
Concatenation inserts an exact-zero silence gap and preserves both input
sample regions bit-exactly.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16_000


class AudioFormatError(ValueError):
    """A WAV file or waveform violates the mono/16 kHz/PCM16 contract."""


@dataclass(frozen=True)
class Waveform:
    """Mono 16 kHz signal as int16 samples."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    channels: int = 1

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.channels != 1:
            raise AudioFormatError(f"audio must be mono, got {self.channels} channels")
        if self.samples.dtype != np.int16 or self.samples.ndim != 1:
            raise AudioFormatError("samples must be a 1-D int16 array")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: str | Path) -> Waveform:
    """Read a RIFF/WAVE file, enforcing mono 16 kHz PCM16."""
    try:
        return _read_wav(path)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from None


def _read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as wf:
        if wf.getcomptype() != "NONE":
            raise AudioFormatError(f"{path}: compressed WAV is not supported")
        if wf.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * wf.getsampwidth()}-bit")
        if wf.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()} Hz")
        frames = wf.readframes(wf.getnframes())
    return Waveform(samples=np.frombuffer(frames, dtype="<i2").astype(np.int16))


def write_wav(path: str | Path, waveform: Waveform) -> None:
    """Write a canonical PCM16LE mono RIFF/WAVE file (byte-stable framing)."""
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(waveform.samples.astype("<i2").tobytes())


def concat_with_silence(ctx: Waveform, test: Waveform, silence_s: float = 1.0) -> Waveform:
    """Concatenate context and test audio around an all-zero silence gap.

    Output length is exactly len(ctx) + round(silence_s * 16000) + len(test),
    and the input regions are copied bit-exactly.
    """
    if silence_s < 0:
        raise ValueError("silence duration must be non-negative")
    if ctx.sample_rate != test.sample_rate:
        raise AudioFormatError("sample rate mismatch between context and test audio")
    if ctx.channels != test.channels:
        raise AudioFormatError("channel count mismatch between context and test audio")
    gap = np.zeros(round(silence_s * SAMPLE_RATE), dtype=np.int16)
    return Waveform(samples=np.concatenate([ctx.samples, gap, test.samples]))
