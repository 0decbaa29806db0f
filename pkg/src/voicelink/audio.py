"""Audio data model: clips, mixing, resampling and PCM16 WAV I/O."""

from __future__ import annotations

import struct
import warnings
import wave
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

PCM16_MAX = 32767


class AudioError(ValueError):
    """Invalid audio data or unsupported file contents."""


@dataclass(frozen=True)
class AudioClip:
    """A real-valued mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("non-finite sample values")
        if self.sample_rate_hz <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def mix(clips: list[AudioClip], gains: list[float]) -> AudioClip:
    """Sample-wise weighted sum. Shorter clips are zero-padded to the longest."""
    if not clips:
        raise AudioError("mix needs at least one clip")
    if len(clips) != len(gains):
        raise AudioError("clips and gains must have equal length")
    rate = clips[0].sample_rate_hz
    for c in clips:
        if c.sample_rate_hz != rate:
            raise AudioError(
                f"sample rate mismatch: {c.sample_rate_hz} != {rate}"
            )
    n = max(len(c) for c in clips)
    out = np.zeros(n, dtype=np.float64)
    for c, g in zip(clips, gains):
        out[: len(c)] += g * c.samples
    return AudioClip(out, rate)


def resample(clip: AudioClip, rate_hz: int) -> AudioClip:
    """Polyphase resampling to rate_hz."""
    if rate_hz == clip.sample_rate_hz:
        return clip
    frac = Fraction(int(round(rate_hz)), int(round(clip.sample_rate_hz)))
    out = sps.resample_poly(clip.samples, frac.numerator, frac.denominator)
    return AudioClip(out, rate_hz)


def peak_normalize(clip: AudioClip, peak: float = 0.9) -> AudioClip:
    """Scale so the absolute peak equals `peak`; all-zero clips pass through."""
    m = np.max(np.abs(clip.samples)) if len(clip) else 0.0
    if m == 0.0:
        return clip
    return AudioClip(clip.samples * (peak / m), clip.sample_rate_hz)


def bandpass(clip: AudioClip, low_hz: float, high_hz: float, order: int = 4) -> AudioClip:
    """Zero-phase Butterworth band-pass."""
    nyq = clip.sample_rate_hz / 2
    if not (0 < low_hz < high_hz < nyq):
        raise AudioError(f"band ({low_hz}, {high_hz}) invalid for rate {clip.sample_rate_hz}")
    sos = sps.butter(order, [low_hz / nyq, high_hz / nyq], btype="band", output="sos")
    return AudioClip(sps.sosfiltfilt(sos, clip.samples), clip.sample_rate_hz)


def write_wav(path, clip: AudioClip) -> None:
    """Write PCM16 mono RIFF/WAVE. Out-of-range samples are clipped with a warning."""
    x = clip.samples
    if len(x) and np.max(np.abs(x)) > 1.0:
        warnings.warn("samples outside [-1, 1] clipped on WAV write")
        x = np.clip(x, -1.0, 1.0)
    pcm = np.round(x * PCM16_MAX).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    """Read a PCM16 mono RIFF/WAVE file."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise AudioError(f"only mono supported, file has {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise AudioError(f"only PCM16 supported, sample width {w.getsampwidth()}")
            if w.getcomptype() != "NONE":
                raise AudioError(f"unsupported encoding {w.getcomptype()}")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise AudioError(f"malformed WAV file {path}: {e}") from e
    except struct.error as e:
        raise AudioError(f"malformed WAV header {path}: {e}") from e
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / PCM16_MAX, rate)
