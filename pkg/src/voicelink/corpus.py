"""Deterministic desk-scale corpus: voice-like harmonic sources and noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, mix, peak_normalize, write_wav

NOISE_KINDS = ("white", "babble", "impulsive", "tonal")

# Salt values keep the per-purpose RNG streams disjoint.
_VOICE_SALT = 0x56
_NOISE_SALT = 0x4E


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters of the synthetic corpus generator."""

    n_items: int = 200
    duration_s: float = 5.0
    sample_rate_hz: int = 16000
    pitch_hz: tuple[float, float] = (110.0, 280.0)
    n_harmonics: int = 12
    envelope_rate_hz: tuple[float, float] = (2.0, 8.0)
    noise_kinds: tuple[str, ...] = NOISE_KINDS
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not (0 < self.pitch_hz[0] <= self.pitch_hz[1]):
            raise ValueError(f"bad pitch range {self.pitch_hz}")
        for k in self.noise_kinds:
            if k not in NOISE_KINDS:
                raise ValueError(f"unknown noise kind {k!r}")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(list(key))


def gen_voice(spec: CorpusSpec, index: int) -> AudioClip:
    """Harmonic complex with a wandering pitch contour and syllable-rate envelope.

    Pure function of (spec.seed, index): identical calls are bit-identical,
    distinct indices give decorrelated clips.
    """
    rng = _rng(spec.seed, _VOICE_SALT, index)
    rate = spec.sample_rate_hz
    n = int(round(spec.duration_s * rate))
    t = np.arange(n) / rate

    lo, hi = spec.pitch_hz
    base = rng.uniform(lo, hi)
    # Slow pitch wander, bounded to a few percent so the range is respected.
    wander_depth = min(0.03 * base, 0.5 * (hi - lo) if hi > lo else 0.0)
    wander_rate = rng.uniform(0.3, 1.5)
    f0 = base + wander_depth * np.sin(2 * np.pi * wander_rate * t + rng.uniform(0, 2 * np.pi))
    phase0 = 2 * np.pi * np.cumsum(f0) / rate

    x = np.zeros(n)
    nyq = rate / 2
    for h in range(1, spec.n_harmonics + 1):
        if h * (base + wander_depth) >= 0.95 * nyq:
            break
        x += (1.0 / h) * np.sin(h * phase0 + rng.uniform(0, 2 * np.pi))

    # Syllable-rate amplitude envelope with a small floor so the voice never
    # fully gates off.
    env_rate = rng.uniform(*spec.envelope_rate_hz)
    env = 0.5 * (1 - np.cos(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi)))
    slow = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
    x *= (0.08 + 0.92 * env) * np.abs(slow)
    return peak_normalize(AudioClip(x, rate), 0.9)


def gen_noise(kind: str, duration_s: float, rate_hz: int, seed: int,
              level: float = 0.1, tone_hz: float = 1000.0,
              click_rate_hz: float = 8.0) -> AudioClip:
    """Noise generator for the supported kinds.

    white: Gaussian with std `level`; tonal: fixed sinusoid; impulsive:
    sparse decaying clicks at `click_rate_hz`; babble: six voices at -10 dB.
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}")
    rng = _rng(seed, _NOISE_SALT)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz

    if kind == "white":
        return AudioClip(rng.normal(0.0, level, n), rate_hz)
    if kind == "tonal":
        return AudioClip(level * np.sin(2 * np.pi * tone_hz * t), rate_hz)
    if kind == "impulsive":
        x = np.zeros(n)
        n_clicks = rng.poisson(click_rate_hz * duration_s)
        starts = np.sort(rng.integers(0, max(1, n - 64), size=n_clicks))
        burst = np.exp(-np.arange(32) / 4.0)
        for s in starts:
            x[s:s + 32] += rng.choice((-1.0, 1.0)) * burst[: n - s]
        return AudioClip(x, rate_hz)
    # babble: decorrelated voices summed at -10 dB each
    spec = CorpusSpec(duration_s=duration_s, sample_rate_hz=rate_hz, seed=seed ^ 0x42AB)
    voices = [gen_voice(spec, i) for i in range(6)]
    return mix(voices, [10 ** (-10 / 20)] * 6)


@dataclass
class CorpusItem:
    """One two-speaker item with its acoustic noise and clean mixture.

    All components share a common gain chosen so the mixture peaks at 0.9;
    this keeps the acoustic mixture a valid normalized pressure waveform
    without touching the relative source/noise levels.
    """

    index: int
    voice_a: AudioClip
    voice_b: AudioClip
    noise: AudioClip
    noise_kind: str
    mixture: AudioClip = field(init=False)

    def __post_init__(self):
        mixture = mix([self.voice_a, self.voice_b, self.noise], [1.0, 1.0, 1.0])
        peak = np.max(np.abs(mixture.samples))
        g = 0.9 / peak if peak > 0 else 1.0
        rate = mixture.sample_rate_hz
        self.voice_a = AudioClip(self.voice_a.samples * g, rate)
        self.voice_b = AudioClip(self.voice_b.samples * g, rate)
        self.noise = AudioClip(self.noise.samples * g, rate)
        self.mixture = AudioClip(mixture.samples * g, rate)


def make_item(spec: CorpusSpec, index: int, noise_snr_db: float = 10.0) -> CorpusItem:
    """Build item `index`: two voices plus one noise kind scaled to noise_snr_db."""
    a = gen_voice(spec, 2 * index)
    b = gen_voice(spec, 2 * index + 1)
    kind = spec.noise_kinds[index % len(spec.noise_kinds)]
    noise = gen_noise(kind, spec.duration_s, spec.sample_rate_hz, seed=spec.seed * 100003 + index)
    speech_p = np.mean((a.samples + b.samples[: len(a)]) ** 2)
    noise_p = np.mean(noise.samples ** 2)
    if noise_p > 0:
        g = np.sqrt(speech_p / noise_p * 10 ** (-noise_snr_db / 10))
        noise = AudioClip(noise.samples * g, noise.sample_rate_hz)
    return CorpusItem(index, a, b, noise, kind)


def build_corpus(spec: CorpusSpec, out_dir, noise_snr_db: float = 10.0,
                 prefix: str = "item") -> list[dict]:
    """Generate all items, write WAVs and a manifest CSV; returns manifest rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(spec.n_items):
        item = make_item(spec, i, noise_snr_db)
        parts = [("a", "source", item.voice_a), ("b", "source", item.voice_b),
                 ("noise", "noise", item.noise), ("mix", "mixture", item.mixture)]
        for suffix, role, clip in parts:
            name = f"{prefix}{i:04d}_{suffix}.wav"
            write_wav(out / name, clip)
            rows.append({"item": i, "path": name, "role": role, "seed": spec.seed})
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["item", "path", "role", "seed"])
        w.writeheader()
        w.writerows(rows)
    return rows
