"""Tests for the audio data model and WAV I/O."""

import numpy as np
import pytest

from voicelink.audio import (AudioClip, AudioError, bandpass, mix,
                             peak_normalize, read_wav, resample, write_wav)


def test_clip_rejects_2d():
    with pytest.raises(AudioError):
        AudioClip(np.zeros((2, 10)), 16000)


def test_clip_rejects_nan():
    x = np.zeros(10)
    x[3] = np.nan
    with pytest.raises(AudioError):
        AudioClip(x, 16000)


def test_clip_rejects_bad_rate():
    with pytest.raises(AudioError):
        AudioClip(np.zeros(10), 0)


def test_duration():
    clip = AudioClip(np.zeros(8000), 16000)
    assert clip.duration_s == pytest.approx(0.5)


def test_mix_zero_pads_shorter():
    a = AudioClip(np.ones(10), 16000)
    b = AudioClip(np.ones(6), 16000)
    out = mix([a, b], [1.0, 2.0])
    assert len(out) == 10
    assert np.allclose(out.samples[:6], 3.0)
    assert np.allclose(out.samples[6:], 1.0)


def test_mix_rate_mismatch():
    a = AudioClip(np.zeros(10), 16000)
    b = AudioClip(np.zeros(10), 8000)
    with pytest.raises(AudioError):
        mix([a, b], [1.0, 1.0])


def test_resample_ratio():
    clip = AudioClip(np.sin(2 * np.pi * 440 * np.arange(48000) / 48000), 48000)
    out = resample(clip, 16000)
    assert out.sample_rate_hz == 16000
    assert len(out) == 16000


def test_resample_identity():
    clip = AudioClip(np.arange(100, dtype=float), 16000)
    assert resample(clip, 16000) is clip


def test_resample_preserves_tone():
    t = np.arange(32000) / 32000
    clip = AudioClip(np.sin(2 * np.pi * 440 * t), 32000)
    out = resample(clip, 16000)
    ref = np.sin(2 * np.pi * 440 * np.arange(16000) / 16000)
    core = slice(1000, -1000)
    corr = np.corrcoef(out.samples[core], ref[core])[0, 1]
    assert corr > 0.999


def test_peak_normalize():
    clip = AudioClip(np.array([0.1, -0.5, 0.2]), 16000)
    out = peak_normalize(clip, 0.9)
    assert np.max(np.abs(out.samples)) == pytest.approx(0.9)


def test_peak_normalize_zero_passthrough():
    clip = AudioClip(np.zeros(5), 16000)
    assert peak_normalize(clip) is clip


def test_bandpass_removes_dc_and_high():
    rate = 16000
    t = np.arange(rate) / rate
    x = 1.0 + np.sin(2 * np.pi * 1000 * t) + np.sin(2 * np.pi * 7900 * t)
    out = bandpass(AudioClip(x, rate), 80.0, 7000.0)
    spec = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(rate, 1 / rate)
    keep = spec[np.argmin(np.abs(freqs - 1000))]
    assert spec[0] < 1e-2 * keep
    assert spec[np.argmin(np.abs(freqs - 7900))] < 1e-2 * keep


def test_bandpass_invalid_band():
    clip = AudioClip(np.zeros(100), 16000)
    with pytest.raises(AudioError):
        bandpass(clip, 7000.0, 80.0)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pcm = rng.integers(-32767, 32768, size=1000) / 32767
    clip = AudioClip(pcm, 16000)
    path = tmp_path / "x.wav"
    write_wav(path, clip)
    back = read_wav(path)
    assert back.sample_rate_hz == 16000
    assert np.array_equal(back.samples, clip.samples)


def test_wav_clips_out_of_range(tmp_path):
    clip = AudioClip(np.array([1.5, -2.0, 0.5]), 16000)
    path = tmp_path / "clip.wav"
    with pytest.warns(UserWarning):
        write_wav(path, clip)
    back = read_wav(path)
    assert back.samples[0] == pytest.approx(1.0)
    assert back.samples[1] == pytest.approx(-1.0)


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a wav file at all")
    with pytest.raises(AudioError):
        read_wav(path)
