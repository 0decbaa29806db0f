"""Tests for CFO tracking and FM demodulation."""

import numpy as np
import pytest

from voicelink.audio import AudioClip
from voicelink.corpus import CorpusSpec, gen_voice
from voicelink.demod import (DemodConfig, NoCarrierError, bandlimit_reference,
                             compensate_cfo, demodulate, estimate_cfo,
                             fm_demodulate, postprocess, track_cfo)
from voicelink.metrics import si_sdr
from voicelink.tag import (ChannelParams, IQTrace, TagParams, apply_channel,
                           synthesize_backscatter_iq)

CFG = DemodConfig()
RATE = 192000.0


def _tone(freq_hz: float, n: int = 19200, rate: float = RATE) -> IQTrace:
    t = np.arange(n) / rate
    return IQTrace(np.exp(2j * np.pi * freq_hz * t), rate, CFG.if_center_hz)


def test_estimate_cfo_pure_tone():
    for offset in (-300.0, 0.0, 150.0, 499.0):
        iq = _tone(CFG.if_center_hz + offset)
        assert estimate_cfo(iq, CFG) == pytest.approx(offset, abs=1.0)


def test_estimate_cfo_with_noise():
    rng = np.random.default_rng(0)
    iq = _tone(CFG.if_center_hz + 200.0)
    noisy = IQTrace(iq.samples + 0.05 * (rng.standard_normal(len(iq)) +
                                         1j * rng.standard_normal(len(iq))),
                    RATE, CFG.if_center_hz)
    assert estimate_cfo(noisy, CFG) == pytest.approx(200.0, abs=2.0)


def test_estimate_cfo_no_carrier():
    rng = np.random.default_rng(1)
    noise = IQTrace(rng.standard_normal(19200) + 1j * rng.standard_normal(19200),
                    RATE, CFG.if_center_hz)
    with pytest.raises(NoCarrierError):
        estimate_cfo(noise, CFG)


def test_estimate_cfo_short_frame():
    with pytest.raises(ValueError):
        estimate_cfo(_tone(40e3, n=512), CFG)


def test_track_cfo_reuses_last_on_dropout():
    rng = np.random.default_rng(2)
    tone = _tone(CFG.if_center_hz + 100.0, n=19200).samples
    noise = 5.0 * (rng.standard_normal(19200) + 1j * rng.standard_normal(19200))
    iq = IQTrace(np.concatenate([tone, noise]), RATE, CFG.if_center_hz)
    track = track_cfo(iq, CFG)
    assert len(track) == 2
    assert track[0] == pytest.approx(100.0, abs=2.0)
    assert track[1] == track[0]


def test_compensate_cfo_zero_track_is_identity():
    iq = _tone(40e3)
    out = compensate_cfo(iq, np.zeros(2))
    assert out is iq


def test_compensate_then_demod_removes_offset():
    iq = _tone(CFG.if_center_hz + 400.0, n=192000)
    track = track_cfo(iq, CFG)
    comp = compensate_cfo(iq, track)
    dem = fm_demodulate(comp, CFG)
    residual = np.mean(dem.samples[1000:-1000])
    assert abs(residual) < 2.0


def test_fm_demodulate_tone():
    # A tone offset from the IF demodulates to a constant frequency deviation.
    iq = _tone(CFG.if_center_hz + 1500.0)
    dem = fm_demodulate(iq, CFG)
    assert np.allclose(dem.samples, 1500.0, atol=1e-6)


def test_fm_demodulate_length():
    iq = _tone(40e3, n=1000)
    assert len(fm_demodulate(iq, CFG)) == 999


def test_fm_demodulate_delta_too_large():
    iq = _tone(40e3, n=10)
    with pytest.raises(ValueError):
        fm_demodulate(iq, DemodConfig(delta_samples=10))


def test_postprocess_dc_removal():
    clip = AudioClip(np.full(192000, 3.7), RATE)
    out = postprocess(clip, CFG)
    assert np.max(np.abs(out.samples)) < 1e-6 or not np.any(out.samples)


def test_postprocess_rate():
    clip = AudioClip(np.random.default_rng(0).standard_normal(192000), 192000)
    out = postprocess(clip, CFG)
    assert out.sample_rate_hz == 16000
    assert len(out) == 16000


def test_full_round_trip_snr():
    voice = gen_voice(CorpusSpec(duration_s=2.0, seed=21), 0)
    iq = synthesize_backscatter_iq(voice, TagParams.desk_default())
    rx = apply_channel(iq, ChannelParams(snr_db=None))
    audio = demodulate(rx, CFG)
    ref = bandlimit_reference(voice, CFG)
    n = min(len(audio), len(ref))
    trim = 1600
    score = si_sdr(audio.samples[trim:n - trim], ref.samples[trim:n - trim])
    assert score >= 25.0


def test_round_trip_cfo_within_1db_of_clean():
    voice = gen_voice(CorpusSpec(duration_s=2.0, seed=22), 1)
    iq = synthesize_backscatter_iq(voice, TagParams.desk_default())
    ref = bandlimit_reference(voice, CFG)
    trim = 1600
    scores = {}
    for label, ch in (("clean", ChannelParams(snr_db=None)),
                      ("cfo", ChannelParams(snr_db=None, cfo_hz=500.0,
                                            cfo_drift_hz_per_s=10.0))):
        audio = demodulate(apply_channel(iq, ch), CFG)
        n = min(len(audio), len(ref))
        scores[label] = si_sdr(audio.samples[trim:n - trim],
                               ref.samples[trim:n - trim])
    assert scores["cfo"] >= scores["clean"] - 1.0
