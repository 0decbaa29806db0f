"""Backscatter tag simulator.

Acoustic pressure -> piezo voltage -> junction capacitance -> resonance
frequency -> FM backscatter IQ at an intermediate frequency, plus a flat
channel with attenuation, CFO (optionally drifting) and additive noise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, resample


class TagDomainError(ValueError):
    """Junction model driven outside its validity region."""


class AliasingError(ValueError):
    """FM deviation too large for the IQ sample rate."""


@dataclass(frozen=True)
class TagParams:
    """Physical constants of the resonator chain.

    gamma12 is the combined resonator/antenna frequency-scaling gain; the
    default factory calibrates it so the quiescent carrier sits at 515 MHz.
    """

    L: float = 10e-9               # henry
    C0: float = 9.1e-12            # farad
    phi_T: float = 25.85e-3        # volt
    gamma12: float = 1.0
    f_b: float = 400e6             # Hz, butterfly-mode resonance
    piezo_sensitivity: float = 1e-3  # volt per unit normalized pressure

    def __post_init__(self):
        for name in ("L", "C0", "phi_T", "gamma12", "f_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not np.isfinite(self.f_res0):
            raise ValueError("derived resonance frequency is not finite")

    @property
    def f_res0(self) -> float:
        """Quiescent resonance frequency 1/(2*pi*sqrt(L*C0))."""
        return 1.0 / (2 * np.pi * np.sqrt(self.L * self.C0))

    @classmethod
    def desk_default(cls, f_c0_hz: float = 515e6, deviation_fullscale_hz: float = 4e3) -> "TagParams":
        """Defaults calibrated so f_c0 = 515 MHz and full-scale pressure maps
        to the given FM deviation."""
        base = cls()
        gamma12 = f_c0_hz / base.f_res0
        sens = deviation_fullscale_hz * 4 * base.phi_T / f_c0_hz
        return cls(gamma12=gamma12, piezo_sensitivity=sens)


@dataclass(frozen=True)
class ChannelParams:
    """Flat channel: path loss, CFO with linear drift, AWGN at snr_db.

    snr_db=None means noiseless. The seed fixes the noise realization.
    """

    snr_db: float | None = 40.0
    attenuation_db: float = 0.0
    cfo_hz: float = 0.0
    cfo_drift_hz_per_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.attenuation_db < 0:
            raise ValueError("attenuation_db must be >= 0")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite or None")


@dataclass(frozen=True)
class IQTrace:
    """Complex IQ sample stream at a nominal intermediate frequency."""

    samples: np.ndarray
    sample_rate_hz: float
    if_center_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or len(samples) == 0:
            raise ValueError("IQTrace needs a non-empty 1-D sample array")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)


def piezo_voltage(pressure: AudioClip, sens: float) -> AudioClip:
    """Linear transduction: v_pz[i] = sens * pressure[i]."""
    x = pressure.samples
    if np.max(np.abs(x), initial=0.0) > 1.0:
        raise ValueError("pressure must be normalized to [-1, 1]")
    return AudioClip(sens * x, pressure.sample_rate_hz)


def junction_capacitance(v_pz, p: TagParams):
    """C0 / sqrt(1 + v_pz/phi_T); valid for v_pz > -phi_T."""
    v = np.asarray(v_pz, dtype=np.float64)
    if np.any(1 + v / p.phi_T <= 0):
        raise TagDomainError("v_pz <= -phi_T: junction model invalid")
    return p.C0 / np.sqrt(1 + v / p.phi_T)


def resonance_frequency(v_pz, p: TagParams, mode: str = "exact"):
    """Resonance frequency of the voltage-sensing resonator.

    mode="exact":      f_res0 * (1 + v/phi_T)^(1/4)
    mode="linearized": f_res0 * (1 + v/(4*phi_T))  (first-order expansion)
    """
    v = np.asarray(v_pz, dtype=np.float64)
    if mode == "exact":
        if np.any(1 + v / p.phi_T <= 0):
            raise TagDomainError("v_pz <= -phi_T: junction model invalid")
        return p.f_res0 * (1 + v / p.phi_T) ** 0.25
    if mode == "linearized":
        return p.f_res0 * (1 + v / (4 * p.phi_T))
    raise ValueError(f"unknown mode {mode!r}")


def frequency_plan(p: TagParams) -> dict:
    """Quiescent carrier, butterfly mode and excitation frequencies."""
    f_c0 = p.gamma12 * p.f_res0
    if p.f_b == 0:
        warnings.warn("degenerate frequency plan: f_b = 0 gives f_ex = f_c0")
    return {"f_c0": f_c0, "f_b": p.f_b, "f_ex": f_c0 + p.f_b}


def synthesize_backscatter_iq(voice: AudioClip, p: TagParams,
                              if_center_hz: float = 40e3,
                              iq_rate_hz: float = 192e3) -> IQTrace:
    """FM-modulate the voice onto a unit-amplitude IF carrier.

    The instantaneous deviation is the small-signal carrier shift
    gamma12 * f_res0 * v_pz / (4*phi_T); the phase is its running sum
    (cumulative-phase FM).
    """
    v = resample(voice, int(round(iq_rate_hz))) if voice.sample_rate_hz != iq_rate_hz else voice
    v_pz = piezo_voltage(v, p.piezo_sensitivity)
    f_dev = p.gamma12 * p.f_res0 * v_pz.samples / (4 * p.phi_T)
    max_dev = np.max(np.abs(f_dev), initial=0.0)
    if max_dev > iq_rate_hz / 4:
        raise AliasingError(
            f"peak deviation {max_dev:.1f} Hz exceeds iq_rate/4 = {iq_rate_hz / 4:.1f} Hz"
        )
    phase = 2 * np.pi * np.cumsum(if_center_hz + f_dev) / iq_rate_hz
    return IQTrace(np.exp(1j * phase), iq_rate_hz, if_center_hz)


def apply_channel(iq: IQTrace, ch: ChannelParams) -> IQTrace:
    """Attenuate, rotate by the (drifting) CFO and add complex AWGN.

    Deterministic under a fixed seed; with snr_db=None, cfo=0, att=0 the
    trace passes through bit-identically.
    """
    x = iq.samples
    gain = 10 ** (-ch.attenuation_db / 20)
    if gain != 1.0:
        x = x * gain
    if ch.cfo_hz != 0.0 or ch.cfo_drift_hz_per_s != 0.0:
        t = np.arange(len(x)) / iq.sample_rate_hz
        x = x * np.exp(2j * np.pi * (ch.cfo_hz + ch.cfo_drift_hz_per_s * t) * t)
    if ch.snr_db is not None:
        rng = np.random.default_rng(ch.seed)
        p_sig = np.mean(np.abs(x) ** 2)
        sigma = np.sqrt(p_sig * 10 ** (-ch.snr_db / 10) / 2)
        noise = sigma * (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))
        x = x + noise
    return IQTrace(x, iq.sample_rate_hz, iq.if_center_hz)


# --- IQ file format: raw interleaved little-endian float32 (I,Q) pairs plus
# --- a sidecar text header "<path>.hdr" with rate, IF and length.

def write_iq(path, trace: IQTrace) -> None:
    path = Path(path)
    inter = np.empty(2 * len(trace), dtype="<f4")
    inter[0::2] = trace.samples.real
    inter[1::2] = trace.samples.imag
    path.write_bytes(inter.tobytes())
    hdr = (f"sample_rate_hz={trace.sample_rate_hz!r}\n"
           f"if_center_hz={trace.if_center_hz!r}\n"
           f"length={len(trace)}\n")
    Path(str(path) + ".hdr").write_text(hdr)


def read_iq(path) -> IQTrace:
    path = Path(path)
    hdr_path = Path(str(path) + ".hdr")
    if not hdr_path.exists():
        raise FileNotFoundError(f"missing sidecar header {hdr_path}")
    fields = {}
    for line in hdr_path.read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            fields[k.strip()] = v.strip()
    rate = float(fields["sample_rate_hz"])
    if_center = float(fields["if_center_hz"])
    length = int(fields["length"])
    inter = np.frombuffer(path.read_bytes(), dtype="<f4")
    if len(inter) != 2 * length:
        raise ValueError(f"IQ payload length {len(inter) // 2} != header length {length}")
    samples = inter[0::2].astype(np.float64) + 1j * inter[1::2].astype(np.float64)
    return IQTrace(samples, rate, if_center)
