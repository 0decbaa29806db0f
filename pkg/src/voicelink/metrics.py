"""Objective evaluation: SI-SDR, soft-capped negative SNR loss, LLR, STOI."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .audio import AudioClip, resample

SI_SDR_PERFECT = math.inf
SI_SDR_AGG_CAP_DB = 60.0


def _as_array(x) -> np.ndarray:
    if isinstance(x, AudioClip):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Returns +inf ("perfect") when est is exactly a scaled copy of ref; the
    sentinel is capped at 60 dB when aggregating.
    """
    e, r = _as_array(est), _as_array(ref)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch {e.shape} vs {r.shape}")
    r_energy = float(np.dot(r, r))
    if r_energy == 0.0:
        raise ValueError("reference is all-zero")
    alpha = float(np.dot(e, r)) / r_energy
    target = alpha * r
    resid = e - target
    resid_energy = float(np.dot(resid, resid))
    if resid_energy == 0.0:
        return SI_SDR_PERFECT
    return 10 * math.log10(float(np.dot(target, target)) / resid_energy)


def neg_snr_loss(est, ref, cap_db: float = 25.0) -> float:
    """Soft-thresholded negative SNR: -10*log10(|r|^2 / (|r-e|^2 + tau*|r|^2))
    with tau = 10^(-cap/10). Differentiable, bounded below by -cap_db."""
    e, r = _as_array(est), _as_array(ref)
    if e.shape != r.shape:
        raise ValueError(f"length mismatch {e.shape} vs {r.shape}")
    r_energy = float(np.dot(r, r))
    if r_energy == 0.0:
        raise ValueError("reference is all-zero")
    tau = 10 ** (-cap_db / 10)
    resid = r - e
    resid_energy = float(np.dot(resid, resid))
    if resid_energy == 0.0:
        return -cap_db  # closed-form value of the soft threshold at est = ref
    return 10 * math.log10(resid_energy / r_energy + tau)


def neg_si_snr_loss(est, ref, cap_db: float = 25.0) -> float:
    """Scale-invariant variant: project ref onto est's scale first."""
    e, r = _as_array(est), _as_array(ref)
    r_energy = float(np.dot(r, r))
    if r_energy == 0.0:
        raise ValueError("reference is all-zero")
    alpha = float(np.dot(e, r)) / r_energy
    return neg_snr_loss(e, alpha * r, cap_db)


# ---------------------------------------------------------------- LLR

def _levinson(r: np.ndarray, order: int) -> np.ndarray:
    """Levinson-Durbin recursion; returns LPC polynomial [1, a1..ap]."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / err
        a[1:i + 1] = a[1:i + 1] + k * a[i - 1::-1][:i]
        err *= 1 - k * k
        if err <= 0:
            break
    return a


def _autocorr(frame: np.ndarray, order: int) -> np.ndarray:
    n = len(frame)
    full = np.correlate(frame, frame, mode="full")
    return full[n - 1:n + order]


def llr(est, ref, sample_rate_hz: int = 16000, lpc_order: int = 10,
        frame_s: float = 0.025, hop_s: float = 0.010) -> float:
    """Log-likelihood-ratio spectral distortion from LPC coefficients.

    Per frame: log(a_e R_r a_e^T / a_r R_r a_r^T) with R_r the reference
    autocorrelation; aggregated as the mean of the lowest 95% of frames
    (trims occasional LPC outliers). Lower is better; 0 for identical input.
    """
    e, r = _as_array(est), _as_array(ref)
    if isinstance(est, AudioClip) and isinstance(ref, AudioClip):
        if est.sample_rate_hz != ref.sample_rate_hz:
            raise ValueError("sample rate mismatch")
        sample_rate_hz = ref.sample_rate_hz
    n = min(len(e), len(r))
    e, r = e[:n], r[:n]
    flen = int(round(frame_s * sample_rate_hz))
    hop = int(round(hop_s * sample_rate_hz))
    win = np.hanning(flen)
    energies = []
    frames = []
    for start in range(0, n - flen + 1, hop):
        fr = r[start:start + flen]
        energies.append(float(np.dot(fr, fr)))
        frames.append(start)
    if not frames:
        raise ValueError("clip shorter than one LLR frame")
    e_max = max(energies)
    if e_max == 0.0:
        raise ValueError("reference is silent")
    vals = []
    for start, energy in zip(frames, energies):
        if energy < 1e-6 * e_max:  # skip silent frames
            continue
        fr = r[start:start + flen] * win
        fe = e[start:start + flen] * win
        if not np.any(fe):
            continue
        rr = _autocorr(fr, lpc_order)
        re = _autocorr(fe, lpc_order)
        if rr[0] <= 0 or re[0] <= 0:
            continue
        a_r = _levinson(rr, lpc_order)
        a_e = _levinson(re, lpc_order)
        # Quadratic form a R a^T expressed through the autocorrelation sequence.
        def quad(a):
            acf = np.correlate(a, a, mode="full")[lpc_order:]
            return acf[0] * rr[0] + 2 * np.dot(acf[1:], rr[1:])
        num, den = quad(a_e), quad(a_r)
        if num <= 0 or den <= 0:
            continue
        vals.append(math.log(num / den))
    if not vals:
        raise ValueError("no voiced frames for LLR")
    vals = np.sort(np.asarray(vals))
    keep = max(1, int(math.floor(0.95 * len(vals))))
    return float(np.mean(vals[:keep]))


# ---------------------------------------------------------------- STOI

_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_NBANDS = 15
_STOI_LOW_HZ = 150.0
_STOI_SEG = 30          # 30 frames * 12.8 ms = 384 ms analysis window
_STOI_BETA_DB = -15.0
_STOI_DYN_DB = 40.0


def _third_octave_matrix() -> np.ndarray:
    freqs = np.fft.rfftfreq(_STOI_NFFT, 1 / _STOI_RATE)
    mat = np.zeros((_STOI_NBANDS, len(freqs)))
    for k in range(_STOI_NBANDS):
        lo = _STOI_LOW_HZ * 2 ** ((k - 0.5) / 3)
        hi = _STOI_LOW_HZ * 2 ** ((k + 0.5) / 3)
        mat[k] = (freqs >= lo) & (freqs < hi)
    return mat


def _stoi_frames(x: np.ndarray) -> np.ndarray:
    win = np.hanning(_STOI_FRAME)
    n_frames = (len(x) - _STOI_FRAME) // _STOI_HOP + 1
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n_frames)[:, None]
    return x[idx] * win


def stoi(est, ref, sample_rate_hz: int = 16000) -> float:
    """Short-time objective intelligibility in [0, 1].

    1/3-octave band envelopes (15 bands from 150 Hz), 384 ms sliding
    segments, clipped normalized correlation averaged over bands/segments.
    Internally operates at 10 kHz.
    """
    if isinstance(est, AudioClip):
        sample_rate_hz = est.sample_rate_hz
    e, r = _as_array(est), _as_array(ref)
    n = min(len(e), len(r))
    e, r = e[:n], r[:n]
    if sample_rate_hz != _STOI_RATE:
        e = resample(AudioClip(e, sample_rate_hz), _STOI_RATE).samples
        r = resample(AudioClip(r, sample_rate_hz), _STOI_RATE).samples
    if len(r) < _STOI_FRAME + _STOI_HOP * (_STOI_SEG - 1):
        raise ValueError("clip shorter than one STOI analysis window")

    fe, fr = _stoi_frames(e), _stoi_frames(r)
    # Drop frames more than 40 dB below the loudest reference frame.
    energy = np.sum(fr ** 2, axis=1)
    mask = energy > np.max(energy) * 10 ** (-_STOI_DYN_DB / 10)
    fe, fr = fe[mask], fr[mask]
    if len(fr) < _STOI_SEG:
        raise ValueError("too few active frames for STOI")

    band = _third_octave_matrix()
    spec_e = np.abs(np.fft.rfft(fe, _STOI_NFFT, axis=1)) ** 2
    spec_r = np.abs(np.fft.rfft(fr, _STOI_NFFT, axis=1)) ** 2
    env_e = np.sqrt(spec_e @ band.T)  # (frames, bands)
    env_r = np.sqrt(spec_r @ band.T)

    clip_gain = 10 ** (-_STOI_BETA_DB / 20)
    scores = []
    for m in range(_STOI_SEG - 1, len(env_r)):
        x_seg = env_r[m - _STOI_SEG + 1:m + 1]  # (SEG, bands), reference
        y_seg = env_e[m - _STOI_SEG + 1:m + 1]
        norm = np.linalg.norm(x_seg, axis=0) / (np.linalg.norm(y_seg, axis=0) + 1e-300)
        y_n = y_seg * norm
        y_c = np.minimum(y_n, x_seg * (1 + clip_gain))
        xm = x_seg - np.mean(x_seg, axis=0)
        ym = y_c - np.mean(y_c, axis=0)
        denom = np.linalg.norm(xm, axis=0) * np.linalg.norm(ym, axis=0)
        corr = np.sum(xm * ym, axis=0) / np.where(denom == 0, 1.0, denom)
        scores.append(np.where(denom == 0, 1.0, corr))
    return float(np.clip(np.mean(scores), 0.0, 1.0))


# ---------------------------------------------------------------- reports

@dataclass
class MetricReport:
    """Per-item metrics plus aggregates, serializable as CSV."""

    items: list[dict] = field(default_factory=list)

    def add(self, item_id: str, si_sdr_db: float, llr_val: float | None = None,
            stoi_val: float | None = None) -> None:
        if stoi_val is not None and not (0.0 <= stoi_val <= 1.0):
            raise ValueError(f"stoi out of range: {stoi_val}")
        if llr_val is not None and llr_val < -1e-9:
            raise ValueError(f"llr must be >= 0, got {llr_val}")
        self.items.append({"item": item_id, "si_sdr_db": si_sdr_db,
                           "llr": llr_val, "stoi": stoi_val})

    def _capped(self, key: str) -> list[float]:
        vals = [it[key] for it in self.items if it[key] is not None]
        return [min(v, SI_SDR_AGG_CAP_DB) if key == "si_sdr_db" else v for v in vals]

    def aggregates(self) -> dict:
        out = {}
        for key in ("si_sdr_db", "llr", "stoi"):
            vals = self._capped(key)
            if vals:
                out[f"{key}_median"] = float(np.median(vals))
                out[f"{key}_mean"] = float(np.mean(vals))
        return out

    def write_csv(self, path) -> None:
        agg = self.aggregates()
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["item", "si_sdr_db", "llr", "stoi"])
            for it in self.items:
                w.writerow([it["item"],
                            _fmt(it["si_sdr_db"]), _fmt(it["llr"]), _fmt(it["stoi"])])
            w.writerow(["median", _fmt(agg.get("si_sdr_db_median")),
                        _fmt(agg.get("llr_median")), _fmt(agg.get("stoi_median"))])
            w.writerow(["mean", _fmt(agg.get("si_sdr_db_mean")),
                        _fmt(agg.get("llr_mean")), _fmt(agg.get("stoi_mean"))])


def _fmt(v) -> str:
    if v is None:
        return ""
    if v == SI_SDR_PERFECT:
        return "perfect"
    return f"{v:.6f}"
