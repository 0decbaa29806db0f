"""Waveform-masking separation/denoising models.

Structure: learned analysis basis (strided conv), a small stack of 1-D
convolution blocks with zero-preserving normalization, M non-negative mask
heads, transposed-conv synthesis, and an exact mixture-consistency
projection. An STFT (fixed Fourier-Hann basis) front end is available
behind the same interface.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import Tensor

_CKPT_MAGIC = b"VLNET1\x00"


class DivergenceError(RuntimeError):
    """Non-finite activations or gradients."""


@dataclass(frozen=True)
class NetConfig:
    """Topology of a masking network with n_heads output streams."""

    n_heads: int = 4
    n_filters: int = 64
    filter_len: int = 32
    stride: int = 16
    hidden: int = 64
    n_blocks: int = 3
    block_kernel: int = 3
    frontend: str = "learned"   # "learned" | "stft"
    stft_nfft: int = 512
    stft_hop: int = 128

    def __post_init__(self):
        if self.n_heads < 2:
            raise ValueError("n_heads must be >= 2")
        if self.frontend not in ("learned", "stft"):
            raise ValueError(f"unknown frontend {self.frontend!r}")

    @property
    def basis_size(self) -> int:
        if self.frontend == "stft":
            return 2 * (self.stft_nfft // 2 + 1)
        return self.n_filters

    @property
    def basis_len(self) -> int:
        return self.stft_nfft if self.frontend == "stft" else self.filter_len

    @property
    def basis_stride(self) -> int:
        return self.stft_hop if self.frontend == "stft" else self.stride


def _stft_bases(cfg: NetConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed Fourier-Hann analysis atoms and an approximate dual for synthesis."""
    n, hop = cfg.stft_nfft, cfg.stft_hop
    win = np.hanning(n)
    freqs = np.arange(n // 2 + 1)
    t = np.arange(n)
    cos = np.cos(2 * np.pi * freqs[:, None] * t[None, :] / n) * win
    sin = -np.sin(2 * np.pi * freqs[:, None] * t[None, :] / n) * win
    analysis = np.concatenate([cos, sin], axis=0)  # (2*(n/2+1), n)
    # Window-squared overlap normalizer (constant in the COLA interior).
    cola = np.sum(win ** 2) / hop
    synthesis = analysis * (2.0 / (n * cola))
    return analysis, synthesis


def init_params(cfg: NetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform initialization.

    Encoder and decoder have no bias so an all-zero input maps exactly to
    all-zero outputs; block convolutions carry biases.
    """
    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    p: dict[str, np.ndarray] = {}
    if cfg.frontend == "learned":
        p["enc_w"] = uniform((cfg.n_filters, 1, cfg.filter_len), cfg.filter_len)
        p["dec_w"] = uniform((cfg.n_filters, 1, cfg.filter_len), cfg.n_filters)
    c = cfg.basis_size
    for b in range(cfg.n_blocks):
        cin = c if b == 0 else cfg.hidden
        p[f"blk{b}_w"] = uniform((cfg.hidden, cin, cfg.block_kernel), cin * cfg.block_kernel)
        p[f"blk{b}_b"] = np.zeros(cfg.hidden)
        p[f"blk{b}_g"] = np.ones(cfg.hidden)
    p["head_w"] = uniform((cfg.n_heads * c, cfg.hidden, 1), cfg.hidden)
    p["head_b"] = np.zeros(cfg.n_heads * c)
    return p


@dataclass
class Model:
    """Parameter set plus topology; n_heads=2 with named (speech, noise)
    outputs serves as the denoiser."""

    cfg: NetConfig
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, cfg: NetConfig, seed: int) -> "Model":
        return cls(cfg, init_params(cfg, np.random.default_rng(seed)))

    def copy(self) -> "Model":
        return Model(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


@dataclass
class ForwardCache:
    """Holds the autodiff graph of one forward pass for backward()."""

    outputs: list[Tensor]
    param_tensors: dict[str, Tensor]
    loss: Tensor | None = None


def mixture_consistency_projection(outputs: list[np.ndarray], mixture: np.ndarray) -> list[np.ndarray]:
    """out'_m = out_m + (mixture - sum(out)) / M (numpy version)."""
    total = np.sum(outputs, axis=0)
    corr = (mixture - total) / len(outputs)
    return [o + corr for o in outputs]


def _forward_graph(cfg: NetConfig, pt: dict[str, Tensor], x: np.ndarray,
                   fixed_bases: tuple[np.ndarray, np.ndarray] | None) -> list[Tensor]:
    """Build the forward graph for waveform x (T,); returns n_heads output
    Tensors of length T, mixture-consistent by construction."""
    t_len = len(x)
    stride, klen = cfg.basis_stride, cfg.basis_len
    # Right-pad so the analysis frames tile the signal exactly.
    n_frames = max(1, int(np.ceil((t_len - klen) / stride)) + 1) if t_len >= klen \
        else 1
    t_pad = (n_frames - 1) * stride + klen
    xp = np.zeros(t_pad)
    xp[:t_len] = x
    xin = Tensor(xp.reshape(1, -1))

    if cfg.frontend == "learned":
        enc_w, dec_w = pt["enc_w"], pt["dec_w"]
    else:
        ana, syn = fixed_bases
        enc_w = Tensor(ana[:, None, :])
        dec_w = Tensor(syn[:, None, :])

    feats = xin.conv1d(enc_w, stride=stride)          # (C, F)
    h = feats
    for b in range(cfg.n_blocks):
        h = h.conv1d(pt[f"blk{b}_w"], pt[f"blk{b}_b"], stride=1,
                     padding=cfg.block_kernel // 2)
        # Zero-preserving normalization: scale by the global RMS, per-channel gain.
        ms = (h * h).mean()
        h = h * (pt[f"blk{b}_g"].reshape(-1, 1) / (ms + 1e-8).sqrt())
        h = h.tanh()
    masks = h.conv1d(pt["head_w"], pt["head_b"], stride=1).softplus()  # (M*C, F)

    c = cfg.basis_size
    outs = []
    for m in range(cfg.n_heads):
        masked = masks.slice(slice(m * c, (m + 1) * c)) * feats
        wave = masked.conv1d_transpose(dec_w, stride=stride)  # (1, t_pad')
        outs.append(wave.slice((0, slice(0, t_len))))
    # Exact mixture-consistency projection in the graph.
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    corr = (Tensor(x) - total) * (1.0 / cfg.n_heads)
    return [o + corr for o in outs]


def forward(model: Model, x: np.ndarray, requires_grad: bool = False,
            check_consistency: bool = True) -> tuple[list[np.ndarray], ForwardCache]:
    """Run the model on waveform x (T,); returns (outputs, cache).

    Outputs sum to x within floating-point rounding; violation of the
    1e-6 relative bound or non-finite activations raise DivergenceError.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D waveform")
    pt = {k: Tensor(v, requires_grad=requires_grad) for k, v in model.params.items()}
    fixed = _stft_bases(model.cfg) if model.cfg.frontend == "stft" else None
    outs = _forward_graph(model.cfg, pt, x, fixed)
    arrays = [o.data.reshape(-1) for o in outs]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise DivergenceError("non-finite activations in forward pass")
    if check_consistency:
        total = np.sum(arrays, axis=0)
        scale = max(float(np.max(np.abs(x))), 1e-30)
        if np.max(np.abs(total - x)) > 1e-6 * scale:
            raise DivergenceError("mixture-consistency violated beyond 1e-6")
    return arrays, ForwardCache(outputs=outs, param_tensors=pt)


def backward(loss: Tensor, cache: ForwardCache) -> dict[str, np.ndarray]:
    """Backprop the scalar loss; returns gradients for all parameters."""
    loss.backward()
    grads = {}
    for name, t in cache.param_tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        grads[name] = np.asarray(g, dtype=np.float64).reshape(t.data.shape)
    return grads


def forward_separate(model: Model, mixture) -> tuple[list[np.ndarray], ForwardCache]:
    """Separator view: M output waveforms."""
    x = mixture.samples if hasattr(mixture, "samples") else mixture
    return forward(model, x)


def forward_denoise(model: Model, clip) -> tuple[tuple[np.ndarray, np.ndarray], ForwardCache]:
    """Denoiser view: (speech, noise) pair; requires a 2-head model."""
    if model.cfg.n_heads != 2:
        raise ValueError("denoiser must have exactly 2 heads")
    x = clip.samples if hasattr(clip, "samples") else clip
    outs, cache = forward(model, x)
    return (outs[0], outs[1]), cache


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: Model, path) -> None:
    """Versioned binary: magic, JSON topology, float32 LE blob, CRC32."""
    names = sorted(model.params)
    header = {
        "config": asdict(model.cfg),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(model.params[n].astype("<f4").tobytes() for n in names)
    crc = zlib.crc32(hdr + blob)
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(len(hdr).to_bytes(8, "little"))
        f.write(hdr)
        f.write(blob)
        f.write(crc.to_bytes(4, "little"))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a voicelink checkpoint")
    off = len(_CKPT_MAGIC)
    hlen = int.from_bytes(raw[off:off + 8], "little")
    off += 8
    hdr = json.loads(raw[off:off + hlen])
    blob_start = off + hlen
    crc_stored = int.from_bytes(raw[-4:], "little")
    if zlib.crc32(raw[off:off + hlen] + raw[blob_start:-4]) != crc_stored:
        raise ValueError(f"{path}: checksum mismatch")
    cfg = NetConfig(**hdr["config"])
    params = {}
    pos = blob_start
    for entry in hdr["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos)
        params[entry["name"]] = arr.astype(np.float64).reshape(shape)
        pos += 4 * count
    return Model(cfg, params)
