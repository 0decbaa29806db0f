"""Self-supervised training procedures: mixture-of-mixtures separation
training, noise-shuffle denoise training, EMA main/target coupling, source
counting and the denoise-to-separation feedback cycle."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip
from .metrics import si_sdr
from .nn.losses import denoise_loss, sep_loss, t_neg_snr_loss
from .nn.models import Model, backward, forward
from .nn.optim import AdamState, adam_step


@dataclass
class MainTargetPair:
    """Main model (frozen, EMA-refreshed) and target model (optimized)."""

    main: Model
    target: Model
    lam: float = 0.99
    ema_every: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.main.cfg != self.target.cfg:
            raise ValueError("main and target must share one topology")


@dataclass
class TrainRun:
    """Config snapshot plus the per-step loss/metric log."""

    config: dict
    seed: int
    rows: list[dict] = field(default_factory=list)

    def log(self, step: int, phase: str, loss: float, **metrics) -> None:
        row = {"step": step, "phase": phase, "loss": f"{loss:.10g}"}
        row.update({k: f"{v:.10g}" for k, v in metrics.items()})
        self.rows.append(row)

    def write_csv(self, path) -> None:
        keys = ["step", "phase", "loss"]
        extra = sorted({k for r in self.rows for k in r} - set(keys))
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=keys + extra, restval="")
            w.writeheader()
            w.writerows(self.rows)


# ---------------------------------------------------------------- primitives

def make_mom(x1: AudioClip, x2: AudioClip) -> AudioClip:
    """Mixture of mixtures: sample-wise sum (shorter input zero-padded)."""
    if x1.sample_rate_hz != x2.sample_rate_hz:
        raise ValueError("sample rate mismatch")
    n = max(len(x1), len(x2))
    out = np.zeros(n)
    out[: len(x1)] += x1.samples
    out[: len(x2)] += x2.samples
    return AudioClip(out, x1.sample_rate_hz)


def remix_selected(s_a: np.ndarray, s_b: np.ndarray,
                   rng: np.random.Generator) -> tuple[np.ndarray, tuple[float, float]]:
    """Weighted recombination of one pseudo-source from each set with
    independent Uniform[0.5, 1.0] weights; the weights are returned so the
    loss can score against the weighted signals."""
    w_a, w_b = rng.uniform(0.5, 1.0, size=2)
    n = max(len(s_a), len(s_b))
    out = np.zeros(n)
    out[: len(s_a)] += w_a * s_a
    out[: len(s_b)] += w_b * s_b
    return out, (float(w_a), float(w_b))


def ema_update(main: dict[str, np.ndarray], target: dict[str, np.ndarray],
               lam: float) -> dict[str, np.ndarray]:
    """Element-wise convex combination lam*main + (1-lam)*target."""
    if set(main) != set(target):
        raise ValueError("parameter sets differ")
    out = {}
    for k, p in main.items():
        if p.shape != target[k].shape:
            raise ValueError(f"shape mismatch for {k!r}")
        out[k] = lam * p + (1 - lam) * target[k]
    return out


def sample_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random derangement (no fixed points) for n >= 2; identity for n = 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return np.array([0])
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            return p


def denoise_remix_batch(speech_ests: list[np.ndarray], noise_ests: list[np.ndarray],
                        p: np.ndarray) -> list[np.ndarray]:
    """Shuffled bootstrap mixtures: item i gets speech i plus noise p(i)."""
    if len(speech_ests) != len(noise_ests):
        raise ValueError("speech/noise list length mismatch")
    p = np.asarray(p)
    if sorted(p.tolist()) != list(range(len(speech_ests))):
        raise ValueError("p is not a permutation")
    return [speech_ests[i] + noise_ests[p[i]] for i in range(len(speech_ests))]


def count_sources(outputs: list[np.ndarray], mixture: np.ndarray,
                  threshold_db: float = -25.0) -> tuple[int, list[int]]:
    """Active heads: output energy within threshold_db of the mixture energy."""
    mix_e = float(np.dot(mixture, mixture))
    if mix_e == 0.0:
        return 0, []
    active = []
    for m, out in enumerate(outputs):
        e = float(np.dot(out, out))
        if e > 0.0 and 10 * np.log10(e / mix_e) > threshold_db:
            active.append(m)
    return len(active), active


def _crop(x: np.ndarray, crop_len: int | None, rng: np.random.Generator) -> np.ndarray:
    if crop_len is None or len(x) <= crop_len:
        return x
    start = int(rng.integers(0, len(x) - crop_len + 1))
    return x[start:start + crop_len]


def _forward_tensors(model: Model, x: np.ndarray):
    """Gradient-enabled forward returning the output graph tensors."""
    _, cache = forward(model, x, requires_grad=True)
    return cache.outputs, cache


def _merge(grads: dict | None, g: dict, scale: float) -> dict:
    if grads is None:
        return {k: scale * v for k, v in g.items()}
    for k in grads:
        grads[k] = grads[k] + scale * g[k]
    return grads


# ---------------------------------------------------------------- train steps

def sep_train_step(pair: MainTargetPair, batch: list[tuple[np.ndarray, np.ndarray]],
                   opt: AdamState, rng: np.random.Generator,
                   cap_db: float = 25.0, inactivity_mu: float = 1e-3) -> float:
    """One mixture-of-mixtures step.

    The main model separates x1 and x2 without gradient; one pseudo-source
    per clip is chosen uniformly, reweighted with Uniform[0.5, 1.0] gains
    and summed; the target model separates the remix and is optimized
    against the weighted selections with a permutation-minimized loss.
    """
    grads = None
    total = 0.0
    for x1, x2 in batch:
        outs1, _ = forward(pair.main, x1)
        outs2, _ = forward(pair.main, x2)
        s_a = outs1[int(rng.integers(len(outs1)))]
        s_b = outs2[int(rng.integers(len(outs2)))]
        remix, (w_a, w_b) = remix_selected(s_a, s_b, rng)
        t_outs, cache = _forward_tensors(pair.target, remix)
        loss = sep_loss(t_outs, [w_a * s_a, w_b * s_b], cap_db, inactivity_mu)
        grads = _merge(grads, backward(loss, cache), 1.0 / len(batch))
        total += float(loss.data)
    pair.target.params = adam_step(pair.target.params, grads, opt)
    mean_loss = total / len(batch)
    if not np.isfinite(mean_loss):
        raise RuntimeError("training diverged: non-finite loss")
    return mean_loss


def denoise_train_step(pair: MainTargetPair, batch: list[np.ndarray],
                       opt: AdamState, rng: np.random.Generator,
                       cap_db: float = 25.0) -> float:
    """One noise-shuffle step; EMA-refreshes the main model afterwards."""
    speech, noise = [], []
    for clip in batch:
        outs, _ = forward(pair.main, clip)
        speech.append(outs[0])
        noise.append(outs[1])
    p = sample_derangement(len(batch), rng)
    remixes = denoise_remix_batch(speech, noise, p)
    target_pairs, caches = [], []
    for s in remixes:
        t_outs, cache = _forward_tensors(pair.target, s)
        target_pairs.append((t_outs[0], t_outs[1]))
        caches.append(cache)
    refs = [(speech[i], noise[p[i]]) for i in range(len(batch))]
    loss = denoise_loss(target_pairs, refs, cap_db) * (1.0 / len(batch))
    loss.backward()
    grads = None
    for cache in caches:
        g = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
             for k, t in cache.param_tensors.items()}
        grads = _merge(grads, g, 1.0)
    pair.target.params = adam_step(pair.target.params, grads, opt)
    if pair.ema_every == 1:
        pair.main.params = ema_update(pair.main.params, pair.target.params, pair.lam)
    val = float(loss.data)
    if not np.isfinite(val):
        raise RuntimeError("training diverged: non-finite loss")
    return val


# ---------------------------------------------------------------- loops

def train_separator(pair: MainTargetPair, mixtures: list[np.ndarray], steps: int,
                    opt: AdamState, seed: int, batch_size: int = 4,
                    crop_len: int | None = 16000, ema_every: int = 50,
                    run: TrainRun | None = None, cap_db: float = 25.0,
                    inactivity_mu: float = 1e-3) -> list[float]:
    """Mixture-of-mixtures phase over a pool of demodulated mixtures."""
    if len(mixtures) < 2:
        raise ValueError("need at least 2 mixtures")
    rng = np.random.default_rng([seed, 0x5E9])
    losses = []
    for step in range(steps):
        batch = []
        for _ in range(batch_size):
            i, j = rng.choice(len(mixtures), size=2, replace=False)
            batch.append((_crop(mixtures[i], crop_len, rng),
                          _crop(mixtures[j], crop_len, rng)))
        loss = sep_train_step(pair, batch, opt, rng, cap_db, inactivity_mu)
        losses.append(loss)
        if run is not None:
            run.log(step, "sep", loss)
        if ema_every and (step + 1) % ema_every == 0:
            pair.main.params = ema_update(pair.main.params, pair.target.params, pair.lam)
    return losses


def train_denoiser(pair: MainTargetPair, noisy: list[np.ndarray], steps: int,
                   opt: AdamState, seed: int, batch_size: int = 2,
                   crop_len: int | None = 16000, run: TrainRun | None = None,
                   cap_db: float = 25.0, lr_halve_every: int | None = None) -> list[float]:
    """Noise-shuffle phase; the main model is EMA-refreshed every step."""
    if len(noisy) < batch_size:
        raise ValueError("pool smaller than one batch")
    rng = np.random.default_rng([seed, 0xDE9])
    base_lr = opt.lr
    losses = []
    for step in range(steps):
        if lr_halve_every:
            opt.lr = base_lr * 0.5 ** (step // lr_halve_every)
        idx = rng.choice(len(noisy), size=batch_size, replace=False)
        batch = [_crop(noisy[i], crop_len, rng) for i in idx]
        loss = denoise_train_step(pair, batch, opt, rng, cap_db)
        losses.append(loss)
        if run is not None:
            run.log(step, "den", loss)
    opt.lr = base_lr
    return losses


# ---------------------------------------------------------------- pretraining

def pretrain_separator(model: Model, mixtures: list[np.ndarray],
                       sources: list[tuple[np.ndarray, np.ndarray]], epochs: int,
                       seed: int, lr: float = 1e-3, batch_size: int = 8,
                       crop_len: int | None = 16000, cap_db: float = 25.0,
                       inactivity_mu: float = 1e-3,
                       run: TrainRun | None = None) -> Model:
    """Supervised permutation-invariant pretraining on labeled 2-source
    mixtures; epochs=0 returns the model untouched."""
    if epochs <= 0:
        return model
    rng = np.random.default_rng([seed, 0x9E7])
    opt = AdamState(lr=lr)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(mixtures))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            grads, total = None, 0.0
            for i in idx:
                mix = mixtures[i]
                s1, s2 = sources[i]
                lo = 0 if crop_len is None or len(mix) <= crop_len else \
                    int(rng.integers(0, len(mix) - crop_len + 1))
                hi = None if crop_len is None else lo + crop_len
                t_outs, cache = _forward_tensors(model, mix[lo:hi])
                loss = sep_loss(t_outs, [s1[lo:hi], s2[lo:hi]], cap_db, inactivity_mu)
                grads = _merge(grads, backward(loss, cache), 1.0 / len(idx))
                total += float(loss.data)
            model.params = adam_step(model.params, grads, opt)
            if run is not None:
                run.log(step, "pretrain-sep", total / len(idx))
            step += 1
    return model


def pretrain_denoiser(model: Model, noisy: list[np.ndarray],
                      pairs: list[tuple[np.ndarray, np.ndarray]], epochs: int,
                      seed: int, lr: float = 1e-3, batch_size: int = 2,
                      crop_len: int | None = 16000, cap_db: float = 25.0,
                      lr_halve_every_epochs: int = 6,
                      run: TrainRun | None = None) -> Model:
    """Supervised pretraining on (clean, noise) decompositions of noisy
    clips; the learning rate is halved every lr_halve_every_epochs."""
    if epochs <= 0:
        return model
    rng = np.random.default_rng([seed, 0x9E8])
    opt = AdamState(lr=lr)
    step = 0
    for epoch in range(epochs):
        opt.lr = lr * 0.5 ** (epoch // lr_halve_every_epochs)
        order = rng.permutation(len(noisy))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            idx = order[start:start + batch_size]
            grads, total = None, 0.0
            for i in idx:
                mix = noisy[i]
                clean, nz = pairs[i]
                lo = 0 if crop_len is None or len(mix) <= crop_len else \
                    int(rng.integers(0, len(mix) - crop_len + 1))
                hi = None if crop_len is None else lo + crop_len
                crops = [clean[lo:hi], nz[lo:hi]]
                # A crop may contain none of a sparse component (e.g. a gap
                # between noise bursts); skip its term — the consistency
                # projection ties the heads, so the other term suffices.
                terms = [(h, c) for h, c in enumerate(crops)
                         if float(np.dot(c, c)) > 0.0]
                if not terms:
                    continue
                t_outs, cache = _forward_tensors(model, mix[lo:hi])
                loss = None
                for h, c in terms:
                    term = t_neg_snr_loss(t_outs[h], c, cap_db)
                    loss = term if loss is None else loss + term
                grads = _merge(grads, backward(loss, cache), 1.0 / len(idx))
                total += float(loss.data)
            model.params = adam_step(model.params, grads, opt)
            if run is not None:
                run.log(step, "pretrain-den", total / len(idx))
            step += 1
    return model


# ---------------------------------------------------------------- feedback

def feedback_cycle(sep_pair: MainTargetPair, den_pair: MainTargetPair,
                   mixtures: list[np.ndarray], seed: int,
                   threshold_db: float = -25.0) -> tuple[list[np.ndarray], list[dict]]:
    """Separate, denoise and cross-remix the corpus into a refreshed pool.

    Each corpus mixture is split by the separation main model; active
    outputs are denoised by the denoising main model; the denoised speech
    streams are randomly re-paired across items with Uniform[0.5, 1.0]
    gains. The refreshed pool has the same size as the input corpus.
    """
    rng = np.random.default_rng([seed, 0xFB])
    streams = []
    for item, mix in enumerate(mixtures):
        outs, _ = forward(sep_pair.main, mix)
        _, active = count_sources(outs, mix, threshold_db)
        for m in active:
            den_outs, _ = forward(den_pair.main, outs[m])
            streams.append({"item": item, "head": m, "wave": den_outs[0]})
    if len(streams) < 2:
        raise RuntimeError("feedback cycle found too few active sources")
    pool, manifest = [], []
    for i in range(len(mixtures)):
        a, b = rng.choice(len(streams), size=2, replace=False)
        remix, (w_a, w_b) = remix_selected(streams[a]["wave"], streams[b]["wave"], rng)
        pool.append(remix)
        manifest.append({"index": i,
                         "stream_a": f"{streams[a]['item']}:{streams[a]['head']}",
                         "stream_b": f"{streams[b]['item']}:{streams[b]['head']}",
                         "w_a": f"{w_a:.10g}", "w_b": f"{w_b:.10g}"})
    return pool, manifest


def residual_noise_power(mixture: np.ndarray, true_sources: list[np.ndarray]) -> float:
    """Evaluation-only: power of the mixture component outside the span of
    the known clean sources (least-squares projection residual)."""
    n = min(len(mixture), *(len(s) for s in true_sources))
    a = np.stack([s[:n] for s in true_sources], axis=1)
    x = mixture[:n]
    coef, *_ = np.linalg.lstsq(a, x, rcond=None)
    resid = x - a @ coef
    return float(np.mean(resid ** 2))


def noise_leak_power(mixture: np.ndarray, sources: list[np.ndarray],
                     noises: list[np.ndarray]) -> float:
    """Evaluation-only: power of the known noise waveforms leaking into the
    mixture, relative to the mixture power.

    A joint least-squares fit over sources and noises attributes shared
    components correctly; only the noise part of the fit is counted, so
    (nonlinear) processing distortion is excluded — this isolates how much
    acoustic noise survives, which is what a denoising feedback cycle is
    supposed to drive down."""
    n = min(len(mixture), *(len(s) for s in sources + noises))
    a = np.stack([s[:n] for s in sources + noises], axis=1)
    x = mixture[:n]
    coef, *_ = np.linalg.lstsq(a, x, rcond=None)
    leak = a[:, len(sources):] @ coef[len(sources):]
    return float(np.mean(leak ** 2) / np.mean(x ** 2))


# ---------------------------------------------------------------- evaluation

def eval_separation(model: Model, mixtures: list[np.ndarray],
                    refs: list[list[np.ndarray]],
                    threshold_db: float = -25.0) -> list[float]:
    """Per-reference SI-SDR improvement of the best-matched active output
    over the unprocessed mixture."""
    improvements = []
    for mix, ref_list in zip(mixtures, refs):
        outs, _ = forward(model, mix)
        _, active = count_sources(outs, mix, threshold_db)
        candidates = [outs[m] for m in active] or outs
        for ref in ref_list:
            n = min(len(mix), len(ref))
            base = si_sdr(mix[:n], ref[:n])
            best = max(si_sdr(c[:n], ref[:n]) for c in candidates)
            improvements.append(best - base)
    return improvements


def eval_denoise(model: Model, noisy: list[np.ndarray],
                 cleans: list[np.ndarray]) -> list[float]:
    """SI-SDR improvement of the speech estimate over the noisy input."""
    improvements = []
    for x, c in zip(noisy, cleans):
        outs, _ = forward(model, x)
        n = min(len(x), len(c))
        improvements.append(si_sdr(outs[0][:n], c[:n]) - si_sdr(x[:n], c[:n]))
    return improvements
