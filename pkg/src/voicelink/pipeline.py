"""End-to-end orchestration: corpus -> RF chain -> training -> feedback ->
evaluation, with per-stage artifact caching and a versioned config schema."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .audio import AudioClip, read_wav, write_wav, peak_normalize
from .corpus import CorpusSpec, build_corpus
from .demod import DemodConfig, bandlimit_reference, demodulate
from .metrics import MetricReport, llr, si_sdr, stoi
from .nn.models import Model, NetConfig, load_checkpoint, save_checkpoint
from .nn.optim import AdamState
from .tag import ChannelParams, TagParams, apply_channel, synthesize_backscatter_iq
from . import train as T

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Malformed or unrecognized pipeline configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 200
    n_eval: int = 50
    duration_s: float = 5.0
    sample_rate_hz: int = 16000
    noise_snr_db: float = 10.0

    def __post_init__(self):
        if self.n_train < 2 or self.n_eval < 1:
            raise ConfigError("corpus sizes too small")


@dataclass(frozen=True)
class RFConfig:
    iq_rate_hz: float = 192000.0
    if_center_hz: float = 40000.0
    carrier_hz: float = 515e6
    deviation_hz: float = 4000.0


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float | None = 40.0
    attenuation_db: float = 0.0
    cfo_hz: float = 200.0
    cfo_drift_hz_per_s: float = 2.0


@dataclass(frozen=True)
class TrainConfig:
    n_heads: int = 4
    n_filters: int = 128
    filter_len: int = 256
    stride: int = 128
    hidden: int = 64
    n_blocks: int = 3
    block_kernel: int = 9
    # The denoiser favors a time-resolved encoder (short filters, small
    # stride) to catch transient noise; the separator favors a
    # frequency-resolved one (long filters, large stride).
    den_filter_len: int = 64
    den_stride: int = 32
    lr: float = 1e-3
    lam: float = 0.99
    lam_den: float = 0.99
    inactivity_mu: float = 1e-3
    cap_db: float = 25.0
    crop_len: int = 16000
    pretrain_epochs: int = 5
    pretrain_items: int = 200
    pretrain_batch: int = 8
    sep_steps: int = 400
    sep_steps_round2: int = 200
    sep_batch: int = 4
    sep_ema_every: int = 50
    den_steps: int = 300
    den_batch: int = 2

    def sep_net(self) -> NetConfig:
        return NetConfig(n_heads=self.n_heads, n_filters=self.n_filters,
                         filter_len=self.filter_len, stride=self.stride,
                         hidden=self.hidden, n_blocks=self.n_blocks,
                         block_kernel=self.block_kernel)

    def den_net(self) -> NetConfig:
        return NetConfig(n_heads=2, n_filters=self.n_filters,
                         filter_len=self.den_filter_len, stride=self.den_stride,
                         hidden=self.hidden, n_blocks=self.n_blocks,
                         block_kernel=self.block_kernel)


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    seed: int = 7
    corpus: CorpusConfig = CorpusConfig()
    rf: RFConfig = RFConfig()
    channel: ChannelConfig = ChannelConfig()
    train: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}; "
                              f"expected {CONFIG_VERSION}")

    @classmethod
    def desk(cls, seed: int = 7) -> "PipelineConfig":
        """Desk-scale preset: 16 kHz audio, 192 kHz IQ, 40 kHz IF, 5 s clips,
        200-item training corpus."""
        return cls(seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        parsed = {}
        for name, sub in (("corpus", CorpusConfig), ("rf", RFConfig),
                          ("channel", ChannelConfig), ("train", TrainConfig)):
            if name in d:
                parsed[name] = _build(sub, d.pop(name), name)
        top = _take(d, {"version", "seed"}, "top level")
        return cls(**top, **parsed)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config root must be an object")
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _take(d: dict, allowed: set, ctx: str) -> dict:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{ctx}: unknown config keys {sorted(unknown)}")
    return d


def _build(cls, d, ctx: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{ctx}: expected an object")
    names = {f.name for f in fields(cls)}
    try:
        return cls(**_take(dict(d), names, ctx))
    except TypeError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


# ---------------------------------------------------------------- artifacts

def _done(out: Path, stage: str) -> Path:
    return out / f".{stage}.done"


def _demod_cfg(cfg: PipelineConfig) -> DemodConfig:
    return DemodConfig(if_center_hz=cfg.rf.if_center_hz,
                       audio_rate_hz=cfg.corpus.sample_rate_hz)


def _corpus_spec(cfg: PipelineConfig, split: str) -> CorpusSpec:
    # Disjoint seeds keep train and eval clips decorrelated.
    offset = {"train": 0, "eval": 1}[split]
    n = cfg.corpus.n_train if split == "train" else cfg.corpus.n_eval
    return CorpusSpec(n_items=n, duration_s=cfg.corpus.duration_s,
                      sample_rate_hz=cfg.corpus.sample_rate_hz,
                      seed=2 * cfg.seed + offset)


def _read(path: Path) -> np.ndarray:
    return read_wav(path).samples


def _item_path(d: Path, i: int, suffix: str) -> Path:
    return d / f"item{i:04d}_{suffix}.wav"


def _n_items(cfg: PipelineConfig, split: str) -> int:
    return cfg.corpus.n_train if split == "train" else cfg.corpus.n_eval


def stage_corpus(cfg: PipelineConfig, out: Path) -> None:
    for split in ("train", "eval"):
        build_corpus(_corpus_spec(cfg, split), out / "corpus" / split,
                     noise_snr_db=cfg.corpus.noise_snr_db)
    _done(out, "corpus").touch()


def stage_rfchain(cfg: PipelineConfig, out: Path) -> None:
    """Simulate the tag + channel for every corpus mixture and demodulate;
    the demodulated WAVs are the stage artifact (IQ is not persisted)."""
    tag = TagParams.desk_default(cfg.rf.carrier_hz, cfg.rf.deviation_hz)
    dcfg = _demod_cfg(cfg)
    for split in ("train", "eval"):
        src = out / "corpus" / split
        dst = out / "rfchain" / split
        dst.mkdir(parents=True, exist_ok=True)
        for i in range(_n_items(cfg, split)):
            mix = read_wav(_item_path(src, i, "mix"))
            iq = synthesize_backscatter_iq(mix, tag, cfg.rf.if_center_hz,
                                           cfg.rf.iq_rate_hz)
            ch = ChannelParams(snr_db=cfg.channel.snr_db,
                               attenuation_db=cfg.channel.attenuation_db,
                               cfo_hz=cfg.channel.cfo_hz,
                               cfo_drift_hz_per_s=cfg.channel.cfo_drift_hz_per_s,
                               seed=cfg.seed * 1000003 + {"train": 0, "eval": 1}[split] * 100000 + i)
            audio = demodulate(apply_channel(iq, ch), dcfg)
            write_wav(dst / f"demod{i:04d}.wav", audio)
    _done(out, "rfchain").touch()


def _load_demod(cfg: PipelineConfig, out: Path, split: str) -> list[np.ndarray]:
    d = out / "rfchain" / split
    return [_read(d / f"demod{i:04d}.wav") for i in range(_n_items(cfg, split))]


def _load_components(cfg: PipelineConfig, out: Path, split: str, suffix: str) -> list[np.ndarray]:
    d = out / "corpus" / split
    return [_read(_item_path(d, i, suffix)) for i in range(_n_items(cfg, split))]


def stage_pretrain(cfg: PipelineConfig, out: Path) -> None:
    """Supervised warm start on clean synthetic items (labels available only
    at this stage): permutation-invariant separation and speech/noise split."""
    tc = cfg.train
    models_d = out / "models"
    models_d.mkdir(exist_ok=True)
    n = min(tc.pretrain_items, cfg.corpus.n_train)
    mixes = _load_components(cfg, out, "train", "mix")[:n]
    srcs_a = _load_components(cfg, out, "train", "a")[:n]
    srcs_b = _load_components(cfg, out, "train", "b")[:n]
    noises = _load_components(cfg, out, "train", "noise")[:n]

    run = T.TrainRun(config=cfg.to_dict(), seed=cfg.seed)
    sep = Model.init(tc.sep_net(), seed=cfg.seed * 7 + 1)
    sep = T.pretrain_separator(sep, mixes, list(zip(srcs_a, srcs_b)),
                               epochs=tc.pretrain_epochs, seed=cfg.seed,
                               lr=tc.lr, batch_size=tc.pretrain_batch,
                               crop_len=tc.crop_len, cap_db=tc.cap_db,
                               inactivity_mu=tc.inactivity_mu, run=run)
    save_checkpoint(sep, models_d / "sep_pretrain.ckpt")

    noisy = [a + nz for a, nz in zip(srcs_a, noises)]
    den = Model.init(tc.den_net(), seed=cfg.seed * 7 + 2)
    den = T.pretrain_denoiser(den, noisy, list(zip(srcs_a, noises)),
                              epochs=tc.pretrain_epochs, seed=cfg.seed,
                              lr=tc.lr, batch_size=tc.den_batch,
                              crop_len=tc.crop_len, cap_db=tc.cap_db, run=run)
    save_checkpoint(den, models_d / "den_pretrain.ckpt")
    run.write_csv(out / "reports" / "pretrain_log.csv")
    _done(out, "pretrain").touch()


def stage_train_sep(cfg: PipelineConfig, out: Path, round_no: int) -> None:
    """Self-supervised separation phase; round 2 trains on the refreshed
    feedback pool instead of the raw demodulated corpus."""
    tc = cfg.train
    models_d = out / "models"
    if round_no == 1:
        main = load_checkpoint(models_d / "sep_pretrain.ckpt")
        target = load_checkpoint(models_d / "sep_pretrain.ckpt")
        pool = _load_demod(cfg, out, "train")
        steps = tc.sep_steps
    else:
        main = load_checkpoint(models_d / "sep_main_r1.ckpt")
        target = load_checkpoint(models_d / "sep_target_r1.ckpt")
        d = out / "feedback"
        pool = [_read(d / f"pool{i:04d}.wav") for i in range(cfg.corpus.n_train)]
        steps = tc.sep_steps_round2
    pair = T.MainTargetPair(main=main, target=target, lam=tc.lam,
                            ema_every=tc.sep_ema_every)
    run = T.TrainRun(config=cfg.to_dict(), seed=cfg.seed)
    opt = AdamState(lr=tc.lr)
    T.train_separator(pair, pool, steps, opt, seed=cfg.seed * 31 + round_no,
                      batch_size=tc.sep_batch, crop_len=tc.crop_len,
                      ema_every=tc.sep_ema_every, run=run, cap_db=tc.cap_db,
                      inactivity_mu=tc.inactivity_mu)
    save_checkpoint(pair.main, models_d / f"sep_main_r{round_no}.ckpt")
    save_checkpoint(pair.target, models_d / f"sep_target_r{round_no}.ckpt")
    run.write_csv(out / "reports" / f"sep_r{round_no}_log.csv")
    _done(out, f"train_sep_r{round_no}").touch()


def stage_train_den(cfg: PipelineConfig, out: Path) -> None:
    """Noise-shuffle denoiser phase on single-speaker noisy clips."""
    tc = cfg.train
    models_d = out / "models"
    main = load_checkpoint(models_d / "den_pretrain.ckpt")
    target = load_checkpoint(models_d / "den_pretrain.ckpt")
    srcs_a = _load_components(cfg, out, "train", "a")
    noises = _load_components(cfg, out, "train", "noise")
    noisy = [a + nz for a, nz in zip(srcs_a, noises)]
    pair = T.MainTargetPair(main=main, target=target, lam=tc.lam_den, ema_every=1)
    run = T.TrainRun(config=cfg.to_dict(), seed=cfg.seed)
    opt = AdamState(lr=tc.lr)
    T.train_denoiser(pair, noisy, tc.den_steps, opt, seed=cfg.seed * 37,
                     batch_size=tc.den_batch, crop_len=tc.crop_len, run=run,
                     cap_db=tc.cap_db)
    save_checkpoint(pair.main, models_d / "den_main.ckpt")
    save_checkpoint(pair.target, models_d / "den_target.ckpt")
    run.write_csv(out / "reports" / "den_log.csv")
    _done(out, "train_den").touch()


def stage_feedback(cfg: PipelineConfig, out: Path) -> None:
    """Refresh the training pool: separate, denoise, cross-remix; record the
    relative residual (non-source) power before and after."""
    import csv as _csv

    models_d = out / "models"
    sep_pair = T.MainTargetPair(main=load_checkpoint(models_d / "sep_main_r1.ckpt"),
                                target=load_checkpoint(models_d / "sep_target_r1.ckpt"),
                                lam=cfg.train.lam, ema_every=cfg.train.sep_ema_every)
    den_pair = T.MainTargetPair(main=load_checkpoint(models_d / "den_main.ckpt"),
                                target=load_checkpoint(models_d / "den_target.ckpt"),
                                lam=cfg.train.lam_den, ema_every=1)
    mixtures = _load_demod(cfg, out, "train")
    pool, manifest = T.feedback_cycle(sep_pair, den_pair, mixtures, seed=cfg.seed)

    dcfg = _demod_cfg(cfg)

    def _bl(suffix: str) -> list[np.ndarray]:
        return [bandlimit_reference(AudioClip(x, cfg.corpus.sample_rate_hz), dcfg).samples
                for x in _load_components(cfg, out, "train", suffix)]

    refs_a, refs_b, refs_n = _bl("a"), _bl("b"), _bl("noise")

    # Residual-noise metric: relative power of the known noise waveforms
    # leaking into each training input, before (raw demodulated mixtures)
    # and after (refreshed pool) the separate/denoise/remix cycle.
    before = [T.noise_leak_power(mix, [refs_a[i], refs_b[i]], [refs_n[i]])
              for i, mix in enumerate(mixtures)]
    after = []
    for i, row in enumerate(manifest):
        items = [int(row["stream_a"].split(":")[0]), int(row["stream_b"].split(":")[0])]
        sources = [refs_a[j] for j in items] + [refs_b[j] for j in items]
        noises = [refs_n[j] for j in items]
        after.append(T.noise_leak_power(pool[i], sources, noises))

    d = out / "feedback"
    d.mkdir(exist_ok=True)
    rate = cfg.corpus.sample_rate_hz
    for i, x in enumerate(pool):
        write_wav(d / f"pool{i:04d}.wav", peak_normalize(AudioClip(x, rate), 0.9))
    with open(d / "manifest.csv", "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=["index", "stream_a", "stream_b", "w_a", "w_b"])
        w.writeheader()
        w.writerows(manifest)
    with open(out / "reports" / "feedback_residual.csv", "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["metric", "value"])
        w.writerow(["residual_noise_rel_before_median", f"{np.median(before):.6f}"])
        w.writerow(["residual_noise_rel_after_median", f"{np.median(after):.6f}"])
    _done(out, "feedback").touch()


def _eval_refs(cfg: PipelineConfig, out: Path) -> list[list[np.ndarray]]:
    dcfg = _demod_cfg(cfg)
    rate = cfg.corpus.sample_rate_hz
    refs_a = _load_components(cfg, out, "eval", "a")
    refs_b = _load_components(cfg, out, "eval", "b")
    return [[bandlimit_reference(AudioClip(a, rate), dcfg).samples,
             bandlimit_reference(AudioClip(b, rate), dcfg).samples]
            for a, b in zip(refs_a, refs_b)]


def stage_eval(cfg: PipelineConfig, out: Path) -> dict:
    """Score every model stage on the held-out set and write the summary."""
    import csv as _csv

    models_d = out / "models"
    dcfg = _demod_cfg(cfg)
    rate = cfg.corpus.sample_rate_hz
    eval_mixes = _load_demod(cfg, out, "eval")
    refs = _eval_refs(cfg, out)

    # Round-trip fidelity of the RF chain itself (trimmed edges).
    trim = rate // 10
    rt = []
    for i, mix in enumerate(eval_mixes):
        clean = _read(_item_path(out / "corpus" / "eval", i, "mix"))
        bl = bandlimit_reference(AudioClip(clean, rate), dcfg).samples
        n = min(len(mix), len(bl))
        rt.append(si_sdr(mix[trim:n - trim], bl[trim:n - trim]))

    summary = {"roundtrip_si_sdr_median_db": float(np.median(rt))}

    stages = {"sep_pretrain": "sep_pretrain.ckpt",
              "sep_round1": "sep_target_r1.ckpt",
              "sep_round2": "sep_target_r2.ckpt"}
    final_model = None
    for label, name in stages.items():
        path = models_d / name
        if not path.exists():
            continue
        model = load_checkpoint(path)
        imp = T.eval_separation(model, eval_mixes, refs)
        summary[f"{label}_si_sdri_median_db"] = float(np.median(imp))
        final_model = model

    den_path = models_d / "den_main.ckpt"
    if den_path.exists():
        den = load_checkpoint(den_path)
        srcs_a = _load_components(cfg, out, "eval", "a")
        noises = _load_components(cfg, out, "eval", "noise")
        noisy = [a + nz for a, nz in zip(srcs_a, noises)]
        imp = T.eval_denoise(den, noisy, srcs_a)
        summary["denoise_si_sdri_median_db"] = float(np.median(imp))

    fb = out / "reports" / "feedback_residual.csv"
    if fb.exists():
        with open(fb, newline="") as f:
            for row in _csv.DictReader(f):
                summary[row["metric"]] = float(row["value"])

    # Per-item report for the last available separator.
    if final_model is not None:
        report = MetricReport()
        for i, mix in enumerate(eval_mixes):
            outs, _ = T.forward(final_model, mix)
            _, active = T.count_sources(outs, mix)
            cands = [outs[m] for m in active] or outs
            ref = refs[i][0]
            n = min(len(mix), len(ref))
            best = max(cands, key=lambda c: si_sdr(c[:n], ref[:n]))
            report.add(f"eval{i:04d}", si_sdr(best[:n], ref[:n]),
                       llr(best[:n], ref[:n], rate), stoi(best[:n], ref[:n], rate))
        report.write_csv(out / "reports" / "eval_sep.csv")

    with open(out / "reports" / "summary.csv", "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["metric", "value"])
        for k in sorted(summary):
            w.writerow([k, f"{summary[k]:.6f}"])
    _done(out, "eval").touch()
    return summary


# ---------------------------------------------------------------- driver

STAGES = ("corpus", "rfchain", "pretrain", "train_sep_r1", "train_den",
          "feedback", "train_sep_r2", "eval")


def run_pipeline(cfg: PipelineConfig, out_dir, progress=None) -> dict:
    """Run all stages in order, skipping any whose artifacts are already
    present (restartability); returns the summary metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    cfg.save(out / "config.json")

    runners = {
        "corpus": lambda: stage_corpus(cfg, out),
        "rfchain": lambda: stage_rfchain(cfg, out),
        "pretrain": lambda: stage_pretrain(cfg, out),
        "train_sep_r1": lambda: stage_train_sep(cfg, out, 1),
        "train_den": lambda: stage_train_den(cfg, out),
        "feedback": lambda: stage_feedback(cfg, out),
        "train_sep_r2": lambda: stage_train_sep(cfg, out, 2),
        "eval": lambda: stage_eval(cfg, out),
    }
    summary = {}
    for stage in STAGES:
        if _done(out, stage).exists() and stage != "eval":
            if progress:
                progress(f"[{stage}] cached, skipping")
            continue
        if progress:
            progress(f"[{stage}] running")
        try:
            result = runners[stage]()
        except Exception as exc:
            raise StageError(stage, exc) from exc
        if stage == "eval":
            summary = result
    return summary
