"""Command-line interface for the backscatter voice-link toolkit."""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .audio import read_wav, write_wav
from .corpus import build_corpus
from .demod import demodulate
from .metrics import MetricReport, llr, si_sdr, stoi
from .pipeline import (ConfigError, PipelineConfig, StageError, run_pipeline,
                       stage_feedback, stage_pretrain, stage_train_den,
                       stage_train_sep, _corpus_spec, _demod_cfg)
from .tag import ChannelParams, TagParams, apply_channel, read_iq, write_iq, \
    synthesize_backscatter_iq


def _load_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.from_file(args.config)
    elif args.preset == "desk":
        cfg = PipelineConfig.desk()
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, default: str = "out") -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_corpus(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "corpus")
    for split in ("train", "eval"):
        rows = build_corpus(_corpus_spec(cfg, split), out / split,
                            noise_snr_db=cfg.corpus.noise_snr_db)
        print(f"{split}: {len(rows)} files under {out / split}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    voice = read_wav(args.input)
    tag = TagParams.desk_default(cfg.rf.carrier_hz, cfg.rf.deviation_hz)
    iq = synthesize_backscatter_iq(voice, tag, cfg.rf.if_center_hz, cfg.rf.iq_rate_hz)
    ch = ChannelParams(snr_db=cfg.channel.snr_db,
                       attenuation_db=cfg.channel.attenuation_db,
                       cfo_hz=cfg.channel.cfo_hz,
                       cfo_drift_hz_per_s=cfg.channel.cfo_drift_hz_per_s,
                       seed=cfg.seed)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".iq")
    write_iq(out, apply_channel(iq, ch))
    print(f"wrote {out} ({len(iq)} IQ samples at {cfg.rf.iq_rate_hz:.0f} Hz)")
    return 0


def cmd_demod(args) -> int:
    cfg = _load_config(args)
    iq = read_iq(args.input)
    audio = demodulate(iq, _demod_cfg(cfg))
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".wav")
    write_wav(out, audio)
    print(f"wrote {out} ({len(audio)} samples at {audio.sample_rate_hz} Hz)")
    return 0


def _stage_cmd(stage_fn, needs):
    def run(args) -> int:
        cfg = _load_config(args)
        out = _out_dir(args)
        for dep in needs:
            if not (out / f".{dep}.done").exists():
                raise StageError(dep, RuntimeError(
                    f"required stage artifact missing under {out}; run it first"))
        stage_fn(cfg, out)
        return 0
    return run


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    summary = run_pipeline(cfg, out, progress=print)
    for k in sorted(summary):
        print(f"{k} = {summary[k]:.6f}")
    return 0


def cmd_eval(args) -> int:
    est_dir, ref_dir = Path(args.estimates), Path(args.references)
    est = {p.name: p for p in sorted(est_dir.glob("*.wav"))}
    ref = {p.name: p for p in sorted(ref_dir.glob("*.wav"))}
    missing = sorted(set(est) ^ set(ref))
    for name in missing:
        print(f"warning: unpaired file {name}", file=sys.stderr)
    common = sorted(set(est) & set(ref))
    if not common:
        warnings.warn("no matched estimate/reference pairs; report is empty")
    report = MetricReport()
    for name in common:
        e, r = read_wav(est[name]), read_wav(ref[name])
        n = min(len(e), len(r))
        es, rs = e.samples[:n], r.samples[:n]
        report.add(name, si_sdr(es, rs), llr(es, rs, r.sample_rate_hz),
                   stoi(es, rs, r.sample_rate_hz))
    out = Path(args.out) if args.out else Path("eval_report.csv")
    report.write_csv(out)
    print(f"wrote {out} ({len(common)} items, {len(missing)} unpaired)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voicelink",
        description="RF backscatter voice link: simulation, demodulation, "
                    "self-supervised separation/denoising and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (versioned schema)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory or file")
        p.add_argument("--preset", choices=["desk"], help="built-in config preset")

    p = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    common(p)
    p.set_defaults(fn=cmd_gen_corpus, tag="gen-corpus")

    p = sub.add_parser("simulate", help="voice WAV -> backscatter IQ file")
    common(p)
    p.add_argument("input", help="input voice WAV")
    p.set_defaults(fn=cmd_simulate, tag="simulate")

    p = sub.add_parser("demod", help="IQ file -> demodulated WAV")
    common(p)
    p.add_argument("input", help="input IQ file (with .hdr sidecar)")
    p.set_defaults(fn=cmd_demod, tag="demod")

    stage_cmds = [
        ("pretrain", stage_pretrain, ("corpus",), "supervised warm start"),
        ("train-sep", lambda c, o: stage_train_sep(c, o, 1), ("rfchain", "pretrain"),
         "self-supervised separation phase"),
        ("train-denoise", stage_train_den, ("corpus", "pretrain"),
         "noise-shuffle denoiser phase"),
        ("feedback", stage_feedback, ("train_sep_r1", "train_den"),
         "refresh the training pool"),
    ]
    for name, fn, needs, help_text in stage_cmds:
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.set_defaults(fn=_stage_cmd(fn, needs), tag=name)

    p = sub.add_parser("pipeline", help="run the full stage DAG")
    common(p)
    p.set_defaults(fn=cmd_pipeline, tag="pipeline")

    p = sub.add_parser("eval", help="score estimate WAVs against references")
    common(p)
    p.add_argument("estimates", help="directory of estimate WAVs")
    p.add_argument("references", help="directory of reference WAVs")
    p.set_defaults(fn=cmd_eval, tag="eval")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error [{args.tag}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
