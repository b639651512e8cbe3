"""Command-line front end: analyze, prepare, train, synth, copysynth, eval."""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import features, net, vocoder, wavio
from ._backend import backend_name
from .config import ConfigError, RunConfig, load_config

PROG = "excitnet"


class CommandError(Exception):
    pass


def _common(p):
    p.add_argument("--config", metavar="PATH", help="key = value run configuration")
    p.add_argument("--seed", type=int, metavar="N", help="top-level seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, metavar="N",
                   help="worker processes for per-utterance work (results are order-fixed)")
    p.add_argument("--out", metavar="PATH", help="output file or directory")


def build_parser():
    parser = argparse.ArgumentParser(prog=PROG, description="LP-excitation neural vocoder toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("analyze", help="extract 79-dim acoustic features (one EXNF per WAV)")
    p.add_argument("inputs", nargs="+", metavar="WAV")
    p.add_argument("--resample", action="store_true", help="linearly resample to the configured rate")
    _common(p)

    p = sub.add_parser("prepare", help="build a training dataset from WAVs")
    p.add_argument("inputs", nargs="+", metavar="WAV")
    p.add_argument("--kind", choices=[k.value for k in vocoder.VocoderKind])
    p.add_argument("--resample", action="store_true")
    p.add_argument("--stats", metavar="PATH", help="also write the feature statistics (EXNS)")
    _common(p)

    p = sub.add_parser("train", help="train a vocoder on a prepared dataset")
    p.add_argument("dataset", metavar="DATASET")
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    p.add_argument("--quiet", action="store_true", help="do not print the per-step loss")
    _common(p)

    p = sub.add_parser("synth", help="generate a waveform from features")
    p.add_argument("checkpoint", metavar="CKPT")
    p.add_argument("features", metavar="EXNF")
    p.add_argument("--kind", choices=[k.value for k in vocoder.VocoderKind])
    p.add_argument("--mode", choices=["argmax", "sample"])
    _common(p)

    p = sub.add_parser("copysynth", help="analysis/synthesis through the LP + mu-law chain")
    p.add_argument("input", metavar="WAV")
    p.add_argument("--quantize", action="store_true", help="round-trip the residual through mu-law")
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--resample", action="store_true")
    _common(p)

    p = sub.add_parser("eval", help="objective metrics for reference/degraded WAV pairs")
    p.add_argument("pairs", nargs="+", metavar="REF DEG")
    p.add_argument("--label", default="")
    p.add_argument("--compare", action="append", default=[], metavar="REPORT",
                   help="earlier eval output (TSV) to tabulate against; label = file stem")
    _common(p)
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for name in ("kind", "steps", "mode"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    return cfg.replace(**changes) if changes else cfg


def _print_header(cfg, command):
    print(f"# excitnet {command} (backend {backend_name()})")
    for line in cfg.dump().splitlines():
        print("# " + line)
    print(f"# seed = {cfg.seed}", flush=True)


def _require_out(args):
    if not args.out:
        raise CommandError("--out is required")
    return Path(args.out)


def _map(fn, items, jobs):
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _analyze_one(job):
    path, cfg, resample = job
    sig = wavio.read_wav(path, cfg.sample_rate, resample)
    return features.analyze(sig, cfg.analysis_config())


def cmd_analyze(args, cfg):
    out = _require_out(args)
    inputs = [Path(p) for p in args.inputs]
    if len(inputs) > 1 or out.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / (p.stem + ".exnf") for p in inputs]
    else:
        targets = [out]
    seqs = _map(_analyze_one, [(p, cfg, args.resample) for p in inputs], args.jobs)
    for seq, dst in zip(seqs, targets):
        features.save_features(seq, dst)
        print(f"{dst}\t{seq.n_frames} frames")
    return 0


def cmd_prepare(args, cfg):
    out = _require_out(args)
    signals = [wavio.read_wav(p, cfg.sample_rate, args.resample) for p in args.inputs]
    ids = [Path(p).stem for p in args.inputs]
    ds = vocoder.prepare_dataset(signals, cfg.kind, config=cfg.analysis_config(), ids=ids)
    vocoder.save_dataset(ds, out)
    if args.stats:
        features.save_stats(ds.stats, args.stats)
    print(f"{out}\t{len(ds.examples)} utterances\t{ds.n_samples} samples\tscale {ds.scale:.6g}")
    return 0


def cmd_train(args, cfg):
    out = _require_out(args)
    ds = vocoder.load_dataset(args.dataset)
    if ds.kind.value != cfg.kind:
        raise CommandError(f"vocoder kind mismatch: dataset is {ds.kind.value}, config says {cfg.kind}")
    resume = net.load_checkpoint(args.resume) if args.resume else None

    def log(step, loss):
        if not args.quiet:
            print(f"step {step}\tloss {loss:.6f}", flush=True)

    ckpt, losses = vocoder.train_vocoder(ds, cfg.net_config(), cfg.train_config(), log=log,
                                         checkpoint_path=out, resume=resume)
    print(f"{out}\t{len(losses)} steps\tfinal loss {losses[-1]:.6f}" if losses else f"{out}\t0 steps")
    return 0


def cmd_synth(args, cfg):
    out = _require_out(args)
    ckpt = net.load_checkpoint(args.checkpoint)
    seq = features.load_features(args.features)
    sig = vocoder.synthesize(ckpt, seq, cfg.kind, mode=cfg.mode, seed=cfg.seed)
    wavio.write_wav(out, sig)
    print(f"{out}\t{sig.samples.shape[0]} samples")
    return 0


def cmd_copysynth(args, cfg):
    out = _require_out(args)
    sig = wavio.read_wav(args.input, cfg.sample_rate, args.resample)
    y = vocoder.copy_synthesis(sig, quantize=args.quantize, bits=args.bits,
                               config=cfg.analysis_config())
    wavio.write_wav(out, y)
    print(f"{out}\t{y.samples.shape[0]} samples")
    return 0


def _eval_one(job):
    ref, deg, sr = job
    r = wavio.read_wav(ref, sr)
    d = wavio.read_wav(deg, sr)
    rep = vocoder.MetricsReport()
    return rep.add(Path(deg).stem, r, d, sr)


def _load_report(path):
    path = Path(path)
    try:
        return vocoder.MetricsReport.from_tsv(path.read_text(errors="replace"), path.stem)
    except ValueError as exc:
        raise CommandError(f"{path}: {exc}") from None


def cmd_eval(args, cfg):
    if len(args.pairs) % 2:
        raise CommandError("eval takes REF DEG pairs")
    jobs = [(args.pairs[i], args.pairs[i + 1], cfg.sample_rate) for i in range(0, len(args.pairs), 2)]
    report = vocoder.MetricsReport(args.label, cfg.seed, _map(_eval_one, jobs, args.jobs))
    text = report.to_tsv()
    print(text)
    print(report.summary())
    if args.compare:
        others = [_load_report(p) for p in args.compare]
        report.label = report.label or "current"
        print(vocoder.compare_reports([*others, report]))
    if args.out:
        out = Path(args.out)
        tmp = out.with_name(out.name + ".tmp")
        tmp.write_text(text + "\n")
        tmp.replace(out)
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "synth": cmd_synth,
    "copysynth": cmd_copysynth,
    "eval": cmd_eval,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _print_header(cfg, args.command)
        return COMMANDS[args.command](args, cfg)
    except (CommandError, ConfigError, ValueError, OSError, FloatingPointError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
