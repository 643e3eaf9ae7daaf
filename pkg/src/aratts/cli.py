"""Command-line entry point: ``aratts <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or failed validation, 2 runtime
failure (including non-finite training aborts).
"""
import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from aratts import __version__, phonetizer
from aratts.audio import dsp
from aratts.audio.melio import write_mel
from aratts.taco import TacoConfig, Tacotron
from aratts.training import dataset
from aratts.training.checkpoint import Checkpoint, CheckpointError
from aratts.training.diagnostics import diagonality, write_alignment_pgm
from aratts.training.train import (
    TrainConfig,
    TrainingAborted,
    load_taco,
    load_vocoder,
    train_taco,
    train_vocoder,
    write_curves,
)
from aratts.training.transfer import ShapeConflict, transfer_init
from aratts.waveglow import VocoderConfig, WaveGlow

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
THREADS_ENV = "ARATTS_THREADS"
RUN_CONFIG = "run_config.json"

log = logging.getLogger("aratts")


class UsageError(ValueError):
    pass


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _emit_config(args, resolved, path):
    """Print the resolved configuration and persist it next to the outputs."""
    cfg = {"command": args.command, "version": __version__}
    cfg.update({k: v for k, v in vars(args).items() if k not in ("func", "command")})
    cfg.update(resolved)
    text = json.dumps(cfg, indent=1, sort_keys=True, default=str, ensure_ascii=False)
    print(text)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")


def _split_overrides(overrides, *classes):
    """Route flat ``{key: value}`` overrides to the dataclass that owns each key."""
    parts = [{} for _ in classes]
    names = [{f.name for f in dataclasses.fields(c)} for c in classes]
    for key, value in overrides.items():
        for part, owned in zip(parts, names):
            if key in owned:
                part[key] = value
                break
        else:
            raise UsageError(f"unknown config key {key!r}")
    return parts


def _load_overrides(path):
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


# ---------------------------------------------------------------------------
# subcommands


def cmd_phonetize(args):
    src = Path(args.input)
    lines = src.read_text(encoding="utf-8").splitlines() if src.stat().st_size else []
    out, errors = [], []
    for n, line in enumerate(lines, 1):
        try:
            out.append(" ".join(phonetizer.phonetize(line).symbols))
        except phonetizer.PhonetizerError as exc:
            errors.append(f"line {n}: {exc}")
    _emit_config(args, {"lines": len(lines), "failed": len(errors)}, f"{args.output}.config.json")
    for e in errors:
        print(e, file=sys.stderr)
    if errors and not args.lenient:
        return EXIT_INVALID
    Path(args.output).write_text("".join(s + "\n" for s in out), encoding="utf-8")
    if errors:
        print(f"skipped {len(errors)} of {len(lines)} lines", file=sys.stderr)
    return EXIT_OK


def cmd_preprocess(args):
    out_dir = Path(args.out_dir)
    _emit_config(args, {}, out_dir / RUN_CONFIG)
    res = dataset.ingest(args.manifest, args.wav_dir, out_dir, args.sample_rate, args.trim_db, args.threads)
    print(f"processed {len(res.records)} records, {len(res.failures)} failures -> {res.manifest_path}")
    for f in res.failures:
        print(f, file=sys.stderr)
    return EXIT_RUNTIME if not res.records else EXIT_OK


def _taco_setup(args):
    model_kw, train_kw = _split_overrides(_load_overrides(args.config), TacoConfig, TrainConfig)
    model_cfg = TacoConfig.desk(**model_kw) if args.preset == "desk" else TacoConfig(**model_kw)
    train_kw.setdefault("epochs", args.epochs)
    train_kw["seed"] = args.seed
    if args.max_steps is not None:
        train_kw["max_steps"] = args.max_steps
    return model_cfg, TrainConfig(**train_kw)


def cmd_train_taco(args):
    out = Path(args.out)
    model_cfg, train_cfg = _taco_setup(args)
    records = dataset.load_processed(args.manifest)
    if args.no_split or len(records) < dataset.MIN_RECORDS:
        train, val = records, []
    else:
        train, val = dataset.split(records, args.seed)
    _emit_config(args, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                        "n_train": len(train), "n_validation": len(val)}, out / RUN_CONFIG)
    model = Tacotron(model_cfg, seed=args.seed)
    if args.init_checkpoint:
        report = transfer_init(model, Checkpoint.load(args.init_checkpoint), phonetizer.SYMBOLS, seed=args.seed)
        print(report.summary())
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    res = train_taco(model, train, val, train_cfg, out_dir=out,
                     on_epoch=lambda e, c: c.save(ckpt_dir / f"epoch{e:04d}.atts"))
    res.checkpoint.save(out / "taco.atts")
    write_curves(out / "curves.csv", res.curves)
    print(f"{res.steps} steps -> {out / 'taco.atts'}")
    return EXIT_OK


def cmd_train_vocoder(args):
    out = Path(args.out)
    voc_kw, train_kw = _split_overrides(_load_overrides(args.config), VocoderConfig, TrainConfig)
    voc_cfg = VocoderConfig.full(**voc_kw) if args.preset == "full" else VocoderConfig(**voc_kw)
    train_kw.setdefault("epochs", args.epochs)
    train_kw["seed"] = args.seed
    if args.max_steps is not None:
        train_kw["max_steps"] = args.max_steps
    train_cfg = TrainConfig(**train_kw)
    records = [r for r in dataset.load_processed(args.manifest) if r.wav_path]
    _emit_config(args, {"model": voc_cfg.to_dict(), "train": train_cfg.to_dict(), "n_clips": len(records)},
                 out / RUN_CONFIG)
    model = WaveGlow(voc_cfg, seed=args.seed)
    if args.init_checkpoint:
        model.load_state_dict(Checkpoint.load(args.init_checkpoint).tensors)
    clips = [(dsp.load_wav(r.wav_path).samples, r.mel) for r in records]
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    res = train_vocoder(model, clips, train_cfg, out_dir=out, steps_per_epoch=args.steps_per_epoch,
                        on_epoch=lambda e, c: c.save(ckpt_dir / f"epoch{e:04d}.atts"))
    res.checkpoint.save(out / "vocoder.atts")
    write_curves(out / "curves.csv", res.curves)
    print(f"{res.steps} steps -> {out / 'vocoder.atts'}")
    return EXIT_OK


def cmd_synthesize(args):
    out = Path(args.out)
    stem = out.with_suffix("")
    _emit_config(args, {}, Path(f"{stem}.config.json"))
    ids = phonetizer.encode(args.text)
    taco = load_taco(args.taco)
    vocoder = load_vocoder(args.vocoder)
    # the spectrogram predictor has its own seed so that --seed only moves the vocoder noise
    result = taco.infer(ids, seed=args.taco_seed)
    if result.max_steps_reached:
        print("warning: stop token never fired; output truncated at max_steps", file=sys.stderr)
    clip = vocoder.synthesize(result.mel.T, sigma=args.sigma, seed=args.seed)
    dsp.write_wav(out, clip)
    write_alignment_pgm(f"{stem}.alignment.pgm", result.alignment)
    write_mel(Path(f"{stem}_mel.json"), dsp.MelSpectrogram(result.mel))
    print(f"{len(clip)} samples ({result.mel.shape[0]} frames), "
          f"alignment diagonality {diagonality(result.alignment):.3f} -> {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from aratts.autodiff import gradcheck

    _emit_config(args, {"tolerance": gradcheck.TOLERANCE, "step": gradcheck.STEP},
                 Path(args.out_dir) / "gradcheck_config.json")
    report = gradcheck.run(args.module, seed=args.seed)
    failed = []
    for name, err in report.items():
        ok = err < gradcheck.TOLERANCE
        print(f"{'ok  ' if ok else 'FAIL'} {name:32s} {err:.3e}")
        if not ok:
            failed.append(name)
    if failed:
        print("failing ops: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_toy_corpus(args):
    out = Path(args.out)
    _emit_config(args, {}, out / RUN_CONFIG)
    records = dataset.make_toy_corpus(args.n, args.seed)
    print(f"{len(records)} utterances -> {dataset.write_corpus(records, out)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="aratts", description="Arabic text-to-speech toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=_default_threads(),
                   help=f"worker and BLAS threads (default ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phonetize", help="transliterate diacritized text line by line")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--lenient", action="store_true", help="skip bad lines instead of failing")
    s.set_defaults(func=cmd_phonetize)

    s = sub.add_parser("preprocess", help="resample, trim and extract mel features")
    s.add_argument("--manifest", required=True)
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--sample-rate", type=int, default=dsp.SAMPLE_RATE)
    s.add_argument("--trim-db", type=float, default=dsp.TRIM_DB)
    s.set_defaults(func=cmd_preprocess)

    for name, func, preset, default_preset in (
        ("train-taco", cmd_train_taco, ("desk", "full"), "desk"),
        ("train-vocoder", cmd_train_vocoder, ("desk", "full"), "desk"),
    ):
        s = sub.add_parser(name, help=f"{name.split('-')[1]} training")
        s.add_argument("--manifest", required=True, help="processed manifest (manifest.jsonl)")
        s.add_argument("--config", help="JSON object of model/training overrides")
        s.add_argument("--init-checkpoint")
        s.add_argument("--epochs", type=int, default=1)
        s.add_argument("--max-steps", type=int)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--preset", choices=preset, default=default_preset)
        s.add_argument("--out", required=True)
        if name == "train-taco":
            s.add_argument("--no-split", action="store_true", help="train on every record")
        else:
            s.add_argument("--steps-per-epoch", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("synthesize", help="text to WAV")
    s.add_argument("--taco", required=True)
    s.add_argument("--vocoder", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--sigma", type=float, default=0.6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--taco-seed", type=int, default=0, help="seed for inference-time prenet dropout")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    s.add_argument("--module", choices=("all", "autodiff", "taco", "waveglow"), default="all")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("toy-corpus", help="write the synthetic alignment corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_toy_corpus)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, phonetizer.PhonetizerError, dataset.EmptyManifest, dataset.TooFewRecords,
            ShapeConflict, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.diagnostics_path:
            print(f"diagnostics: {exc.diagnostics_path}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, ArithmeticError, dsp.AudioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
