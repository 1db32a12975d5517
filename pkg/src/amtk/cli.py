"""Command-line interface.

Subcommands: synth, spectrogram, train, finetune, evaluate, decode, score,
plan.  Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import cache as cache_mod
from . import experiments, metrics, network
from .decoding import DecodeConfig, decode_frames
from .notes import parse_note_csv, parse_standard_midi, rasterize, serialize_note_csv
from .spectral import CqtParams, cqt, log_compress, stft
from .synth import SynthConfig, builtin_timbres, get_timbre, read_wav, render, write_wav
from .training import TrainConfig, train, transfer_init


class CliError(Exception):
    def __init__(self, message, exit_code=1):
        super().__init__(message)
        self.exit_code = exit_code


def _load_track(path: Path):
    if path.suffix.lower() in (".mid", ".midi"):
        return parse_standard_midi(path.read_bytes(), id=path.stem)
    return parse_note_csv(path.read_text(), id=path.stem)


def _emit(args, payload: dict, human: str):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def cmd_synth(args):
    track = _load_track(Path(args.labels))
    config = SynthConfig(
        get_timbre(args.timbre),
        sample_rate_hz=args.sample_rate,
        noise_floor_amplitude=args.noise,
        noise_seed=args.seed,
        peak_normalize=args.normalize,
    )
    buffer = render(track, config)
    write_wav(buffer, args.output)
    _emit(args, {"output": args.output, "samples": len(buffer.samples)},
          f"wrote {args.output} ({len(buffer.samples)} samples, {buffer.duration_sec:.2f} s)")


def cmd_spectrogram(args):
    audio = read_wav(args.wav)
    if args.kind == "cqt":
        params = CqtParams(f_min_hz=args.f_min, bins_per_octave=args.bins_per_octave,
                           n_bins=args.n_bins, hop_samples=args.hop)
        if args.cache_dir:
            spec = cache_mod.get_or_compute(
                args.cache_dir, Path(args.wav).read_bytes(), params.key_string(),
                lambda: cqt(audio, params))
        else:
            spec = cqt(audio, params)
    else:
        spec = stft(audio, args.window_len, args.hop)
    np.save(args.output, spec.matrix)
    _emit(args, {"output": args.output, "frames": spec.n_frames, "bins": spec.n_bins},
          f"wrote {args.output} ({spec.n_frames} x {spec.n_bins})")


def _plan_from_args(args) -> experiments.ExperimentPlan:
    if args.config:
        plan = experiments.ExperimentPlan.from_file(args.config)
        if args.out_dir:
            plan = replace(plan, out_dir=args.out_dir)
        return plan
    if not args.out_dir:
        raise CliError("need --out-dir or --config")
    return experiments.ExperimentPlan(out_dir=args.out_dir)


def _load_dataset(args):
    manifest_path = Path(args.dataset) / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"no manifest at {manifest_path}", exit_code=2)
    manifest = json.loads(manifest_path.read_text())
    return experiments.load_split(manifest, args.dataset, args.pitch_min, args.pitch_count)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        sequence_len_samples=args.sequence_len, batch_size=args.batch_size,
        max_epochs=args.epochs, validate_every_epochs=args.validate_every,
        learning_rate=args.lr, seed=args.seed,
    )


def _model_config(args) -> network.ModelConfig:
    return network.ModelConfig(
        input_bins=args.pitch_count, unet_levels=args.unet_levels,
        base_channels=args.base_channels, rnn_hidden=args.rnn_hidden,
        output_pitches=args.pitch_count,
    )


def cmd_train(args):
    splits = _load_dataset(args)
    config = _train_config(args)
    final, best, report = train(
        _model_config(args), splits["train"], splits["valid"], config,
        pitch_min=args.pitch_min, source_tag="scratch",
    )
    network.save_checkpoint(best, args.output)
    Path(args.output).with_suffix(".report.csv").write_text(report.to_csv())
    last = report.points[-1] if report.points else None
    _emit(args, {"checkpoint": args.output,
                 "frame_f1": last.frame.f1 if last else None},
          f"wrote {args.output}" + (f" (frame F1 {last.frame.f1:.3f})" if last else ""))


def cmd_finetune(args):
    splits = _load_dataset(args)
    source = network.load_checkpoint(args.checkpoint)
    config = _train_config(args)
    start = network.Checkpoint(source.config, transfer_init(source, source.config),
                               0, args.seed, "transfer")
    final, best, report = train(
        start, splits["train"], splits["valid"], config,
        pitch_min=args.pitch_min, source_tag="transfer",
    )
    network.save_checkpoint(best, args.output)
    Path(args.output).with_suffix(".report.csv").write_text(report.to_csv())
    last = report.points[-1] if report.points else None
    _emit(args, {"checkpoint": args.output,
                 "frame_f1": last.frame.f1 if last else None},
          f"wrote {args.output}" + (f" (frame F1 {last.frame.f1:.3f})" if last else ""))


def cmd_evaluate(args):
    splits = _load_dataset(args)
    ckpt = network.load_checkpoint(args.checkpoint)
    result = metrics.evaluate_model(ckpt, splits[args.split],
                                    pitch_min=args.pitch_min, aggregate=args.aggregate)
    if args.json:
        print(json.dumps({k: asdict(v) for k, v in result.aggregate.items()}, sort_keys=True))
    else:
        print(result.table(Path(args.dataset).name))


def cmd_decode(args):
    probs = np.load(args.probabilities)
    config = DecodeConfig(threshold=args.threshold,
                          min_duration_frames=args.min_duration,
                          gap_tolerance_frames=args.gap_tolerance)
    track = decode_frames(probs, args.frame_period, args.pitch_min, config)
    Path(args.output).write_text(serialize_note_csv(track))
    _emit(args, {"output": args.output, "notes": len(track)},
          f"wrote {args.output} ({len(track)} notes)")


def cmd_score(args):
    ref = _load_track(Path(args.ref))
    est = _load_track(Path(args.est))
    tol = metrics.MatchTolerances(onset_tol_sec=args.onset_tol)
    note = metrics.note_metrics(ref, est, tol, "onset")
    note_off = metrics.note_metrics(ref, est, tol, "onset+offset")
    ref_roll, _ = rasterize(ref, args.frame_period, args.pitch_min, args.pitch_count)
    est_roll, _ = rasterize(est, args.frame_period, args.pitch_min, args.pitch_count)
    frame = metrics.frame_metrics(ref_roll, est_roll)
    payload = {"frame": asdict(frame), "note": asdict(note),
               "note_with_offset": asdict(note_off)}
    _emit(args, payload,
          "\n".join(f"{name:<18} P={s.precision:.3f} R={s.recall:.3f} F1={s.f1:.3f}"
                    for name, s in (("frame", frame), ("note", note),
                                    ("note_with_offset", note_off))))


def cmd_plan(args):
    if args.action != "run":
        raise CliError(f"unknown plan action {args.action!r}")
    plan = _plan_from_args(args)
    comparison = experiments.run_plan(plan)
    if args.json:
        print(json.dumps(comparison, sort_keys=True))
    else:
        print(json.dumps(comparison, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amtk",
                                     description="automatic music transcription workbench")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="plan/config file (JSON)")
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--deterministic", action="store_true",
                        help="force serial, seeded execution")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render labels to a WAV")
    p.add_argument("labels")
    p.add_argument("output")
    p.add_argument("--timbre", default="piano-like",
                   choices=sorted(builtin_timbres()))
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("spectrogram", help="compute a spectrogram to .npy")
    p.add_argument("wav")
    p.add_argument("output")
    p.add_argument("--kind", choices=("cqt", "stft"), default="cqt")
    p.add_argument("--f-min", type=float, default=32.70)
    p.add_argument("--bins-per-octave", type=int, default=12)
    p.add_argument("--n-bins", type=int, default=88)
    p.add_argument("--hop", type=int, default=160)
    p.add_argument("--window-len", type=int, default=2048)
    p.set_defaults(func=cmd_spectrogram)

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help=f"{name} a model on a dataset directory")
        p.add_argument("dataset")
        if name == "finetune":
            p.add_argument("checkpoint")
        p.add_argument("output")
        p.add_argument("--pitch-min", type=int, default=48)
        p.add_argument("--pitch-count", type=int, default=25)
        p.add_argument("--unet-levels", type=int, default=2)
        p.add_argument("--base-channels", type=int, default=4)
        p.add_argument("--rnn-hidden", type=int, default=16)
        p.add_argument("--sequence-len", type=int, default=10240)
        p.add_argument("--batch-size", type=int, default=4)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--validate-every", type=int, default=10)
        p.add_argument("--lr", type=float, default=1e-3)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--pitch-min", type=int, default=48)
    p.add_argument("--pitch-count", type=int, default=25)
    p.add_argument("--aggregate", choices=("mean", "pooled"), default="mean")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decode", help="decode frame probabilities (.npy) to notes")
    p.add_argument("probabilities")
    p.add_argument("output")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-duration", type=int, default=2)
    p.add_argument("--gap-tolerance", type=int, default=0)
    p.add_argument("--frame-period", type=float, default=0.010)
    p.add_argument("--pitch-min", type=int, default=21)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="compare two note files (CSV or MIDI)")
    p.add_argument("ref")
    p.add_argument("est")
    p.add_argument("--onset-tol", type=float, default=0.050)
    p.add_argument("--frame-period", type=float, default=0.010)
    p.add_argument("--pitch-min", type=int, default=21)
    p.add_argument("--pitch-count", type=int, default=88)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plan", help="run an experiment plan")
    p.add_argument("action", choices=("run",))
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_plan)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
