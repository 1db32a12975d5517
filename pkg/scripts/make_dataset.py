#!/usr/bin/env python3
"""Synthesize a labeled single-timbre dataset: random polyphonic note tracks,
rendered audio, cached spectrograms and a manifest with an 80/10/10 split.

Pass --labels-dir (optionally with --external-wav-dir) to build a dataset from
existing annotations instead of random ones; label files without a matching
WAV are skipped and reported.
"""
import argparse
import sys

from amtk.experiments import RandomTrackRecipe, generate_dataset
from amtk.spectral import CqtParams
from amtk.synth import builtin_timbres, midi_to_hz


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--timbre", default="piano-like", choices=sorted(builtin_timbres()))
    parser.add_argument("--n-tracks", type=int, default=12)
    parser.add_argument("--pitch-min", type=int, default=50)
    parser.add_argument("--pitch-count", type=int, default=12)
    parser.add_argument("--duration", type=float, nargs=2, default=(4.0, 5.0),
                        metavar=("LO", "HI"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--labels-dir", help="use existing label CSVs instead of random tracks")
    parser.add_argument("--external-wav-dir", help="use pre-rendered WAVs matched by basename")
    args = parser.parse_args()

    cqt_params = CqtParams(f_min_hz=midi_to_hz(args.pitch_min), n_bins=args.pitch_count)
    if args.labels_dir:
        manifest = generate_dataset(
            args.out_dir, args.timbre, labels_dir=args.labels_dir,
            external_wav_dir=args.external_wav_dir, cqt_params=cqt_params,
            seed=args.seed)
    else:
        recipe = RandomTrackRecipe(
            n_tracks=args.n_tracks,
            pitch_range=(args.pitch_min, args.pitch_min + args.pitch_count - 1),
            duration_range_sec=tuple(args.duration), seed=args.seed)
        manifest = generate_dataset(args.out_dir, args.timbre, recipe=recipe,
                                    cqt_params=cqt_params, seed=args.seed)

    split = manifest["split"]
    print(f"wrote {len(manifest['tracks'])} tracks to {args.out_dir} "
          f"(train {len(split['train'])} / valid {len(split['valid'])} / "
          f"test {len(split['test'])})")
    if manifest["skipped"]:
        print(f"skipped (no matching WAV): {', '.join(manifest['skipped'])}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
