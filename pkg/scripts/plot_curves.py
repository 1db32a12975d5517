#!/usr/bin/env python3
"""Plot scratch-vs-transfer validation curves from an experiment output
directory (the curve_*.csv files written by run_transfer_experiment.py)."""
import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_curve(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ([int(r["epoch"]) for r in rows], [float(r["frame_F1"]) for r in rows])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("experiment_dir")
    parser.add_argument("--output", default=None, help="PNG path (default <dir>/curves.png)")
    parser.add_argument("--threshold", type=float, default=0.5)
    args = parser.parse_args()

    exp = Path(args.experiment_dir)
    targets = sorted({p.name.split("_")[2] for p in exp.glob("curve_scratch_*.csv")})
    if not targets:
        print(f"no curve_*.csv files in {exp}", file=sys.stderr)
        return 1

    fig, axes = plt.subplots(1, len(targets), figsize=(6 * len(targets), 4),
                             squeeze=False)
    for ax, target in zip(axes[0], targets):
        for arm, color in (("scratch", "tab:red"), ("transfer", "tab:blue")):
            for i, path in enumerate(sorted(exp.glob(f"curve_{arm}_{target}_s*.csv"))):
                epochs, f1 = read_curve(path)
                ax.plot(epochs, f1, color=color, alpha=0.6,
                        label=arm if i == 0 else None)
        ax.axhline(args.threshold, color="gray", linestyle=":", linewidth=1)
        ax.set_title(target)
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation frame F1")
        ax.set_ylim(0, 1)
        ax.legend()
    fig.tight_layout()
    out = args.output or exp / "curves.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
