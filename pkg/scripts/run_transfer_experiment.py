#!/usr/bin/env python3
"""Run the full transfer experiment: synthesize three single-timbre datasets,
pretrain on the piano+guitar union, then for each training timbre compare
from-scratch training against fine-tuning from the pretrained checkpoint,
and evaluate zero-shot transfer to the held-out organ timbre.

Writes comparison.json, results_table.csv, per-run learning curves and all
checkpoints under --out-dir.  Re-running with the same plan resumes: finished
stages are skipped.
"""
import argparse
import json
import statistics
import sys
import time

from amtk.experiments import ExperimentPlan, run_plan


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", help="output directory for all artifacts")
    parser.add_argument("--config", help="JSON plan file overriding the defaults")
    parser.add_argument("--seeds", type=int, nargs="+",
                        help="comparison seeds (default 0..4)")
    args = parser.parse_args()

    if args.config:
        plan = ExperimentPlan.from_file(args.config)
        plan = ExperimentPlan(**{**plan.__dict__, "out_dir": args.out_dir})
    else:
        plan = ExperimentPlan(out_dir=args.out_dir)
    if args.seeds:
        plan = ExperimentPlan(**{**plan.__dict__, "seeds": tuple(args.seeds)})

    start = time.monotonic()
    comparison = run_plan(plan)
    elapsed = time.monotonic() - start

    print(f"\ndone in {elapsed / 60:.1f} min; artifacts in {plan.out_dir}\n")
    for target, rows in comparison["targets"].items():
        scratch = [r["scratch_epochs"] for r in rows]
        transfer = [r["transfer_epochs"] for r in rows]
        print(f"{target}: epochs to frame F1 >= {plan.f1_threshold}")
        print(f"  scratch   {scratch}  (median {statistics.median(scratch)})")
        print(f"  transfer  {transfer}  (median {statistics.median(transfer)})")
    print("\nzero-shot frame F1 of the pretrained model:")
    for timbre, families in comparison["zero_shot"].items():
        print(f"  {timbre:<12} {families['frame']['f1']:.3f}")
    print(f"  (untrained   {comparison['zero_shot_untrained']['frame']['f1']:.3f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
