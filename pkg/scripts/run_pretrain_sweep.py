#!/usr/bin/env python3
"""Pretraining-duration sweep: train a low-fidelity source with checkpoints
at the sweep points, then fine-tune at high fidelity from each checkpoint
and score every run against a high-fidelity from-scratch baseline.

Example:
    python3 scripts/run_pretrain_sweep.py --out runs/sweep \
        --pretrain-steps 25000 50000 100000 200000
"""

import argparse
import os
import sys
import tempfile

from kscontrol.cli import main as cli_main

SOURCE = """\
output_dir = "{out}/source"

[env]
N = {n_low}

[run]
total_steps = {source_steps}
trials = 1
"""

BASELINE = """\
output_dir = "{out}/baseline"

[env]
N = {n_high}

[run]
total_steps = {target_steps}
trials = {trials}
"""

TRANSFER = """\
output_dir = "{out}/transfer_{steps}"

[env]
N = {n_high}

[run]
total_steps = {target_steps}
trials = {trials}

[transfer]
kind = "finetune"
strategy = "{strategy}"
source_run = "{out}/source"
pretrain_steps = {steps}
"""


def run(config_text, command, extra=()):
    with tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False) as fh:
        fh.write(config_text)
        path = fh.name
    rc = cli_main([command, "--config", path, *extra])
    if rc != 0:
        sys.exit(rc)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-low", type=int, default=16)
    ap.add_argument("--n-high", type=int, default=128)
    ap.add_argument("--pretrain-steps", type=int, nargs="+",
                    default=[25_000, 50_000, 100_000, 200_000])
    ap.add_argument("--target-steps", type=int, default=250_000)
    ap.add_argument("--strategy", default="finetune_all")
    ap.add_argument("--trials", type=int, default=4)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    out = os.path.abspath(args.out)
    w = ["--workers", str(args.workers)]

    marks = ",".join(str(s) for s in args.pretrain_steps)
    run(
        SOURCE.format(out=out, n_low=args.n_low,
                      source_steps=max(args.pretrain_steps)),
        "train", [*w, "--checkpoint-at", marks],
    )
    run(
        BASELINE.format(out=out, n_high=args.n_high,
                        target_steps=args.target_steps, trials=args.trials),
        "train", w,
    )
    for steps in args.pretrain_steps:
        run(
            TRANSFER.format(out=out, n_high=args.n_high, steps=steps,
                            target_steps=args.target_steps,
                            trials=args.trials, strategy=args.strategy),
            "transfer", w,
        )
        rc = cli_main([
            "scores", "--curve", f"{out}/transfer_{steps}",
            "--baseline", f"{out}/baseline",
            "--out", f"{out}/transfer_{steps}/scores.json",
        ])
        if rc != 0:
            sys.exit(rc)
    print(f"sweep complete; per-run scores under {out}/transfer_*/scores.json")
