#!/usr/bin/env python3
"""Compare every fine-tuning strategy from one pretrained source checkpoint
against a from-scratch baseline at the target fidelity.

Example:
    python3 scripts/run_strategy_comparison.py --out runs/strategies \
        --source-checkpoint runs/single_n16/trial0/checkpoints/ckpt_000050000.bin
"""

import argparse
import os
import sys
import tempfile

from kscontrol.cli import main as cli_main
from kscontrol.transfer import STRATEGIES

CONFIG = """\
output_dir = "{out}/{strategy}"

[env]
N = {n_high}

[run]
total_steps = {steps}
trials = {trials}

[transfer]
kind = "finetune"
strategy = "{strategy}"
{source_line}
"""


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-high", type=int, default=128)
    ap.add_argument("--source-checkpoint", required=True)
    ap.add_argument("--steps", type=int, default=250_000)
    ap.add_argument("--trials", type=int, default=4)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--strategies", nargs="+", default=list(STRATEGIES))
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    out = os.path.abspath(args.out)
    src = os.path.abspath(args.source_checkpoint)

    for strategy in args.strategies:
        source_line = (
            "" if strategy == "scratch"
            else f'source_checkpoint = "{src}"'
        )
        text = CONFIG.format(out=out, strategy=strategy, n_high=args.n_high,
                             steps=args.steps, trials=args.trials,
                             source_line=source_line)
        with tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False) as fh:
            fh.write(text)
            path = fh.name
        rc = cli_main(["transfer", "--config", path, "--workers", str(args.workers)])
        if rc != 0:
            sys.exit(rc)
    for strategy in args.strategies:
        if strategy == "scratch":
            continue
        rc = cli_main([
            "scores", "--curve", f"{out}/{strategy}",
            "--baseline", f"{out}/scratch",
            "--out", f"{out}/{strategy}/scores.json",
        ])
        if rc != 0:
            sys.exit(rc)
    print(f"strategy comparison complete under {out}")
