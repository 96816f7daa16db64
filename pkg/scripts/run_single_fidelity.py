#!/usr/bin/env python3
"""Train baseline SAC controllers at one grid fidelity.

Example:
    python3 scripts/run_single_fidelity.py --n 16 --steps 200000 \
        --trials 4 --out runs/single_n16
"""

import argparse
import os
import sys
import tempfile

from kscontrol.cli import main as cli_main

CONFIG = """\
output_dir = "{out}"

[env]
N = {n}
hyperviscosity = {lam}
u_ref = "{u_ref}"

[run]
total_steps = {steps}
trials = {trials}
"""


def build_config(args):
    return CONFIG.format(
        out=os.path.abspath(args.out), n=args.n, lam=args.hyperviscosity,
        u_ref=args.u_ref, steps=args.steps, trials=args.trials,
    )


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=16, choices=(16, 32, 64, 128))
    ap.add_argument("--hyperviscosity", type=float, default=1.0)
    ap.add_argument("--u-ref", default="u1")
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--trials", type=int, default=4)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    with tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False) as fh:
        fh.write(build_config(args))
        cfg_path = fh.name
    sys.exit(cli_main(
        ["train", "--config", cfg_path, "--workers", str(args.workers)]
    ))
