#!/usr/bin/env python3
"""Progressive-network experiments: variant comparison at the target
fidelity, plus the regime-transfer (source lambda != 1) and
inconsistent-objective (source u_ref != target u_ref) setups, which are
pure config changes.  Emits APS and adapter-ablation artifacts for each
trained column.

Examples:
    python3 scripts/run_pnn_experiments.py --out runs/pnn \
        --source-checkpoint runs/single_n16/trial0/checkpoints/ckpt_010000000.bin
    python3 scripts/run_pnn_experiments.py --out runs/pnn_lam14 \
        --source-checkpoint runs/lam14/trial0/checkpoints/ckpt_010000000.bin \
        --variants standard
    python3 scripts/run_pnn_experiments.py --out runs/pnn_obj \
        --source-checkpoint runs/u0_source/trial0/checkpoints/ckpt_010000000.bin \
        --u-ref u1 --variants standard
"""

import argparse
import os
import sys
import tempfile

from kscontrol.cli import main as cli_main
from kscontrol.pnn import VARIANTS

CONFIG = """\
output_dir = "{out}/{variant}"

[env]
N = {n_high}
hyperviscosity = {lam}
u_ref = "{u_ref}"

[run]
total_steps = {steps}
trials = {trials}

[transfer]
kind = "pnn"
variant = "{variant}"
source_checkpoint = "{src}"
"""


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-high", type=int, default=128)
    ap.add_argument("--hyperviscosity", type=float, default=1.0,
                    help="target-environment lambda")
    ap.add_argument("--u-ref", default="u1", help="target-environment reference")
    ap.add_argument("--source-checkpoint", required=True)
    ap.add_argument("--steps", type=int, default=250_000)
    ap.add_argument("--trials", type=int, default=4)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    ap.add_argument("--aps-episodes", type=int, default=5)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    out = os.path.abspath(args.out)
    src = os.path.abspath(args.source_checkpoint)

    for variant in args.variants:
        text = CONFIG.format(out=out, variant=variant, n_high=args.n_high,
                             lam=args.hyperviscosity, u_ref=args.u_ref,
                             steps=args.steps, trials=args.trials, src=src)
        with tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False) as fh:
            fh.write(text)
            path = fh.name
        rc = cli_main(["transfer", "--config", path, "--workers", str(args.workers)])
        if rc != 0:
            sys.exit(rc)
        final = f"{out}/{variant}/trial0/checkpoints/ckpt_{args.steps:09d}.bin"
        for cmd in ("aps", "ablate"):
            rc = cli_main([
                cmd, "--config", path, "--checkpoint", final,
                "--out", f"{out}/{variant}",
                "--episodes", str(args.aps_episodes),
            ])
            if rc != 0:
                sys.exit(rc)
    print(f"PNN experiments complete under {out}")
