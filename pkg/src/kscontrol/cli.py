"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime blow-up during
simulation or training, 4 missing checkpoint/artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import analysis, harness, steady
from .env import calibrate_d0
from .errors import ConfigError, KSControlError, MissingCheckpoint, NonFinite
from .sac import Agent

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_MISSING = 4


def _add_common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="TOML experiment config")
    p.add_argument("--out", help="output directory or file (default: config output_dir)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed-offset", type=int, default=0)
    p.add_argument(
        "--checkpoint-at",
        type=lambda s: [int(x) for x in s.split(",") if x],
        default=[],
        help="comma-separated extra env steps at which to checkpoint",
    )


def build_parser():
    ap = argparse.ArgumentParser(prog="kscontrol")
    sub = ap.add_subparsers(dest="command", required=True)

    for name in ("train", "transfer"):
        p = sub.add_parser(name)
        _add_common(p)

    p = sub.add_parser("simulate")
    _add_common(p)
    p.add_argument("--policy", default=None, help="checkpoint path, omit for uncontrolled")
    p.add_argument("--duration", type=int, default=None, help="control steps to dump")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("scores")
    _add_common(p, config_required=False)
    p.add_argument("--curve", required=True, help="run directory or curves.csv")
    p.add_argument("--baseline", required=True, help="run directory or curves.csv")
    p.add_argument("--horizon", type=float, default=2.5e5)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--smooth", type=int, default=analysis.SMOOTH_WINDOW)

    p = sub.add_parser("aps")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=5)

    p = sub.add_parser("pod")
    _add_common(p, config_required=False)
    p.add_argument("--trajectory", required=True, help="t,x_index,u dump")
    p.add_argument("--subtract-reference", default=None, help="u0..u3 (needs --config)")

    p = sub.add_parser("ablate")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=5)

    p = sub.add_parser("steady-states")
    _add_common(p)

    p = sub.add_parser("calibrate")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=8)
    return ap


def _out_dir(args, cfg=None):
    out = args.out or (cfg.output_dir if cfg is not None else None)
    if out is None:
        raise ConfigError("no output location: pass --out or set output_dir")
    return out


def _curve_path(arg):
    path = os.path.join(arg, "curves.csv") if os.path.isdir(arg) else arg
    if not os.path.exists(path):
        raise MissingCheckpoint(f"curve file not found: {path}")
    return path


def _load_env_agent(args, cfg):
    if not os.path.exists(args.checkpoint):
        raise MissingCheckpoint(f"checkpoint not found: {args.checkpoint}")
    reference = harness.prepare_reference(cfg, _out_dir(args, cfg))
    env = harness.build_env(cfg.env, reference)
    return env, Agent.load(args.checkpoint)


def cmd_train(args):
    cfg = harness.load_config(args.config)
    out = _out_dir(args, cfg)
    _, aborted = harness.run_experiment(
        cfg, out, workers=args.workers, seed_offset=args.seed_offset,
        checkpoint_at=args.checkpoint_at,
    )
    return EXIT_RUNTIME if aborted else EXIT_OK


def cmd_transfer(args):
    cfg = harness.load_config(args.config)
    if cfg.transfer is None:
        raise ConfigError("transfer command needs a [transfer] block")
    return cmd_train_from(cfg, args)


def cmd_train_from(cfg, args):
    out = _out_dir(args, cfg)
    _, aborted = harness.run_experiment(
        cfg, out, workers=args.workers, seed_offset=args.seed_offset,
        checkpoint_at=args.checkpoint_at,
    )
    return EXIT_RUNTIME if aborted else EXIT_OK


def cmd_simulate(args):
    cfg = harness.load_config(args.config)
    out = _out_dir(args, cfg)
    if os.path.isdir(out) or not out.endswith(".csv"):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, "trajectory.csv")
    sim = cfg.simulate
    policy = args.policy if args.policy is not None else sim.get("policy")
    if policy in ("none", ""):
        policy = None
    duration = args.duration if args.duration is not None else sim.get("duration")
    seed = args.seed if args.seed != 0 else sim.get("seed", args.seed)
    n, aborted_at = harness.simulate_trajectory(
        cfg, out, policy_checkpoint=policy, duration=duration, seed=seed
    )
    print(f"wrote {n} snapshots to {out}")
    if aborted_at is not None:
        print(f"solver blew up; last valid snapshot index {aborted_at}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_scores(args):
    curve = analysis.LearningCurve.from_csv(_curve_path(args.curve)).smoothed(args.smooth)
    base = analysis.LearningCurve.from_csv(_curve_path(args.baseline)).smoothed(args.smooth)
    report = analysis.ScoreReport(
        transfer_score=analysis.transfer_score(curve, base, args.horizon),
        final_return_score=analysis.final_return_score(curve, args.horizon, args.window),
        metadata={
            "horizon": args.horizon,
            "baseline_final_return": analysis.final_return_score(
                base, args.horizon, args.window
            ),
        },
    )
    out = args.out or "scores.json"
    analysis.write_scores(out, report)
    print(f"transfer_score={report.transfer_score:.4f} "
          f"final_return_score={report.final_return_score:.4f} -> {out}")
    return EXIT_OK


def cmd_aps(args):
    cfg = harness.load_config(args.config)
    env, agent = _load_env_agent(args, cfg)
    amap = analysis.aps_map(agent, env, episodes=args.episodes)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "aps.csv")
    analysis.write_aps_csv(path, amap)
    print(f"wrote {path}; row sums {amap.row_sums()}")
    return EXIT_OK


def cmd_pod(args):
    if not os.path.exists(args.trajectory):
        raise MissingCheckpoint(f"trajectory dump not found: {args.trajectory}")
    _, snapshots = harness.load_trajectory(args.trajectory)
    reference = None
    if args.subtract_reference is not None:
        if args.config is None:
            raise ConfigError("--subtract-reference needs --config for the fidelity")
        cfg = harness.load_config(args.config)
        ref = steady.get_reference(cfg.env, args.subtract_reference)
        reference = ref.profile.grid_values
    result = analysis.pod(snapshots, reference)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    analysis.write_pod_csv(
        os.path.join(out, "pod_energies.csv"), os.path.join(out, "modes.csv"), result
    )
    print(f"wrote POD artifacts to {out}; "
          f"leading fraction {result.cumulative_fraction[0]:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = harness.load_config(args.config)
    env, agent = _load_env_agent(args, cfg)
    if agent.actor.kind != "pnn":
        raise ConfigError("ablate needs a progressive-network checkpoint")
    baseline, rows = harness.ablate_adapters(agent, env, episodes=args.episodes)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "ablate.csv")
    harness.write_ablation_csv(path, baseline, rows)
    print(f"wrote {path}; baseline return {baseline:.3f}")
    return EXIT_OK


def cmd_steady_states(args):
    cfg = harness.load_config(args.config)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    states = steady.find_steady_states(cfg.env)
    steady.save_reference_cache(os.path.join(out, "references.bin"), cfg.env, states)
    from .spectral import grid_norm

    for st in states:
        norm = grid_norm(st.profile.grid_values, cfg.env.dx)
        print(f"{st.name}: ||u|| = {norm:.6f}")
    return EXIT_OK


def cmd_calibrate(args):
    cfg = harness.load_config(args.config)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    ref = steady.get_reference(
        cfg.env, cfg.u_ref, cache_path=os.path.join(out, "references.bin")
    )
    d0 = calibrate_d0(cfg.env, ref, n_episodes=args.episodes)
    ref = dataclasses.replace(ref, d0_bar=d0)
    steady.save_reference_cache(os.path.join(out, "references.bin"), cfg.env, [ref])
    print(f"{cfg.u_ref}: d0_bar = {d0:.6f}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "transfer": cmd_transfer,
    "simulate": cmd_simulate,
    "scores": cmd_scores,
    "aps": cmd_aps,
    "pod": cmd_pod,
    "ablate": cmd_ablate,
    "steady-states": cmd_steady_states,
    "calibrate": cmd_calibrate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpoint as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NonFinite as exc:
        print(f"runtime blow-up: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KSControlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
