"""Experiment orchestration: declarative TOML configs, seeded multi-trial
runs with a process pool, reference-state caching, and the CSV/JSON
artifacts the analysis layer consumes.

A run directory contains:
    manifest.json          config echo + hash + per-trial status
    curves.csv             trial,seed,env_step,episode_index,episode_return,wall_clock_s
    plan.json              (transfer runs) the realized transfer plan
    references.bin         cached equilibria + calibrated d0 for this fidelity
    trial<t>/checkpoints/  ckpt_<step>.bin files
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis, pnn, steady, transfer
from .env import KSEnv, calibrate_d0
from .errors import ConfigError, MissingCheckpoint
from .sac import Agent, SACConfig, evaluate, train
from .spectral import KSConfig

DEFAULT_TRIALS = 4
DEFAULT_SEED_BASE = 1000
CHECKPOINT_EVERY = 25_000


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunBlock:
    total_steps: int = 200_000
    trials: int = DEFAULT_TRIALS
    seeds: list = field(default_factory=list)
    checkpoint_every: int = CHECKPOINT_EVERY
    calibration_episodes: int = 8

    def resolved_seeds(self, seed_offset=0):
        seeds = self.seeds or [DEFAULT_SEED_BASE + i for i in range(self.trials)]
        seeds = [s + seed_offset for s in seeds]
        if len(seeds) != self.trials:
            raise ConfigError(
                f"run.seeds has {len(seeds)} entries for {self.trials} trials"
            )
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"run.seeds contains duplicates: {seeds}")
        return seeds


@dataclass
class TransferBlock:
    kind: str = "finetune"  # finetune | pnn
    strategy: str = "scratch"
    variant: str = "standard"
    source_checkpoint: str | None = None
    source_run: str | None = None
    pretrain_steps: int | None = None
    adapter_dim: int | None = None
    reset_buffer: bool = True
    reset_optimizer: bool = True


@dataclass
class ExperimentConfig:
    env: KSConfig
    u_ref: str
    agent: SACConfig
    run: RunBlock
    transfer: TransferBlock | None = None
    simulate: dict = field(default_factory=dict)
    output_dir: str | None = None
    raw_text: str = ""

    def content_hash(self):
        return hashlib.sha256(self.raw_text.encode()).hexdigest()


def _build(cls, block, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(block) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] block: {exc}") from exc


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
        data = tomllib.loads(raw.decode())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    env_block = dict(data.pop("env", {}))
    u_ref = env_block.pop("u_ref", "u1")
    if u_ref not in ("u0", "u1", "u2", "u3"):
        raise ConfigError(f"env.u_ref must be u0..u3, got {u_ref!r}")
    cfg = ExperimentConfig(
        env=_build(KSConfig, env_block, "env"),
        u_ref=u_ref,
        agent=_build(SACConfig, dict(data.pop("agent", {})), "agent"),
        run=_build(RunBlock, dict(data.pop("run", {})), "run"),
        simulate=dict(data.pop("simulate", {})),
        output_dir=data.pop("output_dir", None),
        raw_text=raw.decode(),
    )
    if "transfer" in data:
        tb = _build(TransferBlock, dict(data.pop("transfer")), "transfer")
        if tb.kind not in ("finetune", "pnn"):
            raise ConfigError(f"transfer.kind must be finetune or pnn, got {tb.kind!r}")
        if tb.kind == "finetune" and tb.strategy not in transfer.STRATEGIES:
            raise ConfigError(f"unknown transfer.strategy {tb.strategy!r}")
        if tb.kind == "pnn" and tb.variant not in pnn.VARIANTS:
            raise ConfigError(f"unknown transfer.variant {tb.variant!r}")
        cfg.transfer = tb
    if data:
        raise ConfigError(f"unknown top-level table(s): {sorted(data)}")
    return cfg


def resolve_source_checkpoint(tb):
    """Explicit path, or ckpt_<pretrain_steps> inside a source run directory."""
    if tb.source_checkpoint is not None:
        path = tb.source_checkpoint
    elif tb.source_run is not None and tb.pretrain_steps is not None:
        path = os.path.join(
            tb.source_run, "trial0", "checkpoints", f"ckpt_{tb.pretrain_steps:09d}.bin"
        )
    else:
        raise ConfigError(
            "transfer block needs source_checkpoint or source_run + pretrain_steps"
        )
    if not os.path.exists(path):
        raise MissingCheckpoint(f"source checkpoint not found: {path}")
    return path


# ---------------------------------------------------------------------------
# References and environments


def prepare_reference(cfg, out_dir, calibration_episodes=8):
    """Reference state at the run fidelity with a calibrated d0, cached."""
    os.makedirs(out_dir, exist_ok=True)
    cache = os.path.join(out_dir, "references.bin")
    ref = steady.get_reference(cfg.env, cfg.u_ref, cache_path=cache)
    if ref.d0_bar is None:
        ref = dataclasses.replace(
            ref, d0_bar=calibrate_d0(cfg.env, ref, n_episodes=calibration_episodes)
        )
        steady.save_reference_cache(cache, cfg.env, [ref])
    return ref


def build_env(ks_cfg, reference):
    return KSEnv(ks_cfg, reference)


# ---------------------------------------------------------------------------
# Trial execution (module level so the process pool can pickle it)


def _run_trial(args):
    (trial, seed, cfg, reference, out_dir, checkpoint_at) = args
    env = build_env(cfg.env, reference)
    ckpt_dir = os.path.join(out_dir, f"trial{trial}", "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    t0 = time.time()
    if cfg.transfer is None or (
        cfg.transfer.kind == "finetune" and cfg.transfer.strategy == transfer.SCRATCH
    ):
        agent = Agent.fresh(cfg.agent, seed, env.obs_dim, env.action_dim)
    elif cfg.transfer.kind == "pnn":
        agent = pnn.build_pnn(
            resolve_source_checkpoint(cfg.transfer),
            cfg.transfer.variant,
            seed,
            sac_cfg=cfg.agent,
            adapter_dim=cfg.transfer.adapter_dim,
            obs_dim=env.obs_dim,
            act_dim=env.action_dim,
        )
    else:
        plan = transfer.TransferPlan(
            cfg.transfer.strategy,
            resolve_source_checkpoint(cfg.transfer),
            reset_buffer=cfg.transfer.reset_buffer,
            reset_optimizer=cfg.transfer.reset_optimizer,
        )
        agent = transfer.build_target_agent(
            plan, seed, cfg.agent, env.obs_dim, env.action_dim
        )
    result = train(
        agent,
        env,
        cfg.run.total_steps,
        checkpoint_dir=ckpt_dir,
        checkpoint_every=cfg.run.checkpoint_every,
        checkpoint_at=checkpoint_at,
    )
    rows = [
        (trial, seed, r.env_step, r.episode_index, r.episode_return, r.wall_clock_s)
        for r in result.episodes
    ]
    return {
        "trial": trial,
        "seed": seed,
        "rows": rows,
        "checkpoints": {str(k): v for k, v in result.checkpoints.items()},
        "aborted": result.aborted,
        "error": result.error,
        "wall_clock_s": time.time() - t0,
    }


def _write_json_atomic(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_curves(path, all_rows):
    with open(path, "w") as fh:
        fh.write("trial,seed,env_step,episode_index,episode_return,wall_clock_s\n")
        for row in sorted(all_rows):
            t, s, step, ep, ret, wall = row
            fh.write(f"{t},{s},{step},{ep},{float(ret)!r},{float(wall)!r}\n")


def run_experiment(cfg, out_dir, workers=1, seed_offset=0, checkpoint_at=()):
    """Train `trials` independent agents; returns (manifest dict, any_aborted)."""
    os.makedirs(out_dir, exist_ok=True)
    seeds = cfg.run.resolved_seeds(seed_offset)
    reference = prepare_reference(
        cfg, out_dir, calibration_episodes=cfg.run.calibration_episodes
    )
    if cfg.transfer is not None:
        plan_path = os.path.join(out_dir, "plan.json")
        _write_json_atomic(
            plan_path,
            {
                "kind": cfg.transfer.kind,
                "strategy": cfg.transfer.strategy,
                "variant": cfg.transfer.variant,
                "source_checkpoint": resolve_source_checkpoint(cfg.transfer)
                if cfg.transfer.kind == "pnn"
                or cfg.transfer.strategy != transfer.SCRATCH
                else None,
                "pretrain_steps": cfg.transfer.pretrain_steps,
                "reset_buffer": cfg.transfer.reset_buffer,
                "reset_optimizer": cfg.transfer.reset_optimizer,
            },
        )
    t0 = time.time()
    jobs = [
        (trial, seed, cfg, reference, out_dir, tuple(checkpoint_at))
        for trial, seed in enumerate(seeds)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(job) for job in jobs]

    all_rows = [row for res in results for row in res["rows"]]
    curves_path = os.path.join(out_dir, "curves.csv")
    write_curves(curves_path, all_rows)
    manifest = {
        "config": cfg.raw_text,
        "config_sha256": cfg.content_hash(),
        "reference": {"name": reference.name, "d0_bar": reference.d0_bar},
        "seeds": seeds,
        "artifacts": {"curves": curves_path},
        "trials": [
            {
                "trial": r["trial"],
                "seed": r["seed"],
                "status": "aborted" if r["aborted"] else "ok",
                "error": r["error"],
                "episodes": len(r["rows"]),
                "checkpoints": r["checkpoints"],
                "wall_clock_s": r["wall_clock_s"],
            }
            for r in results
        ],
        "wall_clock_total_s": time.time() - t0,
    }
    _write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest, any(r["aborted"] for r in results)


# ---------------------------------------------------------------------------
# Simulation dumps


def simulate_trajectory(cfg, out_path, policy_checkpoint=None, duration=None,
                        seed=0):
    """One seeded episode; dumps the full field each control step as
    t,x_index,u rows (the initial post-burn-in snapshot included).

    Returns (n_snapshots, aborted_at) where aborted_at is the index of the
    last valid snapshot if the solver blew up, else None.
    """
    reference = steady.get_reference(cfg.env, cfg.u_ref)
    if reference.d0_bar is None:
        ref = dataclasses.replace(reference, d0_bar=1.0)  # reward unused here
    else:
        ref = reference
    env = KSEnv(cfg.env, ref)
    agent = None
    if policy_checkpoint is not None:
        if not os.path.exists(policy_checkpoint):
            raise MissingCheckpoint(f"policy checkpoint not found: {policy_checkpoint}")
        agent = Agent.load(policy_checkpoint)
    if duration is None:
        duration = cfg.env.episode_length
    dt_control = cfg.env.dt_solution * cfg.env.substeps_per_control

    obs = env.reset(seed=seed)
    snapshots = [env.field.grid_values.copy()]
    aborted_at = None
    from .errors import NonFinite

    for step in range(duration):
        if agent is None:
            action = np.zeros(env.action_dim)
        else:
            action, _ = agent.sample_action(obs, deterministic=True)
        try:
            obs, _, done = env.step(action)
        except NonFinite:
            aborted_at = step
            break
        snapshots.append(env.field.grid_values.copy())
        if done:
            break

    with open(out_path, "w") as fh:
        fh.write("t,x_index,u\n")
        for i, snap in enumerate(snapshots):
            t = i * dt_control
            for j, val in enumerate(snap):
                fh.write(f"{float(t)!r},{j},{float(val)!r}\n")
    return len(snapshots), aborted_at


def load_trajectory(path):
    """Reads a t,x_index,u dump back into (times, snapshot matrix)."""
    import csv

    by_t = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_t.setdefault(float(row["t"]), {})[int(row["x_index"])] = float(row["u"])
    times = sorted(by_t)
    N = len(by_t[times[0]])
    mat = np.array([[by_t[t][j] for j in range(N)] for t in times])
    return np.array(times), mat


# ---------------------------------------------------------------------------
# Adapter ablation


def ablate_adapters(agent, env, episodes=5, seeds=None):
    """Deterministic return with each lateral gain individually zeroed.

    Returns a list of (layer, source_column, return) plus the unablated
    baseline, restoring the gains afterwards.
    """
    actor = agent.actor
    if seeds is None:
        seeds = list(range(analysis.APS_SEED_BASE, analysis.APS_SEED_BASE + episodes))
    baseline, _ = evaluate(agent, env, len(seeds), seeds, deterministic=True)
    rows = []
    for i in range(2, len(actor.specs) + 1):
        for j in range(1, actor.n_columns):
            an, _, _ = actor.adapter_names(i, j)
            saved = actor.store[an]
            saved_flag = actor.store.is_trainable(an)
            actor.store[an] = np.zeros_like(np.asarray(saved))
            try:
                mean, _ = evaluate(agent, env, len(seeds), seeds, deterministic=True)
            finally:
                actor.store[an] = saved
                actor.store.set_trainable(an, saved_flag)
            rows.append((i, j, mean))
    return baseline, rows


def write_ablation_csv(path, baseline, rows):
    with open(path, "w") as fh:
        fh.write("layer,column,return,baseline_return\n")
        for i, j, mean in rows:
            fh.write(f"{i},{j},{mean!r},{baseline!r}\n")
