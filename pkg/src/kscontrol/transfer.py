"""Fine-tuning-based transfer: checkpoint surgery across fidelities.

Each strategy copies layers from a pretrained source agent, optionally
inserts freshly initialized hidden layers immediately before the output
layer (same width as the existing hidden layers), and sets per-layer
trainable flags.  The same surgery is applied to the actor and both critics
unless the strategy is actor-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .errors import DegenerateBaseline, IncompatibleShapes, UnknownStrategy
from .sac import Agent, Critic, MlpActor, evaluate

SCRATCH = "scratch"
FINE_TUNE_ALL = "finetune_all"
FINE_TUNE_LAST = "finetune_last"
FINE_TUNE_LAST_TWO = "finetune_last_two"
NEW_LAYER_PARTIAL = "new_layer_partial"
NEW_LAYER_ALL = "new_layer_all"
TWO_NEW_LAYERS_ALL = "two_new_layers_all"
THREE_NEW_LAYERS_ALL = "three_new_layers_all"
FINE_TUNE_ACTOR_ONLY = "finetune_actor_only"

STRATEGIES = (
    SCRATCH,
    FINE_TUNE_ALL,
    FINE_TUNE_LAST,
    FINE_TUNE_LAST_TWO,
    NEW_LAYER_PARTIAL,
    NEW_LAYER_ALL,
    TWO_NEW_LAYERS_ALL,
    THREE_NEW_LAYERS_ALL,
    FINE_TUNE_ACTOR_ONLY,
)

# strategy -> number of inserted hidden layers
N_NEW_LAYERS = {
    NEW_LAYER_PARTIAL: 1,
    NEW_LAYER_ALL: 1,
    TWO_NEW_LAYERS_ALL: 2,
    THREE_NEW_LAYERS_ALL: 3,
}


@dataclass
class TransferPlan:
    strategy: str
    source_checkpoint: str | None = None
    reset_buffer: bool = True
    reset_optimizer: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise UnknownStrategy(f"unknown strategy {self.strategy!r}")
        if self.strategy != SCRATCH and self.source_checkpoint is None:
            raise ValueError(f"strategy {self.strategy!r} needs a source checkpoint")


def trainable_layer_indices(strategy, n_hidden_source, n_new):
    """Which layer indices (1-based, output last) are trainable.

    Layer count after surgery is n_hidden_source + n_new + 1 (output).
    """
    total = n_hidden_source + n_new + 1
    if strategy in (SCRATCH, FINE_TUNE_ALL, FINE_TUNE_ACTOR_ONLY, NEW_LAYER_ALL,
                    TWO_NEW_LAYERS_ALL, THREE_NEW_LAYERS_ALL):
        return set(range(1, total + 1))
    if strategy == FINE_TUNE_LAST:
        return {total}
    if strategy == FINE_TUNE_LAST_TWO:
        return {total - 1, total}
    if strategy == NEW_LAYER_PARTIAL:
        return set(range(n_hidden_source + 1, total + 1))  # new hidden + output
    raise UnknownStrategy(strategy)


def _expand_specs(specs, n_new):
    """Insert n_new square Tanh layers immediately before the output layer."""
    hidden = specs[-1].in_dim
    new = [nets.LayerSpec(hidden, hidden) for _ in range(n_new)]
    return list(specs[:-1]) + new + [specs[-1]]


def _surgery(src_store, src_specs, strategy, n_new, rng, carry_optimizer):
    """Build the target store for one network (actor or critic)."""
    n_src = len(src_specs)
    specs = _expand_specs(src_specs, n_new)
    trainable = trainable_layer_indices(strategy, n_src - 1, n_new)
    store = ad.ParamStore()
    for i, spec in enumerate(specs, start=1):
        wn, bn = nets.layer_names(i)
        if i <= n_src - 1:
            src_i = i  # retained hidden layer
        elif i == len(specs):
            src_i = n_src  # retained output layer
        else:
            src_i = None  # freshly inserted
        if src_i is None:
            gain = nets.HIDDEN_GAIN if spec.activation == "tanh" else nets.OUTPUT_GAIN
            store.add(wn, ad.orthogonal(rng, (spec.in_dim, spec.out_dim), gain))
            store.add(bn, np.zeros(spec.out_dim))
        else:
            swn, sbn = nets.layer_names(src_i)
            if src_store[swn].shape != (spec.in_dim, spec.out_dim):
                raise IncompatibleShapes(
                    f"source layer {src_i} shape {src_store[swn].shape} != "
                    f"{(spec.in_dim, spec.out_dim)}"
                )
            store.add(wn, src_store[swn].copy())
            store.add(bn, src_store[sbn].copy())
            if carry_optimizer:
                for dst, src in ((wn, swn), (bn, sbn)):
                    de, se = store.entry(dst), src_store.entry(src)
                    de["m"], de["v"] = se["m"].copy(), se["v"].copy()
                    de["step"] = se["step"]
        store.set_trainable(wn, i in trainable)
        store.set_trainable(bn, i in trainable)
    return store, specs


def build_target_agent(plan, seed, sac_cfg=None, obs_dim=8, act_dim=4):
    """Construct the high-fidelity agent prescribed by the plan."""
    ss = np.random.SeedSequence(seed)
    r_init, r_run = [np.random.default_rng(s) for s in ss.spawn(2)]
    if plan.strategy == SCRATCH:
        if sac_cfg is None:
            raise ValueError("scratch strategy needs an explicit SAC config")
        return Agent.fresh(sac_cfg, seed, obs_dim, act_dim)

    source = Agent.load(plan.source_checkpoint)
    cfg = sac_cfg if sac_cfg is not None else source.cfg
    if not isinstance(source.actor, MlpActor):
        raise IncompatibleShapes("fine-tuning strategies need a plain MLP source actor")
    n_new = N_NEW_LAYERS.get(plan.strategy, 0)
    carry = not plan.reset_optimizer

    a_store, a_specs = _surgery(
        source.actor.store, source.actor.specs, plan.strategy, n_new, r_init, carry
    )
    actor = MlpActor(a_specs, a_store, act_dim)

    if plan.strategy == FINE_TUNE_ACTOR_ONLY:
        c1 = Critic.fresh(r_init, obs_dim, act_dim, cfg.critic_hidden, cfg.n_hidden)
        c2 = Critic.fresh(r_init, obs_dim, act_dim, cfg.critic_hidden, cfg.n_hidden)
    else:
        c1_store, c_specs = _surgery(
            source.critic1.store, source.critic1.specs, plan.strategy, n_new,
            r_init, carry,
        )
        c2_store, _ = _surgery(
            source.critic2.store, source.critic2.specs, plan.strategy, n_new,
            r_init, carry,
        )
        c1, c2 = Critic(c_specs, c1_store), Critic(c_specs, c2_store)

    log_alpha = ad.ParamStore()
    log_alpha.add("log_alpha", source.log_alpha["log_alpha"])
    return Agent(cfg, actor, c1, c2, log_alpha, r_run)


def run_transfer(plan, env, total_steps, seed, sac_cfg=None, **train_kwargs):
    """Build the agent per plan and train it on the target environment."""
    from . import sac as sac_mod

    agent = build_target_agent(plan, seed, sac_cfg)
    result = sac_mod.train(agent, env, total_steps, **train_kwargs)
    return agent, result


def retention_eval(agent, source_env, source_final_return, episodes=20, seeds=None):
    """Deterministic return in the source environment, relative to the source."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if source_final_return <= 0:
        raise DegenerateBaseline("source final return must be positive")
    if seeds is None:
        seeds = list(range(910_000, 910_000 + episodes))
    mean_return, _ = evaluate(agent, source_env, episodes, seeds, deterministic=True)
    return mean_return / source_final_return
