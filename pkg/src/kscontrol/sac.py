"""Soft Actor-Critic on the custom autodiff stack.

Tanh-squashed Gaussian actor, twin critics with soft-updated targets,
automatic entropy temperature, and the collection cadence used throughout
the experiments: one burst of `gradient_steps` updates every `train_freq`
environment steps, ordered critic -> actor -> alpha -> soft update.

Rollout-path forwards use the plain numpy twins of the tape ops; the tape
is only built inside update steps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import io as kio
from . import nets
from .errors import NonFinite


@dataclass
class SACConfig:
    gamma: float = 0.97
    tau: float = 0.005
    buffer_capacity: int = 100_000
    batch_size: int = 256
    train_freq: int = 100
    gradient_steps: int = 200
    learning_starts: int = 1000
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    target_entropy: float = -4.0  # -(action dim)
    actor_hidden: int = 256
    critic_hidden: int = 128
    n_hidden: int = 3
    action_max: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size exceeds buffer capacity")


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer; batches are sampled uniformly without replacement."""

    def __init__(self, capacity, obs_dim, act_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, act_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def add(self, tr):
        i = self.cursor
        self.obs[i] = tr.obs
        self.action[i] = tr.action
        self.reward[i] = tr.reward
        self.next_obs[i] = tr.next_obs
        self.done[i] = tr.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, batch_size):
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return (
            self.obs[idx],
            self.action[idx],
            self.reward[idx],
            self.next_obs[idx],
            self.done[idx],
        )


class MlpActor:
    """Plain MLP policy column producing [mean, log_std]."""

    kind = "mlp"

    def __init__(self, specs, store, act_dim):
        self.specs = specs
        self.store = store
        self.act_dim = act_dim

    @classmethod
    def fresh(cls, rng, obs_dim=8, act_dim=4, hidden=256, n_hidden=3):
        specs = nets.actor_specs(obs_dim, act_dim, hidden, n_hidden)
        store = ad.ParamStore()
        nets.init_mlp(store, specs, rng)
        return cls(specs, store, act_dim)

    def forward_np(self, obs):
        out = nets.mlp_forward_np(self.store, self.specs, obs)
        mean = out[..., : self.act_dim]
        log_std = np.clip(
            out[..., self.act_dim :], nets.LOG_STD_MIN, nets.LOG_STD_MAX
        )
        return mean, log_std

    def make_vars(self):
        return self.store.make_vars()

    def forward_tape(self, var_map, obs):
        out = nets.mlp_forward(var_map, self.specs, obs)
        idx_mean = (slice(None), slice(0, self.act_dim))
        idx_std = (slice(None), slice(self.act_dim, 2 * self.act_dim))
        mean = out[idx_mean]
        log_std = ad.clip(out[idx_std], nets.LOG_STD_MIN, nets.LOG_STD_MAX)
        return mean, log_std

    def collect_grads(self, var_map):
        return self.store.collect_grads(var_map)

    def adam(self, grads, lr):
        ad.adam_step(self.store, grads, lr)

    def stores(self):
        return {"actor": self.store}

    def meta(self):
        return {
            "kind": self.kind,
            "act_dim": self.act_dim,
            "specs": [[s.in_dim, s.out_dim, s.activation] for s in self.specs],
        }

    @classmethod
    def from_stores(cls, stores, meta):
        specs = [nets.LayerSpec(*s) for s in meta["specs"]]
        return cls(specs, stores["actor"], meta["act_dim"])


class Critic:
    def __init__(self, specs, store):
        self.specs = specs
        self.store = store

    @classmethod
    def fresh(cls, rng, obs_dim=8, act_dim=4, hidden=128, n_hidden=3):
        specs = nets.critic_specs(obs_dim, act_dim, hidden, n_hidden)
        store = ad.ParamStore()
        nets.init_mlp(store, specs, rng)
        return cls(specs, store)

    def q_np(self, obs, act):
        x = np.concatenate([obs, act], axis=-1)
        return nets.mlp_forward_np(self.store, self.specs, x)[..., 0]

    def q_tape(self, var_map, obs, act):
        x = ad.concat([obs if isinstance(obs, ad.Var) else ad.Var(obs), act])
        q = nets.mlp_forward(var_map, self.specs, x)
        return q[(slice(None), 0)]

    def clone(self):
        return Critic(self.specs, self.store.clone())


class Agent:
    """SAC agent: actor + twin critics + targets + temperature."""

    def __init__(self, cfg, actor, critic1, critic2, log_alpha_store, rng):
        self.cfg = cfg
        self.actor = actor
        self.critic1 = critic1
        self.critic2 = critic2
        self.target1 = critic1.clone()
        self.target2 = critic2.clone()
        self.log_alpha = log_alpha_store
        self.rng = rng

    @classmethod
    def fresh(cls, cfg, seed, obs_dim=8, act_dim=4):
        ss = np.random.SeedSequence(seed)
        r_init, r_run = [np.random.default_rng(s) for s in ss.spawn(2)]
        actor = MlpActor.fresh(
            r_init, obs_dim, act_dim, cfg.actor_hidden, cfg.n_hidden
        )
        c1 = Critic.fresh(r_init, obs_dim, act_dim, cfg.critic_hidden, cfg.n_hidden)
        c2 = Critic.fresh(r_init, obs_dim, act_dim, cfg.critic_hidden, cfg.n_hidden)
        la = ad.ParamStore()
        la.add("log_alpha", 0.0)
        return cls(cfg, actor, c1, c2, la, r_run)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha["log_alpha"]))

    # -- acting ---------------------------------------------------------
    def sample_action(self, obs, deterministic=False):
        """Returns (action, log_prob) for a single observation."""
        mean, log_std = self.actor.forward_np(obs)
        a_max = self.cfg.action_max
        if deterministic:
            z = mean
        else:
            z = mean + np.exp(log_std) * self.rng.standard_normal(mean.shape)
        action = a_max * np.tanh(z)
        log_prob = nets.squashed_log_prob_np(z, mean, log_std, a_max)
        return action, float(log_prob)

    def _sample_batch_np(self, obs):
        mean, log_std = self.actor.forward_np(obs)
        z = mean + np.exp(log_std) * self.rng.standard_normal(mean.shape)
        action = self.cfg.action_max * np.tanh(z)
        log_prob = nets.squashed_log_prob_np(z, mean, log_std, self.cfg.action_max)
        return action, log_prob

    # -- updates --------------------------------------------------------
    def critic_update(self, batch):
        obs, act, rew, next_obs, _done = batch
        next_a, next_lp = self._sample_batch_np(next_obs)
        q1t = self.target1.q_np(next_obs, next_a)
        q2t = self.target2.q_np(next_obs, next_a)
        y = rew + self.cfg.gamma * (np.minimum(q1t, q2t) - self.alpha * next_lp)
        losses = []
        for critic in (self.critic1, self.critic2):
            vm = critic.store.make_vars()
            q = critic.q_tape(vm, obs, ad.Var(act))
            loss = ad.vmean(ad.square(q - y))
            ad.backward(loss)
            ad.adam_step(critic.store, critic.store.collect_grads(vm), self.cfg.lr_critic)
            losses.append(float(loss.value))
        return tuple(losses)

    def actor_and_alpha_update(self, batch):
        obs, *_ = batch
        vm = self.actor.make_vars()
        mean, log_std = self.actor.forward_tape(vm, obs)
        std = ad.exp(log_std)
        eps = self.rng.standard_normal(mean.shape)
        z = mean + std * eps
        action = ad.tanh(z) * self.cfg.action_max
        log_prob = nets.squashed_log_prob(z, mean, log_std, self.cfg.action_max)
        q1 = self.critic1.q_tape(self.critic1.store.make_vars(), obs, action)
        q2 = self.critic2.q_tape(self.critic2.store.make_vars(), obs, action)
        q_min = ad.minimum(q1, q2)
        actor_loss = ad.vmean(log_prob * self.alpha - q_min)
        ad.backward(actor_loss)
        self.actor.adam(self.actor.collect_grads(vm), self.cfg.lr_actor)

        # temperature: d/dlog_alpha E[-log_alpha (log_pi + H_target)]
        lp = log_prob.value
        la = self.log_alpha["log_alpha"]
        alpha_loss = float(-la * np.mean(lp + self.cfg.target_entropy))
        grad = -np.mean(lp + self.cfg.target_entropy)
        ad.adam_step(self.log_alpha, {"log_alpha": np.array(grad)}, self.cfg.lr_alpha)
        return float(actor_loss.value), alpha_loss

    def soft_update(self, tau=None):
        tau = self.cfg.tau if tau is None else tau
        for tgt, src in ((self.target1, self.critic1), (self.target2, self.critic2)):
            for name in src.store.names():
                tgt.store[name] = (1.0 - tau) * tgt.store[name] + tau * src.store[name]

    def update_burst(self, buffer, n_steps=None):
        n_steps = self.cfg.gradient_steps if n_steps is None else n_steps
        n_updates = 0
        for _ in range(n_steps):
            if buffer.size < self.cfg.batch_size:
                break
            batch = buffer.sample(self.rng, self.cfg.batch_size)
            self.critic_update(batch)
            self.actor_and_alpha_update(batch)
            self.soft_update()
            n_updates += 1
        return n_updates

    # -- persistence ----------------------------------------------------
    def save(self, path, meta=None):
        stores = dict(self.actor.stores())
        stores.update(
            critic1=self.critic1.store,
            critic2=self.critic2.store,
            target1=self.target1.store,
            target2=self.target2.store,
            log_alpha=self.log_alpha,
        )
        full_meta = {
            "sac_config": asdict(self.cfg),
            "actor": self.actor.meta(),
            "critic_specs": [
                [s.in_dim, s.out_dim, s.activation] for s in self.critic1.specs
            ],
        }
        if meta:
            full_meta.update(meta)
        kio.save_checkpoint(
            path, stores, meta=full_meta, rng_state=self.rng.bit_generator.state
        )

    @classmethod
    def load(cls, path):
        stores, _scalars, meta, rng_state = kio.load_checkpoint(path)
        cfg = SACConfig(**meta["sac_config"])
        cspecs = [nets.LayerSpec(*s) for s in meta["critic_specs"]]
        actor_meta = meta["actor"]
        if actor_meta["kind"] == "mlp":
            actor = MlpActor.from_stores(stores, actor_meta)
        else:
            from .pnn import ProgressiveActor

            actor = ProgressiveActor.from_stores(stores, actor_meta)
        c1 = Critic(cspecs, stores["critic1"])
        c2 = Critic(cspecs, stores["critic2"])
        rng = np.random.default_rng()
        if rng_state is not None:
            rng.bit_generator.state = rng_state
        agent = cls(cfg, actor, c1, c2, stores["log_alpha"], rng)
        agent.target1 = Critic(cspecs, stores["target1"])
        agent.target2 = Critic(cspecs, stores["target2"])
        return agent


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpisodeRecord:
    env_step: int
    episode_index: int
    episode_return: float
    wall_clock_s: float


@dataclass
class TrainResult:
    episodes: list
    total_steps: int
    aborted: bool = False
    error: str | None = None
    checkpoints: dict = field(default_factory=dict)  # env_step -> path


def train(
    agent,
    env,
    total_steps,
    buffer=None,
    checkpoint_dir=None,
    checkpoint_every=25_000,
    checkpoint_at=(),
    progress=None,
):
    """Run SAC training; returns a TrainResult with per-episode returns.

    Episode returns are undiscounted sums of rewards.  Checkpoints are
    written at every multiple of `checkpoint_every` plus the explicit
    `checkpoint_at` steps and at the end.
    """
    cfg = agent.cfg
    if buffer is None:
        buffer = ReplayBuffer(cfg.buffer_capacity, env.obs_dim, env.action_dim)
    marks = set(checkpoint_at)
    result = TrainResult(episodes=[], total_steps=total_steps)
    t0 = time.time()
    lo, hi = env.actuators.amplitude_bounds

    obs = env.reset(seed=int(agent.rng.integers(2**32)))
    ep_return, ep_index = 0.0, 0
    try:
        for step in range(1, total_steps + 1):
            if step <= cfg.learning_starts:
                action = agent.rng.uniform(lo, hi, size=env.action_dim)
            else:
                action, _ = agent.sample_action(obs)
            next_obs, reward, done = env.step(action)
            buffer.add(Transition(obs, action, reward, next_obs, done))
            ep_return += reward
            obs = next_obs
            if done:
                result.episodes.append(
                    EpisodeRecord(step, ep_index, ep_return, time.time() - t0)
                )
                ep_index += 1
                ep_return = 0.0
                obs = env.reset(seed=int(agent.rng.integers(2**32)))
            if step % cfg.train_freq == 0 and step > cfg.learning_starts:
                agent.update_burst(buffer)
            if checkpoint_dir is not None and (
                step % checkpoint_every == 0 or step in marks or step == total_steps
            ):
                path = f"{checkpoint_dir}/ckpt_{step:09d}.bin"
                agent.save(path, meta={"env_step": step})
                result.checkpoints[step] = path
            if progress is not None:
                progress(step)
    except NonFinite as exc:
        result.aborted = True
        result.error = str(exc)
    return result


def evaluate(agent, env, n_episodes, seeds, deterministic=True):
    """Mean undiscounted return over evaluation episodes with given seeds."""
    returns = []
    for seed in seeds:
        obs = env.reset(seed=seed)
        total = 0.0
        done = False
        while not done:
            action, _ = agent.sample_action(obs, deterministic=deterministic)
            obs, reward, done = env.step(action)
            total += reward
        returns.append(total)
    return float(np.mean(returns)), returns
