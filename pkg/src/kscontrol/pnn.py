"""Progressive network actor: frozen source column(s), a trainable target
column, and nonlinear lateral adapters with learnable scalar gains.

Layer i >= 2 of column k receives, pre-activation, the adapter output

    sum_{j<k}  f( (alpha_ij * h_{i-1}^{(j)}) @ V ) @ U

where f is Tanh (matching the column activation).  The output head is
treated as layer L+1 with Identity activation and also receives lateral
input.  The first hidden layer has no lateral path: its input is the shared
observation.  Critics stay plain MLPs.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nets
from .errors import IncompatibleShapes, NoSuchAdapter
from .sac import Agent, Critic, MlpActor

STANDARD = "standard"
RANDOM_SOURCE = "random_source"
FINETUNED_CRITIC = "finetuned_critic"
VARIANTS = (STANDARD, RANDOM_SOURCE, FINETUNED_CRITIC)

ADAPTER_DIM_MIN = 16
V_GAIN = nets.HIDDEN_GAIN
U_GAIN = 1e-2  # small early lateral contribution, healthy gradients


def default_adapter_dim(width, n_prior_columns):
    return max(ADAPTER_DIM_MIN, width // n_prior_columns)


def _col(k, name):
    return f"col{k}.{name}"


def _adapt(i, j, name):
    return f"adapt.l{i}.c{j}.{name}"


class ProgressiveActor:
    """Ordered columns + lateral adapters; only the last column trains."""

    kind = "pnn"

    def __init__(self, specs, store, act_dim, n_columns, adapter_dim):
        self.specs = specs  # shared per-column layer specs (head last)
        self.store = store
        self.act_dim = act_dim
        self.n_columns = n_columns
        self.adapter_dim = adapter_dim
        self.noise = None  # (layer_i, col_k, sigma, rng) during APS evaluation

    # -- construction ---------------------------------------------------
    @classmethod
    def fresh(cls, rng, obs_dim=8, act_dim=4, hidden=256, n_hidden=3,
              n_columns=2, adapter_dim=None):
        specs = nets.actor_specs(obs_dim, act_dim, hidden, n_hidden)
        if adapter_dim is None:
            adapter_dim = default_adapter_dim(hidden, n_columns - 1)
        store = ad.ParamStore()
        for k in range(1, n_columns + 1):
            nets.init_mlp(store, specs, rng, prefix=f"col{k}.")
        n_layers = len(specs)
        for k in range(2, n_columns + 1):
            for i in range(2, n_layers + 1):
                n_prev = specs[i - 1].in_dim
                n_out = specs[i - 1].out_dim
                for j in range(1, k):
                    store.add(_adapt(i, j, "alpha") if k == n_columns else
                              f"col{k}.adapt.l{i}.c{j}.alpha", 1.0)
                    store.add(_adapt(i, j, "V") if k == n_columns else
                              f"col{k}.adapt.l{i}.c{j}.V",
                              ad.orthogonal(rng, (n_prev, adapter_dim), V_GAIN))
                    store.add(_adapt(i, j, "U") if k == n_columns else
                              f"col{k}.adapt.l{i}.c{j}.U",
                              ad.orthogonal(rng, (adapter_dim, n_out), U_GAIN))
        actor = cls(specs, store, act_dim, n_columns, adapter_dim)
        actor._apply_freeze()
        return actor

    def _apply_freeze(self):
        """Only the last column and its adapters are trainable."""
        last = f"col{self.n_columns}."
        for name in self.store.names():
            trainable = name.startswith(last) or name.startswith("adapt.")
            self.store.set_trainable(name, trainable)

    def adapter_names(self, i, j):
        if i < 2 or i > len(self.specs):
            raise NoSuchAdapter(f"no lateral adapter at layer {i}")
        if j < 1 or j >= self.n_columns:
            raise NoSuchAdapter(f"no source column {j}")
        return (_adapt(i, j, "alpha"), _adapt(i, j, "V"), _adapt(i, j, "U"))

    # -- forward passes -------------------------------------------------
    def _lateral_np(self, i, k, activations):
        out = 0.0
        for j in range(1, k):
            if k == self.n_columns:
                an, vn, un = _adapt(i, j, "alpha"), _adapt(i, j, "V"), _adapt(i, j, "U")
            else:
                an = f"col{k}.adapt.l{i}.c{j}.alpha"
                vn = f"col{k}.adapt.l{i}.c{j}.V"
                un = f"col{k}.adapt.l{i}.c{j}.U"
            h_prev = activations[j][i - 1]
            a = self.store[an]
            out = out + np.tanh((a * h_prev) @ self.store[vn]) @ self.store[un]
        return out

    def forward_np(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        n_layers = len(self.specs)
        activations = {}
        for k in range(1, self.n_columns + 1):
            h = obs
            acts = [h]
            for i, spec in enumerate(self.specs, start=1):
                wn, bn = nets.layer_names(i)
                pre = h @ self.store[_col(k, wn)] + self.store[_col(k, bn)]
                if k >= 2 and i >= 2:
                    pre = pre + self._lateral_np(i, k, activations)
                h = np.tanh(pre) if spec.activation == "tanh" else pre
                if self.noise is not None and self.noise[:2] == (i, k):
                    _, _, sigma, rng = self.noise
                    h = h + sigma * rng.standard_normal(h.shape)
                acts.append(h)
            activations[k] = acts
        out = activations[self.n_columns][n_layers]
        mean = out[..., : self.act_dim]
        log_std = np.clip(
            out[..., self.act_dim :], nets.LOG_STD_MIN, nets.LOG_STD_MAX
        )
        return mean, log_std

    def make_vars(self):
        return self.store.make_vars()

    def forward_tape(self, var_map, obs):
        n_layers = len(self.specs)
        activations = {}
        for k in range(1, self.n_columns + 1):
            h = ad.Var(obs)
            acts = [h]
            for i, spec in enumerate(self.specs, start=1):
                wn, bn = nets.layer_names(i)
                pre = ad.matmul(h, var_map[_col(k, wn)]) + var_map[_col(k, bn)]
                if k >= 2 and i >= 2:
                    for j in range(1, k):
                        if k == self.n_columns:
                            an, vn, un = (_adapt(i, j, n) for n in ("alpha", "V", "U"))
                        else:
                            an = f"col{k}.adapt.l{i}.c{j}.alpha"
                            vn = f"col{k}.adapt.l{i}.c{j}.V"
                            un = f"col{k}.adapt.l{i}.c{j}.U"
                        h_prev = activations[j][i - 1]
                        lat = ad.matmul(
                            ad.tanh(ad.matmul(h_prev * var_map[an], var_map[vn])),
                            var_map[un],
                        )
                        pre = pre + lat
                h = ad.tanh(pre) if spec.activation == "tanh" else pre
                acts.append(h)
            activations[k] = acts
        out = activations[self.n_columns][n_layers]
        idx_mean = (slice(None), slice(0, self.act_dim))
        idx_std = (slice(None), slice(self.act_dim, 2 * self.act_dim))
        mean = out[idx_mean]
        log_std = ad.clip(out[idx_std], nets.LOG_STD_MIN, nets.LOG_STD_MAX)
        return mean, log_std

    def collect_grads(self, var_map):
        return self.store.collect_grads(var_map)

    def adam(self, grads, lr):
        ad.adam_step(self.store, grads, lr)

    # -- persistence / misc ---------------------------------------------
    def stores(self):
        return {"actor": self.store}

    def meta(self):
        return {
            "kind": self.kind,
            "act_dim": self.act_dim,
            "n_columns": self.n_columns,
            "adapter_dim": self.adapter_dim,
            "specs": [[s.in_dim, s.out_dim, s.activation] for s in self.specs],
        }

    @classmethod
    def from_stores(cls, stores, meta):
        specs = [nets.LayerSpec(*s) for s in meta["specs"]]
        return cls(
            specs, stores["actor"], meta["act_dim"], meta["n_columns"],
            meta["adapter_dim"],
        )


def set_adapter_gain(actor, layer_i, source_col, value):
    """Pin a lateral gain and exclude it from training (ablation support)."""
    an, _, _ = actor.adapter_names(layer_i, source_col)
    actor.store[an] = float(value)
    actor.store.set_trainable(an, False)
    return actor


def build_pnn(source_checkpoint, variant, seed, sac_cfg=None, adapter_dim=None,
              obs_dim=8, act_dim=4):
    """Two-column progressive agent per variant.

    standard         source actor frozen as column 1, critics from scratch
    random_source    random frozen column 1, critics from scratch
    finetuned_critic as standard, but critics copied from source, trainable
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown PNN variant {variant!r}")
    ss = np.random.SeedSequence(seed)
    r_init, r_run = [np.random.default_rng(s) for s in ss.spawn(2)]

    source = None
    if variant in (STANDARD, FINETUNED_CRITIC):
        source = Agent.load(source_checkpoint)
        if not isinstance(source.actor, MlpActor):
            raise IncompatibleShapes("PNN source column must be a plain MLP actor")
        src_specs = source.actor.specs
        hidden = src_specs[0].out_dim
        cfg = sac_cfg if sac_cfg is not None else source.cfg
    else:
        if sac_cfg is None:
            raise ValueError("random_source variant needs an explicit SAC config")
        cfg = sac_cfg
        hidden = cfg.actor_hidden

    actor = ProgressiveActor.fresh(
        r_init, obs_dim, act_dim, hidden, cfg.n_hidden, n_columns=2,
        adapter_dim=adapter_dim,
    )
    if source is not None:
        for i in range(1, len(actor.specs) + 1):
            wn, bn = nets.layer_names(i)
            if source.actor.store[wn].shape != actor.store[_col(1, wn)].shape:
                raise IncompatibleShapes(f"source layer {i} width mismatch")
            actor.store[_col(1, wn)] = source.actor.store[wn].copy()
            actor.store[_col(1, bn)] = source.actor.store[bn].copy()

    if variant == FINETUNED_CRITIC:
        c1 = Critic(source.critic1.specs, source.critic1.store.clone())
        c2 = Critic(source.critic2.specs, source.critic2.store.clone())
        c1.store.reset_optimizer()
        c2.store.reset_optimizer()
        log_alpha_init = source.log_alpha["log_alpha"]
    else:
        c1 = Critic.fresh(r_init, obs_dim, act_dim, cfg.critic_hidden, cfg.n_hidden)
        c2 = Critic.fresh(r_init, obs_dim, act_dim, cfg.critic_hidden, cfg.n_hidden)
        log_alpha_init = 0.0

    log_alpha = ad.ParamStore()
    log_alpha.add("log_alpha", log_alpha_init)
    return Agent(cfg, actor, c1, c2, log_alpha, r_run)
