"""Dense networks for the actor/critic stacks.

Weights are stored as (in_dim, out_dim) so a forward pass is `x @ W + b`.
The actor's output layer is a single Identity layer producing the
concatenated [mean, log_std] vector, which keeps layer surgery (freezing,
inserting hidden layers) uniform across the whole network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch

HIDDEN_GAIN = np.sqrt(2.0)  # pre-Tanh layers
OUTPUT_GAIN = 1e-2  # keeps early SAC entropy stable

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"  # "tanh" | "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_specs(in_dim, hidden, out_dim, n_hidden=3):
    """Standard column: n_hidden Tanh layers of width `hidden`, Identity head."""
    dims = [in_dim] + [hidden] * n_hidden
    specs = [LayerSpec(dims[i], dims[i + 1]) for i in range(n_hidden)]
    specs.append(LayerSpec(hidden, out_dim, "identity"))
    return specs


def actor_specs(obs_dim=8, act_dim=4, hidden=256, n_hidden=3):
    # head outputs [mean, log_std]
    return mlp_specs(obs_dim, hidden, 2 * act_dim, n_hidden)


def critic_specs(obs_dim=8, act_dim=4, hidden=128, n_hidden=3):
    return mlp_specs(obs_dim + act_dim, hidden, 1, n_hidden)


def layer_names(i):
    return f"W{i}", f"b{i}"


def init_mlp(store, specs, rng, prefix=""):
    """Orthogonal init: gain sqrt(2) for Tanh layers, 1e-2 for the head."""
    for i, spec in enumerate(specs, start=1):
        gain = HIDDEN_GAIN if spec.activation == "tanh" else OUTPUT_GAIN
        wn, bn = layer_names(i)
        store.add(prefix + wn, ad.orthogonal(rng, (spec.in_dim, spec.out_dim), gain))
        store.add(prefix + bn, np.zeros(spec.out_dim))


def mlp_forward(var_map, specs, x, prefix=""):
    """Tape forward pass; `x` may be a Var or ndarray, 1-D or (B, in_dim)."""
    h = x if isinstance(x, ad.Var) else ad.Var(x)
    if h.value.shape[-1] != specs[0].in_dim:
        raise ShapeMismatch(
            f"input width {h.value.shape[-1]} != {specs[0].in_dim}"
        )
    for i, spec in enumerate(specs, start=1):
        wn, bn = layer_names(i)
        h = ad.matmul(h, var_map[prefix + wn]) + var_map[prefix + bn]
        if spec.activation == "tanh":
            h = ad.tanh(h)
    return h


def mlp_forward_np(store, specs, x, prefix=""):
    """Plain numpy forward (no tape); used on the hot rollout path."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != specs[0].in_dim:
        raise ShapeMismatch(f"input width {h.shape[-1]} != {specs[0].in_dim}")
    for i, spec in enumerate(specs, start=1):
        wn, bn = layer_names(i)
        h = h @ store[prefix + wn] + store[prefix + bn]
        if spec.activation == "tanh":
            h = np.tanh(h)
    return h


# ---------------------------------------------------------------------------
# Tanh-squashed Gaussian policy math (shared by plain and progressive actors)


def gaussian_log_prob(z, mean, log_std):
    """Elementwise log N(z; mean, exp(log_std)) on the tape."""
    std = ad.exp(log_std)
    return (
        ad.square((z - mean) / std) * (-0.5)
        - log_std
        - 0.5 * np.log(2.0 * np.pi)
    )


def tanh_correction(z):
    """log(1 - tanh(z)^2), stable:  2*(log 2 - z - softplus(-2z))."""
    return (np.log(2.0) - z - ad.softplus(z * (-2.0))) * 2.0


def squashed_log_prob(z, mean, log_std, a_max):
    """Per-sample log-density of a = a_max * tanh(z); sums over action dim."""
    lp = gaussian_log_prob(z, mean, log_std)
    lp = lp - tanh_correction(z) - np.log(a_max)
    return ad.vsum(lp, axis=-1)


def squashed_log_prob_np(z, mean, log_std, a_max):
    """Numpy twin of squashed_log_prob for no-grad evaluation."""
    std = np.exp(log_std)
    lp = -0.5 * ((z - mean) / std) ** 2 - log_std - 0.5 * np.log(2.0 * np.pi)
    corr = 2.0 * (np.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))
    return (lp - corr - np.log(a_max)).sum(axis=-1)
