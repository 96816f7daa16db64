"""Post-hoc analysis: learning-curve scores, perturbation sensitivity of
progressive actors, spectral scale decomposition, and POD.

All functions are pure over recorded data except `aps`, which re-runs
deterministic evaluation episodes with noise injected into one layer of one
column.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBaseline, NoCrossing
from .sac import evaluate

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

SIGMA_LOG_MIN = -4.0
SIGMA_LOG_MAX = 4.0
LAMBDA_MIN = 10.0 ** (-2 * SIGMA_LOG_MAX)  # 1/sigma_max^2
APS_SEED_BASE = 800_000
SMOOTH_WINDOW = 10


# ---------------------------------------------------------------------------
# Learning curves


@dataclass
class LearningCurve:
    """Per-trial (env_step, episode_return) sequences plus aggregation."""

    trials: list  # of (steps, returns) float64 array pairs

    def __post_init__(self):
        clean = []
        for steps, rets in self.trials:
            steps = np.asarray(steps, dtype=np.float64)
            rets = np.asarray(rets, dtype=np.float64)
            if steps.ndim != 1 or steps.shape != rets.shape:
                raise ValueError("trial steps/returns must be matching 1-D arrays")
            if np.any(np.diff(steps) <= 0):
                raise ValueError("trial steps must be strictly increasing")
            clean.append((steps, rets))
        self.trials = clean

    @classmethod
    def from_csv(cls, path):
        """Reads the harness curve format:
        trial,seed,env_step,episode_index,episode_return,wall_clock_s
        """
        by_trial = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                by_trial.setdefault(int(row["trial"]), []).append(
                    (float(row["env_step"]), float(row["episode_return"]))
                )
        trials = []
        for t in sorted(by_trial):
            rows = sorted(by_trial[t])
            steps = np.array([r[0] for r in rows])
            rets = np.array([r[1] for r in rows])
            trials.append((steps, rets))
        return cls(trials)

    def smoothed(self, window=SMOOTH_WINDOW):
        """Trailing moving average of the returns, per trial."""
        out = []
        for steps, rets in self.trials:
            kernel = np.ones(min(window, len(rets)))
            num = np.convolve(rets, kernel, mode="full")[: len(rets)]
            den = np.convolve(np.ones_like(rets), kernel, mode="full")[: len(rets)]
            out.append((steps, num / den))
        return LearningCurve(out)

    def grid(self):
        return np.unique(np.concatenate([s for s, _ in self.trials]))

    def aggregate(self, grid=None):
        """(grid, mu, sigma) with each trial linearly interpolated."""
        if not self.trials:
            raise ValueError("no trials to aggregate")
        if grid is None:
            grid = self.grid()
        vals = np.stack([np.interp(grid, s, r) for s, r in self.trials])
        return grid, vals.mean(axis=0), vals.std(axis=0)


@dataclass
class ScoreReport:
    transfer_score: float
    final_return_score: float
    retention_score: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self):
        d = {
            "transfer_score": self.transfer_score,
            "final_return_score": self.final_return_score,
        }
        if self.retention_score is not None:
            d["retention_score"] = self.retention_score
        d.update(self.metadata)
        return d


def _area(curve, horizon):
    g = curve.grid()
    if g[-1] < horizon:
        raise ValueError(f"curve ends at step {g[-1]:.0f}, before horizon {horizon:.0f}")
    grid = np.concatenate(([0.0], g[g < horizon], [horizon]))
    grid = np.unique(grid)
    _, mu, _ = curve.aggregate(grid)
    return float(_trapezoid(mu, grid))


def transfer_score(curve, baseline, horizon=2.5e5):
    """Area under the mean curve over [0, horizon], relative to baseline."""
    base_area = _area(baseline, horizon)
    if base_area <= 0:
        raise DegenerateBaseline(f"baseline area {base_area} is not positive")
    return _area(curve, horizon) / base_area


def final_return_score(curve, horizon=2.5e5, window=5):
    """Mean of the aggregated curve over the last `window` grid points."""
    g = curve.grid()
    if g[-1] < horizon:
        raise ValueError(f"curve ends at step {g[-1]:.0f}, before horizon {horizon:.0f}")
    grid = g[g <= horizon]
    _, mu, _ = curve.aggregate(grid)
    return float(mu[-window:].mean())


# ---------------------------------------------------------------------------
# Average perturbation sensitivity


@dataclass
class APSMap:
    layers: list
    columns: list
    lam: np.ndarray  # (n_layers, n_columns)
    sigma: np.ndarray  # matched sigma, nan where no crossing
    aps: np.ndarray  # row-normalized lam

    def row_sums(self):
        return self.aps.sum(axis=1)


def _noisy_mean_return(agent, env, layer, column, sigma, seeds, floor, noise_seed):
    agent.actor.noise = (layer, column, sigma, np.random.default_rng(noise_seed))
    try:
        _, rets = evaluate(agent, env, len(seeds), seeds, deterministic=True)
    finally:
        agent.actor.noise = None
    return float(np.mean(np.maximum(rets, floor)))


def aps(agent, env, layer, column, episodes=5, drop=0.5, floor=0.0,
        seeds=None, rel_tol=0.05, max_iters=30, noise_seed=1234):
    """Noise precision at a 50% performance drop for one (layer, column) cell.

    Injects N(0, sigma^2) noise into the post-activation output of the given
    layer/column at every control step of a deterministic evaluation, and
    bisects log10(sigma) until the mean return (clamped at `floor`, the
    uncontrolled level) is halfway between clean and floor.  Returns
    (Lambda, sigma); raises NoCrossing when the bracket never drops far
    enough, in which case callers should record Lambda = LAMBDA_MIN.
    """
    if seeds is None:
        seeds = list(range(APS_SEED_BASE, APS_SEED_BASE + episodes))
    r_clean_mean, rets = evaluate(agent, env, len(seeds), seeds, deterministic=True)
    r_clean = float(np.mean(np.maximum(rets, floor)))
    if r_clean <= floor:
        raise DegenerateBaseline(
            f"clean return {r_clean} not above the uncontrolled level {floor}"
        )
    target = floor + (1.0 - drop) * (r_clean - floor)
    tol = rel_tol * (r_clean - floor)

    lo, hi = SIGMA_LOG_MIN, SIGMA_LOG_MAX
    r_hi = _noisy_mean_return(agent, env, layer, column, 10.0**hi, seeds, floor, noise_seed)
    if r_hi > target + tol:
        raise NoCrossing(
            f"layer {layer} column {column}: return {r_hi:.3f} > target "
            f"{target:.3f} at sigma={10.0**hi:g}"
        )
    r_lo = _noisy_mean_return(agent, env, layer, column, 10.0**lo, seeds, floor, noise_seed)
    if r_lo < target - tol:
        # saturated sensitivity: already past the 50% drop at the bracket edge
        return 10.0 ** (-2 * lo), 10.0**lo
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        r_mid = _noisy_mean_return(
            agent, env, layer, column, 10.0**mid, seeds, floor, noise_seed
        )
        if abs(r_mid - target) <= tol:
            sigma = 10.0**mid
            return 1.0 / sigma**2, sigma
        if r_mid > target:
            lo = mid
        else:
            hi = mid
    sigma = 10.0 ** (0.5 * (lo + hi))
    return 1.0 / sigma**2, sigma


def aps_map(agent, env, layers=None, columns=None, **kwargs):
    """Full APS matrix with per-layer row normalization."""
    actor = agent.actor
    if layers is None:
        layers = list(range(1, len(actor.specs) + 1))
    if columns is None:
        columns = list(range(1, actor.n_columns + 1))
    lam = np.empty((len(layers), len(columns)))
    sig = np.full_like(lam, np.nan)
    for a, layer in enumerate(layers):
        for b, col in enumerate(columns):
            try:
                lam[a, b], sig[a, b] = aps(agent, env, layer, col, **kwargs)
            except NoCrossing:
                lam[a, b] = LAMBDA_MIN
    norm = lam / lam.sum(axis=1, keepdims=True)
    return APSMap(list(layers), list(columns), lam, sig, norm)


# ---------------------------------------------------------------------------
# Spectral decomposition and POD


def scale_cutoff_index(N_low, L):
    """Largest integer mode index j with 2*pi*j/L <= pi*N_low/(2L)."""
    return int(np.floor(N_low / 4.0))


def spectral_filter(trajectory, N_low, L):
    """Split fields into large scales (|k| <= k_c) and the exact remainder."""
    u = np.asarray(trajectory, dtype=np.float64)
    j_max = scale_cutoff_index(N_low, L)
    c = np.fft.rfft(u, axis=-1)
    mask = np.zeros(c.shape[-1])
    mask[: j_max + 1] = 1.0
    large = np.fft.irfft(c * mask, n=u.shape[-1], axis=-1)
    return large, u - large


@dataclass
class PODResult:
    singular_values: np.ndarray
    modes: np.ndarray  # (N, n_modes), orthonormal columns
    coefficients: np.ndarray  # (T, n_modes) temporal coefficients U @ diag(S)
    energies: np.ndarray  # sigma_i^2
    cumulative_fraction: np.ndarray


def pod(snapshots, reference=None):
    """Thin SVD of the deviation snapshot matrix (rows are u(., t) - u_ref)."""
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a T x N snapshot matrix with T >= 2")
    if reference is not None:
        X = X - np.asarray(reference, dtype=np.float64)[None, :]
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    energies = S**2
    total = energies.sum()
    cum = np.cumsum(energies) / total if total > 0 else np.zeros_like(energies)
    return PODResult(S, Vt.T, U * S, energies, cum)


# ---------------------------------------------------------------------------
# Artifact writers


def write_scores(path, report):
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_aps_csv(path, amap):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "column", "sigma", "lambda", "aps"])
        for a, layer in enumerate(amap.layers):
            for b, col in enumerate(amap.columns):
                w.writerow(
                    [layer, col, amap.sigma[a, b], amap.lam[a, b], amap.aps[a, b]]
                )


def write_pod_csv(energies_path, modes_path, result):
    with open(energies_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "singular_value", "energy", "cumulative_fraction"])
        for i, (s, e, c) in enumerate(
            zip(result.singular_values, result.energies, result.cumulative_fraction),
            start=1,
        ):
            w.writerow([i, s, e, c])
    with open(modes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_index"] + [f"mode{i+1}" for i in range(result.modes.shape[1])])
        for j in range(result.modes.shape[0]):
            w.writerow([j] + list(result.modes[j]))
