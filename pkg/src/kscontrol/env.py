"""Episodic control environment around the KS solver.

Four Gaussian actuators force the PDE, eight point sensors observe it, and
the reward is the normalized L2 deviation from a reference profile:

    r_t = 1 - ||u - u_ref|| / d0_bar

with the grid-weighted norm and d0_bar the time-averaged distance of the
uncontrolled flow from the same reference.  Actions are held constant over
the solver substeps of one control step (zero-order hold).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ActionOutOfRange, DegenerateBaseline
from .spectral import (
    KSConfig,
    SpectralField,
    evaluate_at,
    grid_norm,
    noise_initial_condition,
    step_solver,
)

D0_MIN = 1e-12
CALIBRATION_SEED_BASE = 77_000  # documented base for the d0 seed block


def _periodic_distance(x, centers, L):
    d = np.abs(x[:, None] - centers[None, :])
    return np.minimum(d, L - d)


@dataclass
class ActuatorBank:
    positions: np.ndarray
    sigma: float
    amplitude_bounds: tuple
    kernel_matrix: np.ndarray  # (N, n_actuators)

    @classmethod
    def default(cls, cfg, sigma=0.4, bounds=(-0.5, 0.5)):
        positions = np.arange(4) * cfg.L / 4.0
        d = _periodic_distance(cfg.grid, positions, cfg.L)
        # literal 1/sqrt(2*pi*sigma) prefactor
        kernel = np.exp(-(d**2) / (2.0 * sigma**2)) / np.sqrt(2.0 * np.pi * sigma)
        return cls(positions, sigma, bounds, kernel)

    @property
    def n(self):
        return len(self.positions)

    def forcing(self, amplitudes):
        return self.kernel_matrix @ np.asarray(amplitudes, dtype=np.float64)


@dataclass
class SensorArray:
    positions: np.ndarray

    @classmethod
    def default(cls, L):
        return cls((2.0 * np.arange(8) + 1.0) * L / 16.0)

    def read(self, fld, L):
        # exact Fourier interpolation, independent of grid alignment
        return evaluate_at(fld, self.positions, L)


class KSEnv:
    """Single-threaded episodic environment; all randomness from one RNG."""

    def __init__(self, cfg, reference, strict_actions=False):
        if reference.d0_bar is None or reference.d0_bar <= D0_MIN:
            raise DegenerateBaseline(
                "reference d0_bar missing or degenerate; run calibrate_d0 first"
            )
        self.cfg = cfg
        self.reference = reference
        self.actuators = ActuatorBank.default(cfg)
        self.sensors = SensorArray.default(cfg.L)
        self.strict_actions = strict_actions
        self.rng = np.random.default_rng()
        self.field = SpectralField.zero(cfg.N)
        self.step_count = 0

    @property
    def obs_dim(self):
        return len(self.sensors.positions)

    @property
    def action_dim(self):
        return self.actuators.n

    def observe(self):
        return self.sensors.read(self.field, self.cfg.L)

    def reset(self, seed):
        """Noise IC, uncontrolled burn-in, then the first observation."""
        self.rng = np.random.default_rng(seed)
        self.field = noise_initial_condition(self.cfg, self.rng)
        n_burn = int(round(self.cfg.burn_in_time / self.cfg.dt_solution))
        for _ in range(n_burn):
            self.field = step_solver(self.field, None, self.cfg)
        self.step_count = 0
        return self.observe()

    def _reward(self):
        dev = self.field.grid_values - self.reference.profile.grid_values
        return 1.0 - grid_norm(dev, self.cfg.dx) / self.reference.d0_bar

    def step(self, action):
        action = np.asarray(action, dtype=np.float64)
        lo, hi = self.actuators.amplitude_bounds
        if self.strict_actions and (np.any(action < lo) or np.any(action > hi)):
            raise ActionOutOfRange(f"action {action} outside [{lo}, {hi}]")
        action = np.clip(action, lo, hi)
        forcing = self.actuators.forcing(action)
        for _ in range(self.cfg.substeps_per_control):
            self.field = step_solver(self.field, forcing, self.cfg)
        self.step_count += 1
        done = self.step_count >= self.cfg.episode_length
        return self.observe(), self._reward(), done


def calibration_seeds(cfg, reference_name, n_episodes):
    """Fixed, documented seed block per (N, lambda, reference) triple."""
    base = (
        CALIBRATION_SEED_BASE
        + 131 * cfg.N
        + 17 * int(round(100 * cfg.hyperviscosity))
        + 7 * int(reference_name[1:])
    )
    return [base + i for i in range(n_episodes)]


def calibrate_d0(cfg, reference, n_episodes=8, seeds=None):
    """Mean uncontrolled L2 distance to the reference over whole episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if seeds is None:
        seeds = calibration_seeds(cfg, reference.name, n_episodes)
    ref_grid = reference.profile.grid_values
    total = 0.0
    count = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        fld = noise_initial_condition(cfg, rng)
        n_burn = int(round(cfg.burn_in_time / cfg.dt_solution))
        for _ in range(n_burn):
            fld = step_solver(fld, None, cfg)
        for _ in range(cfg.episode_length):
            for _ in range(cfg.substeps_per_control):
                fld = step_solver(fld, None, cfg)
            total += grid_norm(fld.grid_values - ref_grid, cfg.dx)
            count += 1
    return total / count
