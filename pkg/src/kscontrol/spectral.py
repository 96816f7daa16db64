"""Fourier pseudo-spectral solver for the forced 1-D Kuramoto-Sivashinsky
equation

    u_t + u u_x + u_xx + lam * u_xxxx = phi(x, t)

on a periodic domain [0, L], discretized with N collocation points.  The
state is the real-signal half spectrum (numpy rfft convention).  Time
integration is a three-stage semi-implicit Runge-Kutta scheme
(Spalart-Moser-Rogers coefficients): linear terms implicit, the dealiased
quadratic term and the forcing explicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite

# SMR three-stage coefficients
RK3_ALPHA = (29.0 / 96.0, -3.0 / 40.0, 1.0 / 6.0)
RK3_BETA = (37.0 / 160.0, 5.0 / 24.0, 1.0 / 6.0)
RK3_GAMMA = (8.0 / 15.0, 5.0 / 12.0, 3.0 / 4.0)
RK3_ZETA = (0.0, -17.0 / 60.0, -5.0 / 12.0)


@dataclass
class KSConfig:
    L: float = 22.0
    N: int = 64
    hyperviscosity: float = 1.0  # lam in the PDE
    dt_solution: float = 0.05
    substeps_per_control: int = 5
    episode_length: int = 1024
    burn_in_time: float = 250.0
    noise_amplitude: float = 1e-8

    def __post_init__(self):
        if self.N < 8 or self.N % 2:
            raise ValueError("N must be even and >= 8")
        if self.L <= 0 or self.dt_solution <= 0 or self.hyperviscosity <= 0:
            raise ValueError("L, dt_solution, hyperviscosity must be positive")
        if self.substeps_per_control < 1:
            raise ValueError("substeps_per_control must be >= 1")

    @property
    def dx(self):
        return self.L / self.N

    @property
    def grid(self):
        return np.arange(self.N) * self.dx

    @property
    def wavenumbers(self):
        """k_j = 2*pi*j/L for j = 0..N/2."""
        return 2.0 * np.pi * np.arange(self.N // 2 + 1) / self.L

    @property
    def linear_multiplier(self):
        k = self.wavenumbers
        return k**2 - self.hyperviscosity * k**4

    @property
    def padded_N(self):
        """Grid size for alias-free quadratic products (state fills 2/3)."""
        M = 3 * self.N // 2
        return M if M % 2 == 0 else M + 1


def _sanitize(coeffs, N):
    coeffs = np.asarray(coeffs, dtype=np.complex128).copy()
    coeffs[0] = coeffs[0].real
    coeffs[N // 2] = coeffs[N // 2].real
    return coeffs


@dataclass
class SpectralField:
    """Half-spectrum state; grid values are cached on first access."""

    coeffs: np.ndarray
    N: int
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_grid(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(_sanitize(np.fft.rfft(values), len(values)), len(values))

    @classmethod
    def from_coeffs(cls, coeffs, N):
        return cls(_sanitize(coeffs, N), N)

    @classmethod
    def zero(cls, N):
        return cls(np.zeros(N // 2 + 1, dtype=np.complex128), N)

    @property
    def grid_values(self):
        if self._grid is None:
            self._grid = np.fft.irfft(self.coeffs, n=self.N)
        return self._grid

    def is_finite(self):
        return bool(np.all(np.isfinite(self.coeffs)))


def grid_norm(values, dx):
    """Grid-weighted L2 norm: sqrt(dx * sum v^2)."""
    return float(np.sqrt(dx * np.sum(np.asarray(values) ** 2)))


def nonlinear_term(coeffs, cfg, forcing_coeffs=None):
    """-(ik/2) * DFT(u^2), dealiased, plus the forcing.

    The square is evaluated on a 3/2 zero-padded grid so the state's modes
    occupy the lower two thirds of the working spectrum and the product is
    alias-free over the whole retained band; everything above the retained
    band is discarded.
    """
    N, M = cfg.N, cfg.padded_N
    pad = np.zeros(M // 2 + 1, dtype=np.complex128)
    pad[: N // 2 + 1] = coeffs * (M / N)
    pad[N // 2] *= 0.5  # Nyquist becomes an interior mode of the padded grid
    u = np.fft.irfft(pad, n=M)
    quad = np.fft.rfft(u * u)[: N // 2 + 1] * (N / M)
    out = -0.5j * cfg.wavenumbers * quad
    out[N // 2] = 0.0  # odd derivative of the Nyquist mode is unrepresentable
    if forcing_coeffs is not None:
        out = out + forcing_coeffs
    return out


def rhs(fld, forcing, cfg):
    """Spectral time derivative of the forced KS equation.

    `forcing` is a real N-vector (phi at the grid points) or None.
    """
    fc = np.fft.rfft(forcing) if forcing is not None else None
    d = cfg.linear_multiplier * fld.coeffs + nonlinear_term(fld.coeffs, cfg, fc)
    return SpectralField.from_coeffs(d, cfg.N)


def step_solver(fld, forcing, cfg):
    """Advance one dt_solution; forcing held constant over the step."""
    fc = np.fft.rfft(forcing) if forcing is not None else None
    lin = cfg.linear_multiplier
    dt = cfg.dt_solution
    u = fld.coeffs
    n_prev = None
    for s in range(3):
        n_cur = nonlinear_term(u, cfg, fc)
        expl = u + dt * (
            RK3_GAMMA[s] * n_cur
            + (RK3_ZETA[s] * n_prev if n_prev is not None else 0.0)
            + RK3_ALPHA[s] * lin * u
        )
        u = expl / (1.0 - RK3_BETA[s] * dt * lin)
        n_prev = n_cur
    out = SpectralField.from_coeffs(u, cfg.N)
    if not out.is_finite():
        raise NonFinite("solver state became non-finite")
    return out


def integrate(fld, cfg, n_steps, forcing=None):
    for _ in range(n_steps):
        fld = step_solver(fld, forcing, cfg)
    return fld


def evaluate_at(fld, x, L):
    """Exact truncated-Fourier-series evaluation at position(s) x."""
    x = np.asarray(x, dtype=np.float64)
    N = fld.N
    k = 2.0 * np.pi * np.arange(N // 2 + 1) / L
    phase = np.exp(1j * np.outer(x, k))
    weights = np.full(N // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[N // 2] = 1.0
    vals = (phase * (weights * fld.coeffs)).real.sum(axis=-1) / N
    return vals if x.ndim else float(vals)


def resample(fld, N_new, N_old=None):
    """Spectral truncation / zero-padding to a new resolution.

    Coefficients scale with the grid size under the unnormalized rfft;
    Nyquist modes carry the usual factor-of-two bookkeeping.
    """
    N_old = N_old if N_old is not None else fld.N
    c = fld.coeffs
    scale = N_new / N_old
    if N_new == N_old:
        return SpectralField.from_coeffs(c.copy(), N_new)
    if N_new < N_old:
        out = c[: N_new // 2 + 1] * scale
        out[-1] = 2.0 * out[-1].real  # interior mode becomes Nyquist
    else:
        out = np.zeros(N_new // 2 + 1, dtype=np.complex128)
        out[: N_old // 2 + 1] = c * scale
        out[N_old // 2] *= 0.5  # Nyquist becomes interior mode
    return SpectralField.from_coeffs(out, N_new)


def spectral_shift(fld, offset, L):
    """Translate the field by `offset` along the periodic domain."""
    k = 2.0 * np.pi * np.arange(fld.N // 2 + 1) / L
    return SpectralField.from_coeffs(fld.coeffs * np.exp(-1j * k * offset), fld.N)


def noise_initial_condition(cfg, rng):
    """u(x,0) = noise_amplitude * N(0,1) per grid point."""
    return SpectralField.from_grid(
        cfg.noise_amplitude * rng.standard_normal(cfg.N)
    )
