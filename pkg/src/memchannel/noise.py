"""Complex Gaussian spectral noise z(omega) and its time signal xi(t).

The noise lives on a uniform midpoint grid over the bath band.  Samples are
``z_j = zeta_j / sqrt(d_omega)`` with ``zeta_j`` i.i.d. circular complex
Gaussians of unit variance drawn from numpy's PCG64 generator seeded with the
trajectory seed, so a ``(grid, seed)`` pair fixes the realization on every
platform.  The time signal is the spectral sum

    xi(t) = sum_j d_omega * conj(c(omega_j)) * z_j * exp(i omega_j t),

whose covariance ``E[conj(xi(t)) xi(t')]`` reproduces ``M(t - t')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_CHUNK = 4096


@dataclass(frozen=True)
class NoiseGrid:
    omega_min: float
    omega_max: float
    n_points: int

    def __post_init__(self):
        if self.omega_min < 0:
            raise ValueError("omega_min must be >= 0")
        if not self.omega_max > self.omega_min:
            raise ValueError("omega_max must exceed omega_min")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")

    @property
    def delta_omega(self) -> float:
        return (self.omega_max - self.omega_min) / self.n_points

    @property
    def omegas(self) -> np.ndarray:
        return self.omega_min + (np.arange(self.n_points) + 0.5) * self.delta_omega

    @property
    def recurrence_time(self) -> float:
        return 2 * math.pi / self.delta_omega

    def check_window(self, t_total: float) -> None:
        if not self.recurrence_time > t_total:
            raise ValueError(
                f"noise grid recurs after {self.recurrence_time:.4g}, "
                f"shorter than the simulated window {t_total:.4g}")

    @classmethod
    def for_bath(cls, bath, t_total: float, recurrence_factor: float = 2.0,
                 min_points: int = 16) -> "NoiseGrid":
        """Grid covering the bath band with recurrence time ``factor * t_total``."""
        lo, hi = bath.frequency_range()
        dw = 2 * math.pi / (recurrence_factor * max(t_total, 1e-12))
        n = max(min_points, int(math.ceil((hi - lo) / dw)))
        return cls(lo, hi, n)


@dataclass(frozen=True)
class SpectralNoise:
    grid: NoiseGrid
    samples: np.ndarray
    seed: int


def sample_noise(grid: NoiseGrid, seed: int) -> SpectralNoise:
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    raw = rng.standard_normal((grid.n_points, 2))
    zeta = (raw[:, 0] + 1j * raw[:, 1]) / math.sqrt(2.0)
    z = zeta / math.sqrt(grid.delta_omega)
    z.setflags(write=False)
    return SpectralNoise(grid, z, int(seed))


def _amplitudes(noise: SpectralNoise, coupling) -> np.ndarray:
    c = np.asarray(coupling(noise.grid.omegas), dtype=complex)
    return noise.grid.delta_omega * np.conj(c) * noise.samples


def xi(noise: SpectralNoise, coupling, t: float) -> complex:
    """Single-time evaluation of the noise signal."""
    amp = _amplitudes(noise, coupling)
    return complex(np.sum(amp * np.exp(1j * noise.grid.omegas * t)))


def precompute_xi_series(noise: SpectralNoise, coupling, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("times must be sorted ascending")
    return xi_batch([noise], coupling, times)[0]


def xi_batch(noises, coupling, times) -> np.ndarray:
    """xi(t) for several realizations on a common grid; shape (n_noise, n_times)."""
    times = np.asarray(times, dtype=float)
    if not noises:
        return np.zeros((0, times.size), dtype=complex)
    grid = noises[0].grid
    if any(n.grid != grid for n in noises):
        raise ValueError("all realizations must share one noise grid")
    amps = np.stack([_amplitudes(n, coupling) for n in noises])
    omegas = grid.omegas
    out = np.empty((len(noises), times.size), dtype=complex)
    for start in range(0, times.size, _CHUNK):
        tt = times[start:start + _CHUNK]
        # the same per-element sum as ``xi`` keeps both paths consistent
        phases = np.exp(1j * omegas[None, :] * tt[:, None])
        out[:, start:start + _CHUNK] = np.einsum("nj,tj->nt", amps, phases)
    return out
