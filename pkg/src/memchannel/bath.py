"""Bath models, memory kernels and the memory-channel decomposition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .specfun import bessel_j1, gamma_fn, hankel_h1, regularized_hankel_quotient


@dataclass(frozen=True)
class OhmicBath:
    alpha: float = 0.1
    s_exponent: float = 1.0
    omega_c: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.s_exponent > 0:
            raise ValueError("s_exponent must be positive")
        if not self.omega_c > 0:
            raise ValueError("omega_c must be positive")

    def coupling(self, omega):
        return coupling_ohmic(self, omega)

    def spectral_density(self, omega):
        """|c(omega)|^2."""
        return coupling_ohmic(self, omega) ** 2

    def memory(self, tau):
        return memory_ohmic(self, tau)

    def frequency_range(self, coverage: float = 0.9999) -> tuple[float, float]:
        """[0, w] holding ``coverage`` of the integrated spectral weight."""
        from scipy.special import gammaincinv

        return 0.0, float(gammaincinv(self.s_exponent + 1.0, coverage) * self.omega_c)


@dataclass(frozen=True)
class WaveguideBath:
    """Semi-infinite waveguide with band ``[epsilon - 2h, epsilon + 2h]``.

    ``kernel_scale`` multiplies the memory kernel; 1.0 keeps ``M(0) = 1``,
    ``h**2`` gives the kernel obtained by integrating ``c(k) = h sqrt(2/pi) sin k``.
    """

    epsilon: float = 1.0
    h: float = 0.05
    kernel_scale: float = 1.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("hopping h must be positive (degenerate band)")
        if not self.epsilon - 2 * self.h < self.epsilon + 2 * self.h:
            raise ValueError("band edges must be ordered")
        if self.kernel_scale < 0:
            raise ValueError("kernel_scale must be non-negative")

    @property
    def band(self) -> tuple[float, float]:
        return self.epsilon - 2 * self.h, self.epsilon + 2 * self.h

    def frequency_range(self, coverage: float = 1.0) -> tuple[float, float]:
        return self.band

    def spectral_density(self, omega):
        """|c(omega)|^2 normalized so that its integral equals ``kernel_scale``."""
        w = np.asarray(omega, dtype=float)
        x = (w - self.epsilon) / (2 * self.h)
        inside = np.clip(1.0 - x * x, 0.0, None)
        return self.kernel_scale * np.sqrt(inside) / (math.pi * self.h)

    def coupling(self, omega):
        return np.sqrt(self.spectral_density(omega))

    def memory(self, tau):
        return memory_waveguide(self, tau)


@dataclass(frozen=True)
class MemoryChannel:
    frequency: float
    kernel: Callable[[np.ndarray], np.ndarray]


def _nonneg(omega, name="omega"):
    w = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} must be finite")
    if np.any(w < 0):
        raise ValueError(f"{name} must be non-negative")
    return w


def _scalar(x):
    return x.item() if np.ndim(x) == 0 else x


def coupling_ohmic(bath: OhmicBath, omega):
    w = _nonneg(omega)
    wc = bath.omega_c
    val = math.sqrt(bath.alpha * wc / 2) * (w / wc) ** (bath.s_exponent / 2) * np.exp(-w / (2 * wc))
    return _scalar(val)


def memory_ohmic(bath: OhmicBath, tau):
    t = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("tau must be finite")
    s, wc = bath.s_exponent, bath.omega_c
    pref = bath.alpha * wc * wc / 2 * gamma_fn(s + 1)
    val = pref / (1 + 1j * t * wc) ** (s + 1)
    return _scalar(val)


def memory_waveguide(bath: WaveguideBath, tau):
    """``kernel_scale * exp(-i eps tau) J1(2 h tau) / (h tau)``, equal to 1 at 0."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("tau must be finite and non-negative")
    z = 2 * bath.h * t
    ratio = np.empty_like(z)
    small = z < 1e-8
    ratio[small] = 1.0 - z[small] ** 2 / 8
    ratio[~small] = 2 * bessel_j1(z[~small]) / z[~small]
    val = bath.kernel_scale * np.exp(-1j * bath.epsilon * t) * ratio
    return _scalar(val)


def waveguide_envelope(bath: WaveguideBath, tau):
    """Non-oscillating envelope ``|H_1(2 h tau)| / (h tau)`` bounding ``|M(tau)|``."""
    t = np.asarray(tau, dtype=float)
    if np.any(t <= 0):
        raise ValueError("tau must be positive")
    z = 2 * bath.h * t
    return _scalar(bath.kernel_scale * 2 * np.abs(hankel_h1(1, z)) / z)


def channel_frequencies(bath: WaveguideBath) -> list[float]:
    lo, hi = bath.band
    return [lo, hi]


def channel_kernel(bath: WaveguideBath, k: int, tau):
    """Regularized channel kernel M_k(tau), k in {1, 2}.

    ``M_1 = exp(-2ih tau) (H1^(1)(z)/z + i R(z))`` and
    ``M_2 = exp(+2ih tau) (H1^(2)(z)/z - i R(z))`` with ``z = 2 h tau``.
    """
    if k not in (1, 2):
        raise ValueError(f"invalid channel index {k!r}; expected 1 or 2")
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("tau must be finite and non-negative")
    z = 2 * bath.h * t
    phase = np.exp(-1j * z) if k == 1 else np.exp(1j * z)
    val = bath.kernel_scale * phase * regularized_hankel_quotient(k, z)
    return _scalar(val)


def memory_channels(bath: WaveguideBath) -> list[MemoryChannel]:
    freqs = channel_frequencies(bath)
    return [
        MemoryChannel(freqs[i], lambda tau, _k=i + 1: channel_kernel(bath, _k, tau))
        for i in range(2)
    ]


def reconstruct_memory(bath: WaveguideBath, tau):
    """Sum over channels ``exp(-i eps_k tau) M_k(tau)``."""
    t = np.asarray(tau, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for ch in memory_channels(bath):
        out = out + np.exp(-1j * ch.frequency * t) * ch.kernel(t)
    return _scalar(out)


def fit_tail_exponent(kernel: Callable, window: Sequence[float], n_points: int = 400) -> float:
    """Least-squares slope of ``log|M|`` against ``log tau`` on a log-spaced window.

    A pure phase factor such as ``exp(-+2ih tau)`` on a channel kernel drops out
    of the modulus, so the envelope is just ``|M|``.
    """
    lo, hi = float(window[0]), float(window[1])
    if not (lo > 0 and hi > lo):
        raise ValueError("degenerate window: need 0 < tau_lo < tau_hi")
    taus = np.logspace(math.log10(lo), math.log10(hi), n_points)
    env = np.abs(np.asarray(kernel(taus)))
    if np.any(env <= 0) or not np.all(np.isfinite(env)):
        raise ValueError("kernel envelope vanishes on the window")
    slope, _ = np.polyfit(np.log(taus), np.log(env), 1)
    return float(slope)
