"""Brute-force mode-basis solver for the dressed stochastic equation.

The waveguide band is sampled at midpoint wavevectors ``k_j = (j + 1/2) pi / N``
with ``omega_j = eps + 2h cos k_j`` and ``c_j = sqrt(kernel_scale) sqrt(2/N) sin k_j``
(``kernel_scale = h**2`` is the native chain normalization).  The bath state is
truncated at ``n_max`` quanta:

    |Psi> = psi0 |0> + sum_j psi1_j a_j^+ |0> + 1/2 sum_ij psi2_ij a_i^+ a_j^+ |0>,

with ``psi2`` symmetric.  Because the mode couplings form a finite sum of
exponentials, the shift field ``phi(t)`` is carried by auxiliary amplitudes
``y_j`` obeying ``dy_j/dt = -i omega_j y_j - i sbar(t)``, which integrates the
discrete-kernel convolution exactly alongside the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bath import WaveguideBath
from .hierarchy import DEGENERATE_NORM, SystemModel, TrajectoryRecord, half_step_times, n_steps_for, sbar
from .noise import SpectralNoise, xi_batch

MAX_DIMENSION = 100_000


@dataclass(frozen=True)
class ModeBasis:
    n_modes: int
    epsilon: float = 1.0
    h: float = 0.05
    kernel_scale: float = 1.0
    n_max: int = 2

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be positive")
        if self.n_max not in (0, 1, 2):
            raise ValueError("n_max must be 0, 1 or 2")
        if not self.h > 0:
            raise ValueError("h must be positive")

    @classmethod
    def for_bath(cls, bath: WaveguideBath, n_modes: int, n_max: int = 2) -> "ModeBasis":
        return cls(n_modes, bath.epsilon, bath.h, bath.kernel_scale, n_max)

    @property
    def k_points(self) -> np.ndarray:
        return (np.arange(self.n_modes) + 0.5) * math.pi / self.n_modes

    @property
    def omegas(self) -> np.ndarray:
        return self.epsilon + 2 * self.h * np.cos(self.k_points)

    @property
    def couplings(self) -> np.ndarray:
        return math.sqrt(self.kernel_scale * 2.0 / self.n_modes) * np.sin(self.k_points)

    def dimension(self, d: int) -> int:
        return d * sum(math.comb(self.n_modes + n - 1, n) for n in range(self.n_max + 1))


def discrete_mode_kernel(basis: ModeBasis, tau):
    """sum_j |c_j|^2 exp(-i omega_j tau)."""
    t = np.asarray(tau, dtype=float)
    w = basis.couplings ** 2
    val = np.exp(-1j * np.multiply.outer(t, basis.omegas)) @ w
    return val.item() if np.ndim(val) == 0 else val


class _Rhs:
    def __init__(self, model: SystemModel, basis: ModeBasis, shift: bool, force_zero_sbar: bool):
        self.model = model
        self.s = np.asarray(model.s_op, dtype=complex)
        self.sd = self.s.conj().T
        self.w = basis.omegas
        self.c = basis.couplings
        self.c2 = self.c ** 2
        self.n_max = basis.n_max
        self.shift = shift
        self.zero_sbar = force_zero_sbar

    def __call__(self, t, xi_t, psi0, psi1, psi2, y):
        s, sd, c = self.s, self.sd, self.c
        d = s.shape[0]
        if self.zero_sbar:
            sb = np.zeros(psi0.shape[0], dtype=complex)
        else:
            sb = sbar(psi0, s)
            sb = np.where(np.isnan(sb), 0.0, sb)
        phi = y @ self.c2 if self.shift else np.zeros_like(sb)
        field_ = xi_t + np.conj(phi)
        H = self.model.h_s(t)[None] + s[None] * field_[:, None, None]      # (B, d, d)
        A = sd[None] - np.conj(sb)[:, None, None] * np.eye(d)
        d0 = -1j * np.einsum("bde,be->bd", H, psi0)
        d1 = d2 = None
        if self.n_max >= 1:
            d0 += -1j * np.einsum("bde,be->bd", A, np.einsum("j,bjd->bd", c, psi1))
            sp0 = psi0 @ s.T
            d1 = (-1j * np.einsum("bde,bje->bjd", H, psi1)
                  - 1j * self.w[None, :, None] * psi1
                  - 1j * c[None, :, None] * sp0[:, None, :])
            if self.n_max >= 2:
                absorbed = np.einsum("i,bijd->bjd", c, psi2)
                d1 += -1j * np.einsum("bde,bje->bjd", A, absorbed)
                sp1 = psi1 @ s.T                                             # (B, N, d)
                src = c[None, :, None, None] * sp1[:, None, :, :] + c[None, None, :, None] * sp1[:, :, None, :]
                wsum = self.w[:, None] + self.w[None, :]
                d2 = (-1j * np.einsum("bde,bije->bijd", H, psi2)
                      - 1j * wsum[None, :, :, None] * psi2
                      - 1j * src)
        dy = -1j * self.w[None, :] * y - 1j * sb[:, None]
        return d0, d1, d2, dy


def _axpy(state, k, a):
    return tuple(None if s is None else s + a * ks for s, ks in zip(state, k))


def solve_sse_modes(model: SystemModel, basis: ModeBasis, noises: Sequence[SpectralNoise] | None,
                    t_total: float, dt: float, *, output_stride: int = 1, n_batch: int | None = None,
                    coupling=None, shift: bool = True, force_zero_sbar: bool = False,
                    return_full: bool = False):
    """Integrate a batch of trajectories with fixed-step RK4.

    ``noises`` share the hierarchy's xi synthesis (``coupling`` defaults to the
    waveguide coupling of the same band and scale).  Returns a
    :class:`TrajectoryRecord` of the vacuum amplitude; with ``return_full`` the
    final ``(psi0, psi1, psi2)`` are returned as well.
    """
    d = model.dim
    dim = basis.dimension(d)
    if dim > MAX_DIMENSION:
        raise ValueError(f"mode-basis state dimension {dim} exceeds {MAX_DIMENSION}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_steps = n_steps_for(t_total, dt)
    if noises is None:
        B = n_batch or 1
        xi = np.zeros((B, 2 * n_steps + 1), dtype=complex)
    else:
        if coupling is None:
            coupling = WaveguideBath(basis.epsilon, basis.h, basis.kernel_scale).coupling
        xi = xi_batch(list(noises), coupling, half_step_times(t_total, dt))
        B = len(noises)
    N = basis.n_modes
    psi0 = np.tile(np.asarray(model.psi0, dtype=complex), (B, 1))
    psi1 = np.zeros((B, N, d), dtype=complex) if basis.n_max >= 1 else None
    psi2 = np.zeros((B, N, N, d), dtype=complex) if basis.n_max >= 2 else None
    y = np.zeros((B, N), dtype=complex)
    state = (psi0, psi1, psi2, y)
    rhs = _Rhs(model, basis, shift, force_zero_sbar)

    out_idx = list(range(0, n_steps + 1, output_stride))
    if out_idx[-1] != n_steps:
        out_idx.append(n_steps)
    rec = np.empty((B, len(out_idx), d), dtype=complex)
    rec[:, 0] = psi0
    j = 1
    degenerate = np.zeros(B, dtype=bool)
    fail = np.full(B, np.nan)
    for n in range(n_steps):
        t = n * dt
        k1 = rhs(t, xi[:, 2 * n], *state)
        k2 = rhs(t + dt / 2, xi[:, 2 * n + 1], *_axpy(state, k1, dt / 2))
        k3 = rhs(t + dt / 2, xi[:, 2 * n + 1], *_axpy(state, k2, dt / 2))
        k4 = rhs(t + dt, xi[:, 2 * n + 2], *_axpy(state, k3, dt))
        state = tuple(None if s is None else s + dt / 6 * (a + 2 * b + 2 * c + e)
                      for s, a, b, c, e in zip(state, k1, k2, k3, k4))
        nrm = np.einsum("bd,bd->b", state[0].conj(), state[0]).real
        newly = (nrm < DEGENERATE_NORM) & ~degenerate
        fail[newly] = t + dt
        degenerate |= newly
        if j < len(out_idx) and out_idx[j] == n + 1:
            rec[:, j] = state[0]
            j += 1
    result = TrajectoryRecord(np.array(out_idx) * dt, rec, degenerate, fail)
    if return_full:
        return result, state[:3]
    return result


def full_norm2(psi0, psi1, psi2) -> np.ndarray:
    """<Psi|Psi> of the truncated Fock state, one value per trajectory."""
    out = np.einsum("bd,bd->b", psi0.conj(), psi0).real
    if psi1 is not None:
        out = out + np.einsum("bjd,bjd->b", psi1.conj(), psi1).real
    if psi2 is not None:
        out = out + 0.5 * np.einsum("bijd,bijd->b", psi2.conj(), psi2).real
    return out


def reduced_density(psi0, psi1, psi2) -> np.ndarray:
    """Partial trace over the truncated bath, one matrix per trajectory."""
    rho = np.einsum("bd,be->bde", psi0, psi0.conj())
    if psi1 is not None:
        rho = rho + np.einsum("bjd,bje->bde", psi1, psi1.conj())
    if psi2 is not None:
        rho = rho + 0.5 * np.einsum("bijd,bije->bde", psi2, psi2.conj())
    return rho


def closed_system_density(model: SystemModel, basis: ModeBasis, t_total: float, dt: float,
                          output_stride: int = 1):
    """Reduced density matrix of the full Hermitian system+modes evolution.

    Reference for the trajectory ensemble: no noise, no shift and no mean-field
    subtraction, with the bath traced out at each output time.
    """
    d = model.dim
    if basis.dimension(d) > MAX_DIMENSION:
        raise ValueError("mode-basis state dimension exceeds the guard")
    n_steps = n_steps_for(t_total, dt)
    N = basis.n_modes
    s = np.asarray(model.s_op, dtype=complex)
    sd = s.conj().T
    c, w = basis.couplings, basis.omegas

    def f(t, p0, p1, p2):
        H = model.h_s(t)
        d0 = -1j * p0 @ H.T
        d1 = d2 = None
        if p1 is not None:
            d0 = d0 - 1j * (np.einsum("j,bjd->bd", c, p1) @ sd.T)
            d1 = -1j * (p1 @ H.T) - 1j * w[None, :, None] * p1 - 1j * c[None, :, None] * (p0 @ s.T)[:, None]
            if p2 is not None:
                d1 = d1 - 1j * (np.einsum("i,bijd->bjd", c, p2) @ sd.T)
                sp1 = p1 @ s.T
                src = c[None, :, None, None] * sp1[:, None] + c[None, None, :, None] * sp1[:, :, None]
                d2 = (-1j * (p2 @ H.T) - 1j * (w[:, None] + w[None, :])[None, :, :, None] * p2 - 1j * src)
        return d0, d1, d2

    p = (np.asarray(model.psi0, dtype=complex)[None],
         np.zeros((1, N, d), complex) if basis.n_max >= 1 else None,
         np.zeros((1, N, N, d), complex) if basis.n_max >= 2 else None)
    out_idx = list(range(0, n_steps + 1, output_stride))
    if out_idx[-1] != n_steps:
        out_idx.append(n_steps)
    rhos = [reduced_density(*p)[0]]
    for n in range(n_steps):
        t = n * dt
        k1 = f(t, *p)
        k2 = f(t + dt / 2, *_axpy(p, k1, dt / 2))
        k3 = f(t + dt / 2, *_axpy(p, k2, dt / 2))
        k4 = f(t + dt, *_axpy(p, k3, dt))
        p = tuple(None if x is None else x + dt / 6 * (a + 2 * b + 2 * cc + e)
                  for x, a, b, cc, e in zip(p, k1, k2, k3, k4))
        if n + 1 in out_idx:
            rhos.append(reduced_density(*p)[0])
    return np.array(out_idx) * dt, np.array(rhos)
