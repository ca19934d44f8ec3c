"""Delay-time hierarchy for dressed stochastic trajectories.

The state of one trajectory is

* ``phi0``   vacuum amplitude, an OQS vector;
* ``phi1``   one virtual quantum per channel, a delay field of OQS vectors;
* ``phi2``   two virtual quanta, a two-argument delay field per channel pair;
* ``shift``  per-channel scalar delay fields whose value at zero delay builds
  the self-consistent shift ``phi(t)``.

All arrays carry a leading batch axis so that many noise realizations advance
together.  Delay fields are stored as nodal dofs of a :class:`DelayGrid`
(see :mod:`memchannel.grid`); dof 0 is always the value at zero delay.

Pair amplitudes are stored for every ordered channel pair with
``phi2[l, k](s1, s2) == phi2[k, l](s2, s1)``; same-channel amplitudes carry the
conventional factor 1/2 of the emission source, so the absorption term reads
``phi2[k,k](0, s) + phi2[k,k](s, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.linalg import expm

from .bath import OhmicBath, WaveguideBath, channel_frequencies, channel_kernel, memory_ohmic
from .grid import DelayGrid, node_dofs, shift_matrix
from .noise import SpectralNoise, xi_batch

DEGENERATE_NORM = 1e-30

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
EXCITED = SIGMA_PLUS @ SIGMA_MINUS


@dataclass(frozen=True)
class DrivenTwoLevel:
    """``eps s+ s- + f(t) s+ + conj(f(t)) s-`` with ``f(t) = A cos(w t)``.

    Basis order is (ground, excited).
    """

    epsilon: float = 1.0
    amplitude: float = 0.1
    frequency: float = 1.0

    def __call__(self, t: float) -> np.ndarray:
        f = self.amplitude * math.cos(self.frequency * t)
        return self.epsilon * EXCITED + f * SIGMA_PLUS + np.conj(f) * SIGMA_MINUS


@dataclass(frozen=True)
class SystemModel:
    h_s: Callable[[float], np.ndarray]
    s_op: np.ndarray
    psi0: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi0, dtype=complex)
        if not math.isclose(np.linalg.norm(psi), 1.0, abs_tol=1e-12):
            raise ValueError("psi0 must be normalized")
        if np.shape(self.s_op) != (psi.size, psi.size):
            raise ValueError("s_op must be a dim x dim matrix")
        h0 = np.asarray(self.h_s(0.0))
        if np.abs(h0 - h0.conj().T).max() > 1e-12:
            raise ValueError("h_s must be Hermitian")

    @property
    def dim(self) -> int:
        return int(np.size(self.psi0))


def driven_two_level(epsilon=1.0, amplitude=0.1, frequency=1.0, psi0=None) -> SystemModel:
    """Benchmark driven two-level system coupled through sigma_minus."""
    if psi0 is None:
        psi0 = np.array([1.0, 0.0], dtype=complex)
    return SystemModel(DrivenTwoLevel(epsilon, amplitude, frequency), SIGMA_MINUS.copy(),
                       np.asarray(psi0, dtype=complex))


def bath_channels(bath):
    """(frequencies, kernels) of the memory channels of a bath."""
    if isinstance(bath, WaveguideBath):
        freqs = channel_frequencies(bath)
        kernels = [lambda tau, _k=k: channel_kernel(bath, _k, tau) for k in (1, 2)]
        return np.array(freqs), kernels
    if isinstance(bath, OhmicBath):
        # single channel at the zero-frequency band edge
        return np.array([0.0]), [lambda tau: memory_ohmic(bath, tau)]
    raise TypeError(f"unsupported bath {type(bath).__name__}")


class DegenerateTrajectory(RuntimeError):
    pass


@dataclass
class HierarchyState:
    """Batched hierarchy amplitudes.

    Layouts (B trajectories, d OQS states, K channels, n delay dofs):
    ``phi0`` (B, d), ``phi1`` (B, d, K, n), ``phi2`` (B, d, K, K, n, n),
    ``shift`` (B, K, n).  Delay axes come last so that delay-time operators
    act as plain matrix products.
    """

    phi0: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    shift: np.ndarray
    t: float = 0.0
    degenerate: np.ndarray = field(default=None)   # (B,) bool
    fail_time: np.ndarray = field(default=None)    # (B,) float, nan if healthy

    def __post_init__(self):
        B = self.phi0.shape[0]
        if self.degenerate is None:
            self.degenerate = np.zeros(B, dtype=bool)
        if self.fail_time is None:
            self.fail_time = np.full(B, np.nan)

    @classmethod
    def vacuum(cls, psi0, n_batch: int, n_channels: int, n_dof: int) -> "HierarchyState":
        d = len(psi0)
        phi0 = np.tile(np.asarray(psi0, dtype=complex), (n_batch, 1))
        return cls(
            phi0=phi0,
            phi1=np.zeros((n_batch, d, n_channels, n_dof), dtype=complex),
            phi2=np.zeros((n_batch, d, n_channels, n_channels, n_dof, n_dof), dtype=complex),
            shift=np.zeros((n_batch, n_channels, n_dof), dtype=complex),
        )

    def copy(self) -> "HierarchyState":
        return HierarchyState(self.phi0.copy(), self.phi1.copy(), self.phi2.copy(),
                              self.shift.copy(), self.t, self.degenerate.copy(),
                              self.fail_time.copy())

    @property
    def n_batch(self) -> int:
        return self.phi0.shape[0]

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.phi0, self.phi1, self.phi2, self.shift))


def sbar(phi0: np.ndarray, s_op: np.ndarray) -> np.ndarray:
    """<phi0|s|phi0> / ||phi0||^2 along the last axis; NaN where degenerate."""
    phi0 = np.asarray(phi0)
    num = np.einsum("...d,de,...e->...", phi0.conj(), s_op, phi0)
    den = np.einsum("...d,...d->...", phi0.conj(), phi0).real
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > DEGENERATE_NORM, num / np.where(den > 0, den, 1.0), np.nan)
    return out


def _safe_sbar(state: HierarchyState, s_op) -> np.ndarray:
    val = sbar(state.phi0, s_op)
    bad = np.isnan(val)
    if bad.any():
        newly = bad & ~state.degenerate
        state.fail_time[newly] = state.t
        state.degenerate |= bad
        val = np.where(bad, 0.0, val)
    return val


class StochasticContext:
    """Immutable per-run data: model, channels, grid matrices and xi samples."""

    def __init__(self, model: SystemModel, bath, grid: DelayGrid, dt: float,
                 xi_series: np.ndarray | None = None, mode: str = "jets",
                 max_quanta: int = 2):
        if max_quanta not in (0, 1, 2):
            raise ValueError("max_quanta must be 0, 1 or 2")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.bath = bath
        self.grid = grid
        self.dt = float(dt)
        self.mode = mode
        self.max_quanta = max_quanta
        self.s_op = np.asarray(model.s_op, dtype=complex)
        self.s_dag = self.s_op.conj().T
        self.eps_k, kernels = bath_channels(bath)
        self.n_dof = grid.n_dof(mode)
        self.kernel_dofs = np.stack([node_dofs(grid, kern, mode) for kern in kernels])
        self.shift_T = shift_matrix(grid, self.dt, mode)
        # xi on the half-step lattice t_j = j * dt / 2, shape (B, n)
        self.xi_series = None if xi_series is None else np.asarray(xi_series, dtype=complex)

    @property
    def n_channels(self) -> int:
        return len(self.eps_k)

    def xi_at(self, half_index: int) -> np.ndarray:
        if self.xi_series is None:
            return 0.0
        return self.xi_series[:, half_index]

    def new_state(self, n_batch: int) -> HierarchyState:
        return HierarchyState.vacuum(self.model.psi0, n_batch, self.n_channels, self.n_dof)


def shift_phi_now(state: HierarchyState, eps_k, t: float) -> np.ndarray:
    """phi(t) = sum_k exp(-i eps_k t) shift_k(0; t), one value per trajectory."""
    phase = np.exp(-1j * np.asarray(eps_k) * t)
    return state.shift[:, :, 0] @ phase


def _absorb_vector(state: HierarchyState, ctx: StochasticContext, t: float) -> np.ndarray:
    phase = np.exp(-1j * ctx.eps_k * t)
    return state.phi1[:, :, :, 0] @ phase


def _left_apply(mats: np.ndarray, arr: np.ndarray) -> np.ndarray:
    """Apply per-trajectory (d, d) matrices to axis 1 of ``arr``."""
    B, d = arr.shape[:2]
    return (mats @ arr.reshape(B, d, -1)).reshape(arr.shape)


def _matvec(mats, vecs):
    return (mats @ vecs[:, :, None])[:, :, 0]


def apply_S(state: HierarchyState, ctx: StochasticContext, t: float, xi_t, delta: float):
    """OQS evolution under H_stoch(t) plus absorption from one-quantum fields.

    Exact propagator for the linear part; the s-bar dependent source uses the
    midpoint rule with s-bar re-evaluated at the sub-step midpoint.
    """
    s, sd = ctx.s_op, ctx.s_dag
    d = s.shape[0]
    field_ = np.asarray(xi_t) + np.conj(shift_phi_now(state, ctx.eps_k, t))
    field_ = np.broadcast_to(field_, (state.n_batch,))
    H = ctx.model.h_s(t)[None, :, :] + s[None] * field_[:, None, None]
    Uh = expm(-0.5j * delta * H)
    U = Uh @ Uh
    eye = np.eye(d)
    phi0 = state.phi0
    if ctx.max_quanta >= 1:
        v0 = _absorb_vector(state, ctx, t)
        sb0 = _safe_sbar(state, s)
        A0 = sd[None] - np.conj(sb0)[:, None, None] * eye
        half = _matvec(Uh, phi0) - 0.5j * delta * _matvec(A0, v0)
        sbm = sbar(half, s)
        sbm = np.where(np.isnan(sbm), 0.0, sbm)
        Am = sd[None] - np.conj(sbm)[:, None, None] * eye
        src = _matvec(Uh, _matvec(Am, _matvec(Uh, v0)))
        state.phi0 = _matvec(U, phi0) - 1j * delta * src
        state.phi1 = _left_apply(U, state.phi1)
        if ctx.max_quanta >= 2:
            state.phi2 = _left_apply(U, state.phi2)
    else:
        state.phi0 = _matvec(U, phi0)
    return state


def _add_pair_source(phi2: np.ndarray, sphi1: np.ndarray, em: np.ndarray, scale: complex):
    """phi2 += scale * s/(1+delta_kl) {E_k M_k(s1) phi1_l(s2) + E_l M_l(s2) phi1_k(s1)}.

    ``sphi1`` holds ``s @ phi1`` and ``em`` the phased kernel dofs ``E_k M_k``.
    """
    K = em.shape[0]
    w = np.where(np.eye(K, dtype=bool), 0.5, 1.0) * scale
    _pair_source_kernel(phi2, np.ascontiguousarray(sphi1), np.ascontiguousarray(em), w.astype(complex))


@njit(cache=True)
def _pair_source_kernel(phi2, sphi1, em, w):
    # the swapped entry sums the same two products in the other order, so a
    # pair-symmetric phi2 stays symmetric bit for bit
    B, d, K, _, n, _ = phi2.shape
    for b in range(B):
        for a in range(d):
            for k in range(K):
                for l in range(K):
                    wkl = w[k, l]
                    for i in range(n):
                        eki = em[k, i]
                        ski = sphi1[b, a, k, i]
                        for j in range(n):
                            phi2[b, a, k, l, i, j] += wkl * (eki * sphi1[b, a, l, j] + em[l, j] * ski)


def _emit_shift(state: HierarchyState, ctx: StochasticContext, t: float, delta: float, sb):
    """Shift-field source -i E_k M_k sbar; returns the phased kernel dofs E_k M_k."""
    em = np.exp(1j * ctx.eps_k * t)[:, None] * ctx.kernel_dofs          # (K, n)
    state.shift = state.shift - 1j * delta * em[None] * np.asarray(sb)[:, None, None]
    return em


def apply_H(state: HierarchyState, ctx: StochasticContext, t: float, delta: float):
    """Emission of virtual quanta and of the shift field (exact, nilpotent)."""
    sb = _safe_sbar(state, ctx.s_op)
    em = _emit_shift(state, ctx, t, delta, sb)
    if ctx.max_quanta == 0:
        return state
    sphi0 = state.phi0 @ ctx.s_op.T                                      # (B, d)
    rate1 = -1j * sphi0[:, :, None, None] * em[None, None]               # (B, d, K, n)
    if ctx.max_quanta >= 2:
        # the pair source is linear in phi1, which grows linearly over the sub-step
        mid = state.phi1 + 0.5 * delta * rate1
        s_b = np.broadcast_to(ctx.s_op, (state.n_batch,) + ctx.s_op.shape)
        _add_pair_source(state.phi2, _left_apply(s_b, mid), em, -1j * delta)
    state.phi1 = state.phi1 + delta * rate1
    return state


def apply_B(state: HierarchyState, ctx: StochasticContext, t: float, delta: float):
    """Absorption of one quantum out of the pair amplitudes (exact, nilpotent)."""
    if ctx.max_quanta < 2:
        return state
    sb = _safe_sbar(state, ctx.s_op)
    phase = np.exp(-1j * ctx.eps_k * t)
    p2 = state.phi2
    # sum_l E*_l phi2[k,l](s, 0)  +  E*_k phi2[k,k](0, s)
    w = np.einsum("l,bdkln->bdkn", phase, p2[..., 0])
    diag = np.einsum("bdkkn->bdkn", p2[:, :, :, :, 0, :])
    w = w + phase[None, None, :, None] * diag
    A = ctx.s_dag[None] - np.conj(sb)[:, None, None] * np.eye(ctx.s_op.shape[0])
    state.phi1 = state.phi1 - 1j * delta * _left_apply(A, w)
    return state


def _symmetrize_pairs(p2: np.ndarray) -> np.ndarray:
    """Enforce phi2[k,l](s1,s2) == phi2[l,k](s2,s1) exactly."""
    return 0.5 * (p2 + p2.transpose(0, 1, 3, 2, 5, 4))


@njit(cache=True)
def _band_rows(T, lo, hi, x, out):
    # out = T @ x for a banded real T and a real (n, m) block
    n, m = x.shape
    for i in range(n):
        for c in range(m):
            out[i, c] = 0.0
        for q in range(lo[i], hi[i]):
            t = T[i, q]
            for c in range(m):
                out[i, c] += t * x[q, c]


@njit(cache=True)
def _complex_transpose(x, out):
    # x, out are (n, 2n) real views of complex (n, n) blocks
    n = x.shape[0]
    for i in range(n):
        for j in range(n):
            out[j, 2 * i] = x[i, 2 * j]
            out[j, 2 * i + 1] = x[i, 2 * j + 1]


@njit(cache=True)
def _shift_pairs_kernel(T, lo, hi, p2, out):
    # p2, out: real views of shape (B, d, K, K, n, 2n)
    B, d, K, _, n, _ = p2.shape
    rows = np.empty((n, 2 * n))
    rows_t = np.empty((n, 2 * n))
    y_t = np.empty((n, 2 * n))
    for b in range(B):
        for a in range(d):
            for k in range(K):
                for l in range(k, K):
                    _band_rows(T, lo, hi, p2[b, a, k, l], rows)
                    _complex_transpose(rows, rows_t)
                    _band_rows(T, lo, hi, rows_t, y_t)
                    if k == l:
                        y = out[b, a, k, k]
                        for i in range(n):
                            for j in range(n):
                                y[i, 2 * j] = 0.5 * (y_t[j, 2 * i] + y_t[i, 2 * j])
                                y[i, 2 * j + 1] = 0.5 * (y_t[j, 2 * i + 1] + y_t[i, 2 * j + 1])
                    else:
                        out[b, a, l, k] = y_t
                        _complex_transpose(y_t, out[b, a, k, l])


def _nonzero_span(T: np.ndarray):
    """Per row, the half-open column range holding its nonzero entries."""
    nz = T != 0
    some = nz.any(axis=1)
    lo = np.where(some, nz.argmax(axis=1), 0)
    hi = np.where(some, T.shape[1] - nz[:, ::-1].argmax(axis=1), 0)
    return lo, hi


def _shift_pairs(T: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Shift both delay arguments of pair-symmetric amplitudes.

    Only blocks with k <= l are propagated; their mirrors are filled by the
    pair symmetry, which therefore holds exactly afterwards.
    """
    lo, hi = _nonzero_span(T)
    out = np.empty_like(p2)
    _shift_pairs_kernel(np.ascontiguousarray(T, dtype=float), lo, hi,
                        np.ascontiguousarray(p2).view(np.float64), out.view(np.float64))
    return out


def apply_D(state: HierarchyState, ctx: StochasticContext, dt: float | None = None):
    """Free flow in delay time for every delay-dependent field."""
    T = ctx.shift_T if dt is None or dt == ctx.dt else shift_matrix(ctx.grid, dt, ctx.mode)
    n = T.shape[0]
    Tt = T.T
    state.shift = (state.shift.reshape(-1, n) @ Tt).reshape(state.shift.shape)
    if ctx.max_quanta >= 1:
        state.phi1 = (state.phi1.reshape(-1, n) @ Tt).reshape(state.phi1.shape)
    if ctx.max_quanta >= 2:
        state.phi2 = _shift_pairs(T, state.phi2)
    return state


def step(state: HierarchyState, ctx: StochasticContext, n: int) -> HierarchyState:
    """Advance from t_n = n*dt to t_{n+1} by the symmetric split-operator scheme."""
    dt = ctx.dt
    t0 = n * dt
    t1 = t0 + dt
    half = 0.5 * dt
    apply_S(state, ctx, t0, ctx.xi_at(2 * n), half)
    apply_H(state, ctx, t0, half)
    apply_B(state, ctx, t0, half)
    apply_D(state, ctx)
    apply_B(state, ctx, t1, half)
    apply_H(state, ctx, t1, half)
    apply_S(state, ctx, t1, ctx.xi_at(2 * n + 2), half)
    state.t = t1
    return state


def shift_field_history(bath, grid: DelayGrid, sbar_fn: Callable[[float], complex], t_total: float,
                        dt: float, mode: str = "jets") -> tuple[np.ndarray, np.ndarray]:
    """phi(t) produced by the delay-time shift fields for a prescribed sbar(t).

    Uses the same emission and free-flow sub-steps as :func:`step`, so it
    isolates the shift-field machinery from the rest of the hierarchy.
    """
    zero = np.zeros((1, 1), dtype=complex)
    model = SystemModel(lambda t: zero, zero, np.ones(1, dtype=complex))
    ctx = StochasticContext(model, bath, grid, dt, mode=mode, max_quanta=0)
    state = ctx.new_state(1)
    n_steps = n_steps_for(t_total, dt)
    out = np.empty(n_steps + 1, dtype=complex)
    out[0] = shift_phi_now(state, ctx.eps_k, 0.0)[0]
    for n in range(n_steps):
        t0, t1 = n * dt, (n + 1) * dt
        _emit_shift(state, ctx, t0, 0.5 * dt, [sbar_fn(t0)])
        apply_D(state, ctx)
        _emit_shift(state, ctx, t1, 0.5 * dt, [sbar_fn(t1)])
        out[n + 1] = shift_phi_now(state, ctx.eps_k, t1)[0]
    return np.arange(n_steps + 1) * dt, out


@dataclass
class TrajectoryRecord:
    times: np.ndarray          # (n_out,)
    phi0: np.ndarray           # (B, n_out, d)
    degenerate: np.ndarray     # (B,)
    fail_time: np.ndarray      # (B,)

    @property
    def rho(self) -> np.ndarray:
        """Per-trajectory |phi0><phi0|, shape (B, n_out, d, d)."""
        return np.einsum("btd,bte->btde", self.phi0, self.phi0.conj())

    @property
    def norm2(self) -> np.ndarray:
        return np.einsum("btd,btd->bt", self.phi0.conj(), self.phi0).real


def n_steps_for(t_total: float, dt: float) -> int:
    return int(round(t_total / dt)) if t_total > 0 else 0


def half_step_times(t_total: float, dt: float) -> np.ndarray:
    n = n_steps_for(t_total, dt)
    return np.arange(2 * n + 1) * (0.5 * dt)


def propagate(ctx: StochasticContext, n_batch: int, t_total: float, output_stride: int = 1,
              state: HierarchyState | None = None) -> TrajectoryRecord:
    n_steps = n_steps_for(t_total, ctx.dt)
    if state is None:
        state = ctx.new_state(n_batch)
    out_idx = list(range(0, n_steps + 1, output_stride))
    if out_idx[-1] != n_steps:
        out_idx.append(n_steps)
    rec = np.empty((state.n_batch, len(out_idx), ctx.model.dim), dtype=complex)
    j = 0
    if out_idx[0] == 0:
        rec[:, 0] = state.phi0
        j = 1
    for n in range(n_steps):
        step(state, ctx, n)
        if j < len(out_idx) and out_idx[j] == n + 1:
            rec[:, j] = state.phi0
            j += 1
    times = np.array(out_idx) * ctx.dt
    return TrajectoryRecord(times, rec, state.degenerate.copy(), state.fail_time.copy())


def run_trajectories(model: SystemModel, bath, grid: DelayGrid, noises: Sequence[SpectralNoise] | None,
                     t_total: float, dt: float, *, max_quanta: int = 2, mode: str = "jets",
                     output_stride: int = 1, n_batch: int | None = None) -> TrajectoryRecord:
    """Propagate a batch of trajectories, one per noise realization.

    ``noises=None`` runs noise-free trajectories (``n_batch`` of them).
    """
    if noises is None:
        xi = None
        B = n_batch or 1
    else:
        xi = xi_batch(list(noises), bath.coupling, half_step_times(t_total, dt))
        B = len(noises)
    ctx = StochasticContext(model, bath, grid, dt, xi, mode=mode, max_quanta=max_quanta)
    return propagate(ctx, B, t_total, output_stride)


def run_trajectory(model: SystemModel, bath, grid: DelayGrid, noise: SpectralNoise | None,
                   t_total: float, dt: float, **kw) -> TrajectoryRecord:
    """Single trajectory; raises if it degenerates."""
    rec = run_trajectories(model, bath, grid, None if noise is None else [noise], t_total, dt, **kw)
    if rec.degenerate[0]:
        raise DegenerateTrajectory(f"vacuum amplitude vanished at t={rec.fail_time[0]:.6g}")
    return rec
