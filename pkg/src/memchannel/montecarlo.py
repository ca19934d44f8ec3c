"""Trajectory ensembles and the reduced-density-matrix estimator.

Trajectories are processed in fixed chunks of consecutive indices and the
per-chunk moments are merged in index order, so a given configuration always
produces bit-identical results, whatever the number of worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bath import OhmicBath, WaveguideBath
from .config import RunConfig
from .grid import DelayGrid
from .hierarchy import driven_two_level, run_trajectories
from .noise import NoiseGrid, sample_noise
from .oracle import ModeBasis, solve_sse_modes


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DensitySeries:
    """Ensemble estimate of rho(t).

    ``cov`` holds the across-trajectory covariance of vec(rho) per time,
    ``cov[t, a, b] = E[(x_a - m_a) conj(x_b - m_b)]``, from which standard
    errors of any linear functional follow exactly.
    """

    times: np.ndarray
    rho: np.ndarray            # (n_t, d, d)
    cov: np.ndarray            # (n_t, d*d, d*d)
    n_traj: int
    n_degenerate: int

    @property
    def n_used(self) -> int:
        return self.n_traj - self.n_degenerate

    @property
    def stderr(self) -> np.ndarray:
        """Per-entry standard error (modulus of the complex deviation)."""
        n_t, d = self.rho.shape[0], self.rho.shape[1]
        var = np.einsum("taa->ta", self.cov).real.reshape(n_t, d, d)
        if self.n_used < 2:
            return np.full(var.shape, np.nan)
        return np.sqrt(np.clip(var, 0, None) / self.n_used)

    @property
    def trace(self) -> np.ndarray:
        return np.einsum("tii->t", self.rho).real


@dataclass(frozen=True)
class _Moments:
    """Count, mean and centred second moment of vec(P) per time."""

    n: int
    mean: np.ndarray           # (n_t, D)
    m2: np.ndarray             # (n_t, D, D)

    @classmethod
    def of(cls, P: np.ndarray) -> "_Moments":
        B, n_t = P.shape[:2]
        D = int(np.prod(P.shape[2:]))
        if B == 0:
            return cls(0, np.zeros((n_t, D), complex), np.zeros((n_t, D, D), complex))
        x = P.reshape(B, n_t, D)
        mean = x.mean(axis=0)
        dev = x - mean
        return cls(B, mean, np.einsum("bta,btc->tac", dev, dev.conj()))

    def merge(self, other: "_Moments") -> "_Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + np.einsum("ta,tc->tac", delta, delta.conj()) * (self.n * other.n / n)
        return _Moments(n, mean, m2)


def trajectory_projectors(phi0: np.ndarray, weighting: str = "normalized") -> np.ndarray:
    """Per-trajectory contributions phi phi^+ (unit) or phi phi^+/|phi|^2 (normalized)."""
    P = np.einsum("btd,bte->btde", phi0, phi0.conj())
    if weighting == "normalized":
        n2 = np.einsum("btd,btd->bt", phi0.conj(), phi0).real
        P = P / n2[:, :, None, None]
    elif weighting != "unit":
        raise ValueError(f"unknown weighting {weighting!r}")
    # exact Hermiticity of every contribution
    return 0.5 * (P + np.conj(np.swapaxes(P, -1, -2)))


def series_from_projectors(times, P: np.ndarray, n_degenerate: int = 0) -> DensitySeries:
    return _finish(times, _Moments.of(P), P.shape[0] + n_degenerate, n_degenerate, P.shape[-1])


def _finish(times, mom: _Moments, n_traj, n_deg, d) -> DensitySeries:
    cov = mom.m2 / (mom.n - 1) if mom.n > 1 else np.zeros_like(mom.m2)
    rho = mom.mean.reshape(-1, d, d)
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    return DensitySeries(np.asarray(times, dtype=float), rho, cov, n_traj, n_deg)


def build_bath(config: RunConfig):
    if config.bath == "waveguide":
        return WaveguideBath(config.band_center, config.h, config.resolved_kernel_scale)
    return OhmicBath(config.ohmic_alpha, config.ohmic_s, config.ohmic_omega_c)


def build_model(config: RunConfig):
    psi0 = np.array([1, 0], dtype=complex) if config.initial_state == "ground" else np.array([0, 1], dtype=complex)
    return driven_two_level(config.epsilon, config.drive_amplitude, config.drive_frequency, psi0)


def build_grid(config: RunConfig) -> DelayGrid:
    return DelayGrid(a=config.grid_a, b=config.grid_b, c=config.grid_c, h=config.h,
                     sigma_max=config.grid_sigma_max, m=config.grid_nodes)


def noise_grid(config: RunConfig, bath=None) -> NoiseGrid:
    bath = build_bath(config) if bath is None else bath
    grid = NoiseGrid.for_bath(bath, config.t_total, config.recurrence_factor)
    grid.check_window(config.t_total)
    return grid


def _run_chunk(config: RunConfig, start: int, stop: int):
    bath = build_bath(config)
    model = build_model(config)
    ngrid = noise_grid(config, bath)
    noises = [sample_noise(ngrid, config.base_seed + i) for i in range(start, stop)]
    if config.solver == "hierarchy":
        rec = run_trajectories(model, bath, build_grid(config), noises, config.t_total, config.dt,
                               max_quanta=config.max_quanta, mode=config.grid_mode,
                               output_stride=config.output_stride)
    else:
        basis = ModeBasis.for_bath(bath, config.n_modes, config.max_quanta)
        rec = solve_sse_modes(model, basis, noises, config.t_total, config.dt,
                              output_stride=config.output_stride, coupling=bath.coupling)
    good = ~rec.degenerate
    P = trajectory_projectors(rec.phi0[good], config.weighting)
    return rec.times, _Moments.of(P), int((~good).sum())


def chunk_bounds(n_traj: int, chunk_size: int) -> list[tuple[int, int]]:
    return [(a, min(a + chunk_size, n_traj)) for a in range(0, n_traj, chunk_size)]


def run_ensemble(config: RunConfig, workers: int = 1) -> DensitySeries:
    """Monte Carlo estimate of rho(t); trajectory ``i`` uses seed ``base_seed + i``."""
    bounds = chunk_bounds(config.n_traj, config.chunk_size)
    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(bounds), *zip(*bounds)))
    else:
        parts = [_run_chunk(config, a, b) for a, b in bounds]
    times = parts[0][0]
    mom = parts[0][1]
    n_deg = parts[0][2]
    for _, m, nd in parts[1:]:          # fixed index order
        mom = mom.merge(m)
        n_deg += nd
    if mom.n == 0:
        raise EnsembleError("every trajectory degenerated; no estimate available")
    d = int(math.isqrt(mom.mean.shape[1]))
    return _finish(times, mom, config.n_traj, n_deg, d)


def observable(series: DensitySeries, op) -> tuple[np.ndarray, np.ndarray]:
    """Tr(rho op) per time with its propagated standard error."""
    op = np.asarray(op, dtype=complex)
    d = series.rho.shape[1]
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not match density dimension {d}")
    if np.abs(op - op.conj().T).max() > 1e-12:
        raise ValueError("observable must be Hermitian")
    value = np.einsum("tij,ji->t", series.rho, op).real
    v = op.T.reshape(-1)
    var = np.einsum("a,tac,c->t", v, series.cov, v.conj()).real
    if series.n_used < 2:
        err = np.full(value.shape, np.nan)
    else:
        err = np.sqrt(np.clip(var, 0, None) / series.n_used)
    return value, err


def _window_values(times, values, window):
    t1, t2 = float(window[0]), float(window[1])
    if not t2 > t1:
        raise ValueError("empty window")
    if t1 < times[0] - 1e-12 or t2 > times[-1] + 1e-12:
        raise ValueError("window outside the series time range")
    mask = (times >= t1 - 1e-12) & (times <= t2 + 1e-12)
    if mask.sum() < 6:
        raise ValueError("empty window")
    return times[mask], values[mask]


def flatness_of_trace(times, values, window, drive_frequency: float = 1.0) -> float:
    """Peak-to-peak of a trace about its drive-periodic fit, over its window mean.

    The fit is a constant plus the drive frequency and its second harmonic:
    populations are bilinear in the amplitudes, so a periodic steady state
    oscillates at both.
    """
    t, y = _window_values(np.asarray(times, float), np.asarray(values, float), window)
    w = drive_frequency
    design = np.column_stack([np.ones_like(t), np.cos(w * t), np.sin(w * t),
                              np.cos(2 * w * t), np.sin(2 * w * t)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design[:, 1:] @ coef[1:]
    mean = y.mean()
    if mean == 0:
        raise ValueError("window mean vanishes; flatness undefined")
    return float(np.ptp(resid) / abs(mean))


def flatness_metric(series: DensitySeries, op, window, drive_frequency: float = 1.0) -> float:
    value, _ = observable(series, op)
    return flatness_of_trace(series.times, value, window, drive_frequency)
