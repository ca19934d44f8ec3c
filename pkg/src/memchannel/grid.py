"""Coarse-grained delay coordinate and piecewise Hermite fields on it.

Delay time is compressed through

    tau(sigma) = (a*sigma + b*(exp((sigma/c)**2) - 1)) / (2h),

and delay-dependent amplitudes are stored on the uniform nodes
``sigma_i = i * sigma_max / (m - 1)``.  Between nodes a field is the degree-7
two-point Hermite interpolant of its value and first three sigma-derivatives.

Two derivative modes are supported:

``"fd"``
    only nodal values are stored; the derivatives are rebuilt from them with
    finite-difference stencils whenever they are needed.
``"jets"``
    value and three derivatives per node are carried as independent data
    ("jets") and transported exactly by the chain rule.

Shifting in delay time (the free flow ``d_t phi = d_tau phi``) maps the node
``sigma_i`` to ``sigma' = sigma(tau(sigma_i) + dt)``; targets past the cutoff are
absorbed (set to zero).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import brentq

MODES = ("fd", "jets")
_FD_WIDTH = 9


class BeyondGrid(ValueError):
    """Delay time past the cutoff of the grid."""


@dataclass(frozen=True)
class DelayGrid:
    a: float = 0.5
    b: float = 0.1
    c: float = 0.9
    h: float = 0.05
    sigma_max: float = 2.8525
    m: int = 7

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need at least two nodes")
        if not (self.a > 0 and self.b >= 0 and self.c > 0 and self.h > 0 and self.sigma_max > 0):
            raise ValueError("substitution parameters must give an increasing map")

    @property
    def d_sigma(self) -> float:
        return self.sigma_max / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.m) * self.d_sigma

    @property
    def tau_max(self) -> float:
        return self.tau_of_sigma(self.sigma_max)

    def _check_sigma(self, sigma):
        s = np.asarray(sigma, dtype=float)
        if np.any(s < 0) or np.any(s > self.sigma_max * (1 + 1e-14)):
            raise ValueError("sigma outside [0, sigma_max]")
        return s

    def tau_of_sigma(self, sigma):
        s = self._check_sigma(sigma)
        val = (self.a * s + self.b * np.expm1((s / self.c) ** 2)) / (2 * self.h)
        return val.item() if val.ndim == 0 else val

    def tau_derivative(self, sigma, order: int):
        """d^order tau / d sigma^order for order 1..3 (no range check)."""
        s = np.asarray(sigma, dtype=float)
        c2 = self.c * self.c
        e = np.exp((s / self.c) ** 2)
        if order == 1:
            val = self.a + self.b * 2 * s / c2 * e
        elif order == 2:
            val = self.b * e * (2 / c2 + 4 * s * s / (c2 * c2))
        elif order == 3:
            val = self.b * e * (12 * s / (c2 * c2) + 8 * s ** 3 / (c2 * c2 * c2))
        else:
            raise ValueError("order must be 1, 2 or 3")
        val = val / (2 * self.h)
        return val.item() if np.ndim(val) == 0 else val

    def jacobian(self, sigma):
        self._check_sigma(sigma)
        return self.tau_derivative(sigma, 1)

    def sigma_of_tau(self, tau):
        t = np.asarray(tau, dtype=float)
        if np.any(t < 0):
            raise ValueError("tau must be non-negative")
        tmax = self.tau_max
        if np.any(t > tmax):
            raise BeyondGrid(f"tau beyond the grid cutoff {tmax:.6g}")
        out = np.array([self._invert(float(x)) for x in np.atleast_1d(t).ravel()])
        out = out.reshape(t.shape)
        return out.item() if out.ndim == 0 else out

    def _invert(self, tau: float) -> float:
        if tau == 0.0:
            return 0.0

        def f(s):
            return (self.a * s + self.b * math.expm1((s / self.c) ** 2)) / (2 * self.h) - tau

        s = brentq(f, 0.0, self.sigma_max, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        # one Newton polish
        s -= f(s) / self.tau_derivative(s, 1)
        return min(max(s, 0.0), self.sigma_max)

    def n_dof(self, mode: str) -> int:
        _check_mode(mode)
        return self.m if mode == "fd" else 4 * self.m


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown derivative mode {mode!r}; expected one of {MODES}")


# ---------------------------------------------------------------------------
# Hermite machinery

def _hermite_inverse() -> np.ndarray:
    # rows: p^(a)(0) for a=0..3 then p^(a)(1); columns: monomials u^0..u^7
    rows = []
    for x in (0.0, 1.0):
        for a in range(4):
            row = []
            for n in range(8):
                if n < a:
                    row.append(0.0)
                else:
                    coef = math.factorial(n) / math.factorial(n - a)
                    row.append(coef * (x ** (n - a) if n - a > 0 else 1.0))
            rows.append(row)
    return np.linalg.inv(np.array(rows))


_HINV = _hermite_inverse()


def _basis(u: float, q: int) -> np.ndarray:
    """q-th u-derivative of the 8 Hermite basis polynomials at u."""
    mono = np.zeros(8)
    for n in range(q, 8):
        mono[n] = math.factorial(n) / math.factorial(n - q) * u ** (n - q)
    return mono @ _HINV


def interpolation_weights(grid: DelayGrid, sigmas, order: int = 0) -> np.ndarray:
    """Weights W[n, j, a] with f^(order)(sigma_n) = sum W * jet[j, a]."""
    sig = np.atleast_1d(np.asarray(sigmas, dtype=float))
    ds = grid.d_sigma
    out = np.zeros((sig.size, grid.m, 4))
    for n, s in enumerate(sig):
        if s < -1e-14 or s > grid.sigma_max * (1 + 1e-14):
            raise ValueError("sigma outside [0, sigma_max]")
        i = min(int(s / ds), grid.m - 2)
        u = (s - i * ds) / ds
        w = _basis(u, order) / ds ** order
        for a in range(4):
            out[n, i, a] = w[a] * ds ** a
            out[n, i + 1, a] = w[4 + a] * ds ** a
    return out


@lru_cache(maxsize=None)
def fd_derivative_weights(grid: DelayGrid) -> np.ndarray:
    """D[a, i, j]: derivative of order a (0..3) at node i from nodal values."""
    m = grid.m
    w = min(m, _FD_WIDTH)
    D = np.zeros((4, m, m))
    D[0] = np.eye(m)
    for i in range(m):
        start = min(max(i - w // 2, 0), m - w)
        offs = np.arange(start, start + w) - i
        V = np.vander(offs.astype(float), w, increasing=True).T
        for a in range(1, 4):
            rhs = np.zeros(w)
            rhs[a] = math.factorial(a)
            D[a, i, start:start + w] = np.linalg.solve(V, rhs) / grid.d_sigma ** a
    D.setflags(write=False)
    return D


def fd_jets(grid: DelayGrid, values: np.ndarray) -> np.ndarray:
    """Nodal jets (m, 4, ...) reconstructed from values (m, ...)."""
    D = fd_derivative_weights(grid)
    return np.moveaxis(np.tensordot(D, values, axes=([2], [0])), 0, 1)


@dataclass
class SampledField:
    """Nodal data of a delay field.

    ``values`` has shape ``(m, ...)``; ``derivs`` (optional) has shape
    ``(3, m, ...)`` holding the first three sigma-derivatives.  Without
    ``derivs`` the field is in finite-difference mode.
    """

    grid: DelayGrid
    values: np.ndarray
    derivs: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[0] != self.grid.m:
            raise ValueError("values must have one entry per node")
        if self.derivs is not None:
            self.derivs = np.asarray(self.derivs)
            if self.derivs.shape != (3,) + self.values.shape:
                raise ValueError("derivs must have shape (3, m, ...)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def mode(self) -> str:
        return "fd" if self.derivs is None else "jets"

    def jets(self) -> np.ndarray:
        if self.derivs is None:
            return fd_jets(self.grid, self.values)
        return np.concatenate([self.values[:, None], np.moveaxis(self.derivs, 0, 1)], axis=1)

    @classmethod
    def from_function(cls, grid: DelayGrid, func: Callable, derivs: Callable | None = None):
        """Sample ``func(sigma)``; ``derivs(sigma, a)`` supplies exact derivatives."""
        nodes = grid.nodes
        vals = np.asarray(func(nodes))
        if derivs is None:
            return cls(grid, vals)
        d = np.stack([np.asarray(derivs(nodes, a)) for a in (1, 2, 3)])
        return cls(grid, vals, d)

    @classmethod
    def from_dofs(cls, grid: DelayGrid, dofs: np.ndarray, mode: str):
        _check_mode(mode)
        if mode == "fd":
            return cls(grid, dofs)
        jets = dofs.reshape((grid.m, 4) + dofs.shape[1:])
        return cls(grid, jets[:, 0], np.moveaxis(jets[:, 1:], 1, 0))

    def dofs(self) -> np.ndarray:
        if self.derivs is None:
            return self.values
        j = self.jets()
        return j.reshape((self.grid.m * 4,) + j.shape[2:])


def hermite_interpolate(field: SampledField, sigma, order: int = 0):
    """Evaluate the piecewise degree-7 Hermite interpolant (or a derivative)."""
    W = interpolation_weights(field.grid, sigma, order)
    out = np.tensordot(W, field.jets(), axes=([1, 2], [0, 1]))
    if np.ndim(sigma) == 0:
        return out[0]
    return out


# ---------------------------------------------------------------------------
# shift in delay time

def shift_targets(grid: DelayGrid, dt: float) -> np.ndarray:
    """sigma'(sigma_i) = sigma(tau(sigma_i) + dt); NaN where past the cutoff."""
    return _shift_targets(grid, float(dt)).copy()


@lru_cache(maxsize=64)
def _shift_targets(grid: DelayGrid, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    taus = grid.tau_of_sigma(grid.nodes) + dt
    out = np.full(grid.m, np.nan)
    inside = taus <= grid.tau_max
    if inside.any():
        out[inside] = grid.sigma_of_tau(taus[inside])
    out.setflags(write=False)
    return out


def _target_chain(grid: DelayGrid, dt: float):
    """Derivatives g', g'', g''' of g(sigma) = sigma(tau(sigma) + dt) at the nodes."""
    s = grid.nodes
    g = _shift_targets(grid, dt)
    ok = ~np.isnan(g)
    gs = np.where(ok, g, 0.0)
    t1, t2, t3 = (grid.tau_derivative(s, k) for k in (1, 2, 3))
    T1, T2, T3 = (grid.tau_derivative(gs, k) for k in (1, 2, 3))
    g1 = t1 / T1
    g2 = (t2 - T2 * g1 ** 2) / T1
    g3 = (t3 - T3 * g1 ** 3 - 3 * T2 * g1 * g2) / T1
    return g, ok, g1, g2, g3


@lru_cache(maxsize=64)
def _shift_matrix(grid: DelayGrid, dt: float, mode: str) -> np.ndarray:
    _check_mode(mode)
    g, ok, g1, g2, g3 = _target_chain(grid, dt)
    m = grid.m
    if mode == "fd":
        D = fd_derivative_weights(grid)
        T = np.zeros((m, m))
        for i in range(m):
            if ok[i]:
                W = interpolation_weights(grid, g[i])[0]
                T[i] = np.einsum("ja,ajk->k", W, D)
    else:
        T = np.zeros((m, 4, m, 4))
        for i in range(m):
            if not ok[i]:
                continue
            F = [interpolation_weights(grid, g[i], q)[0] for q in range(4)]
            T[i, 0] = F[0]
            T[i, 1] = F[1] * g1[i]
            T[i, 2] = F[2] * g1[i] ** 2 + F[1] * g2[i]
            T[i, 3] = F[3] * g1[i] ** 3 + 3 * F[2] * g1[i] * g2[i] + F[1] * g3[i]
        T = T.reshape(4 * m, 4 * m)
    T.setflags(write=False)
    return T


def shift_matrix(grid: DelayGrid, dt: float, mode: str = "fd") -> np.ndarray:
    """Linear map of nodal dofs realising one free-flow step of length dt."""
    if not dt < grid.tau_max:
        raise ValueError("dt must be smaller than the delay cutoff")
    return _shift_matrix(grid, float(dt), mode)


def shift_propagate(field: SampledField, dt: float) -> SampledField:
    mode = field.mode
    T = shift_matrix(field.grid, dt, mode)
    new = np.tensordot(T, field.dofs(), axes=([1], [0]))
    return SampledField.from_dofs(field.grid, new, mode)


def apply_along(T: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    """Apply a dof matrix along one axis of an array."""
    out = np.tensordot(T, arr, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# sampling of kernels onto the grid

def _local_jet(func, center, lo, hi, half=0.04, deg=12, npts=25):
    a = max(lo, center - half)
    b = min(hi, center + half)
    if b - a < half:
        a, b = (lo, lo + 2 * half) if a == lo else (hi - 2 * half, hi)
    x = 0.5 * (a + b) + 0.5 * (b - a) * np.cos(np.pi * (np.arange(npts) + 0.5) / npts)
    y = np.asarray(func(x), dtype=complex)
    cheb_re = np.polynomial.chebyshev.Chebyshev.fit(x, y.real, deg, domain=[a, b])
    cheb_im = np.polynomial.chebyshev.Chebyshev.fit(x, y.imag, deg, domain=[a, b])
    out = np.empty(4, dtype=complex)
    for q in range(4):
        out[q] = cheb_re.deriv(q)(center) + 1j * cheb_im.deriv(q)(center) if q else \
            complex(func(np.array([center]))[0])
    return out


def node_dofs(grid: DelayGrid, kernel: Callable, mode: str) -> np.ndarray:
    """Dofs of ``sigma -> kernel(tau(sigma))`` (kernel vectorized over tau)."""
    _check_mode(mode)

    def f(s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, None)
        taus = (grid.a * s + grid.b * np.expm1((s / grid.c) ** 2)) / (2 * grid.h)
        return np.asarray(kernel(taus), dtype=complex)

    if mode == "fd":
        return f(grid.nodes)
    jets = np.stack([_local_jet(f, s, 0.0, np.inf) for s in grid.nodes])
    return jets.reshape(4 * grid.m)
