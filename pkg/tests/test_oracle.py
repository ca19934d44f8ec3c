import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import memchannel.hierarchy as hier
import memchannel.oracle as orc
from _reference import exact_two_level
from memchannel.bath import WaveguideBath, memory_waveguide
from memchannel.grid import DelayGrid
from memchannel.hierarchy import EXCITED, driven_two_level, run_trajectories
from memchannel.noise import NoiseGrid, sample_noise
from memchannel.oracle import (
    MAX_DIMENSION,
    ModeBasis,
    closed_system_density,
    discrete_mode_kernel,
    full_norm2,
    reduced_density,
    solve_sse_modes,
)

H = 0.05
BENCH = WaveguideBath(1.0, H, kernel_scale=H * H)
GROUND = np.array([1, 0], dtype=complex)
EXC = np.array([0, 1], dtype=complex)


def test_basis_invariants():
    b = ModeBasis(20, 1.0, H, 1.0, 2)
    assert b.dimension(2) == 2 * (1 + 20 + 210)
    assert np.all((b.omegas >= 0.9) & (b.omegas <= 1.1))
    assert b.k_points[0] == pytest.approx(math.pi / 40)
    assert np.sum(b.couplings ** 2) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        ModeBasis(0)
    with pytest.raises(ValueError):
        ModeBasis(10, n_max=3)


def test_kernel_examples():
    for n in (10, 50, 200):
        b = ModeBasis(n, 1.0, H, 1.0)
        assert discrete_mode_kernel(b, 0.0) == pytest.approx(np.sum(b.couplings ** 2))
        assert discrete_mode_kernel(b, 0.0) == pytest.approx(memory_waveguide(WaveguideBath(1.0, H), 0.0), rel=1e-12)
    b = ModeBasis(200, 1.0, H, 1.0)
    assert abs(discrete_mode_kernel(b, 10.0) - memory_waveguide(WaveguideBath(1.0, H), 10.0)) <= 1e-3
    scaled = ModeBasis.for_bath(BENCH, 200)
    assert abs(discrete_mode_kernel(scaled, 10.0) - memory_waveguide(BENCH, 10.0)) <= 1e-3 * H * H


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-500, max_value=500))
def test_kernel_conjugate_symmetry(tau):
    b = ModeBasis(30, 1.0, H, 1.0)
    assert discrete_mode_kernel(b, -tau) == pytest.approx(np.conj(discrete_mode_kernel(b, tau)), abs=1e-13)


def test_kernel_recurrence_moves_out_with_modes():
    # the midpoint mode sum is exact until its recurrence near tau = N / h
    wg = WaveguideBath(1.0, H)
    err = lambda n, tau: abs(discrete_mode_kernel(ModeBasis(n, 1.0, H, 1.0), tau) - memory_waveguide(wg, tau))
    assert err(20, 100.0) < 1e-12 and err(20, 400.0) > 0.1
    assert err(40, 400.0) < 1e-12 and err(40, 800.0) > 0.1
    assert err(80, 800.0) < 1e-12


def test_zero_coupling_matches_driven_two_level():
    model = driven_two_level(psi0=(GROUND + EXC) / math.sqrt(2))
    basis = ModeBasis(8, 1.0, H, 0.0, 2)
    rec = solve_sse_modes(model, basis, None, 50.0, 0.02, output_stride=250)
    ref = exact_two_level(model, 50.0, rec.times)
    assert np.abs(rec.phi0[0] - ref).max() <= 1e-6


def test_hermitian_norm_drift():
    model = driven_two_level(psi0=EXC)
    basis = ModeBasis(10, 1.0, H, 1.0, 2)
    rec, (p0, p1, p2) = solve_sse_modes(model, basis, None, 100.0, 0.01, shift=False,
                                        force_zero_sbar=True, return_full=True)
    assert rec.times.size == 10_001
    assert abs(full_norm2(p0, p1, p2)[0] - 1.0) <= 1e-8


def test_dimension_guard():
    model = driven_two_level()
    with pytest.raises(ValueError, match="exceeds"):
        solve_sse_modes(model, ModeBasis(500, n_max=2), None, 1.0, 0.1)
    assert ModeBasis(300, n_max=2).dimension(2) < MAX_DIMENSION


def test_reduced_density_of_product_state():
    p0 = np.array([[0.6, 0.0]], dtype=complex)
    p1 = np.zeros((1, 3, 2), dtype=complex)
    p1[0, 1, 1] = 0.8
    rho = reduced_density(p0, p1, None)[0]
    assert np.allclose(rho, np.diag([0.36, 0.64]))
    assert full_norm2(p0, p1, None)[0] == pytest.approx(1.0)


def test_closed_system_single_excitation_decay():
    model = driven_two_level(amplitude=0.0, psi0=EXC)
    basis = ModeBasis.for_bath(BENCH, 40, 1)
    times, rho = closed_system_density(model, basis, 60.0, 0.05, output_stride=200)
    assert np.allclose(np.einsum("tii->t", rho).real, 1.0, atol=1e-9)
    pop = rho[:, 1, 1].real
    assert pop[0] == 1.0 and pop[1] < pop[0] and pop[4] < 0.01


def test_oracle_and_hierarchy_share_noise(monkeypatch):
    seen = {}

    def recorder(name, real):
        def wrapped(*a, **k):
            out = real(*a, **k)
            seen[name] = out.copy()
            return out
        return wrapped

    monkeypatch.setattr(orc, "xi_batch", recorder("oracle", orc.xi_batch))
    monkeypatch.setattr(hier, "xi_batch", recorder("hierarchy", hier.xi_batch))
    grid = NoiseGrid.for_bath(BENCH, 5.0)
    noises = [sample_noise(grid, 9)]
    model = driven_two_level()
    run_trajectories(model, BENCH, DelayGrid(), noises, 5.0, 0.1)
    solve_sse_modes(model, ModeBasis.for_bath(BENCH, 10, 1), noises, 5.0, 0.1)
    assert seen["oracle"].tobytes() == seen["hierarchy"].tobytes()


def test_mode_count_convergence_pre_revival():
    grid = NoiseGrid.for_bath(BENCH, 200.0)
    noises = [sample_noise(grid, 21)]
    model = driven_two_level()
    pops = []
    for n in (40, 80):
        rec = solve_sse_modes(model, ModeBasis.for_bath(BENCH, n, 2), noises, 200.0, 0.1, output_stride=10)
        pops.append(np.einsum("btd,de,bte->bt", rec.phi0.conj(), EXCITED, rec.phi0).real / rec.norm2)
    assert np.abs(pops[0] - pops[1]).max() <= 1e-3
