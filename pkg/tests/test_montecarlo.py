import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import memchannel.montecarlo as mc
from memchannel.config import RunConfig
from memchannel.hierarchy import EXCITED, TrajectoryRecord
from memchannel.montecarlo import (
    EnsembleError,
    _Moments,
    chunk_bounds,
    flatness_of_trace,
    observable,
    run_ensemble,
    series_from_projectors,
    trajectory_projectors,
)

SMALL = RunConfig(t_total=5.0, dt=0.1, output_stride=5, n_traj=12, chunk_size=5)


def series_of_states(psis):
    phi0 = np.asarray(psis, dtype=complex)[:, None, :]
    return series_from_projectors([0.0], trajectory_projectors(phi0))


def test_chunk_bounds_cover_indices():
    assert chunk_bounds(12, 5) == [(0, 5), (5, 10), (10, 12)]
    assert chunk_bounds(3, 32) == [(0, 3)]


def test_reproducible_and_independent_of_workers():
    a = run_ensemble(SMALL)
    b = run_ensemble(SMALL)
    c = run_ensemble(SMALL, workers=2)
    for x in (b, c):
        assert x.rho.tobytes() == a.rho.tobytes()
        assert x.cov.tobytes() == a.cov.tobytes()


def test_chunking_changes_only_rounding():
    a = run_ensemble(SMALL)
    b = run_ensemble(SMALL.replace(chunk_size=12))
    assert np.allclose(a.rho, b.rho, atol=1e-13)
    assert np.allclose(a.cov, b.cov, atol=1e-13)


def test_initial_time_is_pure_initial_state():
    s = run_ensemble(SMALL.replace(initial_state="excited"))
    assert np.array_equal(s.rho[0], np.diag([0, 1]).astype(complex))
    assert np.all(s.stderr[0] == 0)
    assert s.times[0] == 0 and s.times[-1] == pytest.approx(5.0)


def test_normalized_weights_give_unit_trace():
    s = run_ensemble(SMALL)
    assert np.allclose(s.trace, 1.0, atol=1e-12)


def test_hermitian_exactly():
    s = run_ensemble(SMALL)
    assert np.array_equal(s.rho, np.conj(np.swapaxes(s.rho, -1, -2)))


def test_min_eigenvalue_within_statistical_band():
    s = run_ensemble(SMALL.replace(n_traj=40, chunk_size=40))
    ev = np.linalg.eigvalsh(s.rho).min(axis=1)
    assert np.all(ev >= -3 * s.stderr.max(axis=(1, 2)) - 1e-14)


def test_observable_examples():
    g = np.array([1, 0])
    plus = np.array([1, 1]) / math.sqrt(2)
    val, err = observable(series_of_states([g, g]), EXCITED)
    assert val[0] == 0 and err[0] == 0
    val, _ = observable(series_of_states([plus, plus]), EXCITED)
    assert val[0] == pytest.approx(0.5)
    val, _ = observable(series_of_states([plus, g]), np.eye(2))
    assert val[0] == pytest.approx(1.0)


def test_observable_stderr_of_two_point_ensemble():
    # populations 0 and 1: sample std 1/sqrt(2), stderr 1/2
    val, err = observable(series_of_states([[1, 0], [0, 1]]), EXCITED)
    assert val[0] == pytest.approx(0.5)
    assert err[0] == pytest.approx(0.5)


def test_observable_errors():
    s = series_of_states([[1, 0]])
    with pytest.raises(ValueError, match="dimension"):
        observable(s, np.eye(3))
    with pytest.raises(ValueError, match="Hermitian"):
        observable(s, np.array([[0, 1], [0, 0]]))


def test_unknown_weighting():
    with pytest.raises(ValueError):
        trajectory_projectors(np.ones((1, 1, 2), complex), "bogus")


def test_unit_weighting_keeps_norm():
    phi0 = np.array([[[2.0, 0.0]]], dtype=complex)
    assert trajectory_projectors(phi0, "unit")[0, 0, 0, 0] == 4.0
    assert trajectory_projectors(phi0, "normalized")[0, 0, 0, 0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=30), st.integers(min_value=1, max_value=29),
       st.integers(min_value=0, max_value=10_000))
def test_moment_merge_matches_direct(n, cut, seed):
    cut = min(cut, n - 1)
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, 3, 2, 2)) + 1j * rng.normal(size=(n, 3, 2, 2))
    whole = _Moments.of(P)
    merged = _Moments.of(P[:cut]).merge(_Moments.of(P[cut:]))
    assert merged.n == n
    assert np.allclose(merged.mean, whole.mean, atol=1e-12)
    assert np.allclose(merged.m2, whole.m2, atol=1e-10)


def test_stderr_shrinks_like_inverse_sqrt():
    base = RunConfig(t_total=20.0, dt=0.1, output_stride=20, chunk_size=200, max_quanta=1)
    errs = []
    for n in (200, 400):
        _, e = observable(run_ensemble(base.replace(n_traj=n, base_seed=10 * n)), EXCITED)
        errs.append(e[1:].mean())
    assert 1.3 <= errs[0] / errs[1] <= 1.5


def test_degenerate_trajectories_are_excluded(monkeypatch):
    real = mc.run_trajectories

    def some_degenerate(*a, **k):
        rec = real(*a, **k)
        deg = np.zeros_like(rec.degenerate)
        deg[0] = True
        return TrajectoryRecord(rec.times, rec.phi0, deg, rec.fail_time)

    monkeypatch.setattr(mc, "run_trajectories", some_degenerate)
    s = run_ensemble(SMALL)
    assert s.n_degenerate == 3 and s.n_used == 9 and s.n_traj == 12


def test_all_degenerate_raises(monkeypatch):
    real = mc.run_trajectories

    def all_degenerate(*a, **k):
        rec = real(*a, **k)
        return TrajectoryRecord(rec.times, rec.phi0, np.ones_like(rec.degenerate), rec.fail_time)

    monkeypatch.setattr(mc, "run_trajectories", all_degenerate)
    with pytest.raises(EnsembleError):
        run_ensemble(SMALL)


def test_mode_solver_ensemble_runs():
    s = run_ensemble(SMALL.replace(solver="modes", n_modes=8, max_quanta=1, n_traj=4))
    assert s.rho.shape == (11, 2, 2)
    assert np.allclose(s.trace, 1.0, atol=1e-12)


def test_flatness_examples():
    t = np.linspace(0, 100, 1001)
    assert flatness_of_trace(t, np.full(t.size, 0.4), (20, 80)) == pytest.approx(0, abs=1e-12)
    assert flatness_of_trace(t, 0.4 + 0.1 * np.sin(t + 0.3), (20, 80)) <= 1e-10
    step = np.where(t < 50, 1.0, 1.2)
    assert flatness_of_trace(t, step, (20, 80)) >= 0.18
    assert flatness_of_trace(t, 0.5 + 0.1 * np.sin(1.5 * t), (20, 80)) > 0.3


def test_flatness_removes_second_harmonic():
    t = np.linspace(0, 100, 1001)
    y = 0.4 + 0.05 * np.cos(t) + 0.02 * np.sin(2 * t + 1.0)
    assert flatness_of_trace(t, y, (20, 80)) <= 1e-10
    assert flatness_of_trace(t, y + 0.01 * np.cos(3 * t), (20, 80)) > 0.04


def test_flatness_step_of_relative_size():
    # a jump of 0.2 relative to the window mean
    t = np.linspace(0, 100, 1001)
    y = np.where(t < 50, 0.9, 1.1)
    assert flatness_of_trace(t, y, (20, 80)) >= 0.2 - 1e-12


def test_flatness_window_errors():
    t = np.linspace(0, 10, 101)
    y = np.ones_like(t)
    with pytest.raises(ValueError):
        flatness_of_trace(t, y, (5, 5))
    with pytest.raises(ValueError):
        flatness_of_trace(t, y, (5, 20))
    with pytest.raises(ValueError):
        flatness_of_trace(t, y, (5.0, 5.05))


def test_flatness_metric_on_series():
    times = np.linspace(0, 10, 50)
    P = np.repeat(trajectory_projectors(np.ones((2, 1, 2), complex) / math.sqrt(2)), 50, axis=1)
    s = series_from_projectors(times, P)
    assert mc.flatness_metric(s, EXCITED, (2, 8)) == 0
