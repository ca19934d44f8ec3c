import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from memchannel.bath import (
    OhmicBath,
    WaveguideBath,
    channel_frequencies,
    channel_kernel,
    coupling_ohmic,
    fit_tail_exponent,
    memory_channels,
    memory_ohmic,
    memory_waveguide,
    reconstruct_memory,
    waveguide_envelope,
)

WG = WaveguideBath(1.0, 0.05)
H = 0.05


def test_coupling_ohmic_examples():
    bath = OhmicBath(0.1, 1.0, 1.0)
    assert coupling_ohmic(bath, 0.0) == 0.0
    assert coupling_ohmic(bath, 1.0) == pytest.approx(math.sqrt(0.05) * math.exp(-0.5), rel=1e-15)
    with pytest.raises(ValueError):
        coupling_ohmic(bath, -0.1)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_ohmic_m0_equals_spectral_integral(s):
    bath = OhmicBath(0.1, s, 1.0)
    integral, _ = quad(lambda w: coupling_ohmic(bath, w) ** 2, 0, np.inf, epsabs=1e-14, epsrel=1e-12)
    assert memory_ohmic(bath, 0.0).real == pytest.approx(integral, rel=1e-6)
    if s == 1.0:
        assert integral == pytest.approx(0.05, rel=1e-6)


def test_memory_ohmic_examples():
    bath = OhmicBath(0.1, 1.0, 1.0)
    assert memory_ohmic(bath, 0.0) == pytest.approx(0.05 + 0j, abs=1e-16)
    for tau in (0.3, 4.0, 50.0):
        assert memory_ohmic(bath, -tau) == pytest.approx(np.conj(memory_ohmic(bath, tau)), rel=1e-14)
    ratio = abs(memory_ohmic(bath, 200.0)) / abs(memory_ohmic(bath, 100.0))
    assert ratio == pytest.approx(0.25, rel=0.02)


def test_ohmic_memory_is_fourier_transform():
    bath = OhmicBath(0.2, 1.5, 2.0)
    tau = 1.3
    re, _ = quad(lambda w: bath.spectral_density(w) * math.cos(w * tau), 0, np.inf, limit=400)
    im, _ = quad(lambda w: -bath.spectral_density(w) * math.sin(w * tau), 0, np.inf, limit=400)
    assert memory_ohmic(bath, tau) == pytest.approx(complex(re, im), rel=1e-7)


def test_memory_waveguide_examples():
    assert memory_waveguide(WG, 0.0) == 1 + 0j
    assert memory_waveguide(WG, 1e-9) == pytest.approx(1.0, abs=1e-9)
    env = waveguide_envelope(WG, 200 / H) / waveguide_envelope(WG, 100 / H)
    assert env == pytest.approx(2 ** -1.5, rel=0.05)
    taus = np.linspace(0.1, 500, 200)
    rotated = memory_waveguide(WG, taus) * np.exp(1j * WG.epsilon * taus)
    assert np.max(np.abs(rotated.imag)) < 1e-14


def test_waveguide_kernel_scale_and_spectral_integral():
    bath = WaveguideBath(1.0, 0.05, kernel_scale=H ** 2)
    lo, hi = bath.band
    integral, _ = quad(bath.spectral_density, lo, hi, epsabs=1e-15)
    assert integral == pytest.approx(H ** 2, rel=1e-8)
    assert memory_waveguide(bath, 3.0) == pytest.approx(H ** 2 * memory_waveguide(WG, 3.0), rel=1e-14)
    # the spectral density is the Fourier partner of the kernel
    tau = 7.0
    re, _ = quad(lambda w: bath.spectral_density(w) * math.cos(w * tau), lo, hi, limit=200)
    im, _ = quad(lambda w: -bath.spectral_density(w) * math.sin(w * tau), lo, hi, limit=200)
    assert memory_waveguide(bath, tau) == pytest.approx(complex(re, im), rel=1e-7)


def test_channel_frequencies():
    assert channel_frequencies(WG) == pytest.approx([0.9, 1.1])
    assert channel_frequencies(WaveguideBath(0.0, 0.5)) == pytest.approx([-1.0, 1.0])
    with pytest.raises(ValueError):
        WaveguideBath(2.0, 0.0)


def test_channel_kernel_examples():
    tau = 3 / H
    assert channel_kernel(WG, 2, tau) == pytest.approx(np.conj(channel_kernel(WG, 1, tau)), rel=1e-14)
    tau = 5 / H
    assert abs(reconstruct_memory(WG, tau) - memory_waveguide(WG, tau)) <= 1e-9
    small = channel_kernel(WG, 1, 1e-7 / H)
    assert np.isfinite(small) and abs(small) < 10
    with pytest.raises(ValueError):
        channel_kernel(WG, 3, 1.0)


def test_reconstruction_identity_log_grid():
    taus = np.logspace(-3, 3, 200) / H
    err = np.abs(reconstruct_memory(WG, taus) - memory_waveguide(WG, taus))
    assert err.max() <= 1e-9 * np.abs(memory_waveguide(WG, taus)).max()


def test_channel_kernels_smooth_near_origin():
    taus = np.linspace(1e-6, 0.1 / (2 * H), 2001)
    dt = taus[1] - taus[0]
    for k in (1, 2):
        vals = channel_kernel(WG, k, taus)
        assert np.all(np.isfinite(vals))
        for order in range(4):
            assert np.max(np.abs(vals)) < 1e3
            vals = np.diff(vals) / dt


def test_memory_channels_objects():
    chans = memory_channels(WG)
    assert [c.frequency for c in chans] == pytest.approx([0.9, 1.1])
    assert chans[0].kernel(2.0) == channel_kernel(WG, 1, 2.0)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_tail_exponent_ohmic(s):
    bath = OhmicBath(0.1, s, 1.0)
    slope = fit_tail_exponent(lambda t: memory_ohmic(bath, t), (10, 1000))
    assert slope == pytest.approx(-(s + 1), abs=0.05)


def test_tail_exponent_waveguide_channel():
    slope = fit_tail_exponent(lambda t: channel_kernel(WG, 1, t), (50 / H, 5000 / H))
    assert slope == pytest.approx(-1.5, abs=0.1)


def test_tail_fit_rejects_bad_window():
    with pytest.raises(ValueError):
        fit_tail_exponent(lambda t: 1 / t, (0.0, 1.0))
    with pytest.raises(ValueError):
        fit_tail_exponent(lambda t: 1 / t, (5.0, 5.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-3, max_value=5e3))
def test_reconstruction_property(tau_h):
    tau = tau_h / H
    assert abs(reconstruct_memory(WG, tau) - memory_waveguide(WG, tau)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.0, max_value=1e4))
def test_channel_conjugacy_property(tau):
    assert channel_kernel(WG, 2, tau) == pytest.approx(np.conj(channel_kernel(WG, 1, tau)), rel=1e-13, abs=1e-15)
