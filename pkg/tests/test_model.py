from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scatmcrb.errors import ConfigError, DomainError, GeometryError
from scatmcrb.model import (AssumedParams, FieldData, Medium, Pulse, Scenario, Scatterer,
                            TransducerRing, TrueParams, build_frequency_grid, contrast_gamma,
                            derive_seed, noise_sample, pulse_spectrum, wrap_phase)

REF_PULSE = Pulse()


def test_contrast_zero_for_background():
    m = Medium()
    assert contrast_gamma(m.c0, m.beta0, m) == 0


@pytest.mark.parametrize("c", [1500, 5000])
def test_contrast_exact_rational(c):
    exact = float(Fraction(1, c * c) - Fraction(1, 6400 * 6400))
    g = contrast_gamma(c, 0.0, Medium())
    assert g.imag == 0
    assert g.real == pytest.approx(exact, rel=1e-14)


def test_contrast_reference_values():
    assert contrast_gamma(1500, 0, Medium()).real == pytest.approx(4.2003038e-7, rel=1e-7)
    assert contrast_gamma(5000, 0, Medium()).real == pytest.approx(1.5585938e-8, rel=1e-7)


def test_contrast_rejects_nonpositive_speed():
    with pytest.raises(DomainError):
        contrast_gamma(0.0, 0.0, Medium())


def test_pulse_peak():
    p = pulse_spectrum(REF_PULSE.fc, REF_PULSE)
    assert abs(p) == pytest.approx(20e6 * math.sqrt(math.pi) / 4.67e6, rel=1e-14)
    assert abs(p) == pytest.approx(7.590812, rel=1e-6)
    assert np.angle(p) == pytest.approx(-2.61, abs=1e-14)


def test_pulse_symmetric_about_carrier():
    d = np.array([1e5, 7e5, 2.3e6])
    lo = pulse_spectrum(REF_PULSE.fc - d, REF_PULSE)
    hi = pulse_spectrum(REF_PULSE.fc + d, REF_PULSE)
    assert np.allclose(np.abs(lo), np.abs(hi), rtol=1e-14)


def test_pulse_one_bandwidth_off_carrier():
    peak = 20e6 * math.sqrt(math.pi) / 4.67e6
    val = abs(pulse_spectrum(REF_PULSE.fc + 4.67e6, REF_PULSE))
    assert val == pytest.approx(peak * math.exp(-math.pi ** 2), rel=1e-12)
    assert val == pytest.approx(3.9262e-4, rel=1e-4)


def test_pulse_validation():
    with pytest.raises(DomainError):
        Pulse(fc=25e6)
    with pytest.raises(DomainError):
        Pulse(alpha=0.0)


def test_reference_frequency_grid():
    g = build_frequency_grid(40e6, 601, 0.25e6, 10.65e6, n_bins=161)
    assert (g.k_min, g.k_max, g.size) == (4, 164, 161)
    assert g.frequencies[0] == pytest.approx(0.26622296e6, rel=1e-7)
    assert g.frequencies[-1] == pytest.approx(10.9151414e6, rel=1e-7)
    assert np.all(np.diff(g.bin_indices) == 1)
    assert g.omegas[3] == pytest.approx(2 * math.pi * g.frequencies[3])


def test_band_only_grid():
    g = build_frequency_grid(40e6, 601, 0.25e6, 10.65e6)
    assert g.k_min == 4 and g.k_max == 160
    assert np.all((g.frequencies >= 0.25e6) & (g.frequencies <= 10.65e6))


def test_integer_grid():
    g = build_frequency_grid(8, 8, 1, 3)
    assert list(g.bin_indices) == [1, 2, 3]
    assert list(g.frequencies) == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("band", [(5e6, 4e6), (1e6, 21e6), (-1.0, 2e6)])
def test_bad_band(band):
    with pytest.raises(ConfigError):
        build_frequency_grid(40e6, 601, *band)


def test_desk_band_centred_on_carrier():
    g = build_frequency_grid(40e6, 601, 3.18e6, 5.9e6, n_bins=41)
    centre = 0.5 * (g.frequencies[0] + g.frequencies[-1])
    assert (g.k_min, g.k_max) == (48, 88)
    assert abs(centre - 4.55e6) < 40e6 / 601


def test_noise_zero_variance():
    assert np.all(noise_sample(16, 0.0, 1) == 0)


def test_noise_power():
    n = noise_sample(100_000, 3.0, 7)
    assert np.mean(np.abs(n) ** 2) == pytest.approx(3.0, rel=0.03)
    # circular: real and imaginary parts carry half the power each
    assert np.var(n.real) == pytest.approx(1.5, rel=0.03)
    assert abs(np.mean(n.real * n.imag)) < 0.03


def test_noise_deterministic():
    assert np.array_equal(noise_sample(50, 3.0, 42), noise_sample(50, 3.0, 42))
    assert not np.array_equal(noise_sample(50, 3.0, 42), noise_sample(50, 3.0, 43))


def test_derive_seed():
    assert derive_seed(1, 0) == derive_seed(1, 0)
    seeds = {derive_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert 0 <= derive_seed(2 ** 64 - 1, 5) < 2 ** 64


def test_reference_scenario_geometry():
    sc = Scenario.reference()
    assert sc.wavelength == pytest.approx(1.40659e-3, rel=1e-5)
    assert sc.ring.radius == pytest.approx(14.0659e-3, rel=1e-5)
    assert sc.grid.dx == sc.grid.dz == pytest.approx(sc.wavelength / 8)
    assert (sc.grid.nx - 1) * sc.grid.dx == pytest.approx(10 * sc.wavelength)
    assert sc.n_data == 161 * 32 * 32
    assert sc.cell_area == pytest.approx(sc.grid.dx * sc.grid.dz)


def test_ring_positions():
    ring = TransducerRing(8, 2.0)
    assert ring.positions[0] == pytest.approx([2.0, 0.0])
    assert ring.positions[2] == pytest.approx([0.0, 2.0], abs=1e-15)
    assert np.allclose(np.hypot(*ring.positions.T), 2.0)
    with pytest.raises(GeometryError):
        TransducerRing(1, 1.0)


def test_field_ordering_round_trip():
    sc = Scenario.reference(n_transducers=5, n_bins=3)
    n = np.arange(sc.n_data)
    k, t, r = sc.unravel_index(n)
    assert np.array_equal(sc.linear_index(k, t, r), n)
    cube = np.arange(sc.n_data).reshape(sc.data_shape) + 0j
    fd = FieldData.from_cube(cube)
    assert fd.values[sc.linear_index(2, 3, 1)] == cube[2, 3, 1]
    assert np.array_equal(fd.slice_pair(3, 1), cube[:, 3, 1])


def test_field_shape_mismatch():
    with pytest.raises(ValueError):
        FieldData(np.zeros(5), (2, 2, 2))


def test_scatterer_validation():
    with pytest.raises(DomainError):
        Scatterer((0, 0), -1.0)
    with pytest.raises(GeometryError):
        Scatterer((0, float("nan")), 1500)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 5),
                          st.floats(-3, 3)), min_size=1, max_size=4))
def test_assumed_params_round_trip(rows):
    pos = [(r[0], r[1]) for r in rows]
    th = AssumedParams(pos, [r[2] for r in rows], [r[3] for r in rows])
    vec = th.to_vector()
    back = AssumedParams.from_vector(vec)
    assert np.array_equal(back.to_vector(), vec)
    u = len(rows)
    assert np.array_equal(vec[:2 * u], np.asarray(pos).reshape(-1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(1e-9, 1e-6),
                          st.floats(-3, 3)), min_size=1, max_size=4))
def test_true_params_round_trip(rows):
    gam = [r[2] * np.exp(1j * r[3]) for r in rows]
    phi = TrueParams([(r[0], r[1]) for r in rows], gam)
    back = TrueParams.from_vector(phi.to_vector())
    assert np.allclose(back.gamma, phi.gamma, rtol=1e-12, atol=0)
    assert np.array_equal(back.positions, phi.positions)


def test_canonical_flips_negative_amplitude():
    th = AssumedParams([(0, 0)], [-2.0], [0.5]).canonical()
    assert th.amplitudes[0] == 2.0
    assert th.phases[0] == pytest.approx(0.5 - math.pi)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50))
def test_wrap_phase_range(p):
    w = wrap_phase(p)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(p), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(p), abs_tol=1e-9)
