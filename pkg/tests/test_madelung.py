import numpy as np
import pytest

from hj_ks.quantum.madelung import BandSpectrum, madelung_fields
from hj_ks.quantum.wave import WaveState


def superposition(q):
    return 1.0 + 0.5 * np.exp(1j * q)


def analytic_fields(q, hbar):
    psi = superposition(q)
    dpsi = 0.5j * np.exp(1j * q)
    d2psi = -0.5 * np.exp(1j * q)
    first = dpsi / psi
    return hbar * first.imag, hbar * (d2psi / psi - first * first).imag


def test_plane_wave_fields():
    fields = madelung_fields(WaveState.plane_wave(3, 64, hbar=0.5))
    assert np.allclose(fields.v, 1.5)
    assert np.allclose(fields.lap_s, 0.0, atol=1e-10)
    assert np.allclose(fields.logdens, -np.log(2 * np.pi))
    assert fields.valid.all()


def test_superposition_matches_closed_form():
    psi = WaveState.from_function(superposition, 128, hbar=0.7)
    fields = madelung_fields(psi)
    v, lap_s = analytic_fields(psi.grid, 0.7)
    assert np.allclose(fields.v, v, atol=1e-10)
    assert np.allclose(fields.lap_s, lap_s, atol=1e-10)


def test_nodes_are_masked():
    psi = WaveState.from_function(np.cos, 64)
    fields = madelung_fields(psi, node_epsilon=1e-12)
    nodes = np.flatnonzero(fields.node_mask)
    assert list(nodes) == [16, 48]
    assert np.isnan(fields.v[nodes]).all()
    assert np.isnan(fields.lap_s[nodes]).all()
    assert np.allclose(fields.v[fields.valid], 0.0, atol=1e-10)


def test_band_keeps_occupied_modes():
    band = BandSpectrum.from_spectrum(WaveState.plane_wave(3, 64).spectrum(), hbar=1.0)
    assert list(band.m) == [3.0]
    assert band.peak_density == pytest.approx(1 / (2 * np.pi))


def test_band_fields_match_grid_fields():
    psi = WaveState.from_function(superposition, 128, hbar=0.7)
    band = BandSpectrum.from_spectrum(psi.spectrum(), psi.hbar)
    fields = madelung_fields(psi)
    v, lap_s, logdens, density = band.fields_at(psi.grid)
    assert np.allclose(v, fields.v, atol=1e-10)
    assert np.allclose(lap_s, fields.lap_s, atol=1e-10)
    assert np.allclose(logdens, fields.logdens, atol=1e-10)
    assert np.allclose(density, psi.density())


def test_band_evaluates_between_grid_points():
    psi = WaveState.from_function(superposition, 32, hbar=1.0)
    band = BandSpectrum.from_spectrum(psi.spectrum(), psi.hbar)
    q = np.array([0.123, 1.7, 5.9])
    v, lap_s, _, _ = band.fields_at(q)
    expected_v, expected_lap = analytic_fields(q, 1.0)
    assert np.allclose(v, expected_v, atol=1e-10)
    assert np.allclose(lap_s, expected_lap, atol=1e-10)
    scalar_v, _, _, _ = band.fields_at(0.123)
    assert scalar_v.shape == (1,)


def test_band_flown_matches_the_flown_spectrum():
    psi = WaveState.from_function(superposition, 64, hbar=0.7)
    spectrum = psi.spectrum()
    m = np.fft.fftfreq(64, 1.0 / 64)
    tau = 0.37
    flown = BandSpectrum.from_spectrum(spectrum, psi.hbar).flown(tau)
    expected = BandSpectrum.from_spectrum(spectrum * np.exp(-0.5j * psi.hbar * m * m * tau), psi.hbar)
    q = np.array([0.2, 2.5, 4.4])
    for got, want in zip(flown.fields_at(q), expected.fields_at(q)):
        assert np.allclose(got, want, atol=1e-12)
    assert flown.grid_points == 64


def test_node_mask_uses_the_peak_only_when_needed():
    psi = WaveState.from_function(np.cos, 32)
    band = BandSpectrum.from_spectrum(psi.spectrum(), psi.hbar)
    _, _, _, density = band.fields_at(np.array([0.0, 1.0]))
    assert not band.node_mask(density, 1e-12).any()
    assert "peak_density" not in band.__dict__
    _, _, _, density = band.fields_at(np.array([np.pi / 2, 0.0]))
    assert list(band.node_mask(density, 1e-12)) == [True, False]
    assert band.peak_density == pytest.approx(np.max(psi.density()))
