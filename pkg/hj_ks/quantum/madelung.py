"""Madelung fields of a wavefunction on the circle.

With psi = exp(iS/hbar + R) the velocity field is v = dS/dq = hbar Im(psi'/psi),
its divergence lapS = hbar Im(psi''/psi - (psi'/psi)^2) and the log density
logdens = 2R = ln|psi|^2. Derivatives are spectral. Fields are masked where
the density falls below node_epsilon times its peak.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from ..config.config import config

logger = logging.getLogger('hj_ks')


@dataclass(frozen=True)
class MadelungFields:
    v: np.ndarray
    lap_s: np.ndarray
    logdens: np.ndarray
    node_mask: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return ~self.node_mask


def _ratios(psi: np.ndarray, dpsi: np.ndarray, d2psi: np.ndarray, density: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        first = dpsi * np.conj(psi) / density
        second = d2psi * np.conj(psi) / density
    return first, second


def madelung_fields(psi, node_epsilon: Optional[float] = None) -> MadelungFields:
    """v, lapS and logdens on the grid of a WaveState."""
    node_epsilon = float(node_epsilon or config["quantum"]["node_epsilon"])
    amplitudes = psi.amplitudes
    m = np.fft.fftfreq(amplitudes.size, 1.0 / amplitudes.size)
    spectrum = np.fft.fft(amplitudes)
    dpsi = np.fft.ifft(1j * m * spectrum)
    d2psi = np.fft.ifft(-(m * m) * spectrum)
    density = np.abs(amplitudes) ** 2
    mask = density < node_epsilon * density.max()

    first, second = _ratios(amplitudes, dpsi, d2psi, density)
    v = psi.hbar * first.imag
    lap_s = psi.hbar * (second - first * first).imag
    with np.errstate(divide="ignore"):
        logdens = np.log(density)
    v[mask] = np.nan
    lap_s[mask] = np.nan
    if mask.any():
        logger.debug(f"{int(mask.sum())} grid points masked as nodes")
    return MadelungFields(v, lap_s, logdens, mask)


@dataclass(frozen=True)
class BandSpectrum:
    """Occupied Fourier band of one snapshot, psi(q) = sum_m coeffs_m exp(imq).

    Evaluating only the band keeps off-grid evaluation cheap for localized states.
    The peak density on the grid is computed on first use; node tests settle
    most samples from cheap bounds on it.
    """
    m: np.ndarray
    coeffs: np.ndarray
    hbar: float
    grid_points: int

    @classmethod
    def from_spectrum(cls, spectrum: np.ndarray, hbar: float, tolerance: float = 1e-14) -> "BandSpectrum":
        size = spectrum.size
        m = np.fft.fftfreq(size, 1.0 / size)
        magnitude = np.abs(spectrum)
        keep = magnitude > tolerance * magnitude.max()
        return cls(m[keep], spectrum[keep] / size, hbar, size)

    def flown(self, tau: float) -> "BandSpectrum":
        """The band after free flight by tau; the occupied modes do not change."""
        phase = np.exp(-0.5j * self.hbar * self.m * self.m * tau)
        return BandSpectrum(self.m, self.coeffs * phase, self.hbar, self.grid_points)

    @cached_property
    def peak_density(self) -> float:
        full = np.zeros(self.grid_points, dtype=complex)
        full[np.mod(self.m, self.grid_points).astype(int)] = self.coeffs
        return float(np.max(np.abs(np.fft.ifft(full) * self.grid_points) ** 2))

    def node_mask(self, density: np.ndarray, node_epsilon: float) -> np.ndarray:
        """density < node_epsilon * peak density."""
        # peak density <= (sum |c_m|)^2
        if np.all(density >= node_epsilon * float(np.sum(np.abs(self.coeffs))) ** 2):
            return np.zeros(density.shape, dtype=bool)
        return density < node_epsilon * self.peak_density

    def evaluate(self, q) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """psi, psi' and psi'' at arbitrary positions (scalar or 1D array)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        phases = np.exp(1j * np.outer(q, self.m))
        weighted = phases * self.coeffs
        psi = weighted.sum(axis=1)
        dpsi = weighted @ (1j * self.m)
        d2psi = weighted @ (-(self.m * self.m))
        return psi, dpsi, d2psi

    def fields_at(self, q) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """v, lapS, logdens and density at arbitrary positions."""
        psi, dpsi, d2psi = self.evaluate(q)
        density = np.abs(psi) ** 2
        first, second = _ratios(psi, dpsi, d2psi, density)
        with np.errstate(divide="ignore"):
            logdens = np.log(density)
        return self.hbar * first.imag, self.hbar * (second - first * first).imag, logdens, density
