"""Split-operator evolution of the quantum kicked rotor.

H = p^2/2 + K cos q sum_n delta(t - nT) on q in [0, 2pi), p = hbar m. Each
period is a free flight, exact in momentum space, followed by the kick,
exact in position space. The evolution record keeps one spectrum per
period (just after the kick); states inside a period are free flights of it.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..cache.field_cache import FieldCache
from ..config.config import config
from ..utils.decorators import timing_decorator
from .madelung import BandSpectrum

logger = logging.getLogger('hj_ks')

_HEADER = np.dtype([("M", "<i8"), ("substeps", "<i8"), ("hbar", "<f8"), ("K", "<f8"), ("T", "<f8")])


@dataclass(frozen=True)
class RotorParams:
    kick_strength: float = 5.0
    period: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if not self.hbar > 0.0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if not self.period > 0.0:
            raise ValueError(f"period must be positive, got {self.period}")

    @classmethod
    def from_config(cls) -> "RotorParams":
        settings = config["quantum"]
        return cls(settings["kick_strength"], settings["period"], settings["hbar"])


def _check_grid_size(size: int) -> None:
    if size < 2 or size & (size - 1):
        raise ValueError(f"grid size must be a power of two, got {size}")


def position_grid(size: int) -> np.ndarray:
    _check_grid_size(size)
    return 2.0 * np.pi * np.arange(size) / size


def wavenumbers(size: int) -> np.ndarray:
    """Integer wavenumbers in FFT order."""
    return np.fft.fftfreq(size, 1.0 / size)


@dataclass
class WaveState:
    grid: np.ndarray
    amplitudes: np.ndarray
    t: float = 0.0
    hbar: float = 1.0
    norm: float = field(init=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        _check_grid_size(self.grid.size)
        if self.amplitudes.shape != self.grid.shape:
            raise ValueError(f"amplitudes shape {self.amplitudes.shape} does not match grid {self.grid.shape}")
        self.norm = float(np.sum(np.abs(self.amplitudes) ** 2) * self.spacing)

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def spacing(self) -> float:
        return 2.0 * np.pi / self.grid.size

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def spectrum(self) -> np.ndarray:
        return np.fft.fft(self.amplitudes)

    def normalized(self) -> "WaveState":
        return WaveState(self.grid, self.amplitudes / np.sqrt(self.norm), self.t, self.hbar)

    @classmethod
    def from_spectrum(cls, spectrum: np.ndarray, t: float = 0.0, hbar: float = 1.0) -> "WaveState":
        return cls(position_grid(spectrum.size), np.fft.ifft(spectrum), t, hbar)

    @classmethod
    def from_function(cls, fn, size: int, hbar: float = 1.0) -> "WaveState":
        grid = position_grid(size)
        return cls(grid, fn(grid), 0.0, hbar).normalized()

    @classmethod
    def plane_wave(cls, m: int, size: int, hbar: float = 1.0) -> "WaveState":
        return cls.from_function(lambda q: np.exp(1j * m * q), size, hbar)

    @classmethod
    def uniform(cls, size: int, hbar: float = 1.0) -> "WaveState":
        return cls.from_function(lambda q: np.ones_like(q, dtype=complex), size, hbar)

    @classmethod
    def gaussian(cls, size: int, center: float = np.pi, width: float = 0.3, momentum: float = 0.0,
                 hbar: float = 1.0) -> "WaveState":
        """Periodized Gaussian packet with |psi|^2 of standard deviation ``width``."""
        def packet(q):
            total = np.zeros_like(q, dtype=complex)
            for image in range(-3, 4):
                x = q - center + 2.0 * np.pi * image
                total += np.exp(-x * x / (4.0 * width * width))
            return total * np.exp(1j * momentum * q / hbar)
        return cls.from_function(packet, size, hbar)


def free_flight_phase(size: int, hbar: float, tau: float) -> np.ndarray:
    m = wavenumbers(size)
    return np.exp(-0.5j * hbar * m * m * tau)


def free_flight(psi: WaveState, tau: float) -> WaveState:
    spectrum = psi.spectrum() * free_flight_phase(psi.size, psi.hbar, tau)
    return WaveState.from_spectrum(spectrum, psi.t + tau, psi.hbar)


def kick(psi: WaveState, rotor: RotorParams) -> WaveState:
    phase = np.exp(-1j * rotor.kick_strength * np.cos(psi.grid) / psi.hbar)
    return WaveState(psi.grid, psi.amplitudes * phase, psi.t, psi.hbar)


def substep_states(psi: WaveState, rotor: RotorParams, substeps: int) -> Iterator[WaveState]:
    """The substeps + 1 free-flight states of one period, kick not yet applied."""
    spectrum = psi.spectrum()
    tau = rotor.period / substeps
    for j in range(substeps + 1):
        flown = spectrum * free_flight_phase(psi.size, psi.hbar, j * tau)
        yield WaveState.from_spectrum(flown, psi.t + j * tau, psi.hbar)


def split_step(psi: WaveState, rotor: RotorParams, substeps: int = 1) -> WaveState:
    """One period: free flight in ``substeps`` pieces, then the kick."""
    if psi.hbar != rotor.hbar:
        raise ValueError(f"state has hbar={psi.hbar}, rotor has hbar={rotor.hbar}")
    tau = rotor.period / substeps
    phase = free_flight_phase(psi.size, psi.hbar, tau)
    spectrum = psi.spectrum()
    for _ in range(substeps):
        spectrum = spectrum * phase
    flown = WaveState.from_spectrum(spectrum, psi.t + rotor.period, psi.hbar)
    return kick(flown, rotor)


class Evolution:
    """Immutable record of a rotor evolution, shared read-only by orbit tracers.

    ``spectra[n]`` is the spectrum just after kick n (n = 0 is the initial
    state). The state at time nT + tau, 0 <= tau <= T, is its free flight by
    tau; tau = T is the state just before kick n + 1.
    """

    def __init__(self, rotor: RotorParams, spectra: np.ndarray, substeps: int,
                 cache: Optional[FieldCache] = None):
        spectra = np.atleast_2d(np.asarray(spectra, dtype=complex))
        _check_grid_size(spectra.shape[1])
        if substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {substeps}")
        self.rotor = rotor
        self.spectra = np.array(spectra)
        self.spectra.setflags(write=False)
        self.substeps = int(substeps)
        self.cache = cache if cache is not None else FieldCache(config["quantum"]["cache_size"])
        self._m2 = wavenumbers(spectra.shape[1]) ** 2

    @property
    def n_periods(self) -> int:
        return self.spectra.shape[0] - 1

    @property
    def grid_points(self) -> int:
        return self.spectra.shape[1]

    @property
    def hbar(self) -> float:
        return self.rotor.hbar

    @property
    def duration(self) -> float:
        return self.n_periods * self.rotor.period

    def time(self, n: int, tau: float = 0.0) -> float:
        return n * self.rotor.period + tau

    def flown_spectrum(self, n: int, tau: float) -> np.ndarray:
        if not 0 <= n < self.spectra.shape[0]:
            raise IndexError(f"period {n} outside the record (0..{self.n_periods})")
        return self.spectra[n] * np.exp(-0.5j * self.hbar * self._m2 * tau)

    def band(self, n: int, j: int, steps: Optional[int] = None) -> BandSpectrum:
        """Occupied band at tau = j T / steps inside period n, cached by (n, j, steps) in lowest terms."""
        steps = steps or self.substeps
        g = math.gcd(j, steps)
        key = (n, j // g, steps // g)
        if key[1] == 0:
            return self.cache.get_or_compute(key, lambda: self._post_kick_band(n))
        return self.cache.get_or_compute(
            key, lambda: self.band(n, 0).flown(self.rotor.period * key[1] / key[2]))

    def _post_kick_band(self, n: int) -> BandSpectrum:
        if not 0 <= n < self.spectra.shape[0]:
            raise IndexError(f"period {n} outside the record (0..{self.n_periods})")
        return BandSpectrum.from_spectrum(self.spectra[n], self.hbar)

    def state(self, n: int, tau: float = 0.0) -> WaveState:
        return WaveState.from_spectrum(self.flown_spectrum(n, tau), self.time(n, tau), self.hbar)

    def states(self) -> Iterator[WaveState]:
        """Post-kick states, one per period."""
        for n in range(self.spectra.shape[0]):
            yield WaveState.from_spectrum(self.spectra[n], self.time(n), self.hbar)

    @classmethod
    @timing_decorator
    def run(cls, psi0: WaveState, rotor: RotorParams, n_periods: int,
            substeps: Optional[int] = None) -> "Evolution":
        substeps = int(substeps or config["quantum"]["substeps"])
        if n_periods < 1:
            raise ValueError(f"n_periods must be >= 1, got {n_periods}")
        logger.info(f"Rotor evolution: M={psi0.size} K={rotor.kick_strength} T={rotor.period} "
                    f"hbar={rotor.hbar} periods={n_periods}")
        spectra = np.empty((n_periods + 1, psi0.size), dtype=complex)
        psi = psi0
        spectra[0] = psi.spectrum()
        for n in range(1, n_periods + 1):
            psi = split_step(psi, rotor)
            spectra[n] = psi.spectrum()
        logger.info(f"Rotor evolution done: norm drift {abs(psi.norm - psi0.norm):.3e}")
        return cls(rotor, spectra, substeps)

    def save(self, path: str) -> None:
        """Flat binary record: header (M, substeps, hbar, K, T), then psi per period as complex128."""
        header = np.array([(self.grid_points, self.substeps, self.hbar,
                            self.rotor.kick_strength, self.rotor.period)], dtype=_HEADER)
        payload = np.fft.ifft(self.spectra, axis=1).astype("<c16")
        with open(path, "wb") as f:
            header.tofile(f)
            payload.tofile(f)
        logger.debug(f"Saved {self.spectra.shape[0]} snapshots to {path}")

    @classmethod
    def load(cls, path: str) -> "Evolution":
        size = os.path.getsize(path)
        with open(path, "rb") as f:
            header = np.fromfile(f, dtype=_HEADER, count=1)
            if header.size != 1:
                raise ValueError(f"{path}: truncated evolution header")
            grid_points = int(header["M"][0])
            _check_grid_size(grid_points)
            payload_bytes = size - _HEADER.itemsize
            if payload_bytes % (16 * grid_points):
                raise ValueError(f"{path}: payload is not a whole number of {grid_points}-point snapshots")
            payload = np.fromfile(f, dtype="<c16").reshape(-1, grid_points)
        rotor = RotorParams(float(header["K"][0]), float(header["T"][0]), float(header["hbar"][0]))
        return cls(rotor, np.fft.fft(payload, axis=1), int(header["substeps"][0]))


def position_entropy(psi: WaveState) -> float:
    """-sum |psi|^2 ln|psi|^2 dq with 0 ln 0 = 0."""
    density = psi.density()
    positive = density > 0.0
    return float(-np.sum(density[positive] * np.log(density[positive])) * psi.spacing)


def unitarity_drift(psi0: WaveState, rotor: RotorParams, n_periods: int) -> Tuple[float, List[float]]:
    """Largest |norm - norm0| over ``n_periods`` periods, without storing the record."""
    psi = psi0
    drifts = []
    for _ in range(n_periods):
        psi = split_step(psi, rotor)
        drifts.append(abs(psi.norm - psi0.norm))
    return max(drifts), drifts
