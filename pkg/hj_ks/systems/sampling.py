"""Seeded initial-condition samplers."""

import logging
from typing import Callable, Tuple

import numpy as np

from .catalog import HamiltonianModel, KickedModel

logger = logging.getLogger('hj_ks')


def _surface_point(value_fn: Callable[[np.ndarray], float], dim: int, energy: float,
                   rng: np.random.Generator, kinetic_scale: float, box: float,
                   max_tries: int) -> Tuple[np.ndarray, np.ndarray]:
    for attempt in range(max_tries):
        q = rng.uniform(-box, box, size=dim)
        v = value_fn(q)
        if v < energy:
            direction = rng.normal(size=dim)
            direction /= np.linalg.norm(direction)
            p = np.sqrt(2.0 * (energy - v) / kinetic_scale) * direction
            logger.debug(f"Energy-surface sample accepted after {attempt + 1} draws")
            return q, p
    raise ValueError(f"no point with V < {energy} found in the box [-{box}, {box}]^{dim} after {max_tries} draws")


def sample_energy_surface(model: HamiltonianModel, energy: float, seed: int,
                          box: float = 2.0, max_tries: int = 100000) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (q0, p0) with H(q0, p0) = energy for a standard-form model.

    q0 is uniform in the allowed part of the box, p0 has the remaining
    kinetic energy in a uniformly random direction.
    """
    if not model.standard_form:
        raise ValueError(f"{model.name}: energy-surface sampling needs a standard-form model")
    rng = np.random.default_rng(seed)
    return _surface_point(lambda q: model.potential(q, 0.0)[0], model.dim, energy, rng, 1.0, box, max_tries)


def sample_kicked_surface(model: KickedModel, energy: float, seed: int,
                          box: float = 2.0, max_tries: int = 100000) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (q0, p0) with T p0^2 / 2 + f(q0) = energy.

    For small T the kicked flow approaches H = p^2/2 + f(q)/T, whose
    rescaled energy T H is the quantity fixed here.
    """
    rng = np.random.default_rng(seed)
    return _surface_point(lambda q: model.kick(q)[0], model.dim, energy, rng, model.period, box, max_tries)


def sample_density(density: np.ndarray, grid: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Inverse-CDF draws from a density sampled on a periodic grid."""
    rng = np.random.default_rng(seed)
    spacing = grid[1] - grid[0]
    weights = np.clip(density, 0.0, None) * spacing
    cdf = np.concatenate([[0.0], np.cumsum(weights)])
    cdf /= cdf[-1]
    edges = np.concatenate([grid, [grid[-1] + spacing]])
    return np.interp(rng.uniform(size=n), cdf, edges)
