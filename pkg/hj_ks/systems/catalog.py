"""Catalog of compiled-in dynamical systems.

Continuous models are ``HamiltonianModel`` instances, either in standard
form H = p^2/2 + V(q, t) (defined by a potential evaluator) or general
(defined by the Hessian blocks of H). Kicked models are free flights of
length T interrupted by impulses f(q).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ..linalg.matkernel import sym_eigen

logger = logging.getLogger('hj_ks')

STANDARD = "standard-form"
GENERAL = "general"

PotentialFn = Callable[[np.ndarray, float], Tuple[float, np.ndarray, np.ndarray]]
KickFn = Callable[[np.ndarray], Tuple[float, np.ndarray, np.ndarray]]
Blocks = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]

# quadratic coupling -1/2 [(q1-q2)^2 + (q2-q3)^2 + (q3-q1)^2] = -1/2 q^T L q
_RING_LAPLACIAN = np.array([[2.0, -1.0, -1.0],
                            [-1.0, 2.0, -1.0],
                            [-1.0, -1.0, 2.0]])


@dataclass(frozen=True)
class HamiltonianModel:
    name: str
    dim: int
    kind: str = STANDARD
    potential: Optional[PotentialFn] = None
    hamiltonian: Optional[Callable[[np.ndarray, np.ndarray, float], float]] = None
    gradient: Optional[Callable[[np.ndarray, np.ndarray, float], Tuple[np.ndarray, np.ndarray]]] = None
    blocks: Optional[Callable[[np.ndarray, np.ndarray, float], Blocks]] = None
    autonomous: bool = True
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"{self.name}: dim must be >= 1")
        if self.kind == STANDARD and self.potential is None:
            raise ValueError(f"{self.name}: standard-form models need a potential")
        if self.kind == GENERAL and (self.hamiltonian is None or self.gradient is None or self.blocks is None):
            raise ValueError(f"{self.name}: general models need hamiltonian, gradient and blocks")
        object.__setattr__(self, "_zeros", np.zeros((self.dim, self.dim)))
        object.__setattr__(self, "_eye", np.eye(self.dim))

    @property
    def standard_form(self) -> bool:
        return self.kind == STANDARD

    def hessian_blocks(self, q: np.ndarray, p: np.ndarray, t: float) -> Blocks:
        """(K11, K12, K21, K22) of the phase-space Hessian of H along the orbit."""
        if self.kind == STANDARD:
            _, _, hess = self.potential(q, t)
            return hess, self._zeros, self._zeros, self._eye
        return self.blocks(q, p, t)

    def hessian(self, q: np.ndarray, p: np.ndarray, t: float) -> np.ndarray:
        k11, k12, k21, k22 = self.hessian_blocks(q, p, t)
        return np.block([[k11, k12], [k21, k22]])

    def equations_of_motion(self, q: np.ndarray, p: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind == STANDARD:
            _, grad, _ = self.potential(q, t)
            return p, -grad
        dh_dq, dh_dp = self.gradient(q, p, t)
        return dh_dp, -dh_dq

    def derivatives(self, q: np.ndarray, p: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray, Blocks]:
        """Flow and Hessian blocks together, with a single potential evaluation."""
        if self.kind == STANDARD:
            _, grad, hess = self.potential(q, t)
            return p, -grad, (hess, self._zeros, self._zeros, self._eye)
        dh_dq, dh_dp = self.gradient(q, p, t)
        return dh_dp, -dh_dq, self.blocks(q, p, t)

    def energy(self, q: np.ndarray, p: np.ndarray, t: float = 0.0) -> float:
        if self.kind == STANDARD:
            v, _, _ = self.potential(q, t)
            return 0.5 * float(p @ p) + v
        return float(self.hamiltonian(q, p, t))


@dataclass(frozen=True)
class KickedModel:
    """Free flights of length ``period`` between impulses; ``wrap`` is the period of q for angle variables."""
    name: str
    dim: int
    period: float
    kick: KickFn
    params: Dict[str, object] = field(default_factory=dict)
    wrap: Optional[float] = None

    def __post_init__(self):
        if not self.period > 0.0:
            raise ValueError(f"{self.name}: kick period must be positive, got {self.period}")


def _coupled_quartic(q: np.ndarray, coeffs: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    lq = _RING_LAPLACIAN @ q
    value = -0.5 * float(q @ lq) + float(np.sum(coeffs * q ** 4))
    grad = -lq + 4.0 * coeffs * q ** 3
    hess = -_RING_LAPLACIAN + np.diag(12.0 * coeffs * q ** 2)
    return value, grad, hess


_QUARTIC3_COEFFS = np.array([1.0, 2.0, 3.0])
_KICKED_QUARTIC_COEFFS = np.array([1.0, 1.0, 1.0])


def quartic3(q: np.ndarray, t: float = 0.0) -> Tuple[float, np.ndarray, np.ndarray]:
    """Three coupled anharmonic oscillators with V = -1/2 q^T L q + q1^4 + 2 q2^4 + 3 q3^4."""
    return _coupled_quartic(q, _QUARTIC3_COEFFS)


def kicked_quartic(q: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Kick f = -1/2 q^T L q + q1^4 + q2^4 + q3^4."""
    return _coupled_quartic(q, _KICKED_QUARTIC_COEFFS)


def rotor_kick(q, kick_strength: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Kicked-rotor impulse f(q) = K cos q."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    value = kick_strength * float(np.sum(np.cos(q)))
    grad = -kick_strength * np.sin(q)
    hess = np.diag(-kick_strength * np.cos(q))
    return value, grad, hess


def quadratic_model(omega2) -> HamiltonianModel:
    """Harmonic system V = 1/2 q^T Omega^2 q with Omega^2 positive definite."""
    omega2 = np.atleast_2d(np.asarray(omega2, dtype=float))
    if omega2.shape[0] != omega2.shape[1]:
        raise ValueError(f"Omega^2 must be square, got shape {omega2.shape}")
    if not np.allclose(omega2, omega2.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(omega2).max())):
        raise ValueError("Omega^2 must be symmetric")
    values, _ = sym_eigen(omega2)
    if values[-1] <= 0.0:
        raise ValueError(f"Omega^2 must be positive definite (smallest eigenvalue {values[-1]:.3e})")
    omega2 = 0.5 * (omega2 + omega2.T)

    def potential(q, t=0.0):
        q = np.asarray(q, dtype=float)
        grad = omega2 @ q
        return 0.5 * float(q @ grad), grad, omega2

    return HamiltonianModel("quadratic", omega2.shape[0], potential=potential,
                            params={"omega2": omega2})


def harmonic(omega: float = 1.0) -> HamiltonianModel:
    return quadratic_model([[omega * omega]])


def characteristic_frequencies(model: HamiltonianModel) -> np.ndarray:
    """Ascending frequencies of a quadratic model."""
    values, _ = sym_eigen(model.params["omega2"])
    return np.sqrt(values[::-1])


def conjugate_times(model: HamiltonianModel, t_max: float) -> Dict[str, np.ndarray]:
    """Analytic pole times (m - 1/2) pi / w and conjugate points m pi / w up to t_max."""
    poles, conjugates = [], []
    for omega in characteristic_frequencies(model):
        m = np.arange(1, int(omega * t_max / np.pi) + 2)
        poles.extend(t for t in (m - 0.5) * np.pi / omega if t <= t_max)
        conjugates.extend(t for t in m * np.pi / omega if t <= t_max)
    return {"poles": np.sort(np.array(poles)), "conjugate_points": np.sort(np.array(conjugates))}


def _inverted_1d(q, t=0.0):
    q = np.asarray(q, dtype=float)
    return -0.5 * float(q @ q), -q, -np.eye(1)


def inverted_1d() -> HamiltonianModel:
    return HamiltonianModel("inverted-1d", 1, potential=_inverted_1d)


def free_particle(dim: int = 1) -> HamiltonianModel:
    zeros = np.zeros((dim, dim))

    def potential(q, t=0.0):
        return 0.0, np.zeros(dim), zeros

    return HamiltonianModel("free", dim, potential=potential, params={"dim": dim})


def squeeze(dim: int = 1) -> HamiltonianModel:
    """Hyperbolic H = q . p: q grows as e^t, p decays as e^-t, k = dim."""
    zeros, eye = np.zeros((dim, dim)), np.eye(dim)

    def hamiltonian(q, p, t=0.0):
        return float(q @ p)

    def gradient(q, p, t=0.0):
        return p, q

    def blocks(q, p, t=0.0):
        return zeros, eye, eye, zeros

    return HamiltonianModel("squeeze", dim, kind=GENERAL, hamiltonian=hamiltonian,
                            gradient=gradient, blocks=blocks, params={"dim": dim})


def general_quadratic(matrix) -> HamiltonianModel:
    """H = 1/2 xi^T M xi with a symmetric 2N x 2N matrix M."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    size = matrix.shape[0]
    if size % 2 or matrix.shape != (size, size):
        raise ValueError(f"general-quadratic needs an even square matrix, got {matrix.shape}")
    matrix = 0.5 * (matrix + matrix.T)
    n = size // 2
    split = (matrix[:n, :n], matrix[:n, n:], matrix[n:, :n], matrix[n:, n:])

    def hamiltonian(q, p, t=0.0):
        xi = np.concatenate([q, p])
        return 0.5 * float(xi @ matrix @ xi)

    def gradient(q, p, t=0.0):
        g = matrix @ np.concatenate([q, p])
        return g[:n], g[n:]

    def blocks(q, p, t=0.0):
        return split

    return HamiltonianModel("general-quadratic", n, kind=GENERAL, hamiltonian=hamiltonian,
                            gradient=gradient, blocks=blocks, params={"matrix": matrix})


def kicked_quartic_model(period: float = 1e-10) -> KickedModel:
    return KickedModel("kicked-quartic", 3, period, kicked_quartic, params={"T": period})


def rotor_model(kick_strength: float = 5.0, period: float = 1.0) -> KickedModel:
    def kick(q):
        return rotor_kick(q, kick_strength)

    return KickedModel("rotor", 1, period, kick, params={"K": kick_strength, "T": period}, wrap=2.0 * np.pi)


def constant_curvature_model(curvature: float = -1.0, period: float = 1.0, dim: int = 1) -> KickedModel:
    """Kick f = c |q|^2 / 2 with constant Hessian c I (c = -1, T = 1 gives the golden cat map)."""
    hess = curvature * np.eye(dim)

    def kick(q):
        q = np.asarray(q, dtype=float)
        return 0.5 * curvature * float(q @ q), curvature * q, hess

    return KickedModel("constant-curvature", dim, period, kick,
                       params={"curvature": curvature, "T": period, "dim": dim})


def _quartic3_model() -> HamiltonianModel:
    return HamiltonianModel("quartic3", 3, potential=quartic3)


MODELS: Dict[str, Callable[..., object]] = {
    "quartic3": _quartic3_model,
    "harmonic": harmonic,
    "kicked-quartic": kicked_quartic_model,
    "rotor": rotor_model,
    "quadratic": quadratic_model,
    "inverted-1d": inverted_1d,
    "free": free_particle,
    "squeeze": squeeze,
    "general-quadratic": general_quadratic,
    "constant-curvature": constant_curvature_model,
}


def get_model(name: str, **params):
    """Build a catalogued model by its config name."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"Unknown model: {name} (known: {', '.join(sorted(MODELS))})")
    logger.debug(f"Building model {name} with {params}")
    return factory(**params)
