"""Tangent-space Lyapunov spectrum by repeated orthonormalization.

An independent cross-check of the Riccati and kicked engines: the KS
invariant is the sum of the positive exponents. The orbit is advanced with
the same RK4 stepper as the Riccati engine so that a disagreement points
at the method rather than the trajectory.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from ..config.config import config
from ..errors import TangentOverflowError
from ..systems.catalog import HamiltonianModel, KickedModel
from ..utils.decorators import timing_decorator
from .integrator import rk4_step
from .kicked import orbit_map
from .riccati import TrajectoryState

logger = logging.getLogger('hj_ks')


@dataclass
class TangentFrame:
    basis: np.ndarray
    log_norms: np.ndarray
    renorm_count: int = 0

    @classmethod
    def identity(cls, dim: int) -> "TangentFrame":
        return cls(np.eye(2 * dim), np.zeros(2 * dim))

    def renormalize(self) -> np.ndarray:
        """Modified Gram-Schmidt in place; returns the log stretch of each vector."""
        b = self.basis
        stretches = np.empty(b.shape[1])
        for j in range(b.shape[1]):
            v = b[:, j]
            for i in range(j):
                v -= (b[:, i] @ v) * b[:, i]
            norm = np.linalg.norm(v)
            if not np.isfinite(norm) or norm == 0.0:
                raise TangentOverflowError(f"tangent vector {j} degenerate (norm {norm})")
            b[:, j] = v / norm
            stretches[j] = np.log(norm)
        self.log_norms += stretches
        self.renorm_count += 1
        return stretches

    def gram_residual(self) -> float:
        b = self.basis
        return float(np.max(np.abs(b.T @ b - np.eye(b.shape[1]))))


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray
    errors: np.ndarray
    k_oracle: float
    k_error: float
    elapsed: float
    renorm_count: int
    renorm_interval: float
    samples: List[tuple] = field(default_factory=list)

    def pairing_residuals(self) -> np.ndarray:
        """lambda_i + lambda_{2N+1-i}; zero for a symplectic flow."""
        return self.exponents + self.exponents[::-1]

    def pairing_ok(self, n_sigma: float = 2.0, floor: float = 1e-6) -> bool:
        bound = n_sigma * np.hypot(self.errors, self.errors[::-1]) + floor
        return bool(np.all(np.abs(self.pairing_residuals()) <= bound))

    @property
    def total(self) -> float:
        return float(np.sum(self.exponents))

    @property
    def columns(self) -> Tuple[str, ...]:
        return ("t",) + tuple(f"lambda_{i + 1}" for i in range(self.exponents.size)) + ("k_oracle",)

    def summary(self) -> dict:
        return {
            "exponents": self.exponents.tolist(),
            "errors": self.errors.tolist(),
            "k_oracle": self.k_oracle,
            "k_error": self.k_error,
            "sum": self.total,
            "renorm_count": self.renorm_count,
            "renorm_interval": self.renorm_interval,
        }


def tangent_rhs(xi: TrajectoryState, delta: np.ndarray, model: HamiltonianModel) -> np.ndarray:
    """J K(xi, t) delta with J = [[0, I], [-I, 0]]; ``delta`` may hold several columns."""
    n = model.dim
    k11, k12, k21, k22 = model.hessian_blocks(xi.q, xi.p, xi.t)
    dq, dp = delta[:n], delta[n:]
    return np.concatenate([k21 @ dq + k22 @ dp, -(k11 @ dq + k12 @ dp)])


def kicked_tangent_map(hess: np.ndarray, period: float) -> np.ndarray:
    """Linearized period map [[I, T I], [-H, I - H T]] with H = Hess f(q')."""
    n = hess.shape[0]
    eye = np.eye(n)
    return np.block([[eye, period * eye], [-hess, eye - period * hess]])


def _block_statistics(records: List[Tuple[float, np.ndarray]], blocks: int) -> Tuple[np.ndarray, float]:
    """Standard errors of the exponents and of k from contiguous time blocks."""
    if len(records) < 2:
        size = records[0][1].size if records else 0
        return np.full(size, np.nan), float("nan")
    blocks = min(blocks, len(records))
    groups = np.array_split(np.arange(len(records)), blocks)
    estimates = []
    for group in groups:
        duration = sum(records[i][0] for i in group)
        estimates.append(sum(records[i][1] for i in group) / duration)
    estimates = np.array(estimates)
    k_blocks = np.array([np.sum(e[e > 0.0]) for e in estimates])
    scale = np.sqrt(blocks)
    return estimates.std(axis=0, ddof=1) / scale, float(k_blocks.std(ddof=1) / scale)


def _finish(frame: TangentFrame, elapsed: float, records, samples, interval: float,
            blocks: int) -> LyapunovSpectrum:
    exponents = frame.log_norms / elapsed
    errors, k_error = _block_statistics(records, blocks)
    order = np.argsort(exponents)[::-1]
    exponents, errors = exponents[order], errors[order]
    k_oracle = float(np.sum(exponents[exponents > 0.0]))
    return LyapunovSpectrum(exponents, errors, k_oracle, k_error, elapsed, frame.renorm_count,
                            interval, samples)


def _sample(t: float, frame: TangentFrame, elapsed: float) -> tuple:
    running = np.sort(frame.log_norms / elapsed)[::-1]
    return (t, *running.tolist(), float(np.sum(running[running > 0.0])))


@timing_decorator
def spectrum(model: Union[HamiltonianModel, KickedModel], xi0: TrajectoryState, t_max: float,
             renorm_interval: Optional[float] = None, dt: Optional[float] = None,
             max_stretch: Optional[float] = None, blocks: Optional[int] = None) -> LyapunovSpectrum:
    """Full Lyapunov spectrum (descending) and k_oracle = sum of positive exponents.

    For kicked models ``t_max`` and ``renorm_interval`` are in units of time
    and are rounded to whole periods.
    """
    settings = config["benettin"]
    renorm_interval = float(renorm_interval or settings["renorm_interval"])
    max_log_stretch = np.log(float(max_stretch or settings["max_stretch"]))
    blocks = int(blocks or settings["blocks"])
    if isinstance(model, KickedModel):
        return _kicked_spectrum(model, xi0, t_max, renorm_interval, max_log_stretch, blocks)
    return _flow_spectrum(model, xi0, t_max, renorm_interval, float(dt or config["riccati"]["dt"]),
                          max_log_stretch, blocks)


def _flow_spectrum(model: HamiltonianModel, xi0: TrajectoryState, t_max: float, interval: float,
                   dt: float, max_log_stretch: float, blocks: int) -> LyapunovSpectrum:
    n = model.dim
    size = 2 * n
    frame = TangentFrame.identity(n)
    stride = max(1, int(round(interval / dt)))
    n_steps = int(round(t_max / dt))
    logger.info(f"Benettin run: model={model.name} t_max={t_max} dt={dt} renorm every {stride} steps")

    def rhs(t, y):
        q, p = y[:n], y[n:size]
        basis = y[size:].reshape(size, size)
        qdot, pdot = model.equations_of_motion(q, p, t)
        tangent = tangent_rhs(TrajectoryState(q, p, t), basis, model)
        return np.concatenate([qdot, pdot, tangent.ravel()])

    y = np.concatenate([xi0.q, xi0.p, frame.basis.ravel()])
    t = t0 = float(xi0.t)
    since = 0
    last_renorm = t0
    records: List[Tuple[float, np.ndarray]] = []
    samples: List[tuple] = []
    for step in range(1, n_steps + 1):
        y = rk4_step(rhs, t, y, dt)
        t = t0 + step * dt
        since += 1
        if since < stride and step < n_steps:
            continue
        frame.basis = y[size:].reshape(size, size).copy()
        try:
            stretches = frame.renormalize()
        except TangentOverflowError as e:
            hint = " before the first renormalization; use a smaller renorm_interval" if not records else ""
            raise TangentOverflowError(f"{e}{hint}", partial=frame) from e
        y[size:] = frame.basis.ravel()
        records.append((t - last_renorm, stretches))
        samples.append(_sample(t, frame, t - t0))
        last_renorm = t
        since = 0
        if np.max(stretches) > max_log_stretch and stride > 1:
            stride = max(1, stride // 2)
            logger.info(f"Benettin: stretch {np.exp(np.max(stretches)):.3e} per interval, renorm every {stride} steps")

    result = _finish(frame, t - t0, records, samples, stride * dt, blocks)
    logger.info(f"Benettin run done: exponents={np.array2string(result.exponents, precision=5)} "
                f"k_oracle={result.k_oracle:.6g}")
    return result


def _kicked_spectrum(model: KickedModel, xi0: TrajectoryState, t_max: float, interval: float,
                     max_log_stretch: float, blocks: int) -> LyapunovSpectrum:
    period = model.period
    frame = TangentFrame.identity(model.dim)
    stride = max(1, int(round(interval / period)))
    n_steps = max(1, int(round(t_max / period)))
    logger.info(f"Benettin run: model={model.name} kicks={n_steps} renorm every {stride} kicks")

    q, p = xi0.q.copy(), xi0.p.copy()
    since = 0
    last_renorm = 0
    records: List[Tuple[float, np.ndarray]] = []
    samples: List[tuple] = []
    for n in range(1, n_steps + 1):
        q, p, hess = orbit_map(q, p, model)
        if model.wrap is not None:
            q = np.mod(q, model.wrap)
        frame.basis = kicked_tangent_map(hess, period) @ frame.basis
        since += 1
        if since < stride and n < n_steps:
            continue
        try:
            stretches = frame.renormalize()
        except TangentOverflowError as e:
            hint = " before the first renormalization; use a smaller renorm_interval" if not records else ""
            raise TangentOverflowError(f"{e}{hint}", partial=frame) from e
        records.append(((n - last_renorm) * period, stretches))
        samples.append(_sample(n * period, frame, n * period))
        last_renorm = n
        since = 0
        if np.max(stretches) > max_log_stretch and stride > 1:
            stride = max(1, stride // 2)
            logger.info(f"Benettin: stretch {np.exp(np.max(stretches)):.3e} per interval, renorm every {stride} kicks")

    result = _finish(frame, n_steps * period, records, samples, stride * period, blocks)
    logger.info(f"Benettin run done: exponents={np.array2string(result.exponents, precision=5)} "
                f"k_oracle={result.k_oracle:.6g}")
    return result
