"""Continuous-time KS engine.

Integrates Hamilton's equations together with the matrix Riccati equation

    dsigma/dt + K11 + K12 sigma + sigma K21 + sigma K22 sigma = 0,  sigma(0) = 0

and the bounded KS integrand tr[(K11 - K22)/2 sin 2Theta + (K12 + K21)/2 cos 2Theta]
with sigma = -tan Theta. Its plain time average is the principal-value mean
of tr sigma, i.e. the KS invariant.

sigma has simple poles. The state is therefore kept in a chart: direct
(sigma itself), inverted (tau = sigma^-1, regular where sigma blows up) or,
for N >= 2 when some directions sit near a pole of sigma while others sit
near a pole of tau, a rotated chart -tan(Theta - alpha). Charts are related
by a symplectic rotation of the Lagrangian frame, so every chart obeys the
same Riccati equation with rotated Hessian blocks.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from ..config.config import config
from ..errors import NonFiniteStateError, OrbitEscapeError
from ..linalg.matkernel import SymMatrix, chart_phase_functions, packed_size, sym_eigen, symmetrize
from ..systems.catalog import Blocks, HamiltonianModel
from ..utils.decorators import timing_decorator
from .integrator import rk4_step

logger = logging.getLogger('hj_ks')

DIRECT = "direct"
INVERTED = "inverted"
ROTATED = "rotated"

RICCATI_COLUMNS = ("t", "k_running", "integrand", "energy_drift", "pole_count", "representation")


def chart_count(dim: int) -> int:
    """Even number of charts, more than dim, so one always keeps every phase away from its poles."""
    return 2 * ((dim + 2) // 2)


@dataclass(frozen=True)
class TrajectoryState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))
        if self.q.shape != self.p.shape:
            raise ValueError(f"q and p shapes differ: {self.q.shape} vs {self.p.shape}")


@dataclass(frozen=True)
class PoleEvent:
    t: float
    direction: int
    sign: int


@dataclass(frozen=True)
class SigmaState:
    """Riccati state in one chart.

    ``matrix`` is sigma in the direct chart, tau = sigma^-1 in the inverted
    chart and -tan(Theta - angle) in a rotated chart.
    """
    matrix: SymMatrix
    chart: int = 0
    n_charts: int = 2
    pole_count: Tuple[int, ...] = ()
    pole_events: Tuple[PoleEvent, ...] = ()
    switch_log: Tuple[Tuple[float, str, str], ...] = ()
    pole_sign: float = 0.0
    switch_threshold: float = 10.0
    switch_back_factor: float = 2.0

    @classmethod
    def initial(cls, dim: int, switch_threshold: Optional[float] = None,
                switch_back_factor: Optional[float] = None) -> "SigmaState":
        settings = config["riccati"]
        return cls(matrix=SymMatrix.zeros(dim), chart=0, n_charts=chart_count(dim),
                   pole_count=(0,) * dim,
                   switch_threshold=float(switch_threshold or settings["switch_threshold"]),
                   switch_back_factor=float(switch_back_factor or settings["switch_back_factor"]))

    @property
    def angle(self) -> float:
        return self.chart * np.pi / self.n_charts

    @property
    def inverted(self) -> bool:
        return 2 * self.chart == self.n_charts

    @property
    def representation(self) -> str:
        if self.chart == 0:
            return DIRECT
        return INVERTED if self.inverted else ROTATED


def _phase_angles(values: np.ndarray, angle: float, inverted: bool) -> np.ndarray:
    if inverted:
        return 0.5 * np.pi + np.arctan(values)
    return angle - np.arctan(values)


def _chart_values(theta: np.ndarray, angle: float, inverted: bool) -> np.ndarray:
    if inverted:
        return np.tan(theta - 0.5 * np.pi)
    return -np.tan(theta - angle)


def symplectic_phases(state: SigmaState) -> Tuple[np.ndarray, np.ndarray]:
    """Eigen-angles of Theta (mod pi) and the shared eigenvectors."""
    values, vectors = sym_eigen(state.matrix)
    return _phase_angles(values, state.angle, state.inverted), vectors


def convert_chart(state: SigmaState, chart: int) -> SigmaState:
    """Re-express the state in another chart through the eigenbasis of Theta."""
    theta, vectors = symplectic_phases(state)
    target = replace(state, chart=chart)
    values = _chart_values(theta, target.angle, target.inverted)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"chart {chart} is singular for the current phase")
    return replace(target, matrix=SymMatrix.from_dense((vectors * values) @ vectors.T))


def sigma_matrix(state: SigmaState) -> np.ndarray:
    """Dense sigma, whatever the chart (entries blow up near a pole)."""
    if state.chart == 0:
        return state.matrix.dense()
    theta, vectors = symplectic_phases(state)
    with np.errstate(over="ignore", invalid="ignore"):
        return (vectors * -np.tan(theta)) @ vectors.T


def _sigma_rhs(s: np.ndarray, k11, k12, k21, k22) -> np.ndarray:
    return -symmetrize(k11 + k12 @ s + s @ k21 + s @ k22 @ s)


def _tau_rhs(tau: np.ndarray, k11, k12, k21, k22) -> np.ndarray:
    return symmetrize(tau @ k11 @ tau + tau @ k12 + k21 @ tau + k22)


def rotate_blocks(blocks: Blocks, angle: float) -> Blocks:
    """Hessian blocks seen from the frame rotated by ``angle``: R K R^T."""
    k11, k12, k21, k22 = blocks
    c, s = np.cos(angle), np.sin(angle)
    cs, c2, s2 = c * s, c * c, s * s
    mixed = k12 + k21
    r11 = c2 * k11 - cs * mixed + s2 * k22
    r12 = cs * (k11 - k22) + c2 * k12 - s2 * k21
    r21 = cs * (k11 - k22) + c2 * k21 - s2 * k12
    r22 = s2 * k11 + cs * mixed + c2 * k22
    return r11, r12, r21, r22


def sigma_rhs(state: SigmaState, blocks: Blocks) -> SymMatrix:
    """dsigma/dt = -(K11 + K12 sigma + sigma K21 + sigma K22 sigma)."""
    if state.chart != 0:
        raise ValueError(f"sigma_rhs needs the direct chart, state is {state.representation}")
    return SymMatrix.from_dense(_sigma_rhs(state.matrix.dense(), *blocks))


def tau_rhs(state: SigmaState, blocks: Blocks) -> SymMatrix:
    """dtau/dt = tau K11 tau + tau K12 + K21 tau + K22 for tau = sigma^-1."""
    if not state.inverted:
        raise ValueError(f"tau_rhs needs the inverted chart, state is {state.representation}")
    return SymMatrix.from_dense(_tau_rhs(state.matrix.dense(), *blocks))


def chart_rhs(matrix: np.ndarray, blocks: Blocks, angle: float, inverted: bool) -> np.ndarray:
    if inverted:
        return _tau_rhs(matrix, *blocks)
    if angle == 0.0:
        return _sigma_rhs(matrix, *blocks)
    return _sigma_rhs(matrix, *rotate_blocks(blocks, angle))


def _integrand(matrix: np.ndarray, blocks: Blocks, angle: float, inverted: bool) -> float:
    k11, k12, k21, k22 = blocks
    sin2, cos2 = chart_phase_functions(matrix, angle, inverted)
    return 0.5 * float(np.sum((k11 - k22) * sin2) + np.sum((k12 + k21) * cos2))


def ks_integrand(state: SigmaState, blocks: Blocks) -> float:
    """tr[(K11 - K22)/2 sin 2Theta + (K12 + K21)/2 cos 2Theta]; chart independent."""
    return _integrand(state.matrix.dense(), blocks, state.angle, state.inverted)


def _pole_determinant(state: SigmaState) -> float:
    """Vanishes exactly when sigma has a pole; 0 in the direct chart (no poles there)."""
    if state.chart == 0:
        return 0.0
    m = state.matrix.dense()
    if state.inverted:
        return float(np.linalg.det(m))
    c, s = np.cos(state.angle), np.sin(state.angle)
    return float(np.linalg.det(c * np.eye(m.shape[0]) + s * m))


def _chart_costs(theta: np.ndarray, n_charts: int) -> np.ndarray:
    angles = np.arange(n_charts) * np.pi / n_charts
    with np.errstate(over="ignore", divide="ignore"):
        return np.array([np.max(np.abs(np.tan(theta - a))) for a in angles])


def _norm_test(m: np.ndarray, bound: float) -> Optional[bool]:
    """max|eigenvalue| <= bound from the Frobenius norm alone; None when the norm cannot tell."""
    norm = float(np.linalg.norm(m))
    if norm <= bound:
        return True
    if norm > bound * np.sqrt(m.shape[0]):
        return False
    return None


def _direct_matrix(state: SigmaState) -> Optional[np.ndarray]:
    """sigma from a non-direct chart by a linear solve; None at a pole."""
    m = state.matrix.dense()
    try:
        if state.inverted:
            return np.linalg.inv(m)
        c, s = np.cos(state.angle), np.sin(state.angle)
        ident = np.eye(m.shape[0])
        return np.linalg.solve(c * ident + s * m, c * m - s * ident)
    except np.linalg.LinAlgError:
        return None


def maybe_switch(state: SigmaState, t: float = 0.0) -> SigmaState:
    """Log pole crossings and move to a better chart when the current one degrades.

    Norm bounds settle most steps; the eigen-decomposition runs only when they
    cannot, or when a pole was crossed or a switch is due.
    """
    threshold = state.switch_threshold
    if state.chart == 0:
        within = _norm_test(state.matrix.dense(), threshold)
        if within:
            return state
        theta, _ = symplectic_phases(state)
        if within is None and np.max(np.abs(np.tan(theta))) <= threshold:
            return state
        return _switch(state, int(np.argmin(_chart_costs(theta, state.n_charts))), t)

    values = None
    det = _pole_determinant(state)
    if state.pole_sign != 0.0 and det != 0.0 and np.sign(det) != np.sign(state.pole_sign):
        values, _ = sym_eigen(state.matrix)
        if state.inverted:
            crossing = values
        else:
            crossing = np.cos(state.angle) + np.sin(state.angle) * values
        direction = int(np.argmin(np.abs(crossing)))
        sign = 1 if crossing[direction] > 0.0 else -1
        counts = list(state.pole_count)
        counts[direction] += 1
        event = PoleEvent(t, direction, sign)
        logger.debug(f"Pole of sigma at t={t:.6f} (direction {direction}, sign {sign:+d})")
        state = replace(state, pole_count=tuple(counts), pole_events=state.pole_events + (event,))
    if det != 0.0:
        state = replace(state, pole_sign=det)

    back = threshold / state.switch_back_factor
    if values is None:
        sigma = _direct_matrix(state) if det != 0.0 else None
        go_back = False if sigma is None or not np.all(np.isfinite(sigma)) else _norm_test(sigma, back)
        if go_back:
            return _switch(state, 0, t, sigma)
        stay = _norm_test(state.matrix.dense(), threshold) if go_back is False else None
        if stay:
            return state
        values, _ = sym_eigen(state.matrix)

    theta = _phase_angles(values, state.angle, state.inverted)
    costs = _chart_costs(theta, state.n_charts)
    if costs[0] <= back:
        return _switch(state, 0, t)
    if costs[state.chart] > threshold:
        return _switch(state, int(np.argmin(costs)), t)
    return state


def _switch(state: SigmaState, chart: int, t: float, matrix: Optional[np.ndarray] = None) -> SigmaState:
    """Move to chart; ``matrix`` is the state already expressed there, if known."""
    if chart == state.chart:
        return state
    if matrix is not None:
        switched = replace(state, chart=chart, matrix=SymMatrix.from_dense(symmetrize(matrix)))
    else:
        try:
            switched = convert_chart(state, chart)
        except FloatingPointError as e:
            logger.debug(f"Chart switch at t={t:.6f} postponed: {e}")
            return state
    entry = (t, state.representation, switched.representation)
    logger.debug(f"Chart switch at t={t:.6f}: {entry[1]} -> {entry[2]} (chart {chart}/{state.n_charts})")
    return replace(switched, switch_log=state.switch_log + (entry,),
                   pole_sign=_pole_determinant(switched))


@dataclass
class KsEstimate:
    elapsed: float = 0.0
    integral: float = 0.0
    samples: List[tuple] = field(default_factory=list)
    energy_drift: Optional[float] = None
    max_energy_drift: Optional[float] = None
    pole_events: Tuple[PoleEvent, ...] = ()
    switch_log: Tuple[Tuple[float, str, str], ...] = ()
    pole_count: Tuple[int, ...] = ()
    final_state: Optional[TrajectoryState] = None
    complete: bool = True
    columns: Tuple[str, ...] = RICCATI_COLUMNS
    extras: dict = field(default_factory=dict)

    @property
    def k(self) -> float:
        return self.integral / self.elapsed if self.elapsed > 0.0 else 0.0

    def summary(self) -> dict:
        return {
            "k": self.k,
            "elapsed": self.elapsed,
            "energy_drift": self.energy_drift,
            "max_energy_drift": self.max_energy_drift,
            "pole_events": len(self.pole_events),
            "switches": len(self.switch_log),
            "complete": self.complete,
            **self.extras,
        }


class RiccatiIntegrator:
    """Joint RK4 integration of the orbit, the chart matrix and the KS integral.

    State vector layout: [q (N), p (N), packed chart matrix (N(N+1)/2), integral].
    """

    def __init__(self, model: HamiltonianModel, xi0: TrajectoryState, dt: Optional[float] = None,
                 switch_threshold: Optional[float] = None, switch_back_factor: Optional[float] = None,
                 escape_bound: Optional[float] = None):
        settings = config["riccati"]
        self.model = model
        self.dt = float(dt or settings["dt"])
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        self.escape_bound = float(escape_bound or settings["escape_bound"])
        n = model.dim
        if xi0.q.shape != (n,):
            raise ValueError(f"{model.name} has dim {n}, initial q has shape {xi0.q.shape}")
        self._n = n
        self._packed = packed_size(n)
        self._rows, self._cols = np.triu_indices(n)
        self._eye = np.eye(n)
        self._standard = model.standard_form
        self.t0 = float(xi0.t)
        self.t = self.t0
        self.state = SigmaState.initial(n, switch_threshold, switch_back_factor)
        self.y = np.concatenate([xi0.q, xi0.p, self.state.matrix.packed, [0.0]])
        self.energy0 = model.energy(xi0.q, xi0.p, self.t0) if model.autonomous else None

    @property
    def q(self) -> np.ndarray:
        return self.y[:self._n]

    @property
    def p(self) -> np.ndarray:
        return self.y[self._n:2 * self._n]

    @property
    def integral(self) -> float:
        return float(self.y[-1])

    @property
    def elapsed(self) -> float:
        return self.t - self.t0

    def _unpack(self, packed: np.ndarray) -> np.ndarray:
        m = np.empty((self._n, self._n))
        m[self._rows, self._cols] = packed
        m[self._cols, self._rows] = packed
        return m

    def _rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        n = self._n
        q, p = y[:n], y[n:2 * n]
        m = self._unpack(y[2 * n:2 * n + self._packed])
        qdot, pdot, blocks = self.model.derivatives(q, p, t)
        out = np.empty_like(y)
        out[:n] = qdot
        out[n:2 * n] = pdot
        state = self.state
        if state.chart == 0 and self._standard:
            # K12 = K21 = 0, K22 = I: dsigma/dt = -(K11 + sigma^2), integrand -tr[(K11 - I)(I + sigma^2)^-1 sigma]
            k11 = blocks[0]
            square = m @ m
            mdot = -(k11 + square)
            out[-1] = -float(np.sum((k11 - self._eye) * np.linalg.solve(self._eye + square, m)))
        else:
            angle, inverted = state.angle, state.inverted
            mdot = chart_rhs(m, blocks, angle, inverted)
            out[-1] = _integrand(m, blocks, angle, inverted)
        out[2 * n:2 * n + self._packed] = mdot[self._rows, self._cols]
        return out

    def integrand(self) -> float:
        return ks_integrand(self.state, self.model.hessian_blocks(self.q, self.p, self.t))

    def energy_drift(self) -> Optional[float]:
        if self.energy0 is None:
            return None
        h = self.model.energy(self.q, self.p, self.t)
        scale = abs(self.energy0) if self.energy0 != 0.0 else 1.0
        return abs(h - self.energy0) / scale

    def sigma(self) -> np.ndarray:
        return sigma_matrix(self.state)

    def step(self) -> None:
        y = rk4_step(self._rhs, self.t, self.y, self.dt)
        t = self.t + self.dt
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(f"non-finite Riccati state at t={t:.6g}")
        n = self._n
        size = max(np.max(np.abs(y[:n])), np.max(np.abs(y[n:2 * n])))
        if size > self.escape_bound:
            raise OrbitEscapeError(f"orbit escaped (|xi| = {size:.3e} > {self.escape_bound:.3e}) at t={t:.6g}")
        self.y, self.t = y, t
        self.state = replace(self.state, matrix=SymMatrix(n, y[2 * n:2 * n + self._packed].copy()))
        switched = maybe_switch(self.state, t)
        if switched.matrix is not self.state.matrix:
            self.y[2 * n:2 * n + self._packed] = switched.matrix.packed
        self.state = switched

    def estimate(self, samples: List[tuple], max_drift: Optional[float], complete: bool = True) -> KsEstimate:
        return KsEstimate(elapsed=self.elapsed, integral=self.integral, samples=samples,
                          energy_drift=self.energy_drift(), max_energy_drift=max_drift,
                          pole_events=self.state.pole_events, switch_log=self.state.switch_log,
                          pole_count=self.state.pole_count,
                          final_state=TrajectoryState(self.q.copy(), self.p.copy(), self.t),
                          complete=complete)


@timing_decorator
def evolve_ks(model: HamiltonianModel, xi0: TrajectoryState, t_max: float, dt: Optional[float] = None,
              sample_every: Optional[float] = None, **options) -> KsEstimate:
    """KS invariant of one orbit as the time average of the bounded integrand."""
    integrator = RiccatiIntegrator(model, xi0, dt, **options)
    sample_every = float(sample_every or config["riccati"]["sample_every"])
    n_steps = int(round(t_max / integrator.dt))
    stride = max(1, int(round(sample_every / integrator.dt)))
    samples: List[tuple] = []
    max_drift: Optional[float] = None
    logger.info(f"Riccati run: model={model.name} t_max={t_max} dt={integrator.dt} steps={n_steps}")

    try:
        for i in range(1, n_steps + 1):
            integrator.step()
            if i % stride == 0 or i == n_steps:
                drift = integrator.energy_drift()
                if drift is not None:
                    max_drift = drift if max_drift is None else max(max_drift, drift)
                samples.append((integrator.t, integrator.integral / integrator.elapsed,
                                integrator.integrand(), drift, sum(integrator.state.pole_count),
                                integrator.state.representation))
    except (OrbitEscapeError, NonFiniteStateError) as e:
        e.partial = integrator.estimate(samples, max_drift, complete=False)
        logger.warning(f"Riccati run stopped early: {e}")
        raise

    estimate = integrator.estimate(samples, max_drift)
    logger.info(f"Riccati run done: k={estimate.k:.6g} poles={len(estimate.pole_events)} "
                f"switches={len(estimate.switch_log)} drift={estimate.energy_drift}")
    return estimate
