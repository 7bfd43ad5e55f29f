"""Discrete-time KS engine for kicked systems.

Between kicks the motion is free, so the Riccati equation is solved
exactly: sigma(t) = sigma_n (I + (t - nT) sigma_n)^-1. Gluing the flights
across the impulses gives the iteration

    sigma_{n+1} = sigma_n (I + T sigma_n)^-1 - Hess f(q_{n+1})

and the KS invariant k = lim (N T)^-1 sum_n ln|det(I + T sigma_n)|.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..config.config import config
from ..errors import KickSingularityError, NonFiniteStateError, OrbitEscapeError
from ..linalg.matkernel import SymMatrix, symmetrize
from ..systems.catalog import KickedModel
from ..utils.decorators import timing_decorator
from .integrator import CompensatedSum
from .riccati import KsEstimate, PoleEvent, TrajectoryState

logger = logging.getLogger('hj_ks')

KICKED_COLUMNS = ("n", "t", "k_running", "log_det_increment")


@dataclass(frozen=True)
class KickedState:
    """Values just after the nth kick.

    ``matrix`` is sigma as a dense symmetric array; ``increment`` is the
    ln|det(I + T sigma)| added by the kick that produced this state and
    ``crossed`` marks a pole of sigma inside that free flight.
    """
    n: int
    q: np.ndarray
    p: np.ndarray
    matrix: np.ndarray
    ks_sum: float = 0.0
    increment: float = 0.0
    crossed: bool = False

    @classmethod
    def initial(cls, q0, p0) -> "KickedState":
        q0 = np.atleast_1d(np.asarray(q0, dtype=float))
        p0 = np.atleast_1d(np.asarray(p0, dtype=float))
        if q0.shape != p0.shape:
            raise ValueError(f"q0 and p0 shapes differ: {q0.shape} vs {p0.shape}")
        return cls(0, q0, p0, np.zeros((q0.size, q0.size)))

    @property
    def sigma(self) -> SymMatrix:
        return SymMatrix.from_dense(self.matrix)


def orbit_map(q: np.ndarray, p: np.ndarray, model: KickedModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One period: free flight then kick. Returns q', p' and Hess f(q').

    q' is left unwrapped; callers holding angle variables reduce it.
    """
    q_new = q + p * model.period
    _, grad, hess = model.kick(q_new)
    return q_new, p - grad, hess


def sigma_update(sigma: np.ndarray, period: float, hess: np.ndarray,
                 n: int = 0) -> Tuple[np.ndarray, float, float]:
    """sigma (I + T sigma)^-1 - hess, plus sign and ln|det| of I + T sigma.

    The rational form stays defined at sigma = 0, where (sigma^-1 + T)^-1 is not.
    """
    a = np.eye(sigma.shape[0]) + period * sigma
    sign, logabs = np.linalg.slogdet(a)
    if sign == 0.0:
        raise KickSingularityError(n)
    flown = np.linalg.solve(a, sigma)
    return symmetrize(flown) - hess, float(sign), float(logabs)


def kick_step(state: KickedState, model: KickedModel, escape_bound: Optional[float] = None) -> KickedState:
    """Advance one period and add ln|det(I + T sigma_n)| to the KS sum.

    Raises before returning when the new state is not finite or the orbit
    leaves ``escape_bound`` (momenta only for angle variables).
    """
    q, p, hess = orbit_map(state.q, state.p, model)
    if model.wrap is not None:
        q = np.mod(q, model.wrap)
    sigma, sign, logabs = sigma_update(state.matrix, model.period, hess, state.n)
    n = state.n + 1
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.all(np.isfinite(sigma))):
        raise NonFiniteStateError(f"non-finite kicked state at n={n}")
    if escape_bound is not None:
        size = np.max(np.abs(p)) if model.wrap is not None else max(np.max(np.abs(q)), np.max(np.abs(p)))
        if size > escape_bound:
            raise OrbitEscapeError(f"orbit escaped (|xi| = {size:.3e} > {escape_bound:.3e}) at n={n}")
    crossed = sign < 0.0
    if crossed:
        logger.debug(f"Pole of sigma inside free flight {state.n}")
    return KickedState(n, q, p, sigma, state.ks_sum + logabs, logabs, crossed)


def windowed_rate(estimate: KsEstimate, window: int) -> float:
    """KS rate over the last ``window`` kicks, free of the start-up transient."""
    by_n = {row[0]: row[2] * row[1] for row in estimate.samples}
    n_end = max(by_n)
    n_start = n_end - window
    if n_start not in by_n:
        raise ValueError(f"no sample at kick {n_start}; window must be a multiple of the sampling stride")
    period = estimate.extras["period"]
    return (by_n[n_end] - by_n[n_start]) / (window * period)


@timing_decorator
def run_kicked(model: KickedModel, q0, p0, n_steps: int, sample_every: Optional[int] = None,
               escape_bound: Optional[float] = None) -> KsEstimate:
    """KS invariant of a kicked orbit, k(N) = ks_sum / (N T), iterating kick_step."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    settings = config["kicked"]
    sample_every = int(sample_every or settings["sample_every"])
    escape_bound = float(escape_bound or settings["escape_bound"])
    state = KickedState.initial(q0, p0)
    if state.q.size != model.dim:
        raise ValueError(f"{model.name} has dim {model.dim}, initial q has {state.q.size} entries")

    period = model.period
    total = CompensatedSum()
    samples: List[tuple] = []
    crossings: List[PoleEvent] = []
    logger.info(f"Kicked run: model={model.name} T={period} steps={n_steps}")

    def partial(complete: bool) -> KsEstimate:
        n = state.n
        return KsEstimate(elapsed=n * period, integral=total.value, samples=samples,
                          pole_events=tuple(crossings), pole_count=(len(crossings),),
                          final_state=TrajectoryState(state.q, state.p, n * period), complete=complete,
                          columns=KICKED_COLUMNS,
                          extras={"n_steps": n, "period": period, "sigma": state.matrix.tolist()})

    try:
        while state.n < n_steps:
            state = kick_step(state, model, escape_bound)
            total.add(state.increment)
            done = state.n
            if state.crossed:
                crossings.append(PoleEvent(done * period, -1, -1))
            if done % sample_every == 0 or done == n_steps:
                samples.append((done, done * period, total.value / (done * period), state.increment))
    except (KickSingularityError, NonFiniteStateError, OrbitEscapeError) as e:
        e.partial = partial(complete=False)
        logger.warning(f"Kicked run stopped early: {e}")
        raise

    estimate = partial(complete=True)
    logger.info(f"Kicked run done: k={estimate.k:.6g} pole crossings={len(crossings)}")
    return estimate


def iterate_sigma(model: KickedModel, state: KickedState, n_steps: int) -> List[KickedState]:
    """States after each of ``n_steps`` kicks, starting from ``state``."""
    states = [state]
    for _ in range(n_steps):
        states.append(kick_step(states[-1], model))
    return states


@dataclass
class FreeFlight:
    """Exact inter-kick solution sigma(t) = sigma_n (I + (t - nT) sigma_n)^-1."""
    sigma: np.ndarray
    start: float = 0.0
    identity: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        self.identity = np.eye(self.sigma.shape[0])

    def __call__(self, t: float) -> np.ndarray:
        return symmetrize(np.linalg.solve(self.identity + (t - self.start) * self.sigma, self.sigma))
