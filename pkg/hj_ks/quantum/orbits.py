"""Madelung-Bohm orbits and the quantum KS estimates built on them.

An MB orbit solves dq/dt = v(q, t) with v = dS/dq taken from the evolution
record. Along it d ln|psi|^2/dt = -lapS, so the time average of lapS (the
quantum KS invariant) and the telescoped decay of the log density measure
the same thing.
"""

import asyncio
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..config.config import config
from ..errors import NodeEncounterError, WindowTooShortError
from ..engines.kicked import orbit_map
from ..runner.pool import WorkerPool
from ..systems.catalog import rotor_model
from ..systems.sampling import sample_density
from ..utils.decorators import timing_decorator
from .wave import Evolution, position_entropy

logger = logging.getLogger('hj_ks')

TWO_PI = 2.0 * np.pi
MIN_WINDOW_PERIODS = 10
LOW_CONFIDENCE_FRACTION = 0.1
EXACT = "exact"
LINEAR = "linear"


@dataclass
class MbOrbit:
    times: np.ndarray
    lift: np.ndarray
    lap_s: np.ndarray
    logdens: np.ndarray
    node_flags: np.ndarray
    lap_integral: np.ndarray
    period: float
    steps_per_period: int
    complete: bool = True
    node_time: Optional[float] = None
    step_error: Optional[float] = None
    refinements: int = 0
    unresolved_steps: int = 0

    columns = ("t", "q", "lapS", "logdens", "node_flag")

    @property
    def positions(self) -> np.ndarray:
        return np.mod(self.lift, TWO_PI)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def rows(self):
        for row in zip(self.times, self.positions, self.lap_s, self.logdens, self.node_flags):
            yield (row[0], row[1], row[2], row[3], int(row[4]))


@dataclass
class HybridKs:
    value: float
    n_samples: int
    n_excluded: int
    low_confidence: bool
    half_values: Tuple[float, float]
    excluded_time: float = 0.0


@dataclass
class ClassicalOrbit:
    times: np.ndarray
    q: np.ndarray
    lift: np.ndarray
    p: np.ndarray
    period: float


@dataclass
class EntropyRate:
    times: np.ndarray
    entropy: np.ndarray
    kbar_slope: np.ndarray
    kbar_over_t: np.ndarray
    window: int

    columns = ("t", "entropy", "kbar_slope", "kbar_over_t")

    def rows(self):
        return zip(self.times, self.entropy, self.kbar_slope, self.kbar_over_t)


@dataclass
class EnsembleDecay:
    mean: float
    stderr: float
    values: np.ndarray
    failures: int
    kbar_over_t: float
    orbits: List[MbOrbit] = field(default_factory=list, repr=False)


class _FieldSampler:
    """Fields at tau = num T / den inside period n, exact or linearly interpolated between substeps."""

    def __init__(self, evolution: Evolution, interpolation: str, node_epsilon: float):
        if interpolation not in (EXACT, LINEAR):
            raise ValueError(f"time interpolation must be '{EXACT}' or '{LINEAR}', got {interpolation!r}")
        self.evolution = evolution
        self.linear = interpolation == LINEAR
        self.node_epsilon = node_epsilon

    def _at(self, n: int, num: int, den: int, q: np.ndarray):
        band = self.evolution.band(n, num, den)
        v, lap_s, logdens, density = band.fields_at(q)
        return v, lap_s, logdens, ~band.node_mask(density, self.node_epsilon)

    def __call__(self, n: int, num: int, den: int, q: np.ndarray):
        if not self.linear:
            return self._at(n, num, den, q)
        substeps = self.evolution.substeps
        j, rest = divmod(num * substeps, den)
        if rest == 0:
            return self._at(n, j, substeps, q)
        w = rest / den
        lo = self._at(n, j, substeps, q)
        hi = self._at(n, j + 1, substeps, q)
        return ((1.0 - w) * lo[0] + w * hi[0], (1.0 - w) * lo[1] + w * hi[1],
                (1.0 - w) * lo[2] + w * hi[2], lo[3] & hi[3])


class _Step(NamedTuple):
    q: np.ndarray
    increment: np.ndarray
    v: np.ndarray
    lap_s: np.ndarray
    logdens: np.ndarray
    stage_ok: np.ndarray
    end_ok: np.ndarray
    refinements: np.ndarray
    unresolved: np.ndarray


class _Tracer:
    """RK4 steps for (q, integral of lapS), halved until the lapS increment matches the logdens change.

    Along an exact orbit the increment equals -(logdens_end - logdens_start). The mismatch
    of a step spanning 1/den of a period may be at most tolerance * steps / den, so the
    mismatches of a whole run add up to at most tolerance per base step.
    """

    def __init__(self, fields: _FieldSampler, steps: int, period: float, tolerance: float,
                 max_refinement: int):
        self.fields = fields
        self.steps = steps
        self.period = period
        self.tolerance = tolerance
        self.max_refinement = max_refinement

    def advance(self, n: int, num: int, den: int, q: np.ndarray, v1: np.ndarray, l1: np.ndarray,
                ld0: np.ndarray, depth: int = 0) -> _Step:
        h = self.period / den
        v2, l2, _, ok2 = self.fields(n, 2 * num + 1, 2 * den, q + 0.5 * h * v1)
        v3, l3, _, ok3 = self.fields(n, 2 * num + 1, 2 * den, q + 0.5 * h * v2)
        v4, l4, _, ok4 = self.fields(n, num + 1, den, q + h * v3)
        q_end = q + (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        increment = (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        v_end, l_end, ld_end, end_ok = self.fields(n, num + 1, den, q_end)
        stage_ok = ok2 & ok3 & ok4 & np.isfinite(q_end)
        with np.errstate(invalid="ignore"):
            accurate = ~end_ok | (np.abs(increment + ld_end - ld0) <= self.tolerance * self.steps / den)
        if self.fields.linear:
            accurate[:] = True

        refine = ~(stage_ok & accurate)
        none = np.zeros(q.size, dtype=int)
        if depth >= self.max_refinement or not refine.any():
            return _Step(q_end, increment, v_end, l_end, ld_end, stage_ok, end_ok,
                         none, (stage_ok & ~accurate).astype(int))

        r = np.flatnonzero(refine)
        first = self.advance(n, 2 * num, 2 * den, q[r], v1[r], l1[r], ld0[r], depth + 1)
        through = first.stage_ok & first.end_ok
        b = np.flatnonzero(through)
        second = self.advance(n, 2 * num + 1, 2 * den, first.q[b], first.v[b], first.lap_s[b],
                              first.logdens[b], depth + 1)

        refined = _Step(*(np.array(part, copy=True) for part in first))
        refined.q[b] = second.q
        refined.increment[b] += second.increment
        refined.v[b], refined.lap_s[b], refined.logdens[b] = second.v, second.lap_s, second.logdens
        refined.stage_ok[:] = through
        refined.stage_ok[b] = second.stage_ok
        refined.end_ok[b] = second.end_ok
        refined.refinements[:] += 1
        refined.refinements[b] += second.refinements
        refined.unresolved[b] += second.unresolved

        merged = _Step(q_end, increment, v_end, l_end, ld_end, stage_ok, end_ok, none, none.copy())
        for whole, part in zip(merged, refined):
            whole[r] = part
        return merged


def _trace(evolution: Evolution, q0s: np.ndarray, n_periods: int, steps: int, interpolation: str,
           node_epsilon: float, step_tolerance: float, max_refinement: int) -> List[MbOrbit]:
    period = evolution.rotor.period
    h = period / steps
    fields = _FieldSampler(evolution, interpolation, node_epsilon)
    if fields.linear and steps != evolution.substeps:
        raise ValueError("linear time interpolation needs the record's own substep count")
    tracer = _Tracer(fields, steps, period, step_tolerance, 0 if fields.linear else max_refinement)
    n_orbits = q0s.size
    total = n_periods * steps

    lift = np.full((total + 1, n_orbits), np.nan)
    lap_s = np.full_like(lift, np.nan)
    logdens = np.full_like(lift, np.nan)
    integral = np.full_like(lift, np.nan)
    flags = np.zeros(lift.shape, dtype=bool)
    last = np.zeros(n_orbits, dtype=int)
    node_time = np.full(n_orbits, np.nan)
    refinements = np.zeros(n_orbits, dtype=int)
    unresolved = np.zeros(n_orbits, dtype=int)

    q = q0s.astype(float).copy()
    acc = np.zeros(n_orbits)
    v, lap, ld, ok = fields(0, 0, 1, q)
    lift[0], lap_s[0], logdens[0], integral[0] = q, lap, ld, 0.0
    flags[0] = ~ok
    node_time[~ok] = 0.0
    alive = ok.copy()

    for n in range(n_periods):
        if not alive.any():
            break
        if n > 0:
            # the kick changes the phase, not the density
            idx = np.flatnonzero(alive)
            v[idx], lap[idx], ld[idx], _ = fields(n, 0, 1, q[idx])
        for j in range(steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            result = tracer.advance(n, j, steps, q[idx], v[idx], lap[idx], ld[idx])
            refinements[idx] += result.refinements
            unresolved[idx] += result.unresolved

            step = n * steps + j + 1
            kept = result.stage_ok
            lost = idx[~kept]
            if lost.size:
                node_time[lost] = step * h - 0.5 * h
                alive[lost] = False
            rec = idx[kept]
            q[rec], acc[rec] = result.q[kept], acc[rec] + result.increment[kept]
            v[rec], lap[rec], ld[rec] = result.v[kept], result.lap_s[kept], result.logdens[kept]
            lift[step, rec], lap_s[step, rec], logdens[step, rec] = q[rec], lap[rec], ld[rec]
            integral[step, rec] = acc[rec]
            flags[step, rec] = ~result.end_ok[kept]
            last[rec] = step
            hit = rec[~result.end_ok[kept]]
            if hit.size:
                node_time[hit] = step * h
                alive[hit] = False

    orbits = []
    times = np.arange(total + 1) * h + evolution.time(0)
    for i in range(n_orbits):
        end = last[i] + 1
        complete = bool(np.isnan(node_time[i]))
        orbits.append(MbOrbit(times[:end].copy(), lift[:end, i].copy(), lap_s[:end, i].copy(),
                              logdens[:end, i].copy(), flags[:end, i].copy(), integral[:end, i].copy(),
                              period, steps, complete, None if complete else float(node_time[i]),
                              refinements=int(refinements[i]), unresolved_steps=int(unresolved[i])))
    return orbits


def _trace_options(evolution: Evolution, n_periods, steps_per_period, time_interpolation, node_epsilon,
                   step_tolerance=None, max_refinement=None):
    settings = config["quantum"]
    n_periods = evolution.n_periods if n_periods is None else int(n_periods)
    if not 1 <= n_periods <= evolution.n_periods:
        raise ValueError(f"n_periods must be in 1..{evolution.n_periods}, got {n_periods}")
    steps = int(steps_per_period or evolution.substeps)
    interpolation = time_interpolation or settings.get("time_interpolation", EXACT)
    tolerance = float(settings["step_tolerance"] if step_tolerance is None else step_tolerance)
    depth = int(settings["max_refinement"] if max_refinement is None else max_refinement)
    if tolerance <= 0.0 or depth < 0:
        raise ValueError(f"step_tolerance must be positive and max_refinement >= 0, "
                         f"got {tolerance} and {depth}")
    return n_periods, steps, interpolation, float(node_epsilon or settings["node_epsilon"]), tolerance, depth


def trace_mb_orbits(evolution: Evolution, q0s: Sequence[float], n_periods: Optional[int] = None,
                    steps_per_period: Optional[int] = None, time_interpolation: Optional[str] = None,
                    node_epsilon: Optional[float] = None, step_tolerance: Optional[float] = None,
                    max_refinement: Optional[int] = None) -> List[MbOrbit]:
    """Trace several orbits at once; orbits that hit a node come back incomplete."""
    options = _trace_options(evolution, n_periods, steps_per_period, time_interpolation, node_epsilon,
                             step_tolerance, max_refinement)
    return _trace(evolution, np.atleast_1d(np.asarray(q0s, dtype=float)), *options)


@timing_decorator
def trace_mb_orbit(evolution: Evolution, q0: float, n_periods: Optional[int] = None,
                   steps_per_period: Optional[int] = None, time_interpolation: Optional[str] = None,
                   node_epsilon: Optional[float] = None, check_step: bool = False,
                   step_tolerance: Optional[float] = None, max_refinement: Optional[int] = None) -> MbOrbit:
    """RK4 integration of dq/dt = v(q, t) with lapS and logdens sampled on the base grid.

    Steps whose lapS increment and logdens change disagree are halved, up to
    max_refinement times; steps still off at that depth are counted in unresolved_steps.
    """
    options = _trace_options(evolution, n_periods, steps_per_period, time_interpolation, node_epsilon,
                             step_tolerance, max_refinement)
    orbit = _trace(evolution, np.array([float(q0)]), *options)[0]
    if not orbit.complete:
        logger.warning(f"MB orbit from q0={q0:.6f} hit a node at t={orbit.node_time:.6g}")
        raise NodeEncounterError(orbit.node_time, partial=orbit)
    if orbit.unresolved_steps:
        logger.warning(f"MB orbit from q0={q0:.6f}: {orbit.unresolved_steps} steps unresolved "
                       f"after {options[5]} halvings")
    if check_step:
        orbit.step_error = step_halving(evolution, q0, options[0], options[1], options[4], options[5])
    return orbit


def step_halving(evolution: Evolution, q0: float, n_periods: Optional[int] = None,
                 steps_per_period: Optional[int] = None, step_tolerance: Optional[float] = None,
                 max_refinement: Optional[int] = None) -> float:
    """Largest position difference between orbits traced with h and h/2."""
    n_periods, steps, _, node_epsilon, tolerance, depth = _trace_options(
        evolution, n_periods, steps_per_period, EXACT, None, step_tolerance, max_refinement)
    coarse, fine = (_trace(evolution, np.array([float(q0)]), n_periods, s, EXACT, node_epsilon, tolerance, depth)[0]
                    for s in (steps, 2 * steps))
    common = min(coarse.lift.size, (fine.lift.size + 1) // 2)
    return float(np.max(np.abs(coarse.lift[:common] - fine.lift[::2][:common])))


def _window_start(orbit: MbOrbit, window: Optional[float]) -> int:
    duration = orbit.duration
    window = duration if window is None else float(window)
    if window < MIN_WINDOW_PERIODS * orbit.period - 1e-9 * orbit.period:
        raise WindowTooShortError(
            f"averaging window {window:g} is shorter than {MIN_WINDOW_PERIODS} kick periods")
    if window > duration + 1e-9 * orbit.period:
        raise ValueError(f"window {window:g} exceeds the orbit duration {duration:g}")
    h = orbit.period / orbit.steps_per_period
    return orbit.times.size - 1 - int(round(window / h))


def quantum_ks(orbit: MbOrbit, window: Optional[float] = None) -> float:
    """Time average of lapS along the orbit over the trailing window."""
    start = _window_start(orbit, window)
    flagged = np.flatnonzero(orbit.node_flags[start:])
    if flagged.size:
        raise NodeEncounterError(float(orbit.times[start + flagged[0]]), partial=orbit)
    span = orbit.times[-1] - orbit.times[start]
    return float((orbit.lap_integral[-1] - orbit.lap_integral[start]) / span)


def quantum_ks_series(orbit: MbOrbit, windows: Optional[Sequence[float]] = None) -> List[Tuple[float, float]]:
    """quantum_ks over growing trailing windows, for trend inspection."""
    if windows is None:
        windows = []
        w = MIN_WINDOW_PERIODS * orbit.period
        while w < orbit.duration:
            windows.append(w)
            w *= 2.0
        windows.append(orbit.duration)
    return [(float(w), quantum_ks(orbit, w)) for w in windows]


def density_decay_ks(orbit: MbOrbit) -> float:
    """-(logdens(t) - logdens(0)) / t, the telescoped decay rate of the density."""
    for i in (0, -1):
        if orbit.node_flags[i] or not np.isfinite(orbit.logdens[i]):
            raise NodeEncounterError(float(orbit.times[i]), partial=orbit)
    return float(-(orbit.logdens[-1] - orbit.logdens[0]) / orbit.duration)


def identity_residual(orbit: MbOrbit) -> float:
    """|delta logdens + integral of lapS|; zero along an exact MB orbit."""
    return float(abs(orbit.logdens[-1] - orbit.logdens[0] + orbit.lap_integral[-1]))


def classical_rotor_orbit(q0: float, p0: float, kick_strength: float, period: float,
                          n_steps: int) -> ClassicalOrbit:
    """Standard-map orbit through the kicked engine's orbit map, with the unwrapped lift alongside."""
    model = rotor_model(kick_strength, period)
    q = np.empty(n_steps + 1)
    lift = np.empty(n_steps + 1)
    p = np.empty(n_steps + 1)
    q[0], p[0] = np.mod(q0, TWO_PI), p0
    lift[0] = q0
    qn, pn = np.array([q[0]]), np.array([p0], dtype=float)
    for n in range(n_steps):
        lift[n + 1] = lift[n] + pn[0] * period
        qn, pn, _ = orbit_map(qn, pn, model)
        qn = np.mod(qn, model.wrap)
        q[n + 1], p[n + 1] = qn[0], pn[0]
    return ClassicalOrbit(np.arange(n_steps + 1) * period, q, lift, p, period)


def _average_lap_s(evolution: Evolution, positions: np.ndarray, steps: int,
                   node_epsilon: float) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """Per-period trapezoid sums of lapS at positions[n, j], tau = j T / steps."""
    n_periods = positions.shape[0]
    weights = np.ones(steps + 1)
    weights[0] = weights[-1] = 0.5
    sums = np.zeros(n_periods)
    norms = np.zeros(n_periods)
    excluded = 0
    for n in range(n_periods):
        for j in range(steps + 1):
            band = evolution.band(n, j, steps)
            _, lap, _, density = band.fields_at(positions[n, j])
            if band.node_mask(density, node_epsilon)[0] or not np.isfinite(lap[0]):
                excluded += 1
                continue
            sums[n] += weights[j] * lap[0]
            norms[n] += weights[j]
    return sums, norms, n_periods * (steps + 1), excluded


def _hybrid_result(sums: np.ndarray, norms: np.ndarray, n_samples: int, n_excluded: int,
                   excluded_fraction: float, excluded_time: float = 0.0) -> HybridKs:
    half = sums.size // 2

    def mean(sl):
        return float(np.sum(sums[sl]) / np.sum(norms[sl])) if np.sum(norms[sl]) > 0.0 else float("nan")

    low_confidence = excluded_fraction > LOW_CONFIDENCE_FRACTION
    if low_confidence:
        logger.warning(f"Hybrid KS: {excluded_fraction:.1%} of the samples excluded at nodes, "
                       f"result is low-confidence")
    return HybridKs(mean(slice(None)), n_samples, n_excluded, low_confidence,
                    (mean(slice(0, half)), mean(slice(half, None))), excluded_time)


def hybrid_ks_along(evolution: Evolution, positions: np.ndarray, steps: Optional[int] = None,
                    node_epsilon: Optional[float] = None) -> HybridKs:
    """Trapezoid time average of lapS at prescribed positions[n, j] (n periods, j = 0..steps)."""
    steps = int(steps or positions.shape[1] - 1)
    node_epsilon = float(node_epsilon or config["quantum"]["node_epsilon"])
    sums, norms, n_samples, excluded = _average_lap_s(evolution, positions, steps, node_epsilon)
    return _hybrid_result(sums, norms, n_samples, excluded, excluded / n_samples)


class _LineAverage:
    """Adaptive Simpson integral of lapS along the free flight q = start + p tau of one period.

    Each base interval is halved until Simpson on it and on its halves agree within
    tolerance * steps / den. Pieces still unresolved at max_refinement, or touching a
    node, are left out: near a node lapS swings through both signs and only a
    principal value of its integral exists.
    """

    def __init__(self, evolution: Evolution, steps: int, node_epsilon: float, tolerance: float,
                 max_refinement: int):
        self.evolution = evolution
        self.period = evolution.rotor.period
        self.steps = steps
        self.node_epsilon = node_epsilon
        self.tolerance = tolerance
        self.max_refinement = max_refinement
        self.n_samples = 0
        self.n_excluded = 0

    def sample(self, n: int, num: int, den: int, start: float, momentum: float) -> float:
        self.n_samples += 1
        band = self.evolution.band(n, num, den)
        _, lap, _, density = band.fields_at(start + momentum * self.period * num / den)
        if band.node_mask(density, self.node_epsilon)[0] or not np.isfinite(lap[0]):
            return float("nan")
        return float(lap[0])

    def interval(self, n: int, num: int, den: int, ends: Tuple[float, float, float],
                 start: float, momentum: float, depth: int = 0) -> Tuple[float, float]:
        """Integral over [num, num + 1] T / den from its end and mid samples, and the time left out."""
        h = self.period / den
        lo, mid, hi = ends
        if np.isnan(ends).all():
            self.n_excluded += 1
            return 0.0, h
        left = self.sample(n, 4 * num + 1, 4 * den, start, momentum)
        right = self.sample(n, 4 * num + 3, 4 * den, start, momentum)
        values = np.array([lo, left, mid, right, hi])
        if np.all(np.isfinite(values)):
            coarse = h / 6.0 * (lo + 4.0 * mid + hi)
            fine = h / 12.0 * (lo + 4.0 * left + 2.0 * mid + 4.0 * right + hi)
            if abs(fine - coarse) <= 15.0 * self.tolerance * self.steps / den:
                return fine + (fine - coarse) / 15.0, 0.0
        if depth >= self.max_refinement:
            self.n_excluded += 1
            return 0.0, h
        a, a_out = self.interval(n, 2 * num, 2 * den, (lo, left, mid), start, momentum, depth + 1)
        b, b_out = self.interval(n, 2 * num + 1, 2 * den, (mid, right, hi), start, momentum, depth + 1)
        return a + b, a_out + b_out

    def period_integral(self, n: int, start: float, momentum: float) -> Tuple[float, float]:
        """Integral of lapS over period n and the time that counted towards it."""
        den = 2 * self.steps
        samples = [self.sample(n, k, den, start, momentum) for k in range(den + 1)]
        total, left_out = 0.0, 0.0
        for j in range(self.steps):
            value, out = self.interval(n, j, self.steps, tuple(samples[2 * j:2 * j + 3]), start, momentum)
            total += value
            left_out += out
        return total, self.period - left_out


@timing_decorator
def hybrid_ks(evolution: Evolution, classical_orbit: ClassicalOrbit, n_periods: Optional[int] = None,
              steps: Optional[int] = None, node_epsilon: Optional[float] = None,
              tolerance: Optional[float] = None, max_refinement: Optional[int] = None) -> HybridKs:
    """lapS of the quantum state averaged along a classical standard-map orbit."""
    settings = config["quantum"]
    n_periods = min(evolution.n_periods, classical_orbit.q.size - 1) if n_periods is None else int(n_periods)
    if abs(classical_orbit.period - evolution.rotor.period) > 1e-12 * evolution.rotor.period:
        raise ValueError("classical orbit and evolution have different kick periods")
    line = _LineAverage(evolution, int(steps or evolution.substeps),
                        float(node_epsilon or settings["node_epsilon"]),
                        float(settings["hybrid_tolerance"] if tolerance is None else tolerance),
                        int(settings["max_refinement"] if max_refinement is None else max_refinement))
    sums = np.zeros(n_periods)
    norms = np.zeros(n_periods)
    for n in range(n_periods):
        sums[n], norms[n] = line.period_integral(n, classical_orbit.lift[n], classical_orbit.p[n])
    excluded_time = float(n_periods * evolution.rotor.period - norms.sum())
    return _hybrid_result(sums, norms, line.n_samples, line.n_excluded,
                          excluded_time / (n_periods * evolution.rotor.period), excluded_time)


def orbit_positions(orbit: MbOrbit) -> np.ndarray:
    """MB orbit lift reshaped to [period, substep] including both period ends."""
    steps = orbit.steps_per_period
    n_periods = (orbit.lift.size - 1) // steps
    index = np.arange(n_periods)[:, None] * steps + np.arange(steps + 1)
    return orbit.lift[index]


def entropy_rate(evolution: Evolution, window: Optional[int] = None) -> EntropyRate:
    """Position entropy per period, its trailing least-squares slope and (S(t) - S(0)) / t."""
    entropy = np.array([position_entropy(psi) for psi in evolution.states()])
    times = np.arange(entropy.size) * evolution.rotor.period
    window = max(2, int(window or max(2, evolution.n_periods // 2)))
    slope = np.full(entropy.size, np.nan)
    for i in range(window, entropy.size):
        slope[i] = stats.linregress(times[i - window:i + 1], entropy[i - window:i + 1]).slope
    over_t = np.full(entropy.size, np.nan)
    over_t[1:] = (entropy[1:] - entropy[0]) / times[1:]
    return EntropyRate(times, entropy, slope, over_t, window)


def orbit_separation(orbit_a: MbOrbit, orbit_b: MbOrbit) -> float:
    """Least-squares slope of ln|q_a - q_b| per period, sampled at the kicks."""
    steps = orbit_a.steps_per_period
    end = min(orbit_a.lift.size, orbit_b.lift.size)
    index = np.arange(0, end, steps)
    separation = np.abs(orbit_a.lift[index] - orbit_b.lift[index])
    keep = separation > 0.0
    if keep.sum() < 3:
        raise ValueError("need at least three nonzero separations to fit a growth rate")
    periods = orbit_a.times[index][keep] / orbit_a.period
    return float(stats.linregress(periods, np.log(separation[keep])).slope)


async def trace_ensemble(evolution: Evolution, q0s: Sequence[float], pool: WorkerPool,
                         chunk_size: int = 25, **options) -> List[MbOrbit]:
    """Trace orbits in chunks on the worker pool; the evolution record is shared read-only."""
    q0s = np.asarray(q0s, dtype=float)
    chunks = [q0s[i:i + chunk_size] for i in range(0, q0s.size, chunk_size)]
    results = await asyncio.gather(*(pool.submit(trace_mb_orbits, evolution, chunk, **options)
                                     for chunk in chunks))
    return [orbit for chunk in results for orbit in chunk]


async def ensemble_density_decay_async(evolution: Evolution, n: Optional[int] = None, seed: int = 0,
                                       pool: Optional[WorkerPool] = None, **options) -> EnsembleDecay:
    n = int(n or config["quantum"]["ensemble_size"])
    psi0 = next(evolution.states())
    q0s = sample_density(psi0.density(), psi0.grid, n, seed)
    own_pool = pool is None
    pool = pool or WorkerPool()
    try:
        orbits = await trace_ensemble(evolution, q0s, pool, **options)
    finally:
        if own_pool:
            await pool.close_all()

    values = np.array([density_decay_ks(o) for o in orbits if o.complete])
    failures = len(orbits) - values.size
    if failures:
        logger.warning(f"Ensemble: {failures}/{len(orbits)} orbits hit nodes and were excluded")
    duration = orbits[0].period * (options.get("n_periods") or evolution.n_periods)
    entropy = entropy_rate(evolution)
    index = int(round(duration / evolution.rotor.period))
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else float("nan")
    return EnsembleDecay(float(values.mean()) if values.size else float("nan"), stderr, values, failures,
                         float(entropy.kbar_over_t[index]), orbits)


def ensemble_density_decay(evolution: Evolution, n: Optional[int] = None, seed: int = 0,
                           pool: Optional[WorkerPool] = None, **options) -> EnsembleDecay:
    """Mean and standard error of density_decay_ks over orbits with q0 drawn from |psi0|^2."""
    return asyncio.run(ensemble_density_decay_async(evolution, n, seed, pool, **options))
