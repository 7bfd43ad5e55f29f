import numpy as np
import pytest

from hj_ks.engines.kicked import run_kicked
from hj_ks.errors import NodeEncounterError, WindowTooShortError
from hj_ks.quantum.orbits import (classical_rotor_orbit, density_decay_ks, ensemble_density_decay,
                                  ensemble_density_decay_async, entropy_rate, hybrid_ks, hybrid_ks_along,
                                  identity_residual, orbit_positions, orbit_separation, quantum_ks,
                                  quantum_ks_series, step_halving, trace_mb_orbit, trace_mb_orbits)
from hj_ks.quantum.wave import Evolution, RotorParams, WaveState
from hj_ks.runner.pool import WorkerPool
from hj_ks.systems.catalog import rotor_model

SIGMA0 = 0.3
HBAR = 0.1
PERIOD = 0.1


def packet_width(t):
    """Width of a freely spreading Gaussian on the line."""
    return SIGMA0 * np.sqrt(1.0 + (HBAR * t / (2.0 * SIGMA0 ** 2)) ** 2)


SPREAD_RATE = float(np.log(packet_width(1.0) / SIGMA0))


@pytest.fixture(scope="session")
def free_packet():
    """Unkicked Gaussian packet; MB orbits stretch away from the center as the packet spreads."""
    rotor = RotorParams(kick_strength=0.0, period=PERIOD, hbar=HBAR)
    psi0 = WaveState.gaussian(128, center=np.pi, width=SIGMA0, hbar=HBAR)
    return Evolution.run(psi0, rotor, 10, substeps=16)


def test_free_packet_orbit_follows_the_spreading(free_packet):
    orbit = trace_mb_orbit(free_packet, np.pi + 0.2)
    assert orbit.complete
    assert orbit.times.size == 161
    assert orbit.duration == pytest.approx(1.0)
    expected = np.pi + 0.2 * packet_width(orbit.times) / SIGMA0
    assert np.allclose(orbit.lift, expected, atol=1e-8)


def test_free_packet_estimates_agree(free_packet):
    orbit = trace_mb_orbit(free_packet, np.pi - 0.4)
    assert quantum_ks(orbit) == pytest.approx(SPREAD_RATE, abs=1e-6)
    assert density_decay_ks(orbit) == pytest.approx(SPREAD_RATE, abs=1e-6)
    assert identity_residual(orbit) < 1e-8
    series = quantum_ks_series(orbit)
    assert series[-1][0] == pytest.approx(1.0)
    assert all(value == pytest.approx(SPREAD_RATE, abs=1e-6) for _, value in series)


def test_center_orbit_stays_put(free_packet):
    orbit = trace_mb_orbit(free_packet, np.pi)
    assert np.allclose(orbit.positions, np.pi, atol=1e-10)


def test_window_checks(free_packet):
    orbit = trace_mb_orbit(free_packet, np.pi + 0.1)
    with pytest.raises(WindowTooShortError):
        quantum_ks(orbit, window=0.5)
    with pytest.raises(ValueError):
        quantum_ks(orbit, window=2.0)
    short = trace_mb_orbit(free_packet, np.pi + 0.1, n_periods=5)
    with pytest.raises(WindowTooShortError):
        quantum_ks(short)


def test_trace_option_validation(free_packet):
    with pytest.raises(ValueError):
        trace_mb_orbits(free_packet, [np.pi], n_periods=11)
    with pytest.raises(ValueError):
        trace_mb_orbits(free_packet, [np.pi], time_interpolation="cubic")
    with pytest.raises(ValueError, match="substep"):
        trace_mb_orbits(free_packet, [np.pi], steps_per_period=32, time_interpolation="linear")


def test_linear_interpolation_stays_close(free_packet):
    exact = trace_mb_orbit(free_packet, np.pi + 0.2)
    linear = trace_mb_orbit(free_packet, np.pi + 0.2, time_interpolation="linear")
    assert np.allclose(linear.lift, exact.lift, atol=1e-4)


def test_step_halving(free_packet):
    assert step_halving(free_packet, np.pi + 0.2) < 1e-8
    orbit = trace_mb_orbit(free_packet, np.pi + 0.2, check_step=True)
    assert orbit.step_error is not None and orbit.step_error < 1e-8


def test_orbit_positions_layout(free_packet):
    orbit = trace_mb_orbit(free_packet, np.pi + 0.2)
    positions = orbit_positions(orbit)
    assert positions.shape == (10, 17)
    assert positions[3, 16] == positions[4, 0]


def test_orbit_separation_tracks_the_width(free_packet):
    a, b = trace_mb_orbits(free_packet, [np.pi + 0.2, np.pi + 0.25])
    periods = np.arange(11)
    expected = np.polyfit(periods, np.log(packet_width(periods * PERIOD)), 1)[0]
    assert orbit_separation(a, b) == pytest.approx(expected, abs=1e-6)
    with pytest.raises(ValueError):
        orbit_separation(a, a)


def test_node_encounter():
    rotor = RotorParams(kick_strength=0.0, period=1.0, hbar=1.0)
    evolution = Evolution.run(WaveState.from_function(np.cos, 16), rotor, 2, substeps=4)
    with pytest.raises(NodeEncounterError) as excinfo:
        trace_mb_orbit(evolution, np.pi / 2)
    assert excinfo.value.time == 0.0
    assert not excinfo.value.partial.complete
    orbits = trace_mb_orbits(evolution, [np.pi / 2, 0.3])
    assert [o.complete for o in orbits] == [False, True]


def test_vectorized_trace_matches_single(small_evolution):
    together = trace_mb_orbits(small_evolution, [0.5, 2.0, 4.0], n_periods=5)
    alone = trace_mb_orbits(small_evolution, [2.0], n_periods=5)[0]
    common = min(together[1].lift.size, alone.lift.size)
    assert np.allclose(together[1].lift[:common], alone.lift[:common], atol=1e-8)
    for orbit in together:
        assert orbit.times.size <= 5 * 16 + 1
        assert set(orbit.columns) == {"t", "q", "lapS", "logdens", "node_flag"}
        assert len(list(orbit.rows())) == orbit.times.size


def test_step_refinement_closes_the_identity(small_evolution):
    """Halved steps keep each lapS increment within tolerance of the logdens change"""
    tolerance = 1e-9
    q0s = [0.5, 2.0, 4.0]
    orbits = trace_mb_orbits(small_evolution, q0s, n_periods=3, step_tolerance=tolerance)
    resolved = [o for o in orbits if o.complete and not o.unresolved_steps]
    assert resolved
    for orbit in resolved:
        assert identity_residual(orbit) <= 3 * 16 * tolerance + 1e-9
        assert orbit.times.size == 3 * 16 + 1
    assert sum(o.refinements for o in orbits) > 0

    fixed = trace_mb_orbits(small_evolution, q0s, n_periods=3, step_tolerance=tolerance, max_refinement=0)
    assert all(o.refinements == 0 for o in fixed)
    assert sum(o.unresolved_steps for o in fixed) > 0


def test_refinement_options_are_checked(small_evolution):
    with pytest.raises(ValueError, match="step_tolerance"):
        trace_mb_orbits(small_evolution, [1.0], n_periods=1, step_tolerance=0.0)
    with pytest.raises(ValueError, match="max_refinement"):
        trace_mb_orbits(small_evolution, [1.0], n_periods=1, max_refinement=-1)


def test_classical_rotor_orbit_matches_kicked_engine():
    orbit = classical_rotor_orbit(1.0, 0.5, 5.0, 1.0, 50)
    result = run_kicked(rotor_model(5.0, 1.0), np.array([1.0]), np.array([0.5]), 50)
    assert orbit.q[-1] == pytest.approx(result.final_state.q[0] % (2 * np.pi))
    assert orbit.p[-1] == pytest.approx(result.final_state.p[0])
    assert np.allclose(np.mod(orbit.lift, 2 * np.pi), orbit.q, atol=1e-9)


def test_hybrid_ks_on_the_free_packet(free_packet):
    resting = classical_rotor_orbit(np.pi, 0.0, 0.0, PERIOD, 10)
    result = hybrid_ks(free_packet, resting)
    assert result.value == pytest.approx(SPREAD_RATE, abs=1e-4)
    assert result.n_samples >= 10 * (4 * 16 + 1)
    assert result.excluded_time == 0.0
    assert result.n_excluded == 0
    assert not result.low_confidence
    with pytest.raises(ValueError):
        hybrid_ks(free_packet, classical_rotor_orbit(np.pi, 0.0, 0.0, 1.0, 10))


def test_hybrid_ks_on_the_kicked_rotor(small_evolution, small_rotor):
    classical = classical_rotor_orbit(1.0, 0.5, small_rotor.kick_strength, small_rotor.period, 20)
    result = hybrid_ks(small_evolution, classical)
    assert result.n_samples >= 20 * (4 * 16 + 1)
    assert np.isfinite(result.value)
    assert len(result.half_values) == 2


def test_hybrid_ks_settles_as_the_tolerance_tightens(small_evolution, small_rotor):
    classical = classical_rotor_orbit(1.0, 0.5, small_rotor.kick_strength, small_rotor.period, 20)
    loose = hybrid_ks(small_evolution, classical, tolerance=1e-5)
    tight = hybrid_ks(small_evolution, classical, tolerance=1e-7)
    assert tight.n_samples >= loose.n_samples
    assert tight.value == pytest.approx(loose.value, abs=1e-3)


def test_hybrid_ks_leaves_out_nodes():
    """A classical orbit resting on a stationary node sees no usable sample"""
    rotor = RotorParams(kick_strength=0.0, period=1.0, hbar=1.0)
    evolution = Evolution.run(WaveState.from_function(np.cos, 16), rotor, 2, substeps=4)
    result = hybrid_ks(evolution, classical_rotor_orbit(np.pi / 2, 0.0, 0.0, 1.0, 2))
    assert result.excluded_time == pytest.approx(2.0)
    assert result.n_excluded == 2 * 4
    assert result.low_confidence
    assert np.isnan(result.value)


def test_hybrid_ks_along_the_mb_orbit(free_packet):
    orbit = trace_mb_orbit(free_packet, np.pi + 0.2)
    result = hybrid_ks_along(free_packet, orbit_positions(orbit))
    assert result.n_samples == 10 * 17
    assert result.n_excluded == 0
    assert result.value == pytest.approx(quantum_ks(orbit), abs=1e-5)


def test_entropy_rate_of_the_free_packet(free_packet):
    rate = entropy_rate(free_packet)
    assert rate.times.size == 11
    assert rate.window == 5
    assert np.isnan(rate.kbar_over_t[0])
    assert rate.kbar_over_t[-1] == pytest.approx(SPREAD_RATE, abs=1e-6)
    assert np.isnan(rate.kbar_slope[4]) and np.isfinite(rate.kbar_slope[5])


def test_ensemble_density_decay(free_packet):
    result = ensemble_density_decay(free_packet, n=8, seed=3, chunk_size=3)
    assert result.failures == 0
    assert result.values.size == 8
    assert result.mean == pytest.approx(SPREAD_RATE, abs=1e-5)
    assert result.kbar_over_t == pytest.approx(SPREAD_RATE, abs=1e-5)


async def test_ensemble_density_decay_async(free_packet):
    pool = WorkerPool(max_workers=2)
    try:
        result = await ensemble_density_decay_async(free_packet, n=5, seed=1, pool=pool, n_periods=10)
    finally:
        await pool.close_all()
    assert len(result.orbits) == 5
    assert np.allclose(result.values, SPREAD_RATE, atol=1e-5)


@pytest.fixture(scope="module")
def rotor_record():
    """K = 5, hbar = 1 rotor from the uniform state, M = 2048, 1000 periods"""
    return Evolution.run(WaveState.uniform(2048), RotorParams(5.0, 1.0, 1.0), 1000, substeps=32)


@pytest.mark.slow
def test_quantum_rotor_benchmark(rotor_record):
    orbit = trace_mb_orbit(rotor_record, 1.0)
    assert abs(quantum_ks(orbit)) <= 0.01
    assert identity_residual(orbit) <= 1e-3
    assert quantum_ks(orbit) == pytest.approx(density_decay_ks(orbit), abs=1e-3)


@pytest.mark.slow
def test_quantum_rotor_orbits_stay_regular(rotor_record):
    """Neighbouring MB orbits do not separate exponentially"""
    a, b = trace_mb_orbits(rotor_record, [1.0, 1.0 + 1e-6])
    assert a.complete and b.complete
    assert orbit_separation(a, b) <= 0.01


@pytest.mark.slow
def test_quantum_rotor_hybrid_is_positive_and_stable(rotor_record):
    classical = classical_rotor_orbit(1.0, 0.5, 5.0, 1.0, 1000)
    result = hybrid_ks(rotor_record, classical)
    assert result.value > 0.0
    assert not result.low_confidence
    for half in result.half_values:
        assert half == pytest.approx(result.value, rel=0.2)


@pytest.mark.slow
def test_quantum_rotor_ensemble_identity(rotor_record):
    """Mean telescoped density decay equals the position-entropy growth rate"""
    result = ensemble_density_decay(rotor_record, n=100, seed=0, n_periods=100)
    assert result.values.size >= 90
    assert abs(result.mean - result.kbar_over_t) <= 3.0 * result.stderr


@pytest.mark.slow
def test_quantum_ks_is_stable_under_grid_doubling():
    rotor = RotorParams(5.0, 1.0, 1.0)
    estimates = []
    for size in (2048, 4096):
        evolution = Evolution.run(WaveState.uniform(size), rotor, 200, substeps=32)
        estimates.append(quantum_ks(trace_mb_orbit(evolution, 1.0)))
    assert estimates[1] == pytest.approx(estimates[0], abs=1e-3)
