import numpy as np
import pytest

from hj_ks.systems.catalog import (GENERAL, MODELS, characteristic_frequencies, conjugate_times,
                                   constant_curvature_model, general_quadratic, get_model, harmonic,
                                   kicked_quartic, quadratic_model, quartic3, rotor_kick, squeeze)
from hj_ks.systems.sampling import sample_density, sample_energy_surface, sample_kicked_surface


def _check_derivatives(fn, q, h=1e-6, tol=1e-6):
    """Central differences of value -> gradient and gradient -> Hessian"""
    value, grad, hess = fn(q)
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        vp, gp, _ = fn(q + e)
        vm, gm, _ = fn(q - e)
        assert (vp - vm) / (2 * h) == pytest.approx(grad[i], abs=tol * max(1.0, abs(grad[i])))
        assert np.allclose((gp - gm) / (2 * h), hess[:, i], atol=tol * max(1.0, np.abs(hess).max()))


def test_quartic3_derivatives(rng):
    for _ in range(20):
        _check_derivatives(lambda q: quartic3(q, 0.0), rng.uniform(-1.5, 1.5, size=3))


def test_kicked_quartic_derivatives(rng):
    for _ in range(20):
        _check_derivatives(kicked_quartic, rng.uniform(-1.5, 1.5, size=3))


def test_rotor_kick_derivatives(rng):
    for _ in range(20):
        _check_derivatives(lambda q: rotor_kick(q, 5.0), rng.uniform(0, 2 * np.pi, size=1))


def test_quartic3_value():
    """V = -1/2 sum of squared differences + q1^4 + 2 q2^4 + 3 q3^4"""
    q = np.array([1.0, 0.0, -1.0])
    value, _, _ = quartic3(q)
    assert value == pytest.approx(-0.5 * (1.0 + 1.0 + 4.0) + 1.0 + 3.0)


def test_registry_names():
    for name in ("quartic3", "kicked-quartic", "rotor", "quadratic", "inverted-1d", "free"):
        assert name in MODELS
    with pytest.raises(ValueError, match="Unknown model"):
        get_model("pendulum")


def test_standard_form_blocks():
    model = get_model("quartic3")
    q, p = np.array([0.1, 0.2, 0.3]), np.zeros(3)
    k11, k12, k21, k22 = model.hessian_blocks(q, p, 0.0)
    assert np.allclose(k11, quartic3(q)[2])
    assert np.allclose(k12, 0.0) and np.allclose(k21, 0.0)
    assert np.allclose(k22, np.eye(3))
    assert model.hessian(q, p, 0.0).shape == (6, 6)


def test_energy_and_equations_of_motion():
    model = harmonic(2.0)
    q, p = np.array([1.0]), np.array([0.5])
    assert model.energy(q, p) == pytest.approx(0.5 * 0.25 + 0.5 * 4.0)
    qdot, pdot = model.equations_of_motion(q, p, 0.0)
    assert np.allclose(qdot, p)
    assert np.allclose(pdot, -4.0 * q)


@pytest.mark.parametrize("model", [get_model("quartic3"), squeeze(3)], ids=["standard", "general"])
def test_derivatives_match_separate_calls(model):
    q, p = np.array([0.3, -0.2, 0.5]), np.array([0.1, 0.4, -0.3])
    qdot, pdot, blocks = model.derivatives(q, p, 0.0)
    expected_qdot, expected_pdot = model.equations_of_motion(q, p, 0.0)
    assert np.allclose(qdot, expected_qdot) and np.allclose(pdot, expected_pdot)
    for got, expected in zip(blocks, model.hessian_blocks(q, p, 0.0)):
        assert np.allclose(got, expected)


def test_quadratic_model_validation():
    with pytest.raises(ValueError, match="positive definite"):
        quadratic_model([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        quadratic_model([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError, match="square"):
        quadratic_model([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_conjugate_times_interleave():
    model = quadratic_model([[4.0, 0.0], [0.0, 1.0]])
    assert np.allclose(characteristic_frequencies(model), [1.0, 2.0])
    times = conjugate_times(model, 10.0)
    poles = times["poles"]
    assert poles[0] == pytest.approx(np.pi / 4)
    assert np.all(poles <= 10.0)
    one_d = conjugate_times(harmonic(2.0), 10.0)
    merged = np.sort(np.concatenate([one_d["poles"], one_d["conjugate_points"]]))
    is_pole = np.isin(merged, one_d["poles"])
    assert np.all(is_pole[::2]) and not np.any(is_pole[1::2])


def test_general_models():
    model = squeeze(2)
    assert model.kind == GENERAL
    q, p = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    assert model.energy(q, p) == pytest.approx(11.0)
    qdot, pdot = model.equations_of_motion(q, p, 0.0)
    assert np.allclose(qdot, q) and np.allclose(pdot, -p)

    matrix = np.diag([4.0, 1.0])
    model = general_quadratic(matrix)
    assert model.energy(np.array([1.0]), np.array([1.0])) == pytest.approx(2.5)
    with pytest.raises(ValueError):
        general_quadratic(np.eye(3))


def test_constant_curvature_kick():
    model = constant_curvature_model(-1.0, 1.0)
    value, grad, hess = model.kick(np.array([2.0]))
    assert value == pytest.approx(-2.0)
    assert np.allclose(grad, [-2.0])
    assert np.allclose(hess, [[-1.0]])
    with pytest.raises(ValueError):
        constant_curvature_model(period=0.0)


def test_energy_surface_sampling_is_seeded():
    model = get_model("quartic3")
    q1, p1 = sample_energy_surface(model, 1.0, seed=7)
    q2, p2 = sample_energy_surface(model, 1.0, seed=7)
    assert np.array_equal(q1, q2) and np.array_equal(p1, p2)
    assert model.energy(q1, p1) == pytest.approx(1.0, abs=1e-12)
    q3, _ = sample_energy_surface(model, 1.0, seed=8)
    assert not np.array_equal(q1, q3)


def test_energy_surface_sampling_rejects_general_models():
    with pytest.raises(ValueError):
        sample_energy_surface(squeeze(1), 1.0, seed=0)


def test_kicked_surface_sampling():
    model = get_model("kicked-quartic", period=1e-10)
    q, p = sample_kicked_surface(model, 1.0, seed=3)
    assert model.period * 0.5 * float(p @ p) + model.kick(q)[0] == pytest.approx(1.0, rel=1e-9)


def test_density_sampling():
    grid = 2 * np.pi * np.arange(64) / 64
    density = np.zeros(64)
    density[10] = 1.0
    draws = sample_density(density, grid, 50, seed=1)
    assert np.all((draws >= grid[10]) & (draws <= grid[11]))
    assert np.array_equal(draws, sample_density(density, grid, 50, seed=1))
