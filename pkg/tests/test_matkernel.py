from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg

from hj_ks.errors import NumericalError, SingularMatrixError
from hj_ks.linalg.matkernel import (SymMatrix, chart_phase_functions, log_abs_det, lu_logdet, matrix_function,
                                    packed_size, phase_functions, spectral_norm, sym_eigen)


def test_packed_storage_round_trip(random_symmetric):
    """Packing keeps exactly the upper triangle and restores a symmetric matrix"""
    a = random_symmetric(4)
    m = SymMatrix.from_dense(a)
    assert m.packed.shape == (packed_size(4),)
    assert np.array_equal(m.dense(), m.dense().T)
    assert np.allclose(m.dense(), a)


def test_from_dense_takes_symmetric_part():
    a = np.array([[1.0, 2.0], [0.0, 3.0]])
    assert np.allclose(SymMatrix.from_dense(a).dense(), [[1.0, 1.0], [1.0, 3.0]])


def test_packed_size_mismatch_rejected():
    with pytest.raises(ValueError):
        SymMatrix(3, np.zeros(5))
    with pytest.raises(ValueError):
        SymMatrix.from_dense(np.zeros((2, 3)))


def test_arithmetic_and_reductions():
    a = SymMatrix.diag([1.0, -2.0, 3.0])
    b = SymMatrix.identity(3)
    assert (a + b).trace() == pytest.approx(5.0)
    assert (a - b).trace() == pytest.approx(-1.0)
    assert (-a).trace() == pytest.approx(-2.0)
    assert (2.0 * a).trace() == pytest.approx(4.0)
    assert a.frobenius() == pytest.approx(np.sqrt(14.0))
    assert a.is_finite()
    assert not SymMatrix(1, np.array([np.nan])).is_finite()


def test_sym_eigen_matches_lapack(rng):
    """Random symmetric matrices up to order 8: spectra agree with LAPACK and rebuild the matrix"""
    for _ in range(1000):
        order = int(rng.integers(1, 9))
        a = rng.normal(size=(order, order))
        a = 0.5 * (a + a.T) * 10.0 ** rng.uniform(-3, 3)
        values, vectors = sym_eigen(a)
        expected = np.sort(np.linalg.eigvalsh(a))[::-1]
        scale = max(1.0, np.abs(expected).max())
        assert np.allclose(values, expected, atol=1e-12 * scale)
        assert np.all(np.diff(values) <= 0.0)
        assert np.allclose(vectors.T @ vectors, np.eye(order), atol=1e-12)
        rebuilt = (vectors * values) @ vectors.T
        assert np.linalg.norm(rebuilt - a) <= 1e-12 * np.linalg.norm(a)


def test_sym_eigen_accepts_packed_and_degenerate():
    values, vectors = sym_eigen(SymMatrix.identity(3) * 2.0)
    assert np.allclose(values, 2.0)
    assert np.allclose(vectors @ vectors.T, np.eye(3))


def test_sym_eigen_rejects_non_finite():
    with pytest.raises(NumericalError):
        sym_eigen(np.array([[np.inf, 0.0], [0.0, 1.0]]))


def test_matrix_function_exponential(random_symmetric):
    a = random_symmetric(3)
    assert np.allclose(matrix_function(a, np.exp).dense(), scipy.linalg.expm(a), atol=1e-12)


def test_spectral_norm(random_symmetric):
    a = random_symmetric(5)
    assert spectral_norm(a) == pytest.approx(np.abs(np.linalg.eigvalsh(a)).max())


def _phase_matrix(rng, order):
    """Random symmetric Theta with eigenvalues away from the poles of tan"""
    q, _ = np.linalg.qr(rng.normal(size=(order, order)))
    theta = rng.uniform(-1.3, 1.3, size=order)
    return q, theta


def test_phase_functions_match_eigen_phases(rng):
    for _ in range(100):
        order = int(rng.integers(1, 5))
        q, theta = _phase_matrix(rng, order)
        sigma = (q * -np.tan(theta)) @ q.T
        sin2, cos2 = chart_phase_functions(sigma)
        assert np.allclose(sin2, (q * np.sin(2 * theta)) @ q.T, atol=1e-10)
        assert np.allclose(cos2, (q * np.cos(2 * theta)) @ q.T, atol=1e-10)


def test_phase_functions_are_chart_invariant(rng):
    """Direct, inverted and rotated storage of one phase give the same sin 2Theta, cos 2Theta"""
    order = 3
    q, _ = np.linalg.qr(rng.normal(size=(order, order)))
    theta = np.array([0.4, -0.9, 1.2])
    direct = chart_phase_functions((q * -np.tan(theta)) @ q.T)

    tau = (q * (-1.0 / np.tan(theta))) @ q.T
    inverted = chart_phase_functions(tau, inverted=True)

    alpha = np.pi / 4
    rotated = chart_phase_functions((q * -np.tan(theta - alpha)) @ q.T, angle=alpha)

    for other in (inverted, rotated):
        assert np.allclose(other[0], direct[0], atol=1e-12)
        assert np.allclose(other[1], direct[1], atol=1e-12)


def _random_sigma(rng, order):
    """Symmetric sigma with eigenvalue magnitudes log-uniform in [1e-2, 1e3] and random signs"""
    q, _ = np.linalg.qr(rng.normal(size=(order, order)))
    values = 10.0 ** rng.uniform(-2, 3, size=order) * rng.choice([-1.0, 1.0], size=order)
    return (q * values) @ q.T


def test_phase_functions_agree_between_sigma_and_tau(rng):
    for _ in range(1000):
        sigma = _random_sigma(rng, int(rng.integers(1, 5)))
        direct = chart_phase_functions(sigma)
        inverted = chart_phase_functions(np.linalg.inv(sigma), inverted=True)
        assert np.allclose(inverted[0], direct[0], atol=1e-8)
        assert np.allclose(inverted[1], direct[1], atol=1e-8)


def test_phase_functions_are_bounded(rng, random_symmetric):
    """sin^2 + cos^2 = I and no eigenvalue exceeds 1 in any chart, however large the stored matrix gets"""
    charts = ({}, {"inverted": True}, {"angle": np.pi / 4})
    for case in range(1000):
        order = int(rng.integers(1, 5))
        matrix = random_symmetric(order, 10.0 ** rng.uniform(-3, 3))
        sin2, cos2 = chart_phase_functions(matrix, **charts[case % 3])
        assert np.allclose(sin2 @ sin2 + cos2 @ cos2, np.eye(order), atol=1e-9)
        assert np.abs(np.linalg.eigvalsh(sin2)).max() <= 1.0 + 1e-12
        assert np.abs(np.linalg.eigvalsh(cos2)).max() <= 1.0 + 1e-12


def test_phase_functions_from_state():
    state = SimpleNamespace(matrix=SymMatrix.diag([-np.tan(0.3)]), angle=0.0, inverted=False)
    sin2, cos2 = phase_functions(state)
    assert sin2.dense()[0, 0] == pytest.approx(np.sin(0.6))
    assert cos2.dense()[0, 0] == pytest.approx(np.cos(0.6))


def test_lu_logdet_matches_slogdet(rng):
    for _ in range(50):
        a = rng.normal(size=(4, 4))
        sign, logabs, _ = lu_logdet(a)
        expected_sign, expected_log = np.linalg.slogdet(a)
        assert sign == expected_sign
        assert logabs == pytest.approx(expected_log, abs=1e-12)
    assert log_abs_det(np.diag([2.0, -3.0])) == pytest.approx(np.log(6.0))


def test_lu_logdet_singular():
    with pytest.raises(SingularMatrixError):
        lu_logdet(np.array([[1.0, 2.0], [2.0, 4.0]]))
