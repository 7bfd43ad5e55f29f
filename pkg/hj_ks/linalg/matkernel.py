"""Small dense symmetric-matrix kernel.

Everything here works on orders of a few units (the Riccati state of a
three-degree-of-freedom system is 3x3), so clarity beats blocking.
Symmetric matrices are stored packed (upper triangle, row major) so the
Riccati integrator carries exactly N(N+1)/2 unknowns.
"""

import logging
import warnings
from functools import lru_cache
from typing import Callable, Tuple, Union

import numpy as np
import scipy.linalg

from ..errors import EigenConvergenceError, NumericalError, SingularMatrixError

logger = logging.getLogger('hj_ks')

MatrixLike = Union["SymMatrix", np.ndarray]


@lru_cache(maxsize=32)
def _triu(order: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(order)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def packed_size(order: int) -> int:
    return order * (order + 1) // 2


@lru_cache(maxsize=32)
def _frobenius_weights(order: int) -> np.ndarray:
    rows, cols = _triu(order)
    weights = np.where(rows == cols, 1.0, 2.0)
    weights.setflags(write=False)
    return weights


class SymMatrix:
    """Real symmetric matrix with structural symmetry."""

    __slots__ = ("order", "packed")

    def __init__(self, order: int, packed: np.ndarray):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        packed = np.asarray(packed, dtype=float)
        if packed.shape != (packed_size(order),):
            raise ValueError(f"packed storage for order {order} needs {packed_size(order)} entries, got {packed.shape}")
        self.order = order
        self.packed = packed

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SymMatrix":
        """Pack the symmetric part 1/2 (A + A^T) of a square matrix."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        rows, cols = _triu(a.shape[0])
        return cls(a.shape[0], 0.5 * (a[rows, cols] + a[cols, rows]))

    @classmethod
    def zeros(cls, order: int) -> "SymMatrix":
        return cls(order, np.zeros(packed_size(order)))

    @classmethod
    def identity(cls, order: int) -> "SymMatrix":
        return cls.from_dense(np.eye(order))

    @classmethod
    def diag(cls, values) -> "SymMatrix":
        return cls.from_dense(np.diag(np.asarray(values, dtype=float)))

    def dense(self) -> np.ndarray:
        rows, cols = _triu(self.order)
        out = np.empty((self.order, self.order))
        out[rows, cols] = self.packed
        out[cols, rows] = self.packed
        return out

    def trace(self) -> float:
        rows, cols = _triu(self.order)
        return float(self.packed[rows == cols].sum())

    def frobenius(self) -> float:
        return float(np.sqrt(np.dot(_frobenius_weights(self.order), self.packed * self.packed)))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.packed)))

    def __add__(self, other: "SymMatrix") -> "SymMatrix":
        return SymMatrix(self.order, self.packed + other.packed)

    def __sub__(self, other: "SymMatrix") -> "SymMatrix":
        return SymMatrix(self.order, self.packed - other.packed)

    def __neg__(self) -> "SymMatrix":
        return SymMatrix(self.order, -self.packed)

    def __mul__(self, scalar: float) -> "SymMatrix":
        return SymMatrix(self.order, self.packed * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"SymMatrix(order={self.order}, dense={self.dense().tolist()})"


def as_dense(m: MatrixLike) -> np.ndarray:
    if isinstance(m, SymMatrix):
        return m.dense()
    return np.atleast_2d(np.asarray(m, dtype=float))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sym_eigen(m: MatrixLike, tol: float = 1e-14, max_sweeps: int = 60) -> Tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = symmetrize(as_dense(m)).copy()
    if not np.all(np.isfinite(a)):
        raise NumericalError("sym_eigen: non-finite input")
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)

    for sweep in range(max_sweeps):
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off > 1e3 * tol * scale:
            raise EigenConvergenceError(
                f"Jacobi iteration did not converge after {max_sweeps} sweeps (off-diagonal norm {off:.3e})")

    values = np.diag(a).copy()
    order = np.argsort(values)[::-1]
    return values[order], v[:, order]


def matrix_function(m: MatrixLike, fn: Callable[[np.ndarray], np.ndarray]) -> SymMatrix:
    """Apply a scalar function to the spectrum: Q fn(L) Q^T."""
    values, vectors = sym_eigen(m)
    return SymMatrix.from_dense((vectors * fn(values)) @ vectors.T)


def spectral_norm(m: MatrixLike) -> float:
    values, _ = sym_eigen(m)
    return float(np.max(np.abs(values)))


def chart_phase_functions(matrix: MatrixLike, angle: float = 0.0,
                          inverted: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Dense sin 2Theta, cos 2Theta from a matrix stored in a given chart.

    ``angle`` is the chart rotation alpha (the stored matrix is
    -tan(Theta - alpha)); ``inverted`` marks the tau = sigma^-1 convention,
    which is the alpha = pi/2 chart with opposite sign. Built from the eigen-angles,
    so no eigenvalue of either result exceeds 1 beyond rounding, whatever the conditioning.
    """
    m = as_dense(matrix)
    if not np.all(np.isfinite(m)):
        return np.full(m.shape, np.nan), np.full(m.shape, np.nan)
    values, vectors = np.linalg.eigh(m)
    if inverted:
        theta = np.arctan2(-1.0, values)
    else:
        theta = np.arctan(-values) + angle
    sin2 = symmetrize((vectors * np.sin(2.0 * theta)) @ vectors.T)
    cos2 = symmetrize((vectors * np.cos(2.0 * theta)) @ vectors.T)
    return sin2, cos2


def phase_functions(state) -> Tuple[SymMatrix, SymMatrix]:
    """sin 2Theta and cos 2Theta of the symplectic phase of a Riccati state.

    ``state`` needs ``matrix``, ``angle`` and ``inverted`` attributes
    (see riccati.SigmaState).
    """
    sin2, cos2 = chart_phase_functions(state.matrix, state.angle, state.inverted)
    return SymMatrix.from_dense(sin2), SymMatrix.from_dense(cos2)


def lu_logdet(m: MatrixLike) -> Tuple[float, float, Tuple[np.ndarray, np.ndarray]]:
    """Sign, ln|det| and the pivoted LU factors of a square matrix."""
    a = as_dense(m)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    except ValueError as e:
        raise NumericalError(f"log_abs_det: {e}") from e
    diag = np.diag(lu)
    if np.any(diag == 0.0):
        raise SingularMatrixError("matrix is exactly singular")
    swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
    sign = (-1.0) ** swaps * float(np.prod(np.sign(diag)))
    return sign, float(np.sum(np.log(np.abs(diag)))), (lu, piv)


def log_abs_det(m: MatrixLike) -> float:
    """ln|det M| via LU with partial pivoting."""
    return lu_logdet(m)[1]
