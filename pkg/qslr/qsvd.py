# This file is part of qslr
#
# qslr is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
#
#
# Copyright 2024 The qslr authors

"""
Quaternion singular value decomposition through the complex adjoint.

An m × n quaternion matrix A = A1 + A2·j (A1 = w + x·i, A2 = y + z·i) is
embedded as the 2m × 2n complex matrix [[A1, A2], [-conj(A2), conj(A1)]].
Entry (p, q) of A lands in the 2 × 2 block at rows (p, m + p) and columns
(q, n + q), which for q = a + b·i + c·j + d·k reads
[[a + b·i, c + d·i], [-c + d·i, a - b·i]].
"""

import logging
import unittest
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DomainError, NumericalError, ShapeError
from .quaternion import QMatrix, conj_transpose, frobenius_norm, qmatmul

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
# Fast path acceptance for factors read straight from the complex SVD.
_FAST_PATH_TOL = 1e-10
# A candidate vector is kept when this fraction of it survives projection.
_INDEPENDENCE_RATIO = 1e-4


def to_complex_adjoint(a: QMatrix) -> np.ndarray:
    """
    :return: The 2m × 2n complex adjoint of a.
    """
    a1, a2 = a.to_pair()
    return np.block([[a1, a2], [-a2.conj(), a1.conj()]])


def from_complex_adjoint(c: np.ndarray, tol: float = 1e-10) -> QMatrix:
    """
    Inverse of :func:`to_complex_adjoint`.

    :param c: Complex matrix of even dimensions.
    :param tol: Allowed deviation from the block symmetry, relative to the
        largest entry modulus.
    :raises ShapeError: If dimensions are odd.
    :raises DomainError: If c is not the adjoint of a quaternion matrix.
    """
    c = np.asarray(c)
    if c.ndim != 2 or c.shape[0] % 2 or c.shape[1] % 2:
        raise ShapeError(f"Complex adjoint must have even dimensions, got {c.shape}")
    m, n = c.shape[0] // 2, c.shape[1] // 2
    a1, a2 = c[:m, :n], c[:m, n:]
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    deviation = max(
        float(np.max(np.abs(c[m:, :n] + a2.conj()), initial=0.0)),
        float(np.max(np.abs(c[m:, n:] - a1.conj()), initial=0.0)),
    )
    if deviation > tol * scale:
        raise DomainError(
            f"Matrix violates the complex adjoint block symmetry by {deviation:.3e}"
        )
    return QMatrix.from_pair(a1, a2)


@dataclass(frozen=True)
class QSVDResult:
    """
    A = U diag(sigma) V*. U is m × m and V is n × n for a full decomposition,
    both m × r and n × r (r = min(m, n)) for a thin one.
    """

    U: QMatrix
    sigma: np.ndarray
    V: QMatrix

    def reconstruct(self) -> QMatrix:
        r = len(self.sigma)
        us = QMatrix.from_planes(self.U.planes[:, :, :r] * self.sigma[None, None, :])
        vr = QMatrix.from_planes(self.V.planes[:, :, :r])
        return qmatmul(us, conj_transpose(vr))


def _complex_svd(c: np.ndarray, full_matrices: bool):
    try:
        return scipy.linalg.svd(c, full_matrices=full_matrices, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.debug("gesdd did not converge on %s matrix, retrying with gesvd", c.shape)
    return scipy.linalg.svd(c, full_matrices=full_matrices, lapack_driver="gesvd")


def _pair_values(s: np.ndarray, r: int, diagnostics: dict) -> np.ndarray:
    s = np.sort(s)[::-1]
    first, second = s[0::2][:r], s[1::2][:r]
    scale = max(float(s[0]), np.finfo(float).tiny) if len(s) else 1.0
    gap = float(np.max(np.abs(first - second), initial=0.0)) / scale
    if gap > 1e-8:
        raise NumericalError(
            "Complex adjoint singular values are not paired",
            dict(diagnostics, pair_gap=gap),
        )
    return first.copy()


def _pairs_from_columns(c: np.ndarray):
    # Complex column [p; q] of the adjoint is the quaternion vector p - conj(q)·j.
    m = c.shape[0] // 2
    return c[:m, :], -c[m:, :].conj()


def _orthonormality_error(u1: np.ndarray, u2: np.ndarray) -> float:
    u = QMatrix.from_pair(u1, u2)
    g = qmatmul(conj_transpose(u), u)
    return frobenius_norm(g - QMatrix.identity(u.cols))


def _quaternion_basis(x1: np.ndarray, x2: np.ndarray, count: int):
    """
    Modified Gram-Schmidt in quaternion arithmetic over candidate columns,
    taken in order. Standard basis vectors are appended as last resort
    candidates so that the basis is always completed.
    """
    m = x1.shape[0]
    eye = np.eye(m, dtype=complex)
    zero = np.zeros((m, m), dtype=complex)
    x1 = np.hstack((x1, eye, zero))
    x2 = np.hstack((x2, zero, eye))
    acc1 = np.zeros((m, count), dtype=complex)
    acc2 = np.zeros((m, count), dtype=complex)
    k = 0
    for j in range(x1.shape[1]):
        y1, y2 = x1[:, j].copy(), x2[:, j].copy()
        norm0 = np.sqrt(np.vdot(y1, y1).real + np.vdot(y2, y2).real)
        if norm0 == 0.0:
            continue
        # Projecting twice keeps the basis orthonormal to working precision.
        for _ in range(2):
            if k == 0:
                break
            p1, p2 = acc1[:, :k], acc2[:, :k]
            q1 = p1.conj().T @ y1 + (p2.conj().T @ y2).conj()
            q2 = p1.conj().T @ y2 - (p2.conj().T @ y1).conj()
            y1 = y1 - (p1 @ q1 - p2 @ q2.conj())
            y2 = y2 - (p1 @ q2 + p2 @ q1.conj())
        norm = np.sqrt(np.vdot(y1, y1).real + np.vdot(y2, y2).real)
        if norm <= _INDEPENDENCE_RATIO * norm0:
            continue
        acc1[:, k], acc2[:, k] = y1 / norm, y2 / norm
        k += 1
        if k == count:
            break
    return acc1, acc2


def qsvd(a: QMatrix, tol: float = DEFAULT_TOL, full_matrices: bool = True) -> QSVDResult:
    """
    Quaternion singular value decomposition.

    Singular values of the complex adjoint come in equal pairs, one
    representative per pair is returned. Unitary factors are read from the
    complex singular vectors; when a repeated singular value makes the complex
    SVD mix pairs, the factors are rebuilt by quaternion Gram-Schmidt and V is
    recomputed as A* U / sigma on the nonzero part.

    :param a: Nonempty quaternion matrix.
    :param tol: Tolerance on the unitarity of the returned factors.
    :param full_matrices: If False, return the thin factors.
    :raises ShapeError: If a is empty.
    :raises NumericalError: If the complex SVD fails or its output is not
        consistent with a quaternion matrix.
    """
    m, n = a.shape
    if m == 0 or n == 0:
        raise ShapeError("Cannot decompose an empty quaternion matrix")
    r = min(m, n)
    norm = frobenius_norm(a)
    diagnostics = {"shape": (m, n), "frobenius_norm": norm, "finite": bool(np.isfinite(norm))}
    if not np.isfinite(norm):
        raise NumericalError("Quaternion matrix has non-finite entries", diagnostics)
    c = to_complex_adjoint(a)
    try:
        uc, s, vh = _complex_svd(c, full_matrices)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError("Complex adjoint SVD failed", diagnostics) from e
    sigma = _pair_values(s, r, diagnostics)
    vc = vh.conj().T
    ncols_u = m if full_matrices else r
    ncols_v = n if full_matrices else r

    u1, u2 = _pairs_from_columns(uc[:, 0 : 2 * ncols_u : 2])
    v1, v2 = _pairs_from_columns(vc[:, 0 : 2 * ncols_v : 2])
    if (
        _orthonormality_error(u1, u2) <= _FAST_PATH_TOL
        and _orthonormality_error(v1, v2) <= _FAST_PATH_TOL
    ):
        return QSVDResult(QMatrix.from_pair(u1, u2), sigma, QMatrix.from_pair(v1, v2))

    logger.debug("Repeated singular values in %s matrix, rebuilding factors", (m, n))
    c1, c2 = _pairs_from_columns(uc)
    u1, u2 = _quaternion_basis(c1, c2, ncols_u)
    u = QMatrix.from_pair(u1, u2)
    cutoff = max(m, n) * np.finfo(float).eps * (sigma[0] if r else 0.0)
    positive = int(np.count_nonzero(sigma > cutoff))
    if positive:
        head = QMatrix.from_planes(u.planes[:, :, :positive])
        av = qmatmul(conj_transpose(a), head) * np.broadcast_to(
            1.0 / sigma[:positive], (n, positive)
        )
        h1, h2 = av.to_pair()
    else:
        h1 = h2 = np.zeros((n, 0), dtype=complex)
    c1, c2 = _pairs_from_columns(vc)
    v1, v2 = _quaternion_basis(np.hstack((h1, c1)), np.hstack((h2, c2)), ncols_v)
    v = QMatrix.from_pair(v1, v2)
    errors = (_orthonormality_error(u1, u2), _orthonormality_error(v1, v2))
    if max(errors) > tol:
        raise NumericalError(
            "Could not build unitary factors",
            dict(diagnostics, unitary_error=max(errors)),
        )
    return QSVDResult(u, sigma, v)


def rank(a: QMatrix, tol: float) -> int:
    """
    :return: Number of singular values of a strictly greater than tol.
    :param tol: Absolute threshold, left to the caller.
    """
    return int(np.count_nonzero(qsvd(a, full_matrices=False).sigma > tol))


def random_unitary(rng: np.random.Generator, n: int) -> QMatrix:
    """
    :return: A random n × n unitary quaternion matrix.
    """
    return qsvd(QMatrix.random(rng, n, n)).U


class TestComplexAdjoint(unittest.TestCase):
    def test_scalar_blocks(self):
        np.testing.assert_array_equal(
            to_complex_adjoint(QMatrix(np.ones((1, 1)))), np.eye(2, dtype=complex)
        )
        i = QMatrix(np.zeros((1, 1)), np.ones((1, 1)))
        np.testing.assert_array_equal(
            to_complex_adjoint(i), np.array([[1j, 0], [0, -1j]])
        )
        q = QMatrix([[1.0]], [[2.0]], [[3.0]], [[4.0]])
        np.testing.assert_array_equal(
            to_complex_adjoint(q), np.array([[1 + 2j, 3 + 4j], [-3 + 4j, 1 - 2j]])
        )

    def test_round_trip(self):
        a = QMatrix.random(np.random.default_rng(0), 6, 4)
        b = from_complex_adjoint(to_complex_adjoint(a))
        self.assertLessEqual(np.max(np.abs(a.planes - b.planes)), 1e-12)

    def test_rejects_broken_symmetry(self):
        c = to_complex_adjoint(QMatrix.random(np.random.default_rng(1), 2, 2))
        c[3, 3] += 0.5
        with self.assertRaises(DomainError):
            from_complex_adjoint(c)
        with self.assertRaises(ShapeError):
            from_complex_adjoint(np.zeros((3, 2)))

    def test_homomorphism(self):
        rng = np.random.default_rng(2)
        a, b = QMatrix.random(rng, 3, 4), QMatrix.random(rng, 4, 2)
        np.testing.assert_allclose(
            to_complex_adjoint(a @ b),
            to_complex_adjoint(a) @ to_complex_adjoint(b),
            atol=1e-12,
        )


class TestQSVD(unittest.TestCase):
    def check_result(self, a: QMatrix, res: QSVDResult, recon_tol=1e-10):
        m, n = a.shape
        self.assertEqual(len(res.sigma), min(m, n))
        self.assertTrue(np.all(np.diff(res.sigma) <= 0))
        self.assertTrue(np.all(res.sigma >= 0))
        for f in (res.U, res.V):
            err = frobenius_norm(qmatmul(f, conj_transpose(f)) - QMatrix.identity(f.rows))
            self.assertLessEqual(err, 1e-8)
        scale = max(frobenius_norm(a), 1.0)
        self.assertLessEqual(frobenius_norm(a - res.reconstruct()), recon_tol * scale)

    def test_diagonal(self):
        res = qsvd(QMatrix(np.diag([3.0, 1.0])))
        np.testing.assert_allclose(res.sigma, [3.0, 1.0], atol=1e-14)

    def test_random_suite(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            m, n = rng.integers(1, 33), rng.integers(1, 25)
            a = QMatrix.random(rng, m, n)
            self.check_result(a, qsvd(a))

    def test_real_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            w = rng.standard_normal((7, 5))
            res = qsvd(QMatrix(w))
            np.testing.assert_allclose(res.sigma, np.linalg.svd(w, compute_uv=False), atol=1e-10)

    def test_matches_deduplicated_adjoint_values(self):
        a = QMatrix.random(np.random.default_rng(5), 8, 6)
        s = np.linalg.svd(to_complex_adjoint(a), compute_uv=False)
        np.testing.assert_allclose(qsvd(a).sigma, np.sort(s)[::-1][::2], atol=1e-10)
        self.check_result(a, qsvd(a))

    def test_repeated_values(self):
        self.check_result(QMatrix.identity(4), qsvd(QMatrix.identity(4)))
        zero = QMatrix.zeros(3, 5)
        res = qsvd(zero)
        np.testing.assert_array_equal(res.sigma, np.zeros(3))
        self.check_result(zero, res)
        rng = np.random.default_rng(6)
        low = QMatrix.random(rng, 6, 2) @ QMatrix.random(rng, 2, 5)
        self.check_result(low, qsvd(low))
        self.check_result(low, qsvd(low, full_matrices=False))
        self.assertEqual(rank(low, 1e-8), 2)

    def test_thin(self):
        a = QMatrix.random(np.random.default_rng(7), 9, 4)
        res = qsvd(a, full_matrices=False)
        self.assertEqual(res.U.shape, (9, 4))
        self.assertEqual(res.V.shape, (4, 4))
        self.assertLessEqual(frobenius_norm(a - res.reconstruct()), 1e-10 * frobenius_norm(a))

    def test_unitary_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            a = QMatrix.random(rng, 6, 4)
            q1, q2 = random_unitary(rng, 6), random_unitary(rng, 4)
            b = q1 @ a @ q2
            self.assertAlmostEqual(
                frobenius_norm(b) / frobenius_norm(a), 1.0, delta=1e-10
            )
            np.testing.assert_allclose(qsvd(b).sigma, qsvd(a).sigma, atol=1e-10)
            low = QMatrix.random(rng, 6, 2) @ QMatrix.random(rng, 2, 4)
            self.assertEqual(rank(q1 @ low @ q2, 1e-8), rank(low, 1e-8))

    def test_empty_and_non_finite(self):
        with self.assertRaises(ShapeError):
            qsvd(QMatrix(np.zeros((0, 3))))
        with self.assertRaises(NumericalError):
            qsvd(QMatrix(np.array([[np.nan]])))


if __name__ == "__main__":
    unittest.main()
