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

import unittest
from abc import ABC, abstractmethod
from enum import Enum
from functools import lru_cache

import numpy as np
import scipy.fft

from .exceptions import ShapeError
from .quaternion import QMatrix, frobenius_norm, inner
from .qsvd import qsvd


class TransformKind(str, Enum):
    QDCT = "qdct"
    IDENTITY = "identity"


@lru_cache(maxsize=64)
def dct_matrix(k: int) -> np.ndarray:
    """
    Real orthonormal DCT-II matrix of size k: first row scaled by 1/√k, the
    others by √(2/k). The returned array is read-only and shared.
    """
    d = scipy.fft.dct(np.eye(k), type=2, norm="ortho", axis=0)
    d.flags.writeable = False
    return d


class OrthoTransform(ABC):
    """
    OrthoTransform is an abstract class for the orthogonal analysis operators
    acting on rows × cols quaternion matrices. Subclasses implement the
    forward map; the adjoint is its exact inverse.
    """

    kind: TransformKind

    def __init__(self, rows: int, cols: int):
        if rows <= 0 or cols <= 0:
            raise ShapeError(f"Transform dimensions must be positive, got {rows}×{cols}")
        self.rows = rows
        self.cols = cols

    def check_dimension(self, value: QMatrix):
        """
        :raises ShapeError: If value's dimensions are not the transform's.
        """
        if value.shape != (self.rows, self.cols):
            raise ShapeError(
                f"The given matrix's dimension {value.shape} is incorrect: "
                f"expected {(self.rows, self.cols)}"
            )

    def forward(self, x: QMatrix) -> QMatrix:
        self.check_dimension(x)
        return self._forward(x)

    def adjoint(self, w: QMatrix) -> QMatrix:
        self.check_dimension(w)
        return self._adjoint(w)

    @abstractmethod
    def _forward(self, x: QMatrix) -> QMatrix: ...

    @abstractmethod
    def _adjoint(self, w: QMatrix) -> QMatrix: ...

    def __repr__(self):
        return f"{type(self).__name__}(rows={self.rows}, cols={self.cols})"


class Identity(OrthoTransform):
    kind = TransformKind.IDENTITY

    def _forward(self, x: QMatrix) -> QMatrix:
        return x

    def _adjoint(self, w: QMatrix) -> QMatrix:
        return w


class QDCT(OrthoTransform):
    """
    Channel-wise quaternion DCT: X ↦ D_m X D_nᵀ with D_k the real orthonormal
    DCT-II matrix, the same real map applied to the four planes. Since both
    factors are real orthogonal, singular values are preserved.
    """

    kind = TransformKind.QDCT

    def __init__(self, rows: int, cols: int):
        super().__init__(rows, cols)
        self.left = dct_matrix(rows)
        self.right = dct_matrix(cols)

    def _forward(self, x: QMatrix) -> QMatrix:
        return x.map_planes(lambda p: self.left @ p @ self.right.T)

    def _adjoint(self, w: QMatrix) -> QMatrix:
        return w.map_planes(lambda p: self.left.T @ p @ self.right)


def make_transform(kind, rows: int, cols: int) -> OrthoTransform:
    """
    :param kind: A TransformKind or its string value.
    """
    kind = TransformKind(kind)
    if kind == TransformKind.QDCT:
        return QDCT(rows, cols)
    return Identity(rows, cols)


class TestTransforms(unittest.TestCase):
    def test_dct_matrix_orthonormal(self):
        for k in (1, 2, 7, 16):
            d = dct_matrix(k)
            np.testing.assert_allclose(d @ d.T, np.eye(k), atol=1e-12)
        np.testing.assert_allclose(dct_matrix(4)[0], np.full(4, 0.5), atol=1e-15)

    def test_constant_energy_at_origin(self):
        t = make_transform("qdct", 8, 8)
        w = t.forward(QMatrix(np.ones((8, 8))))
        self.assertAlmostEqual(w.w[0, 0], 8.0, places=12)
        energy = np.sum(w.planes**2)
        self.assertAlmostEqual(w.w[0, 0] ** 2 / energy, 1.0, places=12)

    def test_identity_kind(self):
        x = QMatrix.random(np.random.default_rng(0), 3, 5)
        t = make_transform(TransformKind.IDENTITY, 3, 5)
        self.assertIs(t.forward(x), x)
        self.assertIs(t.adjoint(x), x)

    def test_orthogonality(self):
        rng = np.random.default_rng(1)
        t = QDCT(12, 9)
        x, w = QMatrix.random(rng, 12, 9), QMatrix.random(rng, 12, 9)
        self.assertLessEqual(frobenius_norm(t.adjoint(t.forward(x)) - x), 1e-10 * frobenius_norm(x))
        self.assertAlmostEqual(inner(t.forward(x), w), inner(x, t.adjoint(w)), delta=1e-10 * 100)
        x16 = QMatrix.random(rng, 16, 16)
        self.assertAlmostEqual(
            frobenius_norm(QDCT(16, 16).forward(x16)) / frobenius_norm(x16), 1.0, delta=1e-10
        )

    def test_linearity(self):
        rng = np.random.default_rng(2)
        t = QDCT(6, 4)
        x, y = QMatrix.random(rng, 6, 4), QMatrix.random(rng, 6, 4)
        x, y = x / frobenius_norm(x), y / frobenius_norm(y)
        lhs = t.forward(x * 2.0 + y * -3.0)
        rhs = t.forward(x) * 2.0 + t.forward(y) * -3.0
        self.assertLessEqual(np.max(np.abs(lhs.planes - rhs.planes)), 1e-12)

    def test_spectral_invariance(self):
        rng = np.random.default_rng(3)
        x = QMatrix.random(rng, 10, 7)
        t = QDCT(10, 7)
        left = QMatrix(dct_matrix(10))
        right = QMatrix(dct_matrix(7).T)
        factored = left @ x @ right
        self.assertLessEqual(frobenius_norm(t.forward(x) - factored), 1e-12 * frobenius_norm(x))
        np.testing.assert_allclose(qsvd(t.forward(x)).sigma, qsvd(x).sigma, atol=1e-8)

    def test_random_square_draws(self):
        rng = np.random.default_rng(4)
        t = QDCT(32, 32)
        for _ in range(100):
            x, w = QMatrix.random(rng, 32, 32), QMatrix.random(rng, 32, 32)
            norm = frobenius_norm(x)
            forward = t.forward(x)
            self.assertLessEqual(frobenius_norm(t.adjoint(forward) - x), 1e-8 * norm)
            self.assertLessEqual(abs(frobenius_norm(forward) - norm), 1e-8 * norm)
            self.assertLessEqual(
                abs(inner(forward, w) - inner(x, t.adjoint(w))), 1e-8 * norm * frobenius_norm(w)
            )
            sigma = qsvd(x).sigma
            np.testing.assert_allclose(qsvd(forward).sigma, sigma, rtol=0, atol=1e-8 * np.max(sigma))

    def test_dimension_check(self):
        with self.assertRaises(ShapeError):
            QDCT(4, 4).forward(QMatrix.zeros(4, 5))
        with self.assertRaises(ValueError):
            make_transform("wavelet", 4, 4)


if __name__ == "__main__":
    unittest.main()
