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


import struct
import unittest
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .exceptions import DomainError, FileFormatError, ShapeError

QMAT_MAGIC = b"QMAT"
QMAT_VERSION = 1
_QMAT_HEADER = struct.Struct("<4sIII")

Real = Union[int, float, np.floating]


def _hamilton(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """
    Hamilton product of quaternion arrays stored with the four components on
    the first axis. Remaining axes broadcast.
    """
    a1, b1, c1, d1 = p
    a2, b2, c2, d2 = q
    return np.stack(
        (
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        )
    )


class Quaternion:
    """
    Quaternion scalar w + x·i + y·j + z·k.
    """

    def __init__(self, w: Real = 0.0, x: Real = 0.0, y: Real = 0.0, z: Real = 0.0):
        """
        :param w: Real (scalar) part.
        :param x: i part.
        :param y: j part.
        :param z: k part.
        """
        self.data = [float(w), float(x), float(y), float(z)]

    @property
    def w(self) -> float:
        """Scalar part."""
        return self.data[0]

    @w.setter
    def w(self, value: Real):
        self.data[0] = float(value)

    @property
    def x(self) -> float:
        """i part."""
        return self.data[1]

    @x.setter
    def x(self, value: Real):
        self.data[1] = float(value)

    @property
    def y(self) -> float:
        """j part."""
        return self.data[2]

    @y.setter
    def y(self, value: Real):
        self.data[2] = float(value)

    @property
    def z(self) -> float:
        """k part."""
        return self.data[3]

    @z.setter
    def z(self, value: Real):
        self.data[3] = float(value)

    @property
    def is_pure(self) -> bool:
        return self.w == 0.0

    def __getitem__(self, key):
        return self.data[key]

    def __len__(self):
        return 4

    def __iter__(self):
        return iter(self.data)

    def __add__(self, other: "Quaternion") -> "Quaternion":
        if isinstance(other, (int, float)):
            other = Quaternion(other)
        return Quaternion(*(a + b for a, b in zip(self.data, other.data)))

    __radd__ = __add__

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        if isinstance(other, (int, float)):
            other = Quaternion(other)
        return Quaternion(*(a - b for a, b in zip(self.data, other.data)))

    def __neg__(self) -> "Quaternion":
        return Quaternion(*(-a for a in self.data))

    def __mul__(self, other: Union["Quaternion", Real]) -> "Quaternion":
        """
        :return: Hamilton product self·other, or scaling by a real number.
        :param other: A Quaternion, or an integer or a float.
        """
        if isinstance(other, Quaternion):
            return qmul(self, other)
        if isinstance(other, (int, float, np.floating)):
            return Quaternion(*(a * other for a in self.data))
        return NotImplemented

    def __rmul__(self, other: Real) -> "Quaternion":
        if isinstance(other, (int, float, np.floating)):
            return Quaternion(*(other * a for a in self.data))
        return NotImplemented

    def __truediv__(self, other: Real) -> "Quaternion":
        if isinstance(other, (int, float, np.floating)):
            return self * (1.0 / other)
        raise TypeError("Incorrect type for second operand. int or float is expected.")

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Quaternion(other)
        if not isinstance(other, Quaternion):
            return NotImplemented
        return self.data == other.data

    def __str__(self):
        return f"{self.w}{self.x:+}i{self.y:+}j{self.z:+}k"

    def __repr__(self):
        return "Quaternion(" + ",".join(str(v) for v in self.data) + ")"

    def conj(self) -> "Quaternion":
        return conj(self)

    def modulus(self) -> float:
        return modulus(self)

    def inverse(self) -> "Quaternion":
        return inverse(self)


def qmul(a: Quaternion, b: Quaternion) -> Quaternion:
    """
    Hamilton product, with ij = -ji = k, jk = -kj = i and ki = -ik = j.
    """
    return Quaternion(*_hamilton(np.array(a.data), np.array(b.data)))


def conj(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def modulus(q: Quaternion) -> float:
    return float(np.sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z))


def inverse(q: Quaternion) -> Quaternion:
    """
    :return: conj(q) / |q|².
    :raises DomainError: If q is the zero quaternion.
    """
    n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z
    if n2 == 0.0:
        raise DomainError("The zero quaternion has no inverse")
    return conj(q) / n2


class QMatrix:
    """
    Dense quaternion matrix stored as four real component planes (w, x, y, z),
    each rows × cols. Instances are immutable: every operation returns a new
    matrix.
    """

    # Lets ndarray * QMatrix dispatch to __rmul__.
    __array_ufunc__ = None

    def __init__(self, w, x=None, y=None, z=None):
        """
        :param w: Real part, a 2-D array.
        :param x: i part, same shape as w. Zero if None.
        :param y: j part, same shape as w. Zero if None.
        :param z: k part, same shape as w. Zero if None.
        """
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError(f"Quaternion matrix planes must be 2-D, got {w.ndim}-D")
        planes = np.zeros((4,) + w.shape)
        planes[0] = w
        for i, p in enumerate((x, y, z), start=1):
            if p is None:
                continue
            p = np.asarray(p, dtype=np.float64)
            if p.shape != w.shape:
                raise ShapeError(
                    f"Plane {'wxyz'[i]} has shape {p.shape}, expected {w.shape}"
                )
            planes[i] = p
        planes.flags.writeable = False
        self._planes = planes

    @classmethod
    def from_planes(cls, planes) -> "QMatrix":
        """
        :param planes: Array of shape (4, rows, cols).
        """
        planes = np.array(planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 4:
            raise ShapeError(f"Expected planes of shape (4, m, n), got {planes.shape}")
        return cls._wrap(planes)

    @classmethod
    def _wrap(cls, planes: np.ndarray) -> "QMatrix":
        # Takes ownership of a freshly computed array, no copy.
        result = cls.__new__(cls)
        planes.flags.writeable = False
        result._planes = planes
        return result

    @classmethod
    def from_pair(cls, a1: np.ndarray, a2: np.ndarray) -> "QMatrix":
        """
        Build A = A1 + A2·j from two complex matrices, with A1 = w + x·i and
        A2 = y + z·i.
        """
        if a1.shape != a2.shape:
            raise ShapeError(f"Complex parts differ in shape: {a1.shape}, {a2.shape}")
        return cls._wrap(np.stack((a1.real, a1.imag, a2.real, a2.imag)).astype(np.float64))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "QMatrix":
        return cls._wrap(np.zeros((4, rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "QMatrix":
        return cls(np.eye(n))

    @classmethod
    def random(
        cls, rng: np.random.Generator, rows: int, cols: int, pure: bool = False
    ) -> "QMatrix":
        """
        Matrix with i.i.d. standard normal components.

        :param rng: Random generator.
        :param pure: If True, the real plane is zero.
        """
        planes = rng.standard_normal((4, rows, cols))
        if pure:
            planes[0] = 0.0
        return cls._wrap(planes)

    @property
    def planes(self) -> np.ndarray:
        """Read-only (4, rows, cols) component array."""
        return self._planes

    @property
    def shape(self) -> Tuple[int, int]:
        return self._planes.shape[1:]

    @property
    def rows(self) -> int:
        return self._planes.shape[1]

    @property
    def cols(self) -> int:
        return self._planes.shape[2]

    @property
    def w(self) -> np.ndarray:
        """Real plane."""
        return self._planes[0]

    @property
    def x(self) -> np.ndarray:
        """i plane."""
        return self._planes[1]

    @property
    def y(self) -> np.ndarray:
        """j plane."""
        return self._planes[2]

    @property
    def z(self) -> np.ndarray:
        """k plane."""
        return self._planes[3]

    @property
    def H(self) -> "QMatrix":
        """Conjugate transpose."""
        return conj_transpose(self)

    def to_pair(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        :return: Complex matrices (A1, A2) such that A = A1 + A2·j.
        """
        p = self._planes
        return p[0] + 1j * p[1], p[2] + 1j * p[3]

    def conj(self) -> "QMatrix":
        """Entrywise conjugate, without transposition."""
        return QMatrix._wrap(self._planes * np.array([1.0, -1.0, -1.0, -1.0])[:, None, None])

    def modulus(self) -> np.ndarray:
        """:return: Entrywise modulus, a real rows × cols array."""
        return np.sqrt(np.sum(self._planes**2, axis=0))

    def map_planes(self, f) -> "QMatrix":
        """
        Apply the same real linear map to each of the four planes.

        :param f: Callable taking and returning a 2-D real array.
        """
        return QMatrix._wrap(np.stack([f(p) for p in self._planes]))

    def column(self, j: int) -> "QMatrix":
        return QMatrix._wrap(self._planes[:, :, j : j + 1].copy())

    def check_same_shape(self, other: "QMatrix"):
        """
        :raises ShapeError: If other does not have the same dimensions.
        """
        if self.shape != other.shape:
            raise ShapeError(
                f"Quaternion matrix shape {other.shape} is incorrect: expected {self.shape}"
            )

    def __getitem__(self, key) -> Quaternion:
        i, j = key
        return Quaternion(*self._planes[:, i, j])

    def __add__(self, other: "QMatrix") -> "QMatrix":
        self.check_same_shape(other)
        return QMatrix._wrap(self._planes + other._planes)

    def __sub__(self, other: "QMatrix") -> "QMatrix":
        self.check_same_shape(other)
        return QMatrix._wrap(self._planes - other._planes)

    def __neg__(self) -> "QMatrix":
        return QMatrix._wrap(-self._planes)

    def __mul__(self, other) -> "QMatrix":
        """
        :return: Product by a real scalar, entrywise product by a real
            rows × cols array (applied to every plane), or right
            multiplication of every entry by a Quaternion.
        """
        if isinstance(other, Quaternion):
            q = np.array(other.data)[:, None, None]
            return QMatrix._wrap(_hamilton(self._planes, q))
        if isinstance(other, np.ndarray):
            if other.shape != self.shape:
                raise ShapeError(
                    f"Entrywise factor shape {other.shape} is incorrect: expected {self.shape}"
                )
            return QMatrix._wrap(self._planes * other[None, :, :])
        if isinstance(other, (int, float, np.floating)):
            return QMatrix._wrap(self._planes * float(other))
        return NotImplemented

    def __rmul__(self, other) -> "QMatrix":
        if isinstance(other, Quaternion):
            q = np.array(other.data)[:, None, None]
            return QMatrix._wrap(_hamilton(q, self._planes))
        return self.__mul__(other)

    def __truediv__(self, other) -> "QMatrix":
        if isinstance(other, np.ndarray):
            return self * (1.0 / other)
        if isinstance(other, (int, float, np.floating)):
            return self * (1.0 / other)
        raise TypeError("Incorrect type for second operand. int, float or array expected.")

    def __matmul__(self, other: "QMatrix") -> "QMatrix":
        return qmatmul(self, other)

    def __eq__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return np.array_equal(self._planes, other._planes)

    __hash__ = None

    def __repr__(self):
        return f"QMatrix(rows={self.rows}, cols={self.cols})"

    def to_bytes(self) -> bytes:
        """
        Binary encoding: 16-byte header (magic "QMAT", version, rows, cols as
        little-endian uint32) then the w, x, y, z planes as row-major
        little-endian float64.
        """
        header = _QMAT_HEADER.pack(QMAT_MAGIC, QMAT_VERSION, self.rows, self.cols)
        return header + self._planes.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "QMatrix":
        """
        Decode the output of :meth:`to_bytes`.

        :raises ValueError: On bad magic, version or length.
        """
        if len(data) < _QMAT_HEADER.size:
            raise ValueError("Truncated QMAT header")
        magic, version, rows, cols = _QMAT_HEADER.unpack_from(data)
        if magic != QMAT_MAGIC:
            raise ValueError(f"Bad QMAT magic {magic!r}")
        if version != QMAT_VERSION:
            raise ValueError(f"Unsupported QMAT version {version}")
        expected = _QMAT_HEADER.size + 4 * rows * cols * 8
        if len(data) != expected:
            raise ValueError(f"QMAT payload is {len(data)} bytes, expected {expected}")
        planes = np.frombuffer(data, dtype="<f8", offset=_QMAT_HEADER.size)
        return cls._wrap(planes.reshape(4, rows, cols).astype(np.float64))


def qmatmul(a: QMatrix, b: QMatrix) -> QMatrix:
    """
    Quaternion matrix product, computed in complex pair form:
    (A1 + A2 j)(B1 + B2 j) = (A1 B1 - A2 conj(B2)) + (A1 B2 + A2 conj(B1)) j.

    :raises ShapeError: If inner dimensions differ.
    """
    if a.cols != b.rows:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape} quaternion matrices")
    a1, a2 = a.to_pair()
    b1, b2 = b.to_pair()
    return QMatrix.from_pair(a1 @ b1 - a2 @ b2.conj(), a1 @ b2 + a2 @ b1.conj())


def conj_transpose(a: QMatrix) -> QMatrix:
    p = a.planes
    return QMatrix._wrap(np.stack((p[0].T, -p[1].T, -p[2].T, -p[3].T)))


def frobenius_norm(a: QMatrix) -> float:
    return float(np.sqrt(np.sum(a.planes**2)))


def inner(a: QMatrix, b: QMatrix) -> float:
    """
    :return: Re tr(A* B), the real inner product of two quaternion matrices.
    """
    a.check_same_shape(b)
    return float(np.sum(a.planes * b.planes))


def save_qmat(path, a: QMatrix):
    try:
        Path(path).write_bytes(a.to_bytes())
    except OSError as e:
        raise FileFormatError(path, f"cannot write: {e.strerror}") from e


def load_qmat(path) -> QMatrix:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FileFormatError(path, f"cannot read: {e.strerror}") from e
    try:
        return QMatrix.from_bytes(data)
    except ValueError as e:
        raise FileFormatError(path, str(e)) from e


class TestQuaternion(unittest.TestCase):
    def test_multiplication_table(self):
        one = Quaternion(1)
        i, j, k = Quaternion(0, 1), Quaternion(0, 0, 1), Quaternion(0, 0, 0, 1)
        self.assertEqual(i * j, k)
        self.assertEqual(j * i, -k)
        self.assertEqual(j * k, i)
        self.assertEqual(k * j, -i)
        self.assertEqual(k * i, j)
        self.assertEqual(i * k, -j)
        for q in (i, j, k):
            self.assertEqual(q * q, -one)
        self.assertEqual(i * j * k, -one)

    def test_identity_and_distributivity(self):
        q = Quaternion(2, 3, -1, 1)
        self.assertEqual(q * Quaternion(1), q)
        self.assertEqual(Quaternion(1, 1) * Quaternion(1, 0, 1), Quaternion(1, 1, 1, 1))

    def test_scalar_ops(self):
        q = Quaternion(1, 1, 1, 1)
        self.assertEqual(conj(q), Quaternion(1, -1, -1, -1))
        self.assertEqual(modulus(q), 2.0)
        self.assertEqual(inverse(Quaternion(2)), Quaternion(0.5))
        self.assertTrue(Quaternion(0, 1, 2, 3).is_pure)
        self.assertFalse(q.is_pure)
        with self.assertRaises(DomainError):
            inverse(Quaternion())

    def test_modulus_exact(self):
        q = Quaternion(1, 2, 3, 4)
        self.assertEqual(q.w**2 + q.x**2 + q.y**2 + q.z**2, 30.0)
        self.assertAlmostEqual(modulus(q) ** 2, 30.0, places=12)

    def test_inverse_product(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = Quaternion(*rng.standard_normal(4))
            p = q * inverse(q)
            np.testing.assert_allclose(p.data, [1, 0, 0, 0], atol=1e-13)

    def test_associativity_distributivity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, b, c = (Quaternion(*rng.standard_normal(4)) for _ in range(3))
            np.testing.assert_allclose(((a * b) * c).data, (a * (b * c)).data, atol=1e-13)
            np.testing.assert_allclose(
                (a * (b + c)).data, (a * b + a * c).data, atol=1e-13
            )


class TestQMatrix(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_planes_shape_checked(self):
        with self.assertRaises(ShapeError):
            QMatrix(np.zeros((2, 3)), np.zeros((3, 2)))
        with self.assertRaises(ShapeError):
            QMatrix(np.zeros(3))
        a = QMatrix(np.ones((2, 3)))
        self.assertEqual(a.shape, (2, 3))
        self.assertEqual(a.planes.shape, (4, 2, 3))
        with self.assertRaises(ValueError):
            a.planes[0, 0, 0] = 5.0

    def test_qmatmul_matches_scalar_product(self):
        a = QMatrix.random(self.rng, 3, 4)
        b = QMatrix.random(self.rng, 4, 2)
        c = a @ b
        for r in range(3):
            for s in range(2):
                expected = Quaternion()
                for t in range(4):
                    expected = expected + a[r, t] * b[t, s]
                np.testing.assert_allclose(c[r, s].data, expected.data, atol=1e-12)

    def test_identity_product(self):
        a = QMatrix.random(self.rng, 5, 7)
        np.testing.assert_allclose((QMatrix.identity(5) @ a).planes, a.planes, atol=1e-15)
        np.testing.assert_allclose((a @ QMatrix.identity(7)).planes, a.planes, atol=1e-15)
        with self.assertRaises(ShapeError):
            _ = a @ a

    def test_conj_transpose(self):
        a = QMatrix.random(self.rng, 4, 3)
        self.assertEqual(conj_transpose(conj_transpose(a)), a)
        b = QMatrix.random(self.rng, 3, 5)
        np.testing.assert_allclose(
            (a @ b).H.planes, (b.H @ a.H).planes, atol=1e-12
        )

    def test_inner_and_norm(self):
        a = QMatrix.random(self.rng, 4, 6)
        b = QMatrix.random(self.rng, 4, 6)
        self.assertAlmostEqual(inner(a, a), frobenius_norm(a) ** 2, places=10)
        trace = sum((a.H @ b)[i, i].w for i in range(6))
        self.assertAlmostEqual(inner(a, b), trace, places=10)
        self.assertAlmostEqual(frobenius_norm(a) ** 2, float(np.sum(a.planes**2)), places=12)

    def test_scalar_right_multiplication(self):
        a = QMatrix.random(self.rng, 2, 2)
        q = Quaternion(*self.rng.standard_normal(4))
        b = a * q
        c = q * a
        for r in range(2):
            for s in range(2):
                np.testing.assert_allclose(b[r, s].data, (a[r, s] * q).data, atol=1e-13)
                np.testing.assert_allclose(c[r, s].data, (q * a[r, s]).data, atol=1e-13)

    def test_entrywise_and_arithmetic(self):
        a = QMatrix.random(self.rng, 3, 3)
        mask = np.array([[1.0, 0.0, 1.0]] * 3)
        m = a * mask
        self.assertTrue(np.all(m.planes[:, :, 1] == 0.0))
        np.testing.assert_allclose((a + a - a).planes, a.planes)
        np.testing.assert_allclose((2 * a / 2.0).planes, a.planes)

    def test_bytes_round_trip(self):
        a = QMatrix.random(self.rng, 3, 5)
        data = a.to_bytes()
        self.assertEqual(len(data), 16 + 4 * 15 * 8)
        self.assertEqual(data[:4], b"QMAT")
        self.assertEqual(QMatrix.from_bytes(data), a)
        with self.assertRaises(ValueError):
            QMatrix.from_bytes(b"XMAT" + data[4:])
        with self.assertRaises(ValueError):
            QMatrix.from_bytes(data[:-8])


if __name__ == "__main__":
    unittest.main()
