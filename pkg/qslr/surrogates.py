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
Nonconvex rank surrogates φ(x, γ) applied to singular values, and the Huber
sparsity penalty applied to quaternion transform coefficients.

All surrogates are multiplied by ``SurrogateSpec.scale``:

================== =============================== =====================
kind               φ(x)                            φ'(x)
================== =============================== =====================
nuclear            x                               1
logdet             log(1 + x²)                     2x / (1 + x²)
schatten           x^γ                             γ x^(γ-1)
logarithm          log(γ + x)                      1 / (γ + x)
laplace            1 - exp(-x/γ)                   exp(-x/γ) / γ
weighted-schatten  w_i x^γ                         w_i γ x^(γ-1)
etp                (1 - exp(-γx)) / (1 - exp(-γ))  γ exp(-γx) / (1 - exp(-γ))
zero               0                               0
================== =============================== =====================
"""

import dataclasses
import unittest
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .exceptions import ConfigError, DomainError, ShapeError, SingularityError
from .quaternion import QMatrix, frobenius_norm
from .qsvd import qsvd


class SurrogateKind(str, Enum):
    NUCLEAR = "nuclear"
    LOGDET = "logdet"
    SCHATTEN = "schatten"
    LOGARITHM = "logarithm"
    LAPLACE = "laplace"
    WEIGHTED_SCHATTEN = "weighted-schatten"
    ETP = "etp"
    ZERO = "zero"


_GAMMA_FREE = (SurrogateKind.NUCLEAR, SurrogateKind.LOGDET, SurrogateKind.ZERO)
_POWER_KINDS = (SurrogateKind.SCHATTEN, SurrogateKind.WEIGHTED_SCHATTEN)


@dataclass(frozen=True)
class SurrogateSpec:
    """
    :param kind: Surrogate family.
    :param gamma: Shape parameter, in (0, 1] for the Schatten kinds.
    :param epsilon: Smoothing ε, singular values enter as √(σ² + ε²).
    :param scale: Multiplies φ. For ETP this is its own λ.
    :param weights: Per singular value weights, weighted-schatten only.
    :param weight_constant: c in the weight rule w_i = c / (σ_i + weight_offset).
    :param weight_offset: Offset of the weight rule.
    """

    kind: SurrogateKind = SurrogateKind.NUCLEAR
    gamma: float = 1.0
    epsilon: float = 0.0
    scale: float = 1.0
    weights: Optional[Tuple[float, ...]] = None
    weight_constant: Optional[float] = None
    weight_offset: float = 1e-4

    def __post_init__(self):
        try:
            kind = SurrogateKind(self.kind)
        except ValueError as e:
            raise ConfigError(f"Unknown surrogate kind {self.kind!r}") from e
        object.__setattr__(self, "kind", kind)
        if kind not in _GAMMA_FREE and not self.gamma > 0:
            raise ConfigError(f"Surrogate {kind.value} needs gamma > 0, got {self.gamma}")
        if kind in _POWER_KINDS and self.gamma > 1:
            raise ConfigError(f"Surrogate {kind.value} needs gamma in (0, 1], got {self.gamma}")
        if self.epsilon < 0:
            raise ConfigError(f"Smoothing epsilon must be >= 0, got {self.epsilon}")
        if self.scale < 0:
            raise ConfigError(f"Surrogate scale must be >= 0, got {self.scale}")
        if self.weight_offset <= 0:
            raise ConfigError(f"Weight offset must be > 0, got {self.weight_offset}")
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            if any(not w >= 0 for w in weights):
                raise ConfigError("Surrogate weights must be >= 0")
            object.__setattr__(self, "weights", weights)

    @property
    def is_weighted(self) -> bool:
        return self.kind == SurrogateKind.WEIGHTED_SCHATTEN

    @property
    def singular_at_zero(self) -> bool:
        """True if φ' is unbounded at 0, which then needs epsilon > 0."""
        return self.kind in _POWER_KINDS and self.gamma < 1

    def replace(self, **changes) -> "SurrogateSpec":
        return dataclasses.replace(self, **changes)

    def weight_vector(self, length: int) -> np.ndarray:
        """
        :raises ConfigError: If the weights are missing.
        :raises ShapeError: If they do not have the given length.
        """
        if self.weights is None:
            raise ConfigError("Weighted Schatten surrogate used without weights")
        if len(self.weights) != length:
            raise ShapeError(f"Got {len(self.weights)} surrogate weights, expected {length}")
        return np.array(self.weights)


@dataclass(frozen=True)
class HuberSpec:
    """
    Sparsity term λ·p(W) with p the Huber function of the entry moduli.
    """

    delta: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"Huber delta must be > 0, got {self.delta}")
        if self.lam < 0:
            raise ConfigError(f"Sparsity weight lambda must be >= 0, got {self.lam}")


def _check_domain(x: np.ndarray):
    if np.any(x < 0):
        raise DomainError("Surrogates are defined on x >= 0")


def _base_phi(x: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    g = spec.gamma
    kind = spec.kind
    if kind == SurrogateKind.NUCLEAR:
        v = x
    elif kind == SurrogateKind.LOGDET:
        v = np.log1p(x**2)
    elif kind in _POWER_KINDS:
        v = x**g
    elif kind == SurrogateKind.LOGARITHM:
        v = np.log(g + x)
    elif kind == SurrogateKind.LAPLACE:
        v = -np.expm1(-x / g)
    elif kind == SurrogateKind.ETP:
        v = np.expm1(-g * x) / np.expm1(-g)
    else:
        v = np.zeros_like(x)
    return spec.scale * v


def _base_dphi(x: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    g = spec.gamma
    kind = spec.kind
    if kind == SurrogateKind.NUCLEAR:
        v = np.ones_like(x)
    elif kind == SurrogateKind.LOGDET:
        v = 2 * x / (1 + x**2)
    elif kind in _POWER_KINDS:
        if spec.singular_at_zero and np.any(x == 0):
            raise SingularityError(
                f"Derivative of {kind.value} with gamma={g} is singular at 0, use epsilon > 0"
            )
        v = g * x ** (g - 1)
    elif kind == SurrogateKind.LOGARITHM:
        v = 1 / (g + x)
    elif kind == SurrogateKind.LAPLACE:
        v = np.exp(-x / g) / g
    elif kind == SurrogateKind.ETP:
        v = g * np.exp(-g * x) / -np.expm1(-g)
    else:
        v = np.zeros_like(x)
    return spec.scale * v


def _weighted(values: np.ndarray, spec: SurrogateSpec) -> np.ndarray:
    if not spec.is_weighted:
        return values
    if values.ndim == 0:
        raise ConfigError("Weighted Schatten surrogate needs an index, use phi_at")
    return values * spec.weight_vector(values.shape[-1])


def phi(x, spec: SurrogateSpec):
    """
    Evaluate φ at x >= 0. For the weighted kind, x must be the vector of
    singular values, weighted position-wise.

    :raises DomainError: If x < 0.
    :raises ConfigError: If weights are missing for the weighted kind.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_domain(x)
    result = _weighted(_base_phi(x, spec), spec)
    return float(result) if result.ndim == 0 else result


def dphi(x, spec: SurrogateSpec):
    """
    Analytic derivative φ'(x).

    :raises SingularityError: If x = 0 for a Schatten kind with gamma < 1.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_domain(x)
    result = _weighted(_base_dphi(x, spec), spec)
    return float(result) if result.ndim == 0 else result


def phi_at(i: int, x: float, spec: SurrogateSpec) -> float:
    """φ of the i-th singular value x, using weight i for the weighted kind."""
    v = float(_base_phi(np.asarray(x, dtype=np.float64), spec))
    if spec.is_weighted:
        if spec.weights is None:
            raise ConfigError("Weighted Schatten surrogate used without weights")
        v *= spec.weights[i]
    return v


def dphi_at(i: int, x: float, spec: SurrogateSpec) -> float:
    v = float(_base_dphi(np.asarray(x, dtype=np.float64), spec))
    if spec.is_weighted:
        if spec.weights is None:
            raise ConfigError("Weighted Schatten surrogate used without weights")
        v *= spec.weights[i]
    return v


def smoothed(s, spec: SurrogateSpec):
    """:return: φ(√(s² + ε²)) for a vector of s >= 0, position-weighted."""
    s = np.asarray(s, dtype=np.float64)
    return phi(np.sqrt(s**2 + spec.epsilon**2), spec)


def chain_grad(s, spec: SurrogateSpec) -> np.ndarray:
    """
    Derivative of s ↦ φ(√(s² + ε²)) for s >= 0. With ε = 0 this is φ'(s),
    taken one-sided at 0.
    """
    s = np.asarray(s, dtype=np.float64)
    if spec.epsilon == 0:
        return np.asarray(dphi(s, spec))
    r = np.sqrt(s**2 + spec.epsilon**2)
    return np.asarray(dphi(r, spec)) * (s / r)


def spectral_penalty(sigma, spec: SurrogateSpec) -> float:
    """
    :return: Σ_i φ(√(σ_i² + ε²)).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    return float(np.sum(smoothed(sigma, spec)))


def refresh_weights(spec: SurrogateSpec, sigma) -> SurrogateSpec:
    """
    New weights w_i = c / (σ_i + offset) from the singular values of the
    previous iterate. Other kinds are returned unchanged.

    :raises ConfigError: If the weighted kind has no weight constant.
    """
    if not spec.is_weighted:
        return spec
    if spec.weight_constant is None:
        raise ConfigError("Weighted Schatten surrogate needs a weight constant")
    sigma = np.asarray(sigma, dtype=np.float64)
    return spec.replace(weights=tuple(spec.weight_constant / (sigma + spec.weight_offset)))


def estimate_lipschitz_f(spec: SurrogateSpec, upper: float = 10.0, points: int = 20001) -> float:
    """
    Estimate of the Lipschitz constant L_f of s ↦ φ'(√(s² + ε²))·s/√(s² + ε²)
    on [0, upper], from finite slopes on a grid refined towards 0. Infinite for
    kinds singular at 0 without smoothing.
    """
    if spec.kind == SurrogateKind.ZERO or spec.scale == 0:
        return 0.0
    if spec.singular_at_zero and spec.epsilon == 0:
        return float("inf")
    unweighted = spec.replace(kind=SurrogateKind.SCHATTEN, weights=None) if spec.is_weighted else spec
    low = 1e-6 * max(spec.epsilon, 1e-3)
    grid = np.concatenate(([0.0], np.geomspace(low, upper, points)))
    g = chain_grad(grid, unweighted)
    slope = float(np.max(np.abs(np.diff(g) / np.diff(grid))))
    if spec.is_weighted:
        slope *= max(spec.weights) if spec.weights else 0.0
    return slope


def huber(w: QMatrix, delta: float) -> float:
    """
    p(W) = Σ_ij h(|W_ij|), h(t) = t²/(2δ) if t < δ else t - δ/2.
    """
    t = w.modulus()
    return float(np.sum(np.where(t < delta, t**2 / (2 * delta), t - delta / 2)))


def huber_grad(w: QMatrix, delta: float) -> QMatrix:
    """
    Gradient of :func:`huber` with respect to the four real components:
    W_ij/δ if |W_ij| < δ else W_ij/|W_ij|. It is 1/δ-Lipschitz.
    """
    t = w.modulus()
    factor = np.where(t < delta, 1.0 / delta, 1.0 / np.maximum(t, delta))
    return w * factor


class TestSurrogates(unittest.TestCase):
    def test_table_values(self):
        self.assertEqual(phi(0.0, SurrogateSpec(SurrogateKind.LAPLACE, gamma=1)), 0.0)
        self.assertAlmostEqual(phi(4.0, SurrogateSpec(SurrogateKind.SCHATTEN, gamma=0.5)), 2.0)
        self.assertAlmostEqual(phi(1.0, SurrogateSpec(SurrogateKind.LOGDET)), np.log(2))
        self.assertEqual(dphi(3.3, SurrogateSpec()), 1.0)
        self.assertAlmostEqual(
            dphi(1.0, SurrogateSpec(SurrogateKind.LAPLACE, gamma=1)), np.exp(-1), places=12
        )
        self.assertAlmostEqual(phi(1.0, SurrogateSpec(SurrogateKind.ETP, gamma=2)), 1.0)
        self.assertAlmostEqual(phi(2.0, SurrogateSpec(SurrogateKind.ETP, gamma=2, scale=3)), 3 * (1 - np.exp(-4)) / (1 - np.exp(-2)))
        self.assertEqual(phi(5.0, SurrogateSpec(SurrogateKind.ZERO)), 0.0)

    def test_derivative_finite_differences(self):
        rng = np.random.default_rng(7)
        h = 1e-6
        for kind in SurrogateKind:
            spec = SurrogateSpec(kind, gamma=0.5)
            if spec.is_weighted:
                spec = spec.replace(weights=(1.7,))
            for x in rng.uniform(0.05, 5.0, 100):
                if spec.is_weighted:
                    d = dphi_at(0, x, spec)
                    fd = (phi_at(0, x + h, spec) - phi_at(0, x - h, spec)) / (2 * h)
                else:
                    d = dphi(x, spec)
                    fd = (phi(x + h, spec) - phi(x - h, spec)) / (2 * h)
                self.assertLessEqual(abs(d - fd), 1e-5 * abs(d) + 1e-12, msg=f"{kind.value} at {x}")

    def test_monotone(self):
        rng = np.random.default_rng(0)
        x = np.sort(rng.uniform(0, 20, 500))
        for kind in SurrogateKind:
            if kind == SurrogateKind.WEIGHTED_SCHATTEN:
                continue
            for gamma in (0.3, 0.7, 1.0):
                values = phi(x, SurrogateSpec(kind, gamma=gamma))
                self.assertTrue(np.all(np.diff(values) >= -1e-12), kind.value)

    def test_spectral_penalty(self):
        self.assertEqual(spectral_penalty([3.0, 1.0], SurrogateSpec()), 4.0)
        spec = SurrogateSpec(SurrogateKind.LAPLACE, gamma=1, epsilon=0.01)
        self.assertAlmostEqual(spectral_penalty(np.zeros(5), spec), 5 * (1 - np.exp(-0.01)), places=14)
        sigma = np.array([2.0, 0.5, 0.1])
        spec = SurrogateSpec(SurrogateKind.LOGDET, epsilon=0.2)
        term_by_term = sum(phi(np.sqrt(s**2 + 0.04), spec) for s in sigma)
        self.assertAlmostEqual(spectral_penalty(sigma, spec), term_by_term, places=14)
        a = QMatrix.random(np.random.default_rng(1), 6, 4)
        sigma = qsvd(a).sigma
        self.assertAlmostEqual(spectral_penalty(sigma, SurrogateSpec()), float(np.sum(sigma)), delta=1e-10)

    def test_weighted(self):
        spec = SurrogateSpec(SurrogateKind.WEIGHTED_SCHATTEN, gamma=1.0, weight_constant=2.0)
        with self.assertRaises(ConfigError):
            phi([1.0, 2.0], spec)
        with self.assertRaises(ConfigError):
            phi_at(0, 1.0, spec)
        spec = refresh_weights(spec, [1.0, 0.0])
        np.testing.assert_allclose(spec.weights, [2.0 / 1.0001, 2.0 / 1e-4])
        np.testing.assert_allclose(phi([1.0, 2.0], spec), [2.0 / 1.0001, 4.0 / 1e-4])
        with self.assertRaises(ShapeError):
            phi([1.0, 2.0, 3.0], spec)
        with self.assertRaises(ConfigError):
            refresh_weights(spec.replace(weight_constant=None), [1.0])

    def test_validation(self):
        with self.assertRaises(ConfigError):
            SurrogateSpec(SurrogateKind.SCHATTEN, gamma=1.5)
        with self.assertRaises(ConfigError):
            SurrogateSpec(SurrogateKind.LAPLACE, gamma=0)
        with self.assertRaises(ConfigError):
            SurrogateSpec("bogus")
        with self.assertRaises(ConfigError):
            HuberSpec(delta=0)
        with self.assertRaises(DomainError):
            phi(-1.0, SurrogateSpec())
        self.assertEqual(SurrogateSpec("laplace").kind, SurrogateKind.LAPLACE)

    def test_singularity(self):
        spec = SurrogateSpec(SurrogateKind.SCHATTEN, gamma=0.5)
        with self.assertRaises(SingularityError):
            dphi(0.0, spec)
        with self.assertRaises(SingularityError):
            chain_grad([0.0, 1.0], spec)
        self.assertEqual(float(chain_grad(0.0, spec.replace(epsilon=0.01))), 0.0)
        self.assertEqual(estimate_lipschitz_f(spec), float("inf"))

    def test_chain_grad_and_lipschitz_estimate(self):
        spec = SurrogateSpec(SurrogateKind.NUCLEAR, epsilon=1.0)
        s = np.array([0.0, 1.0, 3.0])
        np.testing.assert_allclose(chain_grad(s, spec), s / np.sqrt(s**2 + 1))
        self.assertAlmostEqual(estimate_lipschitz_f(spec), 1.0, delta=1e-3)
        spec = SurrogateSpec(SurrogateKind.LOGDET)
        self.assertAlmostEqual(estimate_lipschitz_f(spec), 2.0, delta=1e-3)
        self.assertEqual(estimate_lipschitz_f(SurrogateSpec(SurrogateKind.ZERO)), 0.0)

    def test_huber(self):
        self.assertAlmostEqual(huber(QMatrix([[0.0]], [[2.0]]), 1.0), 1.5)
        self.assertAlmostEqual(huber(QMatrix([[0.3]], [[0.4]]), 1.0), 0.125)
        self.assertEqual(frobenius_norm(huber_grad(QMatrix.zeros(2, 2), 1.0)), 0.0)

    def test_huber_grad_finite_differences(self):
        rng = np.random.default_rng(2)
        delta = 1.0
        h = 1e-6
        for _ in range(100):
            # Moduli of about 2 straddle delta.
            w = QMatrix.random(rng, 2, 2)
            grad = huber_grad(w, delta).planes
            for c, i, j in np.ndindex(grad.shape):
                up = w.planes.copy()
                up[c, i, j] += h
                down = w.planes.copy()
                down[c, i, j] -= h
                fd = (huber(QMatrix.from_planes(up), delta) - huber(QMatrix.from_planes(down), delta)) / (2 * h)
                self.assertLessEqual(abs(grad[c, i, j] - fd), 1e-5 * max(abs(grad[c, i, j]), 1e-2))

    def test_huber_grad_lipschitz(self):
        rng = np.random.default_rng(3)
        for delta in (0.1, 1.0, 5.0):
            for _ in range(50):
                a, b = QMatrix.random(rng, 5, 5), QMatrix.random(rng, 5, 5) * 0.3
                lhs = frobenius_norm(huber_grad(a, delta) - huber_grad(b, delta))
                self.assertLessEqual(lhs, frobenius_norm(a - b) / delta + 1e-10)


if __name__ == "__main__":
    unittest.main()
