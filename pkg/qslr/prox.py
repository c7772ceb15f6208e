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
Proximal operator of the smoothed spectral penalty,

    argmin_X Σ_i φ(√(σ_i(X)² + ε²)) + μ/2 ‖X − X̂‖_F²,

reduced to singular values of X̂ and solved coordinate-wise by a
convex-concave procedure (CCP).
"""

import logging
import unittest
import warnings
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .exceptions import ConfigError
from .quaternion import QMatrix, conj_transpose, frobenius_norm, qmatmul
from .qsvd import qsvd, random_unitary
from .surrogates import (
    SurrogateKind,
    SurrogateSpec,
    chain_grad,
    dphi,
    smoothed,
    spectral_penalty,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProxProblem:
    """
    :param anchor: The matrix X̂.
    :param mu: Quadratic weight μ > 0.
    :param spec: Surrogate applied to the singular values.
    :param tol: CCP stopping tolerance on ‖σ_k − σ_(k−1)‖₂.
    :param max_iters: CCP iteration cap.
    """

    anchor: QMatrix
    mu: float
    spec: SurrogateSpec
    tol: float = 1e-10
    max_iters: int = 500

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError(f"Prox weight mu must be > 0, got {self.mu}")
        if not self.tol > 0:
            raise ConfigError(f"CCP tolerance must be > 0, got {self.tol}")
        if self.max_iters < 1:
            raise ConfigError(f"CCP needs at least one iteration, got {self.max_iters}")


@dataclass(frozen=True)
class CCPResult:
    sigma: np.ndarray
    iterations: int
    converged: bool
    # Total objective after each iteration, starting with the initial point.
    objectives: Tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class ProxResult:
    matrix: QMatrix
    sigma: np.ndarray
    sigma_hat: np.ndarray
    iterations: int
    converged: bool


def _coordinate_objective(s, sigma_hat, mu, spec) -> np.ndarray:
    return np.asarray(smoothed(s, spec)) + mu / 2 * (s - sigma_hat) ** 2


def _mm_step(s, sigma_hat, mu, spec) -> np.ndarray:
    # Minimizes the majorizer obtained by linearizing t ↦ φ(√(t + ε²)) at t = s².
    r = np.sqrt(s**2 + spec.epsilon**2)
    out = np.zeros_like(s)
    live = r > 0
    if np.any(live):
        # Zero radii stay at 0, the placeholder keeps dphi away from its singularity.
        d = np.asarray(dphi(np.where(live, r, 1.0), spec))
        c = d[live] / (2 * r[live])
        out[live] = mu * sigma_hat[live] / (mu + 2 * c)
    return out


def _ccp_gradient(s, spec, pinned) -> np.ndarray:
    if not np.any(pinned):
        return chain_grad(s, spec)
    # Entries pinned at 0 are never moved, their gradient is irrelevant.
    return np.where(pinned, 0.0, chain_grad(np.where(pinned, 1.0, s), spec))


def _descend(s, sigma_hat, mu, spec, pin_zeros, tol, max_iters):
    """
    Safeguarded CCP from ``s``. Returns (limit, coordinate objectives,
    iterations, converged, total objective per iteration).
    """
    f = _coordinate_objective(s, sigma_hat, mu, spec)
    objectives = [float(np.sum(f))]
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        pinned = (s == 0) if pin_zeros else np.zeros(len(s), dtype=bool)
        candidate = np.maximum(sigma_hat - _ccp_gradient(s, spec, pinned) / mu, 0.0)
        candidate[pinned] = 0.0
        f_candidate = _coordinate_objective(candidate, sigma_hat, mu, spec)
        bad = f_candidate > f
        if np.any(bad):
            fallback = _mm_step(s, sigma_hat, mu, spec)
            candidate = np.where(bad, fallback, candidate)
            f_candidate = _coordinate_objective(candidate, sigma_hat, mu, spec)
        # Majorize-minimize steps descend up to rounding.
        keep = f_candidate > f
        candidate = np.where(keep, s, candidate)
        f = np.where(keep, f, f_candidate)
        step = float(np.linalg.norm(candidate - s))
        s = candidate
        objectives.append(float(np.sum(f)))
        if step < tol:
            converged = True
            break
    return s, f, iterations, converged, objectives


def run_ccp(
    sigma_hat, mu: float, spec: SurrogateSpec, tol: float = 1e-10, max_iters: int = 500
) -> CCPResult:
    """
    Iterate σ_(k+1) = max(σ̂ − ∇φ(σ_k)/μ, 0), where ∇ is the derivative of
    s ↦ φ(√(s² + ε²)). A step that would increase a coordinate's objective is
    replaced by a majorize-minimize step in s², so the objective never
    increases. Each coordinate objective has at most a low and a high local
    minimizer, so the iteration runs twice, from σ_0 = 0 and from σ_0 = σ̂.
    The returned σ picks, per coordinate, the lowest objective among both CCP
    limits, the majorize-minimize limit from 0 and σ̂. ``objectives`` and
    ``iterations`` describe the run from 0.

    When φ' is singular at 0 and ε = 0 the iteration starts from σ̂ only,
    and coordinates reaching 0 stay there.

    :raises ConfigError: On negative singular values.
    """
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    if np.any(sigma_hat < 0):
        raise ConfigError("Singular values must be >= 0")
    if spec.is_weighted:
        spec.weight_vector(len(sigma_hat))
    if spec.kind == SurrogateKind.ZERO or len(sigma_hat) == 0:
        return CCPResult(sigma_hat.copy(), 0, True, ())

    pin_zeros = spec.singular_at_zero and spec.epsilon == 0
    start = sigma_hat.copy() if pin_zeros else np.zeros_like(sigma_hat)
    s, f, iterations, converged, objectives = _descend(start, sigma_hat, mu, spec, pin_zeros, tol, max_iters)
    candidates = [sigma_hat]
    if not pin_zeros:
        high, _, _, high_converged, _ = _descend(sigma_hat.copy(), sigma_hat, mu, spec, False, tol, max_iters)
        candidates.append(high)
        converged = converged and high_converged

    if not converged:
        warnings.warn(
            f"CCP did not converge in {max_iters} iterations", RuntimeWarning, stacklevel=2
        )
        logger.debug("CCP stopped after %d iterations without converging", max_iters)

    if spec.epsilon > 0:
        s_mm = np.zeros_like(sigma_hat)
        for _ in range(max_iters):
            nxt = _mm_step(s_mm, sigma_hat, mu, spec)
            done = np.linalg.norm(nxt - s_mm) < tol
            s_mm = nxt
            if done:
                break
        candidates.append(s_mm)
    best, f_best = s, f
    for other in candidates:
        f_other = _coordinate_objective(other, sigma_hat, mu, spec)
        better = f_other < f_best
        best = np.where(better, other, best)
        f_best = np.where(better, f_other, f_best)
    return CCPResult(best, iterations, converged, tuple(objectives))


def sigma_ccp(
    sigma_hat, mu: float, spec: SurrogateSpec, tol: float = 1e-10, max_iters: int = 500
) -> np.ndarray:
    """
    :return: The minimizing singular values, see :func:`run_ccp`.
    """
    return run_ccp(sigma_hat, mu, spec, tol, max_iters).sigma


def spectral_prox(problem: ProxProblem) -> ProxResult:
    """
    Proximal point of the spectral penalty at the anchor: U diag(σ*) V* with
    U, V from the thin QSVD of the anchor and σ* from :func:`run_ccp`.

    :raises NumericalError: If the QSVD fails.
    """
    anchor = problem.anchor
    r = min(anchor.shape)
    if frobenius_norm(anchor) == 0.0:
        zeros = np.zeros(r)
        return ProxResult(QMatrix.zeros(*anchor.shape), zeros, zeros, 0, True)
    dec = qsvd(anchor, full_matrices=False)
    ccp = run_ccp(dec.sigma, problem.mu, problem.spec, problem.tol, problem.max_iters)
    us = QMatrix.from_planes(dec.U.planes * ccp.sigma[None, None, :])
    matrix = qmatmul(us, conj_transpose(dec.V))
    return ProxResult(matrix, ccp.sigma, dec.sigma, ccp.iterations, ccp.converged)


def prox_objective(x: QMatrix, problem: ProxProblem) -> float:
    sigma = qsvd(x, full_matrices=False).sigma
    return spectral_penalty(sigma, problem.spec) + problem.mu / 2 * frobenius_norm(x - problem.anchor) ** 2


def scalar_prox_oracle(a: float, mu: float, spec: SurrogateSpec, grid_step: float = 1e-5, index: int = 0) -> float:
    """
    Brute-force minimizer of φ(√(s² + ε²)) + μ/2 (s − a)² over a grid of
    [0, a + 3/μ + 1].

    :param index: Weight position for the weighted kind.
    """
    if not grid_step > 0:
        raise ConfigError(f"Grid step must be > 0, got {grid_step}")
    s = np.arange(0.0, a + 3.0 / mu + 1.0 + grid_step, grid_step)
    if spec.is_weighted:
        weight = spec.weight_vector(len(spec.weights))[index]
        penalty = weight * np.asarray(smoothed(s, spec.replace(kind=SurrogateKind.SCHATTEN, weights=None)))
    else:
        penalty = np.asarray(smoothed(s, spec))
    return float(s[np.argmin(penalty + mu / 2 * (s - a) ** 2)])


class TestCCP(unittest.TestCase):
    def test_soft_threshold(self):
        res = run_ccp([3.0, 1.0], 1.0, SurrogateSpec())
        np.testing.assert_allclose(res.sigma, [2.0, 0.0], atol=1e-14)
        self.assertTrue(res.converged)
        self.assertLessEqual(res.iterations, 2)

    def test_zero_input(self):
        for kind in (SurrogateKind.NUCLEAR, SurrogateKind.LAPLACE, SurrogateKind.LOGDET):
            out = sigma_ccp(np.zeros(4), 1.5, SurrogateSpec(kind, gamma=1.0, epsilon=0.01))
            np.testing.assert_array_equal(out, np.zeros(4))

    def test_zero_surrogate(self):
        np.testing.assert_array_equal(sigma_ccp([2.0, 0.5], 3.0, SurrogateSpec(SurrogateKind.ZERO)), [2.0, 0.5])
        self.assertEqual(scalar_prox_oracle(1.3, 2.0, SurrogateSpec(SurrogateKind.ZERO), 1e-3), 1.3)

    def test_fixed_point(self):
        spec = SurrogateSpec(SurrogateKind.LOGDET, epsilon=0.1)
        mu = 3.0
        res = run_ccp([2.0, 1.1, 0.3], mu, spec)
        again = np.maximum(np.array([2.0, 1.1, 0.3]) - chain_grad(res.sigma, spec) / mu, 0.0)
        self.assertLess(np.linalg.norm(again - res.sigma), 1e-8)

    def test_objective_monotone(self):
        rng = np.random.default_rng(0)
        for kind in (SurrogateKind.SCHATTEN, SurrogateKind.LAPLACE, SurrogateKind.LOGDET, SurrogateKind.ETP):
            spec = SurrogateSpec(kind, gamma=0.5, epsilon=0.01)
            res = run_ccp(np.sort(rng.uniform(0, 3, 8))[::-1], 1.2, spec)
            self.assertTrue(np.all(np.diff(res.objectives) <= 1e-12), kind.value)

    def test_order_preserved(self):
        rng = np.random.default_rng(1)
        for kind in (SurrogateKind.SCHATTEN, SurrogateKind.LAPLACE, SurrogateKind.NUCLEAR):
            sigma_hat = np.sort(rng.uniform(0, 2, 10))[::-1]
            out = sigma_ccp(sigma_hat, 2.0, SurrogateSpec(kind, gamma=0.5, epsilon=0.01))
            self.assertTrue(np.all(np.diff(out) <= 1e-12), kind.value)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        specs = (
            SurrogateSpec(SurrogateKind.NUCLEAR, epsilon=0.01),
            SurrogateSpec(SurrogateKind.SCHATTEN, gamma=0.5, epsilon=0.01),
            SurrogateSpec(SurrogateKind.LAPLACE, gamma=0.5, epsilon=0.01),
            SurrogateSpec(SurrogateKind.LOGDET, epsilon=0.01),
            SurrogateSpec(SurrogateKind.ETP, gamma=2.0, epsilon=0.01),
        )
        for spec in specs:
            for mu in (0.5, 2.0, 10.0):
                sigma_hat = rng.uniform(0.0, 5.0, 50)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    out = sigma_ccp(sigma_hat, mu, spec)
                for a, s in zip(sigma_hat, out):
                    oracle = scalar_prox_oracle(a, mu, spec, 1e-5)
                    f = _coordinate_objective(np.array([s, oracle]), np.full(2, a), mu, spec)
                    msg = f"{spec.kind.value} mu={mu} a={a}"
                    self.assertLessEqual(f[0], f[1] + 2e-4, msg)
                    # A different argument is only acceptable at a near tie.
                    if abs(s - oracle) > 1e-3:
                        self.assertLess(abs(f[0] - f[1]), 1e-5, msg)

    def test_two_basins(self):
        # Low and high local minimizers; the high one is global here.
        spec = SurrogateSpec(SurrogateKind.SCHATTEN, gamma=0.5, epsilon=0.01)
        for a in (0.8861, 0.9147):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                s = sigma_ccp([a], 2.0, spec)[0]
            oracle = scalar_prox_oracle(a, 2.0, spec, 1e-5)
            self.assertGreater(s, 0.4)
            self.assertAlmostEqual(s, oracle, delta=1e-3)

    def test_nuclear_soft_threshold_grid(self):
        rng = np.random.default_rng(6)
        for mu in (0.5, 2.0, 10.0):
            sigma_hat = rng.uniform(0.0, 5.0, 50)
            out = sigma_ccp(sigma_hat, mu, SurrogateSpec())
            np.testing.assert_allclose(out, np.maximum(sigma_hat - 1.0 / mu, 0.0), rtol=0, atol=1e-10)

    def test_oracle_closed_forms(self):
        self.assertAlmostEqual(scalar_prox_oracle(3.0, 1.0, SurrogateSpec(), 1e-4), 2.0, delta=1e-4)
        self.assertEqual(scalar_prox_oracle(0.0, 1.0, SurrogateSpec(), 1e-4), 0.0)

    def test_singular_start(self):
        spec = SurrogateSpec(SurrogateKind.SCHATTEN, gamma=0.5)
        out = sigma_ccp([4.0, 0.1, 0.0], 1.0, spec)
        self.assertEqual(out[2], 0.0)
        self.assertGreater(out[0], 3.0)
        for a, s in zip([4.0, 0.1], out):
            self.assertAlmostEqual(s, scalar_prox_oracle(a, 1.0, spec, 1e-5), delta=2e-4)

    def test_weighted(self):
        spec = SurrogateSpec(SurrogateKind.WEIGHTED_SCHATTEN, gamma=1.0, weights=(0.1, 0.5, 2.0))
        out = sigma_ccp([3.0, 1.0, 1.0], 1.0, spec)
        np.testing.assert_allclose(out, [2.9, 0.5, 0.0], atol=1e-12)

    def test_non_convergence_warns(self):
        spec = SurrogateSpec(SurrogateKind.LOGDET, epsilon=0.01)
        with self.assertWarns(RuntimeWarning):
            res = run_ccp([5.0, 2.0], 1.0, spec, tol=1e-300, max_iters=2)
        self.assertFalse(res.converged)

    def test_negative_input(self):
        with self.assertRaises(ConfigError):
            sigma_ccp([-1.0], 1.0, SurrogateSpec())


class TestSpectralProx(unittest.TestCase):
    def test_nuclear_soft_threshold(self):
        anchor = QMatrix(np.diag([3.0, 1.0]))
        res = spectral_prox(ProxProblem(anchor, 1.0, SurrogateSpec()))
        np.testing.assert_allclose(res.sigma, [2.0, 0.0], atol=1e-12)
        self.assertLessEqual(frobenius_norm(res.matrix - QMatrix(np.diag([2.0, 0.0]))), 1e-10)
        self.assertTrue(res.converged)

    def test_large_mu_is_identity(self):
        anchor = QMatrix.random(np.random.default_rng(2), 6, 5)
        for kind in (SurrogateKind.NUCLEAR, SurrogateKind.LAPLACE, SurrogateKind.SCHATTEN):
            spec = SurrogateSpec(kind, gamma=0.5, epsilon=0.01)
            out = spectral_prox(ProxProblem(anchor, 1e9, spec)).matrix
            self.assertLessEqual(frobenius_norm(out - anchor), 1e-6 * frobenius_norm(anchor))

    def test_zero_anchor(self):
        res = spectral_prox(ProxProblem(QMatrix.zeros(3, 4), 1.0, SurrogateSpec()))
        self.assertEqual(res.matrix, QMatrix.zeros(3, 4))

    def test_descent(self):
        rng = np.random.default_rng(3)
        anchor = QMatrix.random(rng, 8, 6)
        for kind in (SurrogateKind.LOGDET, SurrogateKind.LAPLACE, SurrogateKind.ETP):
            problem = ProxProblem(anchor, 0.7, SurrogateSpec(kind, gamma=0.5, epsilon=0.01))
            out = spectral_prox(problem).matrix
            self.assertLessEqual(prox_objective(out, problem), prox_objective(anchor, problem) + 1e-9)

    def test_unitary_equivariance(self):
        rng = np.random.default_rng(4)
        anchor = QMatrix.random(rng, 6, 5)
        q1, q2 = random_unitary(rng, 6), random_unitary(rng, 5)
        spec = SurrogateSpec(SurrogateKind.LAPLACE, gamma=0.5, epsilon=0.01)
        a = spectral_prox(ProxProblem(anchor, 1.0, spec))
        b = spectral_prox(ProxProblem(q1 @ anchor @ q2, 1.0, spec))
        np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-7)

    def test_problem_validation(self):
        with self.assertRaises(ConfigError):
            ProxProblem(QMatrix.zeros(2, 2), 0.0, SurrogateSpec())


if __name__ == "__main__":
    unittest.main()
