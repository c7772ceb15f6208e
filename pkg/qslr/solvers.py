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
Proximal linearized ADMM solvers.

Denoising (PL-ADMM) solves

    min_X Σ φ(σ(X)) + λ p(𝒲X) + 1/(2τ²) ‖X − Y‖²

through the splitting 𝒲X = W, with augmented Lagrangian
ℒ = Σφ + λp(W) + 1/(2τ²)‖X − Y‖² + ⟨Λ, 𝒲X − W⟩ + β/2 ‖𝒲X − W‖².

Inpainting (PL-ADMM-NF) solves

    min_Z Σ φ(σ(Z)) + λ p(W)  s.t.  Z = W,  𝒫_Ω(𝒲^# W) = 𝒫_Ω(Y)

and returns X = 𝒲^# Z. Its augmented Lagrangian is
Σφ + λp(W) + ⟨Λ₁, Z − W⟩ + β₁/2 ‖Z − W‖² + ⟨Λ₂, 𝒫_Ω(𝒲^#W − Y)⟩ + β₂/2 ‖𝒫_Ω(𝒲^#W − Y)‖².

Data is expected in [0, 1]; τ is the noise standard deviation in those units.
"""

import dataclasses
import logging
import math
import time
import unittest
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np

from .assumptions import (
    AssumptionConstants,
    check_assumption_1,
    check_assumption_2,
    denoise_constants,
    inpaint_constants,
)
from .exceptions import ConfigError, DivergenceError, ShapeError
from .prox import ProxProblem, spectral_prox
from .quaternion import QMatrix, frobenius_norm, inner
from .qsvd import qsvd
from .surrogates import (
    HuberSpec,
    SurrogateKind,
    SurrogateSpec,
    huber,
    huber_grad,
    refresh_weights,
    spectral_penalty,
)
from .trace import IterationRecord, IterationTrace
from .transforms import OrthoTransform, TransformKind, make_transform

logger = logging.getLogger(__name__)

DENOISE_MAX_OUTER = 500
INPAINT_MAX_OUTER = 1000


class DeltaMode(str, Enum):
    TIERED = "tiered"
    FIXED = "fixed"


@dataclass(frozen=True)
class DeltaSchedule:
    """
    Huber threshold δ. In tiered mode δ starts at ``value`` and drops to the
    tier's δ once the residual is below the tier's threshold. δ never grows
    back.
    """

    mode: DeltaMode = DeltaMode.TIERED
    value: float = 1.0
    tiers: Tuple[Tuple[float, float], ...] = ((1e-2, 1e-2), (1e-3, 1e-4))

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", DeltaMode(self.mode))
        except ValueError as e:
            raise ConfigError(f"Unknown delta schedule mode {self.mode!r}") from e
        if not self.value > 0:
            raise ConfigError(f"Huber delta must be > 0, got {self.value}")
        tiers = tuple((float(t), float(d)) for t, d in self.tiers)
        if any(not (t > 0 and d > 0) for t, d in tiers):
            raise ConfigError("Delta tiers need positive thresholds and deltas")
        object.__setattr__(self, "tiers", tiers)

    @property
    def initial(self) -> float:
        return self.value

    def next(self, current: float, residual: float) -> float:
        """
        :return: δ for the next W-step, given the current δ and residual ε_k.
        """
        if self.mode == DeltaMode.FIXED:
            return self.value
        target = self.value
        for threshold, delta in self.tiers:
            if residual < threshold:
                target = min(target, delta)
        return min(current, target)


@dataclass(frozen=True)
class SolverConfig:
    """
    Parameters shared by both solvers.

    :param beta: Penalty β. For inpainting it is the default of β₁ and β₂.
    :param mu: Dual step factor μ in (0, 2).
    :param lam: Sparsity weight λ of the Huber term.
    :param tau: Noise standard deviation (denoising), 0 returns the data.
    :param L1: Proximal weight of the X (or Z) step.
    :param L2: Proximal weight of the W step.
    :param eta: Outer stopping tolerance η.
    :param eta_ccp: Inner CCP tolerance.
    :param max_outer: Outer iteration cap, solver dependent when None.
    :param divergence_factor: Abort when an iterate norm exceeds this many
        times ‖Y‖_F.
    :param record_timing: If False, traces store 0 as wall time.
    :param r: Constant r > 1 of the merit functions.
    :param kappa: Constant κ in (0, 1) of the parameter conditions.
    """

    beta: float = 10.0
    mu: float = 1.1
    lam: float = 0.0
    tau: float = 30.0 / 255.0
    L1: float = 1.0
    L2: float = 1.0
    eta: float = 1e-4
    eta_ccp: float = 1e-10
    ccp_max_iters: int = 500
    max_outer: Optional[int] = None
    delta_schedule: DeltaSchedule = DeltaSchedule()
    surrogate: SurrogateSpec = SurrogateSpec()
    transform: TransformKind = TransformKind.QDCT
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    divergence_factor: float = 1e6
    record_timing: bool = True
    r: float = 1.01
    kappa: float = 0.5

    def __post_init__(self):
        try:
            object.__setattr__(self, "transform", TransformKind(self.transform))
        except ValueError as e:
            raise ConfigError(f"Unknown transform {self.transform!r}") from e
        if not self.beta > 0:
            raise ConfigError(f"Penalty beta must be > 0, got {self.beta}")
        if not 0 < self.mu < 2:
            raise ConfigError(f"Dual step mu must be in (0, 2), got {self.mu}")
        if self.lam < 0:
            raise ConfigError(f"Sparsity weight lambda must be >= 0, got {self.lam}")
        if self.tau < 0:
            raise ConfigError(f"Noise level tau must be >= 0, got {self.tau}")
        if not (self.L1 > 0 and self.L2 > 0):
            raise ConfigError(f"Proximal weights must be > 0, got L1={self.L1}, L2={self.L2}")
        if not (self.eta > 0 and self.eta_ccp > 0):
            raise ConfigError("Stopping tolerances must be > 0")
        if self.ccp_max_iters < 1:
            raise ConfigError(f"ccp_max_iters must be >= 1, got {self.ccp_max_iters}")
        if self.max_outer is not None and self.max_outer < 1:
            raise ConfigError(f"max_outer must be >= 1, got {self.max_outer}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        if not self.divergence_factor > 1:
            raise ConfigError(f"divergence_factor must be > 1, got {self.divergence_factor}")
        if not self.r > 1:
            raise ConfigError(f"Merit constant r must be > 1, got {self.r}")
        if not 0 < self.kappa < 1:
            raise ConfigError(f"kappa must be in (0, 1), got {self.kappa}")

    @property
    def beta_1(self) -> float:
        return self.beta if self.beta1 is None else self.beta1

    @property
    def beta_2(self) -> float:
        return self.beta if self.beta2 is None else self.beta2

    @property
    def huber(self) -> HuberSpec:
        return HuberSpec(self.delta_schedule.initial, self.lam)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass(eq=False)
class DenoiseState:
    """
    Iterates of PL-ADMM after k outer iterations, with the previous ones kept
    for the Δ terms. step_delta is the δ used by the last W-step, delta the
    one for the next.
    """

    Y: QMatrix
    transform: OrthoTransform
    X: QMatrix
    W: QMatrix
    Lam: QMatrix
    prev_X: QMatrix
    prev_W: QMatrix
    prev_Lam: QMatrix
    spec: SurrogateSpec
    sigma: np.ndarray
    k: int = 0
    delta: float = 1.0
    step_delta: float = 1.0

    @property
    def dX(self) -> QMatrix:
        return self.X - self.prev_X

    @property
    def dW(self) -> QMatrix:
        return self.W - self.prev_W

    @property
    def dLam(self) -> QMatrix:
        return self.Lam - self.prev_Lam


@dataclass(eq=False)
class InpaintState:
    """
    Iterates of PL-ADMM-NF. The prev2_* fields hold iterate k − 2, needed by
    the merit function 𝒯_k.
    """

    Y: QMatrix
    mask: np.ndarray
    transform: OrthoTransform
    Z: QMatrix
    W: QMatrix
    Lam1: QMatrix
    Lam2: QMatrix
    prev_Z: QMatrix
    prev_W: QMatrix
    prev_Lam1: QMatrix
    prev_Lam2: QMatrix
    prev2_Z: QMatrix
    prev2_W: QMatrix
    prev2_Lam1: QMatrix
    spec: SurrogateSpec
    sigma: np.ndarray
    k: int = 0
    delta: float = 1.0
    step_delta: float = 1.0

    def observed_gap(self) -> QMatrix:
        """:return: 𝒫_Ω(𝒲^#(W) − Y)."""
        return (self.transform.adjoint(self.W) - self.Y) * self.mask.astype(np.float64)


@dataclass
class SolverResult:
    """
    Output of a solver run. Unpacks as ``x, trace``.
    """

    x: QMatrix
    trace: IterationTrace
    converged: bool
    iterations: int
    state: object

    def __iter__(self):
        yield self.x
        yield self.trace


def residual(state) -> float:
    """
    Stopping quantity: ‖ΔX‖ + ‖ΔW‖ + ‖𝒲X − W‖ for denoising,
    ‖Z − W‖ + ‖𝒫_Ω(𝒲^#W) − 𝒫_Ω(Y)‖ for inpainting.
    """
    if isinstance(state, InpaintState):
        return frobenius_norm(state.Z - state.W) + frobenius_norm(state.observed_gap())
    gap = frobenius_norm(state.transform.forward(state.X) - state.W)
    return frobenius_norm(state.dX) + frobenius_norm(state.dW) + gap


def primal_gaps(state) -> Tuple[float, float]:
    if isinstance(state, InpaintState):
        return frobenius_norm(state.Z - state.W), frobenius_norm(state.observed_gap())
    return frobenius_norm(state.transform.forward(state.X) - state.W), 0.0


def lagrangian(state, cfg: SolverConfig) -> float:
    """
    Augmented Lagrangian at the state, with the surrogate weights and Huber δ
    of the last iteration.
    """
    penalty = spectral_penalty(state.sigma, state.spec) + cfg.lam * huber(state.W, state.step_delta)
    if isinstance(state, InpaintState):
        c1 = state.Z - state.W
        c2 = state.observed_gap()
        return (
            penalty
            + inner(state.Lam1, c1)
            + cfg.beta_1 / 2 * frobenius_norm(c1) ** 2
            + inner(state.Lam2, c2)
            + cfg.beta_2 / 2 * frobenius_norm(c2) ** 2
        )
    c = state.transform.forward(state.X) - state.W
    data = frobenius_norm(state.X - state.Y) ** 2 / (2 * cfg.tau**2) if cfg.tau > 0 else 0.0
    return penalty + data + inner(state.Lam, c) + cfg.beta / 2 * frobenius_norm(c) ** 2


def objective(state, cfg: SolverConfig) -> float:
    """Model objective: penalties plus the data term for denoising."""
    value = spectral_penalty(state.sigma, state.spec) + cfg.lam * huber(state.W, state.step_delta)
    if isinstance(state, DenoiseState) and cfg.tau > 0:
        value += frobenius_norm(state.X - state.Y) ** 2 / (2 * cfg.tau**2)
    return value


def merit_R(state: DenoiseState, cfg: SolverConfig, constants: AssumptionConstants) -> float:
    """
    ℛ_k = ℒ_β(X_k, W_k, Λ_k) + r ς₀ ‖ΔW_k‖² + r ς₂ ‖ΔΛ_k‖².
    """
    v0, _, v2 = constants.varsigma[:3]
    r = constants.r
    return (
        lagrangian(state, cfg)
        + r * v0 * frobenius_norm(state.dW) ** 2
        + r * v2 * frobenius_norm(state.dLam) ** 2
    )


def merit_T(state: InpaintState, cfg: SolverConfig, constants: AssumptionConstants) -> float:
    """
    𝒯_k = ℒ + 2rθ₁‖ΔZ_k‖² + rθ₁‖ΔZ_(k−1)‖² + 2rθ₂‖ΔW_k‖² + rθ₂‖ΔW_(k−1)‖²
    + rθ₃‖ΔΛ₁,k‖² + rθ₄‖ΔΛ₁,(k−1)‖² + rθ₅‖ΔΛ₂,k‖². NaN before k = 2.
    """
    if state.k < 2:
        return math.nan
    t = constants.theta
    r = constants.r

    def sq(a, b):
        return frobenius_norm(a - b) ** 2

    return (
        lagrangian(state, cfg)
        + 2 * r * t["theta1"] * sq(state.Z, state.prev_Z)
        + r * t["theta1"] * sq(state.prev_Z, state.prev2_Z)
        + 2 * r * t["theta2"] * sq(state.W, state.prev_W)
        + r * t["theta2"] * sq(state.prev_W, state.prev2_W)
        + r * t["theta3"] * sq(state.Lam1, state.prev_Lam1)
        + r * t["theta4"] * sq(state.prev_Lam1, state.prev2_Lam1)
        + r * t["theta5"] * sq(state.Lam2, state.prev_Lam2)
    )


def subgradient_bound(state: DenoiseState, cfg: SolverConfig, constants: AssumptionConstants) -> Tuple[float, float]:
    """
    Assemble the subgradient (D_X, D_W, D_Λ) of ℒ_β at the current iterate
    from the last step and compare it to π(‖ΔX‖ + ‖ΔW‖ + ‖ΔΛ‖).
    D_X carries +𝒲^#ΔΛ, since ∂/∂X ⟨Λ, 𝒲X − W⟩ = +𝒲^#Λ.

    :return: (norm of the subgradient, bound).
    """
    t = state.transform
    dx, dw, dl = state.dX, state.dW, state.dLam
    d_x = t.adjoint(dl) - t.adjoint(dw) * cfg.beta - dx * cfg.L1
    grad_change = huber_grad(state.W, state.step_delta) - huber_grad(state.prev_W, state.step_delta)
    d_w = grad_change * cfg.lam - dl - dw * cfg.L2
    d_l = dl / (cfg.beta * cfg.mu)
    norm = math.sqrt(sum(frobenius_norm(d) ** 2 for d in (d_x, d_w, d_l)))
    bound = constants.pi * (frobenius_norm(dx) + frobenius_norm(dw) + frobenius_norm(dl))
    return norm, bound


def apply_g_operator(w: QMatrix, transform: OrthoTransform, mask: np.ndarray, beta1: float, beta2: float, L2: float) -> QMatrix:
    """𝒢(W) = (β₁ + L2) W + β₂ 𝒲 𝒫_Ω^# 𝒫_Ω 𝒲^# (W)."""
    masked = transform.adjoint(w) * mask.astype(np.float64)
    return w * (beta1 + L2) + transform.forward(masked) * beta2


def solve_g_operator(
    v: QMatrix,
    transform: OrthoTransform,
    mask: np.ndarray,
    beta1: float,
    beta2: float,
    L2: float,
    method: str = "exact",
    tol: float = 1e-12,
    max_iters: int = 10000,
) -> QMatrix:
    """
    Solve 𝒢(W) = V. Since 𝒲 is orthogonal, 𝒢 = 𝒲 ∘ D ∘ 𝒲^# with D the
    entrywise product by β₁ + L2 + β₂·mask, which the exact method inverts.
    The gradient method iterates W ← W − (𝒢W − V)/(β₁ + L2 + β₂).

    :raises ConfigError: On an unknown method.
    """
    if method == "exact":
        diag = beta1 + L2 + beta2 * mask.astype(np.float64)
        return transform.forward(transform.adjoint(v) / diag)
    if method != "gradient":
        raise ConfigError(f"Unknown G operator solver {method!r}")
    step = 1.0 / (beta1 + L2 + beta2)
    w = v * step
    target = tol * max(frobenius_norm(v), np.finfo(float).tiny)
    for _ in range(max_iters):
        r = apply_g_operator(w, transform, mask, beta1, beta2, L2) - v
        if frobenius_norm(r) <= target:
            break
        w = w - r * step
    return w


class _Guard:
    def __init__(self, y: QMatrix, factor: float):
        norm = frobenius_norm(y)
        self.limit = factor * (norm if norm > 0 else 1.0)

    def check(self, k: int, trace: IterationTrace, **iterates: QMatrix):
        """
        :raises DivergenceError: If an iterate is not finite or too large.
        """
        for name, m in iterates.items():
            n = frobenius_norm(m)
            if not math.isfinite(n) or n > self.limit:
                raise DivergenceError(
                    f"Iterate {name} diverged at iteration {k} (norm {n:.3e})", trace
                )


def _weighted_spec(cfg: SolverConfig, previous_sigma: np.ndarray, anchor: QMatrix) -> SurrogateSpec:
    # Weights come from the previous iterate, or from the anchor when it is 0.
    spec = cfg.surrogate
    if not spec.is_weighted:
        return spec
    sigma = previous_sigma
    if not np.any(sigma > 0) and frobenius_norm(anchor) > 0:
        sigma = qsvd(anchor, full_matrices=False).sigma
    return refresh_weights(spec, sigma)


def _elapsed_ms(cfg: SolverConfig, start: float) -> float:
    return (time.perf_counter() - start) * 1000.0 if cfg.record_timing else 0.0


def pl_admm_denoise(
    y: QMatrix,
    cfg: SolverConfig,
    transform: Optional[OrthoTransform] = None,
    callback: Optional[Callable[[DenoiseState], None]] = None,
) -> SolverResult:
    """
    Run PL-ADMM from X₀ = Y, W₀ = 0, Λ₀ = 0.

    Each iteration combines the data, constraint and proximal quadratics into
    one prox problem with anchor
    X̂ = [Y/τ² + β𝒲^#(W_k − Λ_k/β) + L1·X_k]·τ²/(τ²(β + L1) + 1) and weight
    μ = (τ²(β + L1) + 1)/τ², then takes the closed form W-step and the dual
    step Λ += μβ(𝒲X − W).

    :param y: Noisy matrix, values in [0, 1].
    :param transform: Defaults to cfg.transform sized like y.
    :param callback: Called with the state after each iteration.
    :raises DivergenceError: If iterates become non-finite or explode.
    """
    m, n = y.shape
    transform = transform or make_transform(cfg.transform, m, n)
    transform.check_dimension(y)
    zero = QMatrix.zeros(m, n)
    delta = cfg.delta_schedule.initial
    sigma_y = qsvd(y, full_matrices=False).sigma if (cfg.surrogate.is_weighted or cfg.tau == 0) else np.zeros(min(m, n))
    state = DenoiseState(
        Y=y, transform=transform, X=y, W=zero, Lam=zero, prev_X=y, prev_W=zero, prev_Lam=zero,
        spec=cfg.surrogate, sigma=sigma_y, delta=delta, step_delta=delta,
    )
    guard = _Guard(y, cfg.divergence_factor)
    trace = IterationTrace()
    constants = {}
    max_outer = cfg.max_outer or DENOISE_MAX_OUTER
    tau2 = cfg.tau**2
    converged = False
    eps = math.inf

    for k in range(1, max_outer + 1):
        start = time.perf_counter()
        if cfg.tau == 0:
            spec = _weighted_spec(cfg, state.sigma, y)
            x, sigma = y, sigma_y
        else:
            back = transform.adjoint(state.W - state.Lam / cfg.beta)
            scale = tau2 / (tau2 * (cfg.beta + cfg.L1) + 1)
            anchor = (y / tau2 + back * cfg.beta + state.X * cfg.L1) * scale
            mu_eff = (tau2 * (cfg.beta + cfg.L1) + 1) / tau2
            spec = _weighted_spec(cfg, state.sigma, anchor)
            prox = spectral_prox(ProxProblem(anchor, mu_eff, spec, cfg.eta_ccp, cfg.ccp_max_iters))
            x, sigma = prox.matrix, prox.sigma

        wx = transform.forward(x)
        grad = huber_grad(state.W, delta) * cfg.lam
        w = (wx * cfg.beta + state.Lam + state.W * cfg.L2 - grad) / (cfg.beta + cfg.L2)
        lam = state.Lam + (wx - w) * (cfg.mu * cfg.beta)

        state.prev_X, state.prev_W, state.prev_Lam = state.X, state.W, state.Lam
        state.X, state.W, state.Lam = x, w, lam
        state.spec, state.sigma, state.k, state.step_delta = spec, sigma, k, delta
        guard.check(k, trace, X=x, W=w, Lambda=lam)

        eps = residual(state)
        if delta not in constants:
            constants[delta] = denoise_constants(cfg, delta, cfg.r, cfg.kappa)
        gap, _ = primal_gaps(state)
        trace.append(
            IterationRecord(
                k=k,
                eps_k=eps,
                gap1=gap,
                gap2=0.0,
                objective=objective(state, cfg),
                merit=merit_R(state, cfg, constants[delta]),
                dX=frobenius_norm(state.dX),
                dW=frobenius_norm(state.dW),
                dLambda1=frobenius_norm(state.dLam),
                dLambda2=0.0,
                wall_ms=_elapsed_ms(cfg, start),
            )
        )
        logger.debug("PL-ADMM k=%d eps=%.3e delta=%g", k, eps, delta)
        delta = cfg.delta_schedule.next(delta, eps)
        state.delta = delta
        if callback is not None:
            callback(state)
        if eps < cfg.eta:
            converged = True
            break

    logger.info(
        "PL-ADMM stopped after %d iterations, residual %.3e (%s)",
        state.k, eps, "converged" if converged else "iteration cap",
    )
    return SolverResult(state.X, trace, converged, state.k, state)


def pl_admm_nf_inpaint(
    y: QMatrix,
    mask,
    cfg: SolverConfig,
    transform: Optional[OrthoTransform] = None,
    callback: Optional[Callable[[InpaintState], None]] = None,
    g_method: str = "exact",
) -> SolverResult:
    """
    Run PL-ADMM-NF from Z₀ = W₀ = Λ₁ = Λ₂ = 0 and return X = 𝒲^#(Z).

    Z-step: prox at (β₁W_k − Λ₁ + L1·Z_k)/(β₁ + L1) with weight β₁ + L1.
    W-step: W = 𝒢⁻¹(β₁Z + Λ₁ + 𝒲𝒫_Ω^#(β₂𝒫_Ω(Y) − Λ₂) + L2·W_k − λ∇p(W_k)).
    Dual steps: Λ₁ += μβ₁(Z − W), Λ₂ += μβ₂𝒫_Ω(𝒲^#W − Y).

    :param y: Observed matrix, values off the mask are ignored.
    :param mask: Boolean array (or object with an ``observed`` array), True
        where Y is observed.
    :param g_method: "exact" or "gradient", see :func:`solve_g_operator`.
    :raises ShapeError: If mask and y differ in shape.
    :raises ConfigError: If nothing is observed.
    :raises DivergenceError: If iterates become non-finite or explode.
    """
    mask = np.asarray(getattr(mask, "observed", mask), dtype=bool)
    if mask.shape != y.shape:
        raise ShapeError(f"Mask shape {mask.shape} does not match image shape {y.shape}")
    if not mask.any():
        raise ConfigError("Observation mask is empty")
    m, n = y.shape
    transform = transform or make_transform(cfg.transform, m, n)
    transform.check_dimension(y)
    maskf = mask.astype(np.float64)
    y_obs = y * maskf
    b1, b2 = cfg.beta_1, cfg.beta_2
    zero = QMatrix.zeros(m, n)
    delta = cfg.delta_schedule.initial
    state = InpaintState(
        Y=y_obs, mask=mask, transform=transform, Z=zero, W=zero, Lam1=zero, Lam2=zero,
        prev_Z=zero, prev_W=zero, prev_Lam1=zero, prev_Lam2=zero,
        prev2_Z=zero, prev2_W=zero, prev2_Lam1=zero,
        spec=cfg.surrogate, sigma=np.zeros(min(m, n)), delta=delta, step_delta=delta,
    )
    guard = _Guard(y_obs, cfg.divergence_factor)
    trace = IterationTrace()
    constants = {}
    max_outer = cfg.max_outer or INPAINT_MAX_OUTER
    converged = False
    eps = math.inf

    for k in range(1, max_outer + 1):
        start = time.perf_counter()
        anchor = (state.W * b1 - state.Lam1 + state.Z * cfg.L1) / (b1 + cfg.L1)
        spec = _weighted_spec(cfg, state.sigma, anchor)
        prox = spectral_prox(ProxProblem(anchor, b1 + cfg.L1, spec, cfg.eta_ccp, cfg.ccp_max_iters))
        z = prox.matrix

        rhs = (
            z * b1
            + state.Lam1
            + transform.forward(y_obs * b2 - state.Lam2)
            + state.W * cfg.L2
            - huber_grad(state.W, delta) * cfg.lam
        )
        w = solve_g_operator(rhs, transform, mask, b1, b2, cfg.L2, method=g_method)
        lam1 = state.Lam1 + (z - w) * (cfg.mu * b1)
        gap_img = (transform.adjoint(w) - y_obs) * maskf
        lam2 = state.Lam2 + gap_img * (cfg.mu * b2)

        state.prev2_Z, state.prev2_W, state.prev2_Lam1 = state.prev_Z, state.prev_W, state.prev_Lam1
        state.prev_Z, state.prev_W = state.Z, state.W
        state.prev_Lam1, state.prev_Lam2 = state.Lam1, state.Lam2
        state.Z, state.W, state.Lam1, state.Lam2 = z, w, lam1, lam2
        state.spec, state.sigma, state.k, state.step_delta = spec, prox.sigma, k, delta
        guard.check(k, trace, Z=z, W=w, Lambda1=lam1, Lambda2=lam2)

        gap1 = frobenius_norm(z - w)
        gap2 = frobenius_norm(gap_img)
        eps = gap1 + gap2
        if delta not in constants:
            constants[delta] = inpaint_constants(cfg, delta, cfg.r, cfg.kappa)
        trace.append(
            IterationRecord(
                k=k,
                eps_k=eps,
                gap1=gap1,
                gap2=gap2,
                objective=objective(state, cfg),
                merit=merit_T(state, cfg, constants[delta]),
                dX=frobenius_norm(z - state.prev_Z),
                dW=frobenius_norm(w - state.prev_W),
                dLambda1=frobenius_norm(lam1 - state.prev_Lam1),
                dLambda2=frobenius_norm(lam2 - state.prev_Lam2),
                wall_ms=_elapsed_ms(cfg, start),
            )
        )
        logger.debug("PL-ADMM-NF k=%d eps=%.3e delta=%g", k, eps, delta)
        delta = cfg.delta_schedule.next(delta, eps)
        state.delta = delta
        if callback is not None:
            callback(state)
        if eps < cfg.eta:
            converged = True
            break

    logger.info(
        "PL-ADMM-NF stopped after %d iterations, residual %.3e (%s)",
        state.k, eps, "converged" if converged else "iteration cap",
    )
    return SolverResult(transform.adjoint(state.Z), trace, converged, state.k, state)


def _low_rank(rows, cols, rank, seed) -> QMatrix:
    from .imaging import encode, synthetic_low_rank_image

    return encode(synthetic_low_rank_image(rows, cols, rank, seed))


class TestDeltaSchedule(unittest.TestCase):
    def test_tiers(self):
        s = DeltaSchedule()
        self.assertEqual(s.next(1.0, 0.5), 1.0)
        self.assertEqual(s.next(1.0, 5e-3), 1e-2)
        self.assertEqual(s.next(1e-2, 5e-4), 1e-4)
        # Never loosens again.
        self.assertEqual(s.next(1e-4, 0.5), 1e-4)

    def test_fixed(self):
        s = DeltaSchedule(mode="fixed", value=0.5)
        self.assertEqual(s.next(0.5, 1e-9), 0.5)
        with self.assertRaises(ConfigError):
            DeltaSchedule(mode="adaptive")


class TestSolverConfig(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ConfigError):
            SolverConfig(mu=2.0)
        with self.assertRaises(ConfigError):
            SolverConfig(transform="wavelet")
        with self.assertRaises(ConfigError):
            SolverConfig(beta=0.0)
        cfg = SolverConfig(beta=5.0, beta2=7.0)
        self.assertEqual((cfg.beta_1, cfg.beta_2), (5.0, 7.0))
        self.assertEqual(cfg.replace(tau=0.0).tau, 0.0)
        self.assertEqual(SolverConfig(transform="identity").transform, TransformKind.IDENTITY)


class TestGOperator(unittest.TestCase):
    def test_inverse(self):
        rng = np.random.default_rng(0)
        v = QMatrix.random(rng, 12, 10)
        mask = rng.uniform(size=(12, 10)) < 0.6
        t = make_transform("qdct", 12, 10)
        w = solve_g_operator(v, t, mask, 10.0, 10.0, 1.0)
        self.assertLessEqual(frobenius_norm(apply_g_operator(w, t, mask, 10.0, 10.0, 1.0) - v), 1e-10 * frobenius_norm(v))
        back = solve_g_operator(apply_g_operator(v, t, mask, 10.0, 10.0, 1.0), t, mask, 10.0, 10.0, 1.0)
        self.assertLessEqual(frobenius_norm(back - v), 1e-10 * frobenius_norm(v))
        gd = solve_g_operator(v, t, mask, 10.0, 10.0, 1.0, method="gradient")
        self.assertLessEqual(frobenius_norm(gd - w), 1e-9 * frobenius_norm(w))
        with self.assertRaises(ConfigError):
            solve_g_operator(v, t, mask, 10.0, 10.0, 1.0, method="cg")


class TestDenoise(unittest.TestCase):
    def test_zero_problem(self):
        cfg = SolverConfig(lam=0.0)
        res = pl_admm_denoise(QMatrix.zeros(6, 5), cfg)
        self.assertTrue(res.converged)
        self.assertEqual(res.iterations, 1)
        self.assertEqual(res.x, QMatrix.zeros(6, 5))

    def test_tau_zero_returns_data(self):
        y = _low_rank(8, 8, 2, seed=1)
        x, trace = pl_admm_denoise(y, SolverConfig(tau=0.0, lam=0.1, max_outer=50))
        self.assertEqual(x, y)
        self.assertGreater(len(trace), 0)

    def test_zero_surrogate_returns_anchor(self):
        rng = np.random.default_rng(2)
        y = QMatrix.random(rng, 6, 6)
        cfg = SolverConfig(surrogate=SurrogateSpec(SurrogateKind.ZERO), tau=0.2, max_outer=1)
        x, _ = pl_admm_denoise(y, cfg)
        tau2 = 0.04
        expected = (y / tau2 + y * cfg.L1) * (tau2 / (tau2 * (cfg.beta + cfg.L1) + 1))
        self.assertLessEqual(frobenius_norm(x - expected), 1e-12 * frobenius_norm(y))

    def test_soft_threshold_and_dual_identity(self):
        rng = np.random.default_rng(3)
        y = _low_rank(10, 8, 2, seed=3) + QMatrix.random(rng, 10, 8, pure=True) * 0.05
        cfg = SolverConfig(lam=0.0, tau=0.1, max_outer=6)
        tau2 = cfg.tau**2
        checked = []

        def check(state: DenoiseState):
            t = state.transform
            back = t.adjoint(state.prev_W - state.prev_Lam / cfg.beta)
            scale = tau2 / (tau2 * (cfg.beta + cfg.L1) + 1)
            anchor = (state.Y / tau2 + back * cfg.beta + state.prev_X * cfg.L1) * scale
            mu_eff = 1 / scale
            dec = qsvd(anchor, full_matrices=False)
            shrunk = np.maximum(dec.sigma - 1 / mu_eff, 0)
            expected = QMatrix.from_planes(dec.U.planes * shrunk[None, None, :]) @ dec.V.H
            self.assertLessEqual(frobenius_norm(state.X - expected), 1e-10 * frobenius_norm(anchor))
            lhs = state.dLam
            rhs = (t.forward(state.X) - state.W) * (cfg.mu * cfg.beta)
            self.assertLessEqual(np.max(np.abs((lhs - rhs).planes)), 1e-12)
            checked.append(state.k)

        pl_admm_denoise(y, cfg, callback=check)
        self.assertEqual(checked, [1, 2, 3, 4, 5, 6])

    def test_convergence_and_merit_descent(self):
        rng = np.random.default_rng(4)
        truth = _low_rank(32, 32, 3, seed=4)
        tau = 20 / 255
        y = truth + QMatrix.random(rng, 32, 32, pure=True) * tau
        cfg = SolverConfig(
            beta=10.0,
            mu=1.1,
            lam=0.3,
            tau=tau,
            surrogate=SurrogateSpec(SurrogateKind.SCHATTEN, gamma=0.5, epsilon=0.01),
            delta_schedule=DeltaSchedule(mode="fixed", value=1.0),
            max_outer=500,
            record_timing=False,
        )
        self.assertTrue(check_assumption_1(cfg).passed)
        bounds = []

        def check(state: DenoiseState):
            norm, bound = subgradient_bound(state, cfg, denoise_constants(cfg, state.step_delta))
            bounds.append(norm <= bound + 1e-12)

        res = pl_admm_denoise(y, cfg, callback=check)
        self.assertTrue(res.converged)
        self.assertLess(res.trace.last.eps_k, 1e-4)
        self.assertTrue(all(bounds))
        merits = res.trace.column("merit")
        for prev, cur in zip(merits[4:], merits[5:]):
            self.assertLessEqual(cur, prev + 1e-8 * abs(prev) + 1e-12)
        self.assertLess(frobenius_norm(res.x), 10 * frobenius_norm(y))

    def test_divergence_guard(self):
        y = QMatrix(np.ones((4, 4)))
        cfg = SolverConfig(divergence_factor=1.01, tau=1.0, lam=0.0, surrogate=SurrogateSpec(SurrogateKind.ZERO))

        def blow_up(state):
            state.Lam = state.Lam * 1e9

        with self.assertRaises(DivergenceError) as ctx:
            pl_admm_denoise(y, cfg, callback=blow_up)
        self.assertIsInstance(ctx.exception.trace, IterationTrace)


class TestInpaint(unittest.TestCase):
    def test_full_mask_without_regularization(self):
        y = QMatrix.random(np.random.default_rng(5), 16, 16)
        cfg = SolverConfig(lam=0.0, surrogate=SurrogateSpec(SurrogateKind.ZERO))
        res = pl_admm_nf_inpaint(y, np.ones((16, 16), dtype=bool), cfg)
        self.assertTrue(res.converged)
        self.assertLessEqual(frobenius_norm(res.x - y), 1e-3 * frobenius_norm(y))

    def test_mask_checks(self):
        y = QMatrix.zeros(4, 4)
        with self.assertRaises(ShapeError):
            pl_admm_nf_inpaint(y, np.ones((4, 5), dtype=bool), SolverConfig())
        with self.assertRaises(ConfigError):
            pl_admm_nf_inpaint(y, np.zeros((4, 4), dtype=bool), SolverConfig())

    def test_merit_descent_full_mask(self):
        truth = _low_rank(32, 32, 2, seed=6)
        cfg = SolverConfig(
            mu=1.1,
            L1=2.0,
            L2=1.0,
            beta1=300.0,
            beta2=6000.0,
            lam=0.3,
            surrogate=SurrogateSpec(SurrogateKind.NUCLEAR, epsilon=1.0),
            delta_schedule=DeltaSchedule(mode="fixed", value=1.0),
            max_outer=200,
            record_timing=False,
        )
        self.assertTrue(check_assumption_2(cfg, observed_fraction=1.0).passed)
        res = pl_admm_nf_inpaint(truth, np.ones((32, 32), dtype=bool), cfg)
        merits = res.trace.column("merit")
        self.assertTrue(math.isnan(merits[0]))
        for prev, cur in zip(merits[4:], merits[5:]):
            self.assertLessEqual(cur, prev + 1e-8 * abs(prev) + 1e-12)

    def test_half_mask_recovery(self):
        rng = np.random.default_rng(7)
        truth = _low_rank(48, 48, 2, seed=7)
        mask = rng.uniform(size=(48, 48)) >= 0.5
        cfg = SolverConfig(
            beta=10.0, lam=0.0, surrogate=SurrogateSpec(SurrogateKind.NUCLEAR, epsilon=0.01), record_timing=False
        )
        res = pl_admm_nf_inpaint(truth, mask, cfg)
        self.assertTrue(res.converged)
        self.assertLessEqual(res.trace.last.gap2, cfg.eta)
        mse_fill = np.mean((truth * mask.astype(float) - truth).planes[1:] ** 2)
        mse_out = np.mean((res.x - truth).planes[1:] ** 2)
        # At least 5 dB better than filling the holes with zeros.
        self.assertGreaterEqual(10 * np.log10(mse_fill / mse_out), 5.0)
        self.assertEqual(len(res.trace.column("merit")), res.iterations)

    def test_merit_descent_half_mask(self):
        rng = np.random.default_rng(8)
        truth = _low_rank(32, 32, 3, seed=8)
        mask = rng.uniform(size=(32, 32)) >= 0.5
        y = truth * mask.astype(float)
        cfg = SolverConfig(
            mu=1.1,
            L1=2.0,
            L2=1.0,
            beta1=300.0,
            beta2=6000.0,
            lam=0.3,
            surrogate=SurrogateSpec(SurrogateKind.NUCLEAR, epsilon=1.0),
            delta_schedule=DeltaSchedule(mode="fixed", value=1.0),
            max_outer=500,
            record_timing=False,
        )
        self.assertTrue(check_assumption_2(cfg, observed_fraction=float(mask.mean())).passed)
        limit = 10 * frobenius_norm(y)
        norms = []

        def check(state: InpaintState):
            norms.append(max(frobenius_norm(state.Z), frobenius_norm(state.W)))

        res = pl_admm_nf_inpaint(y, mask, cfg, callback=check)
        self.assertTrue(res.converged)
        self.assertLessEqual(res.trace.last.gap1, cfg.eta)
        self.assertLessEqual(res.trace.last.gap2, cfg.eta)
        self.assertLessEqual(max(norms), limit)
        self.assertLessEqual(frobenius_norm(res.x), limit)
        merits = res.trace.column("merit")
        for prev, cur in zip(merits[4:], merits[5:]):
            self.assertLessEqual(cur, prev + 1e-8 * abs(prev) + 1e-12)


if __name__ == "__main__":
    unittest.main()
