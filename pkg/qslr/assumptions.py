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
Parameter conditions under which the merit functions of PL-ADMM and
PL-ADMM-NF decrease, evaluated for the operators used here:

- denoising: constraint 𝒲(X) − W = 0, so ℬ = −ℐ, λ₊(ℬ^#ℬ) = 1 and ‖𝒞‖ = 1;
- inpainting: Z − W = 0 and 𝒫_Ω𝒲^#(W) = 𝒫_Ω(Y), so 𝒞₁ = ℐ, ℬ₁ = −ℐ and
  ℬ₂ = 𝒫_Ω𝒲^#, whose nonzero eigenvalues of ℬ₂^#ℬ₂ are all 1.

The proximal weights L1, L2 are constant, so q_i = q_i⁻ = L_i. The smooth
term is g = λ·p with p the Huber function, hence L_g = λ/δ.

Checkers never raise: they return a report listing every inequality with its
margin.
"""

import math
import unittest
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional

from .surrogates import estimate_lipschitz_f

if TYPE_CHECKING:  # pragma: no cover
    from .solvers import SolverConfig

DEFAULT_R = 1.01
DEFAULT_KAPPA = 0.5


def rho(mu: float) -> float:
    """ρ(μ) = 1 − |1 − μ|, in (0, 1] for μ in (0, 2)."""
    return 1.0 - abs(1.0 - mu)


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return math.inf
    return num / den


@dataclass(frozen=True)
class Inequality:
    """
    A scalar condition lhs > rhs. Informational entries are shown in the
    report but do not decide whether it passes.
    """

    name: str
    description: str
    lhs: float
    rhs: float
    informational: bool = False

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def holds(self) -> bool:
        return self.lhs > self.rhs

    def __str__(self):
        status = "PASS" if self.holds else "FAIL"
        if self.informational:
            status += " (info)"
        return (
            f"{self.name:<6} {self.description}: {self.lhs:.6g} > {self.rhs:.6g}, "
            f"margin {self.margin:.6g} {status}"
        )


@dataclass(frozen=True)
class AssumptionConstants:
    """
    Constants shared by the checkers and the merit functions. varsigma holds
    ς₀..ς₅ (denoising), theta holds θ₁..θ₅ with their components and θ₃,₀,
    θ₄,₀ (inpainting).
    """

    rho_mu: float
    lambda_plus: float
    L_g: float
    inv_delta: float
    r: float
    kappa: float
    a1: float
    a2: float
    pi: float = math.nan
    L_f: float = math.nan
    varsigma: tuple = ()
    theta: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class AssumptionReport:
    family: str
    constants: AssumptionConstants
    inequalities: List[Inequality]
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(i.holds for i in self.inequalities if not i.informational)

    def failures(self) -> List[str]:
        return [i.name for i in self.inequalities if not i.informational and not i.holds]

    def format(self) -> str:
        lines = [f"Assumption family {self.family}"]
        c = self.constants
        lines.append(
            f"  rho(mu)={c.rho_mu:.6g} lambda_plus={c.lambda_plus:.6g} "
            f"L_g={c.L_g:.6g} 1/delta={c.inv_delta:.6g} r={c.r:.6g} kappa={c.kappa:.6g}"
        )
        if c.varsigma:
            lines.append("  " + " ".join(f"varsigma{i}={v:.6g}" for i, v in enumerate(c.varsigma)))
        if c.theta:
            lines.append("  " + " ".join(f"{k}={v:.6g}" for k, v in c.theta.items()))
        lines.extend(f"  {i}" for i in self.inequalities)
        lines.extend(f"  note: {n}" for n in self.notes)
        lines.append(f"  overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _common_checks(mu, r, kappa) -> List[Inequality]:
    return [
        Inequality("mu", "2 - mu > 0 and mu > 0", min(mu, 2 - mu), 0.0),
        Inequality("r", "r > 1", r, 1.0),
        Inequality("kappa", "kappa in (0, 1)", min(kappa, 1 - kappa), 0.0),
    ]


def denoise_constants(cfg: "SolverConfig", delta: Optional[float] = None, r: float = DEFAULT_R, kappa: float = DEFAULT_KAPPA) -> AssumptionConstants:
    """
    :param delta: Huber threshold, defaults to the schedule's initial value.
    """
    delta = cfg.delta_schedule.initial if delta is None else delta
    mu, beta = cfg.mu, cfg.beta
    q1, q2 = cfg.L1, cfg.L2
    lp = 1.0
    rh = rho(mu)
    lg = cfg.lam / delta
    v0 = 2 * mu * (q2 + lg) ** 2 / (beta * lp * rh**2)
    v1 = 2 * mu * q2**2 / (beta * lp * rh**2)
    v2 = abs(1 - mu) / (beta * mu * lp * rh)
    v3 = 1 / (beta * rh * lp)
    v4 = (q2 + lg) ** 2 / (beta * rh * lp)
    v5 = abs(1 - mu) / (2 * beta * mu**2 * lp)
    a2 = q2 + beta * lp - (r * v0 + r * v1 + lg)
    pi = max(q1, beta + q2 + lg, 2 + 1 / (beta * mu))
    return AssumptionConstants(
        rho_mu=rh,
        lambda_plus=lp,
        L_g=lg,
        inv_delta=1 / delta,
        r=r,
        kappa=kappa,
        a1=q1,
        a2=a2,
        pi=pi,
        varsigma=(v0, v1, v2, v3, v4, v5),
    )


def check_assumption_1(cfg: "SolverConfig", delta: Optional[float] = None, r: float = DEFAULT_R, kappa: float = DEFAULT_KAPPA) -> AssumptionReport:
    """
    Conditions for the descent of the PL-ADMM merit function ℛ_k.
    """
    c = denoise_constants(cfg, delta, r, kappa)
    bound = _ratio(2 * c.L_g, kappa * c.lambda_plus * c.rho_mu)
    inequalities = _common_checks(cfg.mu, r, kappa) + [
        Inequality("A4.1", "q1- >= a1 > 0", c.a1, 0.0),
        Inequality("A4.2", "a2 = q2- + beta*lambda_plus - r(vs0 + vs1) - L_g > 0", c.a2, 0.0),
        Inequality("A5", "beta > 2 L_g / (kappa lambda_plus rho(mu))", cfg.beta, bound),
    ]
    notes = [f"L_g = lambda/delta = {c.L_g:.6g} (1/delta = {c.inv_delta:.6g})"]
    if cfg.L1 == 1 and cfg.L2 == 1:
        lp, rh, lg = c.lambda_plus, c.rho_mu, c.L_g
        sufficient = max(
            _ratio(2 * lg, lp * rh),
            r * (2 * cfg.mu * (1 + lg) ** 2 + 2 * cfg.mu) / (lp**2 * rh**2) + lg / lp,
            1.0,
        )
        inequalities.append(
            Inequality("A-suff", "beta above the unit proximal weight sufficient bound", cfg.beta, sufficient, True)
        )
    return AssumptionReport("A", c, inequalities, notes)


def inpaint_constants(
    cfg: "SolverConfig",
    delta: Optional[float] = None,
    r: float = DEFAULT_R,
    kappa: float = DEFAULT_KAPPA,
    L_f: Optional[float] = None,
) -> AssumptionConstants:
    """
    :param L_f: Lipschitz constant of the smoothed spectral gradient,
        estimated from the surrogate when None.
    """
    delta = cfg.delta_schedule.initial if delta is None else delta
    mu, b1, b2 = cfg.mu, cfg.beta_1, cfg.beta_2
    q1, q2 = cfg.L1, cfg.L2
    lf = estimate_lipschitz_f(cfg.surrogate) if L_f is None else L_f
    lg = cfg.lam / delta
    rh = rho(mu)
    lc = lb2 = 1.0
    nb1 = nc1 = 1.0
    d = abs(1 - mu)
    t11 = 4 * (q1 + lf) ** 2 * mu / (rh**2 * b1 * lc)
    t12 = 4 * b1 * nb1**2 * nc1**2 / (rh * lc)
    t21 = 3 * mu * nb1**2 * (4 * q1**2 + d**2 * 4 * (q1 + lf) ** 2) / (b2 * rh**4 * lc * lb2)
    t22 = 6 * (lg + q2) ** 2 * mu / (b2 * rh**2 * lb2) + 3 * mu * nb1**2 * (d**2 + 1) * (
        4 * b1**2 * nb1**2 * nc1**2
    ) / (b2 * rh**4 * lc * lb2)
    t13 = d / (b1 * mu * lc * rh)
    t23 = 3 * d * nb1**2 / (b2 * rh**3 * mu * lb2 * lc)
    t24 = 3 * d**3 * nb1**2 / (b2 * rh**3 * mu * lb2 * lc)
    t25 = d / (b2 * rh * mu * lb2)
    t30 = 3 / (2 * b1 * rh * lc)
    t40 = max(3 / (2 * b2 * rh * lb2), 3 * nb1**2 / (2 * b2 * rh**2 * lb2 * lc))
    theta = {
        "theta1": t11 + t21,
        "theta2": t12 + t22,
        "theta3": t13 + t23,
        "theta4": t24,
        "theta5": t25,
        "theta11": t11,
        "theta12": t12,
        "theta21": t21,
        "theta22": t22,
        "theta13": t13,
        "theta23": t23,
        "theta30": t30,
        "theta40": t40,
    }
    a1 = q1 - 3 * r * theta["theta1"]
    a2 = q2 + b2 * lb2 + b1 * nb1**2 - (3 * r * theta["theta2"] + lg)
    return AssumptionConstants(
        rho_mu=rh,
        lambda_plus=lb2,
        L_g=lg,
        inv_delta=1 / delta,
        r=r,
        kappa=kappa,
        a1=a1,
        a2=a2,
        L_f=lf,
        theta=theta,
    )


def check_assumption_2(
    cfg: "SolverConfig",
    delta: Optional[float] = None,
    r: float = DEFAULT_R,
    kappa: float = DEFAULT_KAPPA,
    L_f: Optional[float] = None,
    observed_fraction: Optional[float] = None,
) -> AssumptionReport:
    """
    Conditions for the descent of the PL-ADMM-NF merit function 𝒯_k.

    :param observed_fraction: Fraction of observed pixels, used only to flag
        that ℬ₂^#ℬ₂ is rank deficient for a partial mask.
    """
    c = inpaint_constants(cfg, delta, r, kappa, L_f)
    t = c.theta
    inequalities = _common_checks(cfg.mu, r, kappa) + [
        Inequality("B4.1", "a1 = q1- - 3 r theta1 > 0", c.a1, 0.0),
        Inequality("B4.2", "a2 = q2- + beta2 + beta1 - 3 r theta2 - L_g > 0", c.a2, 0.0),
        Inequality("B5.1", "kappa / (2 L_f) > theta30 + theta40", _ratio(kappa, 2 * c.L_f), t["theta30"] + t["theta40"]),
        Inequality("B5.2", "1 / (2 L_g) > theta40", _ratio(1.0, 2 * c.L_g), t["theta40"]),
    ]
    notes = [
        f"L_f = {c.L_f:.6g} is {'an estimate from the surrogate' if L_f is None else 'user supplied'}",
        f"L_g = lambda/delta = {c.L_g:.6g} (1/delta = {c.inv_delta:.6g})",
    ]
    if observed_fraction is not None and observed_fraction < 1:
        notes.append(
            "B2^# B2 is a projection for a partial mask, not full rank; "
            "its nonzero eigenvalue 1 is used for lambda_plus and lambda_min"
        )
    return AssumptionReport("B", c, inequalities, notes)


def _config(**changes) -> "SolverConfig":
    from .solvers import SolverConfig

    values = dict(mu=1.0, beta=10.0, lam=1.0, L1=1.0, L2=1.0)
    values.update(changes)
    return SolverConfig(**values)


class TestAssumptions(unittest.TestCase):
    def test_rho(self):
        self.assertAlmostEqual(rho(1.1), 0.9)
        self.assertEqual(rho(1.0), 1.0)

    def test_a5_passes_at_mu_one(self):
        report = check_assumption_1(_config(), r=1.01, kappa=0.5)
        a5 = next(i for i in report.inequalities if i.name == "A5")
        self.assertEqual(a5.rhs, 4.0)
        self.assertTrue(a5.holds)
        self.assertTrue(report.passed)
        self.assertIn("A5", report.format())

    def test_a5_fails_close_to_two(self):
        report = check_assumption_1(_config(mu=1.99))
        a5 = next(i for i in report.inequalities if i.name == "A5")
        # 1 - |1 - 1.99| is 0.01 only up to rounding.
        self.assertEqual(a5.rhs, 2.0 / (0.5 * rho(1.99)))
        self.assertEqual(round(a5.rhs, 9), 400.0)
        self.assertFalse(a5.holds)
        self.assertIn("A5", report.failures())

    def test_varsigma_values(self):
        c = denoise_constants(_config())
        self.assertEqual(c.varsigma[0], 0.8)
        self.assertEqual(c.varsigma[1], 0.2)
        self.assertEqual(c.varsigma[2], 0.0)
        self.assertAlmostEqual(c.a2, 11 - 1.01 - 1)
        self.assertEqual(c.pi, 12.0)

    def test_lambda_zero_has_no_gradient_constant(self):
        report = check_assumption_1(_config(lam=0.0))
        self.assertEqual(report.constants.L_g, 0.0)
        self.assertTrue(report.passed)

    def test_inpaint_report(self):
        cfg = _config(mu=1.1, L1=2.0, lam=0.3, beta1=300.0, beta2=6000.0)
        report = check_assumption_2(cfg, L_f=1.0, observed_fraction=1.0)
        self.assertTrue(report.passed, report.format())
        self.assertAlmostEqual(report.constants.theta["theta30"], 3 / (2 * 300 * 0.9))
        partial = check_assumption_2(cfg, L_f=1.0, observed_fraction=0.5)
        self.assertTrue(any("rank" in n for n in partial.notes))

    def test_inpaint_small_penalty_fails(self):
        report = check_assumption_2(_config(mu=1.1), L_f=1.0)
        self.assertFalse(report.passed)
        self.assertIn("B4.1", report.failures())


if __name__ == "__main__":
    unittest.main()
