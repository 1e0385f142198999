"""Closed-form finite/infinite fund solution under the stylized mortality model.

With r = mu = 0 and d lambda = a lambda^2 dt + b lambda^(3/2) dW the value
functions are homogeneous in lambda:

    V1 = w^alpha1 (A lambda)^xi1 / alpha1,    V2 = w^alpha2 (K2 lambda)^xi2 / alpha2

with xi = alpha (rho - 1) / rho. A solution is only meaningful when the
coefficient inside the power is positive; otherwise the control problem is
ill-posed and we report that instead of a complex value.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .preferences import Preferences


class Status(str, enum.Enum):
    WELL_POSED = "well-posed"
    ILL_POSED_FINITE = "ill-posed-finite"
    ILL_POSED_INFINITE = "ill-posed-infinite"


@dataclass(frozen=True)
class StylizedSolution:
    a: float
    b: float
    p1: Preferences
    p2: Preferences
    xi1: float
    xi2: float
    A_coef: float
    K2: float
    K1_alone: float
    status: Status

    @property
    def well_posed(self) -> bool:
        return self.status is Status.WELL_POSED

    def g1(self, lam):
        """Finite fund g with insurance, normalised so V1 = w^alpha1 g1."""
        lam = np.asarray(lam, dtype=float)
        return (self.A_coef * lam) ** self.xi1 / self.p1.alpha

    def g2(self, lam):
        lam = np.asarray(lam, dtype=float)
        return (self.K2 * lam) ** self.xi2 / self.p2.alpha

    def g1_alone(self, lam):
        """Finite fund g without insurance (its own one-fund problem)."""
        lam = np.asarray(lam, dtype=float)
        return (self.K1_alone * lam) ** self.xi1 / self.p1.alpha


def one_fund_coefficient(a: float, b: float, p: Preferences) -> float:
    """Bracket of the one-fund (infinite fund) solution."""
    al, rh = p.alpha, p.rho
    return (al - 1.0) * rh / (al * (rh - 1.0)) + a + b**2 * (al * (rh - 1.0) - rh) / (2.0 * rh)


def finite_fund_coefficient(a: float, b: float, p1: Preferences, p2: Preferences) -> float:
    """Coefficient A of the insured finite fund."""
    a1, a2, r1, r2 = p1.alpha, p2.alpha, p1.rho, p2.rho
    num_b = (
        a2**2 * r1**2 * (r2 - 1.0) ** 2
        - 2.0 * a1 * a2 * (r1 - 1.0) * r1 * r2 * (r2 - 1.0)
        + (r1 - 1.0) * r2**2 * (a1 * (2.0 * r1 - 1.0) - r1)
    )
    top = a * (r1 - 1.0) + (a1 - 1.0) * r1 / a1 - b**2 * num_b / (2.0 * (a1 - 1.0) * r1 * r2**2)
    return top / (r1 - 1.0)


def solve_stylized(a: float, b: float, p1: Preferences, p2: Preferences) -> StylizedSolution:
    """Closed-form solution; ill-posedness is reported through ``status``."""
    A = finite_fund_coefficient(a, b, p1, p2)
    K2 = one_fund_coefficient(a, b, p2)
    K1 = one_fund_coefficient(a, b, p1)
    if K2 <= 0.0:
        status = Status.ILL_POSED_INFINITE
    elif A <= 0.0:
        status = Status.ILL_POSED_FINITE
    else:
        status = Status.WELL_POSED
    return StylizedSolution(a, b, p1, p2, p1.xi, p2.xi, A, K2, K1, status)


def stylized_price(sol: StylizedSolution, lam):
    """Insurance price (a + b^2 xi2) lambda^2 posted by the infinite fund."""
    if sol.K2 <= 0.0:
        raise ValueError("infinite fund problem is ill-posed")
    lam = np.asarray(lam, dtype=float)
    return (sol.a + sol.b**2 * sol.xi2) * lam**2


def stylized_insurance_rate(w, lam, p1: Preferences, p2: Preferences):
    """Optimal contract purchase rate of the finite fund (positive = buying)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise ValueError("lambda must be > 0")
    a1, a2, r1, r2 = p1.alpha, p2.alpha, p1.rho, p2.rho
    return np.asarray(w) / (lam * (a1 - 1.0)) * (a2 - a1 + a1 / r1 - a2 / r2)


def stylized_benefit(sol: StylizedSolution) -> float:
    """Insurance benefit in percent, or NaN if either problem is ill-posed.

    The uninsured fund needs initial wealth scaled by (g_I/g_NI)^(1/alpha1);
    with both g's powers of lambda the ratio is (A/K1)^xi1.
    """
    if not sol.well_posed or sol.K1_alone <= 0.0:
        return math.nan
    ratio = (sol.A_coef / sol.K1_alone) ** sol.xi1
    return 100.0 * (ratio ** (1.0 / sol.p1.alpha) - 1.0)


def benefit_status(sol: StylizedSolution) -> str:
    if not sol.well_posed:
        return sol.status.value
    if sol.K1_alone <= 0.0:
        return Status.ILL_POSED_FINITE.value
    return Status.WELL_POSED.value


@dataclass
class Figure1Grid:
    a: float
    b: float
    alphas: np.ndarray
    benefit_pct: np.ndarray  # [i1, i2], NaN where ill-posed
    status: np.ndarray  # same shape, str

    def rows(self):
        for i, a1 in enumerate(self.alphas):
            for j, a2 in enumerate(self.alphas):
                yield a1, a2, self.status[i, j], self.benefit_pct[i, j]


def alpha_axis(lo: float = -10.0, hi: float = 1.0, resolution: int = 111) -> np.ndarray:
    """Evenly spaced alphas on the open interval (lo, hi), zero removed."""
    grid = np.linspace(lo, hi, resolution + 2)[1:-1]
    return grid[np.abs(grid) > 1e-12]


def figure1_grid(
    a: float = 4.0, b: float = 1.0, alphas: np.ndarray | None = None
) -> Figure1Grid:
    """Benefit map over (alpha1, alpha2) with von Neumann-Morgenstern preferences."""
    if alphas is None:
        alphas = alpha_axis()
    alphas = np.asarray(alphas, dtype=float)
    n = alphas.size
    ben = np.full((n, n), np.nan)
    stat = np.empty((n, n), dtype=object)
    for i, a1 in enumerate(alphas):
        p1 = Preferences.vnm(float(a1))
        for j, a2 in enumerate(alphas):
            sol = solve_stylized(a, b, p1, Preferences.vnm(float(a2)))
            stat[i, j] = benefit_status(sol)
            if stat[i, j] == Status.WELL_POSED.value:
                ben[i, j] = stylized_benefit(sol)
    return Figure1Grid(a, b, alphas, ben, stat)
