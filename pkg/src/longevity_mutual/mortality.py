"""Stochastic mortality-rate models.

Two models are provided, both written as an SDE for the force of mortality

    d lambda = drift(lambda, t) dt + vol(lambda, t) dW

* ``stylized_model``: drift a*lambda^2, vol b*lambda^(3/2). Time homogeneous,
  explodes in finite time.
* ``cbd_model``: one-factor continuous-time Cairns-Blake-Dowd model obtained by
  pushing the logit factor x = A1 + A2 (x0 + t) through lambda = log(1 + e^x).

Time ``t`` is measured in years since the cohort's starting age ``x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

ArrayLike = np.ndarray | float

# Simulation clamp for lambda. Paths reaching the upper value are absorbed.
LAMBDA_FLOOR = 1e-6
LAMBDA_CEIL = 25.0


class MortalityDomainError(ValueError):
    """Raised when a rate is evaluated outside a model's domain."""


@dataclass(frozen=True)
class StylizedParams:
    a: float = 4.0
    b: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("a and b must be finite")
        if self.b < 0.0:
            raise ValueError("b must be >= 0")


@dataclass(frozen=True)
class CbdParams:
    """Coefficients of the one-factor CBD rate SDE plus its factor model.

    ``B1``..``B8`` enter the rate SDE directly. ``mu1``, ``mu2``, ``C11``,
    ``C12``, ``C22``, ``x0`` and ``A2_0`` describe the logit factor model the
    rate SDE is derived from. The defaults are the "cbd-2019" preset.
    """

    B1: float = 0.00118
    B2: float = 0.00317
    B3: float = 1.04e-5
    B4: float = 0.00125
    B5: float = 0.0773
    B6: float = 0.0782
    B7: float = 0.0393
    B8: float = 0.0166
    x0: float = 65.0
    A2_0: float = 0.1058
    mu1: float = -0.00669
    mu2: float = 0.000590
    C11: float = 0.0782
    C12: float = -0.00120
    C22: float = 0.000257

    def __post_init__(self) -> None:
        if self.B6 <= 0.0:
            raise ValueError("B6 must be > 0")
        if self.B7 < 0.0:
            raise ValueError("B7 must be >= 0")
        if self.x0 <= 0.0:
            raise ValueError("x0 must be > 0")
        if self.C11 <= 0.0 or self.C22 <= 0.0:
            raise ValueError("C11 and C22 must be > 0")

    @classmethod
    def from_factor_model(
        cls,
        mu1: float = -0.00669,
        mu2: float = 0.000590,
        C11: float = 0.0782,
        C12: float = -0.00120,
        C22: float = 0.000257,
        x0: float = 65.0,
        A2_0: float = 0.1058,
    ) -> "CbdParams":
        """Assemble B1..B8 from the factor drift, Cholesky factor and age.

        Matches the factor SDE term by term: the x-drift is
        ``mu1 + mu2*x0 + A2_0 + 2*mu2*t`` and the x-variance is
        ``C11^2 + (C12 + (x0 + t) C22)^2``.
        """
        k = C12 + x0 * C22
        half_var0 = 0.5 * (C11**2 + k**2)
        return cls(
            B1=2.0 * mu2,
            B2=half_var0,
            B3=0.5 * C22**2 / half_var0,
            B4=k * C22 / half_var0,
            B5=mu1 + mu2 * x0 + A2_0,
            B6=C11,
            B7=(k / C11) ** 2,
            B8=C22 / k,
            x0=x0,
            A2_0=A2_0,
            mu1=mu1,
            mu2=mu2,
            C11=C11,
            C12=C12,
            C22=C22,
        )

    def factor_drift(self, t: ArrayLike) -> ArrayLike:
        """Drift of x = A1 + A2 (x0 + t) with A2 following dA2 = mu2 dt."""
        return self.mu1 + self.mu2 * (self.x0 + t) + self.A2_0 + self.mu2 * t

    def factor_vol(self, t: ArrayLike) -> ArrayLike:
        return np.sqrt(self.C11**2 + (self.C12 + (self.x0 + t) * self.C22) ** 2)


@dataclass(frozen=True)
class MortalityModel:
    """Drift and volatility of the force of mortality.

    Both callables take ``(lam, t)`` and broadcast over numpy arrays.
    """

    drift: Callable[[ArrayLike, ArrayLike], ArrayLike]
    vol: Callable[[ArrayLike, ArrayLike], ArrayLike]
    lam_min: float = LAMBDA_FLOOR
    lam_max: float = LAMBDA_CEIL
    name: str = "custom"
    deterministic: bool = False
    time_homogeneous: bool = False
    params: object = field(default=None, compare=False)

    def without_volatility(self) -> "MortalityModel":
        def zero(lam, t):
            return np.zeros_like(np.asarray(lam, dtype=float) + 0.0 * np.asarray(t, dtype=float))

        return MortalityModel(
            drift=self.drift,
            vol=zero,
            lam_min=self.lam_min,
            lam_max=self.lam_max,
            name=self.name + "-det",
            deterministic=True,
            time_homogeneous=self.time_homogeneous,
            params=self.params,
        )


def stylized_model(p: StylizedParams) -> MortalityModel:
    a, b = p.a, p.b

    def drift(lam, t=0.0):
        lam = np.asarray(lam, dtype=float)
        return a * lam**2 + 0.0 * np.asarray(t, dtype=float)

    def vol(lam, t=0.0):
        lam = np.asarray(lam, dtype=float)
        return b * lam**1.5 + 0.0 * np.asarray(t, dtype=float)

    return MortalityModel(
        drift=drift,
        vol=vol,
        name=f"stylized(a={a:g},b={b:g})",
        deterministic=(b == 0.0),
        time_homogeneous=True,
        params=p,
    )


def rate_from_factor(x: ArrayLike) -> ArrayLike:
    """Mortality rate -log(1 - logistic(x)) = log(1 + e^x), overflow safe."""
    x = np.asarray(x, dtype=float)
    pos = np.maximum(x, 0.0)
    # x + log1p(e^-x) for x > 0, log1p(e^x) otherwise
    out = pos + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def factor_from_rate(lam: ArrayLike) -> ArrayLike:
    """Inverse of :func:`rate_from_factor`: log(e^lam - 1)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0.0):
        raise MortalityDomainError("rate must be > 0")
    big = lam > 30.0
    small_part = np.log(np.expm1(np.where(big, 1.0, lam)))
    big_part = lam + np.log1p(-np.exp(-np.where(big, lam, 30.0)))
    out = np.where(big, big_part, small_part)
    return out if out.ndim else float(out)


def cbd_model(p: CbdParams) -> MortalityModel:
    """Rate SDE of the one-factor CBD model with coefficients ``p``.

    The closed form keeps the published algebraic layout; the denominator
    (e^lam - 1)^2 + 2 e^lam - 1 is e^(2 lam).
    """
    B1, B2, B3, B4, B5, B6, B7, B8 = (p.B1, p.B2, p.B3, p.B4, p.B5, p.B6, p.B7, p.B8)

    def _check(lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam <= 0.0):
            raise MortalityDomainError("CBD rate must be > 0")
        return lam

    def drift(lam, t):
        lam = _check(lam)
        t = np.asarray(t, dtype=float)
        em1 = np.expm1(lam)
        # em1 * (...) / e^(2 lam) written with e^-lam factors to avoid overflow
        sig = -np.expm1(-lam)  # (e^lam - 1) e^-lam
        inner = B1 * t * em1 + B1 * t + B2 * (B3 * t**2 + B4 * t + 1.0) + B5 * np.exp(lam)
        return sig * inner * np.exp(-lam)

    def vol(lam, t):
        lam = _check(lam)
        t = np.asarray(t, dtype=float)
        sig = -np.expm1(-lam)
        # B6((e^l-1)^2 e^-2l - (e^l-1) e^-l) e^l = -B6 sig; sign is irrelevant
        return B6 * sig * np.sqrt(B7 * (B8 * t + 1.0) ** 2 + 1.0)

    return MortalityModel(drift=drift, vol=vol, name="cbd", params=p)


def cbd_ito_coefficients(p: CbdParams, lam: ArrayLike, t: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
    """Rate drift/vol obtained by Ito's lemma from the factor SDE directly."""
    x = factor_from_rate(lam)
    s = 1.0 / (1.0 + np.exp(-x))  # d lam / dx
    d2 = s * (1.0 - s)  # d^2 lam / dx^2
    fv = p.factor_vol(t)
    return s * p.factor_drift(t) + 0.5 * d2 * fv**2, s * fv


@dataclass
class RatePath:
    t: np.ndarray
    lam: np.ndarray
    blowup_time: Optional[float] = None


def deterministic_rate_path(
    m: MortalityModel, lam0: float, horizon: float, dt: float
) -> RatePath:
    """RK4 integration of d lambda = drift dt, stopped at the model ceiling."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if not (m.lam_min <= lam0 <= m.lam_max):
        raise MortalityDomainError(f"lam0={lam0} outside [{m.lam_min}, {m.lam_max}]")
    n = int(math.ceil(horizon / dt - 1e-9))
    ts = np.arange(n + 1) * dt
    lams = np.empty(n + 1)
    lams[0] = lam0
    f = lambda l, s: float(m.drift(l, s))  # noqa: E731
    blowup = None
    for i in range(n):
        l, s = lams[i], ts[i]
        try:
            k1 = f(l, s)
            k2 = f(l + 0.5 * dt * k1, s + 0.5 * dt)
            k3 = f(l + 0.5 * dt * k2, s + 0.5 * dt)
            k4 = f(l + dt * k3, s + dt)
            nxt = l + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        except (FloatingPointError, OverflowError, MortalityDomainError):
            nxt = np.inf
        if not np.isfinite(nxt) or nxt >= m.lam_max:
            # linear interpolation of the crossing inside the step
            if np.isfinite(nxt) and nxt > l:
                blowup = s + dt * (m.lam_max - l) / (nxt - l)
            else:
                blowup = s + dt
            lams[i + 1 :] = m.lam_max
            break
        lams[i + 1] = max(nxt, m.lam_min)
    return RatePath(t=ts, lam=lams, blowup_time=blowup)


def log_rate_increment(
    m: MortalityModel, lam: np.ndarray, t: float, dt: float, z: np.ndarray
) -> np.ndarray:
    """One Euler-Maruyama step for log(lambda); returns the new rates.

    Stepping in log space keeps paths strictly positive. Paths at or above
    the ceiling are absorbed there.
    """
    s = m.vol(lam, t) / lam
    dlog = (m.drift(lam, t) / lam - 0.5 * s * s) * dt + s * math.sqrt(dt) * z
    out = lam * np.exp(np.minimum(dlog, 50.0))
    out = np.clip(out, m.lam_min, m.lam_max)
    return np.where(lam >= m.lam_max, m.lam_max, out)


def survival_curve(
    m: MortalityModel,
    lam0: float,
    times: Sequence[float],
    n_paths: int = 20_000,
    dt: float = 1.0 / 52.0,
    seed: int = 0,
) -> np.ndarray:
    """E[exp(-int_0^t lambda_s ds)] at each of ``times``.

    Deterministic models integrate the rate ODE; otherwise a Monte Carlo over
    Euler-Maruyama rate paths is used (common random numbers across times).
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    horizon = float(times.max()) if times.size else 0.0
    n = int(math.ceil(horizon / dt - 1e-9))
    grid = np.arange(n + 1) * dt
    if m.deterministic:
        path = deterministic_rate_path(m, lam0, horizon, dt).lam
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (path[1:] + path[:-1]) * dt)])
        surv = np.exp(-cum)
    else:
        rng = np.random.default_rng(seed)
        lam = np.full(n_paths, float(lam0))
        cum = np.zeros(n_paths)
        surv = np.empty(n + 1)
        surv[0] = 1.0
        for i in range(n):
            new = log_rate_increment(m, lam, grid[i], dt, rng.standard_normal(n_paths))
            cum += 0.5 * (lam + new) * dt
            lam = new
            surv[i + 1] = np.exp(-cum).mean()
    out = np.interp(times, grid, surv)
    return np.minimum.accumulate(out) if out.size else out


def survival_probability(m: MortalityModel, lam0: float, t: float, **kw) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 1.0
    return float(survival_curve(m, lam0, [t], **kw)[0])


def one_year_survival(lam: ArrayLike) -> ArrayLike:
    """Probability of surviving one year at a constant force ``lam``."""
    return np.exp(-np.asarray(lam, dtype=float))


def constant_rate_model(lam: float) -> MortalityModel:
    """Flat force of mortality; useful as a reference case."""
    return MortalityModel(
        drift=lambda l, t: np.zeros_like(np.asarray(l, dtype=float)),
        vol=lambda l, t: np.zeros_like(np.asarray(l, dtype=float)),
        name=f"constant({lam:g})",
        deterministic=True,
        time_homogeneous=True,
    )


PRESETS = {
    "cbd-2019": CbdParams(),
    "stylized": StylizedParams(4.0, 1.0),
}
