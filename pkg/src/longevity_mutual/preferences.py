"""Epstein-Zin preferences with mortality.

The continuous-time aggregator is

    f(c, V, lam) = c^rho (alpha V)^(1 - rho/alpha) / rho - (alpha delta / rho + lam) V

and the discrete recursion it is the small-step limit of is exposed for
checking that limit numerically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class PreferenceError(ValueError):
    pass


class Classification(str, enum.Enum):
    WELL_POSED_NEGATIVE = "well-posed-negative"
    WELL_POSED_POSITIVE = "well-posed-positive"
    SUSPECT = "suspect"


@dataclass(frozen=True)
class Preferences:
    alpha: float
    rho: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        if self.alpha == 0.0 or self.rho == 0.0:
            raise PreferenceError("alpha and rho must be non-zero")
        if self.alpha >= 1.0 or self.rho >= 1.0:
            raise PreferenceError("alpha and rho must be < 1")
        if self.delta < 0.0:
            raise PreferenceError("delta must be >= 0")

    @property
    def is_vnm(self) -> bool:
        return self.alpha == self.rho

    @property
    def xi(self) -> float:
        """Power of lambda in the homogeneous value function, alpha (rho - 1) / rho."""
        return self.alpha * (self.rho - 1.0) / self.rho

    @classmethod
    def vnm(cls, alpha: float, delta: float = 0.0) -> "Preferences":
        return cls(alpha, alpha, delta)

    def label(self) -> str:
        return f"alpha={self.alpha:g},rho={self.rho:g}"


def validate(p: Preferences) -> Classification:
    """Classify a preference triple; construction already rejects hard errors."""
    a, r = p.alpha, p.rho
    if a < 0 and r < 0 and a <= r:
        return Classification.WELL_POSED_NEGATIVE
    if a > 0 and r > 0:
        return Classification.WELL_POSED_POSITIVE
    return Classification.SUSPECT


def aggregator(p: Preferences, c, V, lam):
    """Epstein-Zin aggregator with mortality.

    Zero consumption with rho < 0 returns -inf.
    """
    c = np.asarray(c, dtype=float)
    V = np.asarray(V, dtype=float)
    aV = p.alpha * V
    if np.any(aV <= 0.0):
        raise PreferenceError("aggregator requires alpha * V > 0")
    if np.any(c < 0.0):
        raise PreferenceError("consumption must be >= 0")
    decay = (p.alpha / p.rho * p.delta + lam) * V
    if p.is_vnm:
        with np.errstate(divide="ignore"):
            util = c**p.rho / p.rho
    else:
        with np.errstate(divide="ignore"):
            util = c**p.rho * aV ** (1.0 - p.rho / p.alpha) / p.rho
    out = util - decay
    return out if out.ndim else float(out)


def discrete_update(p: Preferences, c, ez_alpha, lam, dt):
    """One step of the discrete recursion, returning Z_t.

    Z_t^rho = c^rho dt + exp(-(delta + rho lam / alpha) dt) E[Z^alpha]^(rho/alpha)

    ``ez_alpha`` is the conditional moment E[Z_{t+dt}^alpha].
    """
    if dt <= 0:
        raise PreferenceError("dt must be > 0")
    ez_alpha = np.asarray(ez_alpha, dtype=float)
    if np.any(ez_alpha <= 0.0):
        raise PreferenceError("E[Z^alpha] must be > 0")
    disc = np.exp(-(p.delta + p.rho / p.alpha * lam) * dt)
    zr = np.asarray(c, dtype=float) ** p.rho * dt + disc * ez_alpha ** (p.rho / p.alpha)
    if np.any(zr <= 0.0):
        raise PreferenceError("recursion left the real domain")
    out = zr ** (1.0 / p.rho)
    return out if np.ndim(out) else float(out)


def expected_next_value(p: Preferences, c, V, lam, dt):
    """E[V_{t+dt}] implied by the recursion when alpha V_t = Z_t^alpha."""
    aV = p.alpha * np.asarray(V, dtype=float)
    if np.any(aV <= 0.0):
        raise PreferenceError("requires alpha * V > 0")
    disc = np.exp(-(p.delta + p.rho / p.alpha * lam) * dt)
    base = (aV ** (p.rho / p.alpha) - dt * np.asarray(c, dtype=float) ** p.rho) / disc
    if np.any(base <= 0.0):
        raise PreferenceError("step too large for the real domain")
    return base ** (p.alpha / p.rho) / p.alpha


def value_drift_estimate(p: Preferences, c, V, lam, dt, richardson: bool = True):
    """Finite-difference slope (E[V_{t+dt}] - V)/dt, optionally Richardson extrapolated.

    Converges to -f(c, V, lam) as dt -> 0.
    """
    d1 = (expected_next_value(p, c, V, lam, dt) - V) / dt
    if not richardson:
        return d1
    d2 = (expected_next_value(p, c, V, lam, 0.5 * dt) - V) / (0.5 * dt)
    return 2.0 * d2 - d1


def certainty_equivalent(p: Preferences, ez_alpha: float) -> float:
    return math.pow(ez_alpha, 1.0 / p.alpha)
