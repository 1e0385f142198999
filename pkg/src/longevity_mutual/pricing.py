"""Insurance price, optimal controls and market clearing.

The infinite fund posts the price at which it does not want to trade,

    p = drift + vol^2 d/d lambda log g2,

and the finite fund's optimal controls follow from the homogeneous ansatz
V1 = w^alpha1 g1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .hjb import PdeSolution, fit_power_law
from .market import MarketParams
from .mortality import MortalityModel
from .preferences import Preferences

log = logging.getLogger(__name__)

__all__ = [
    "MarketParams",
    "ControlSet",
    "ValuePartials",
    "insurance_price",
    "insurance_demand",
    "optimal_controls",
    "clearing_check",
    "general_price_ansatz",
    "clearing_demands",
    "control_fields",
]


@dataclass
class ControlSet:
    c: np.ndarray | float  # consumption rate
    pi_a: float  # risky wealth fraction
    q_c: np.ndarray | float  # insurance contracts per year, positive = buying
    p: np.ndarray | float  # price per contract

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.c) < 0):
            raise ValueError("consumption must be >= 0")


def _dlogg_dlam(g: PdeSolution, lam, t: float):
    """d/d lambda log g, falling back to the fitted power law off the lattice."""
    lam = np.asarray(lam, dtype=float)
    ll = np.log(lam)
    inside = (ll >= g.L[0] - 1e-12) & (ll <= g.L[-1] + 1e-12)
    out = np.interp(ll, g.L, g.slice_dlog_g_dL(t)) / lam
    if not np.all(inside):
        fit = fit_power_law(g, t)
        out = np.where(inside, out, fit.B / lam)
    return out, ~inside


def insurance_price(m: MortalityModel, g2: PdeSolution, lam, t: float, return_mask: bool = False):
    """Contract price drift + vol^2 d/d lambda log g2 at (lam, t).

    Points outside the lattice use the power-law fit; ``return_mask`` also
    returns a boolean array flagging them.
    """
    lam = np.asarray(lam, dtype=float)
    dl, outside = _dlogg_dlam(g2, lam, t)
    if np.any(outside):
        log.warning("price extrapolated by power law at %d point(s)", int(np.sum(outside)))
    vol = m.vol(lam, t)
    p = m.drift(lam, t) + vol * vol * dl
    if return_mask:
        return p, outside
    return p


def insurance_demand(prefs: Preferences, m: MortalityModel, g: PdeSolution, price, w, lam, t: float):
    """Optimal contract rate of a fund with value w^alpha g facing ``price``.

    From the first-order condition: q = w (drift - p + vol^2 d log g / d lambda) / ((1 - alpha) vol^2).
    """
    lam = np.asarray(lam, dtype=float)
    vol = np.asarray(m.vol(lam, t), dtype=float)
    dl, _ = _dlogg_dlam(g, lam, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.asarray(w) * (m.drift(lam, t) - price + vol * vol * dl) / ((1.0 - prefs.alpha) * vol * vol)
    return np.where(vol > 0, q, 0.0)


def optimal_controls(
    p1: Preferences,
    mkt: MarketParams,
    g1: PdeSolution,
    g2: PdeSolution,
    w,
    lam,
    t: float,
    model: MortalityModel | None = None,
) -> ControlSet:
    """Consumption, Merton fraction and insurance rate of the finite fund.

    The price is included when ``model`` is given, NaN otherwise.
    """
    if np.any(np.asarray(w) <= 0):
        raise ValueError("wealth must be > 0")
    lam = np.asarray(lam, dtype=float)
    u1 = g1.log_g_at(lam, t)
    d1, _ = _dlogg_dlam(g1, lam, t)
    d2, _ = _dlogg_dlam(g2, lam, t)
    c = np.asarray(w) * np.exp(u1 / p1.xi)
    q = np.asarray(w) * (d2 - d1) / (p1.alpha - 1.0)
    price = insurance_price(model, g2, lam, t) if model is not None else np.full_like(lam, np.nan)
    return ControlSet(c=c, pi_a=mkt.merton_fraction(p1.alpha), q_c=q, p=price)


def clearing_check(
    p2: Preferences, g2: PdeSolution, price_field: np.ndarray, m: MortalityModel, t_index: int | None = None
) -> float:
    """Sup over the lattice of |q2| / w for the infinite fund at the posted prices.

    ``price_field`` has the shape of ``g2.log_g`` (times x L).
    """
    price_field = np.asarray(price_field, dtype=float)
    rows = range(len(g2.t)) if t_index is None else [t_index]
    worst = 0.0
    for k in rows:
        t = float(g2.t[k])
        q = insurance_demand(p2, m, g2, price_field[k], 1.0, g2.lam, t)
        worst = max(worst, float(np.max(np.abs(q))))
    return worst


def price_field(m: MortalityModel, g2: PdeSolution) -> np.ndarray:
    """Price on every saved lattice point of ``g2``."""
    out = np.empty_like(g2.log_g)
    for k, t in enumerate(g2.t):
        out[k] = insurance_price(m, g2, g2.lam, float(t))
    return out


@dataclass
class ValuePartials:
    """Partial derivatives of one fund's value function.

    ``w_own`` is dV_i/dw_i, ``ww_own`` d2V_i/dw_i^2, ``w12`` d2V_i/dw1dw2 and
    ``lw_own`` d2V_i/(d lambda dw_i).
    """

    w_own: float
    ww_own: float
    w12: float
    lw_own: float


def general_price_ansatz(v1: ValuePartials, v2: ValuePartials, n1: float, n2: float, drift: float, vol: float) -> float:
    """Clearing price of two funds from their first-order conditions.

    Solves both insurance first-order conditions together with
    n1 q1 + n2 q2 = 0 for the price.
    """
    k = n2 / n1
    y1 = k * v1.ww_own - v1.w12
    y2 = v2.ww_own - k * v2.w12
    den = v1.w_own * y2 + v2.w_own * y1
    if den == 0.0 or not np.isfinite(den):
        raise ZeroDivisionError("clearing price denominator vanishes")
    return drift + vol**2 * (v1.lw_own * y2 + v2.lw_own * y1) / den


def clearing_demands(
    v1: ValuePartials, v2: ValuePartials, price: float, drift: float, vol: float
) -> tuple[float, float]:
    """Optimal (q1, q2) at a given price, solving the coupled first-order conditions."""
    v2_ = vol * vol
    a = np.array([[v1.ww_own * v2_, v1.w12 * v2_], [v2.w12 * v2_, v2.ww_own * v2_]])
    b = -np.array([v1.w_own * (drift - price) + v1.lw_own * v2_, v2.w_own * (drift - price) + v2.lw_own * v2_])
    q1, q2 = np.linalg.solve(a, b)
    return float(q1), float(q2)


def control_fields(
    p1: Preferences, mkt: MarketParams, m: MortalityModel, g1: PdeSolution, g2: PdeSolution, t: float
) -> dict[str, np.ndarray]:
    """Controls per unit wealth along the lattice at time t, for export."""
    lam = g1.lam
    cs = optimal_controls(p1, mkt, g1, g2, 1.0, lam, t, model=m)
    return {
        "lambda": lam,
        "price": np.asarray(cs.p),
        "c_frac": np.asarray(cs.c),
        "pi_a": np.full_like(lam, cs.pi_a),
        "qc_per_wealth": np.asarray(cs.q_c),
    }
