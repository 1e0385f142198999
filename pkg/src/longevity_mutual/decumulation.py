"""Monte Carlo decumulation of a finite fund under its optimal controls.

Mortality follows its SDE (Euler-Maruyama in log lambda) and wealth follows

    dw = (lam w + r w (1 - pi) + pi w mu - c + q (drift - p)) dt
         + pi w sigma dW1 + q vol dW2

with c, pi, q the optimal controls and p the infinite fund's price. The
contract pays the realised change in lambda over each step, so q dlambda is
booked with the same increment that moves the mortality path. Paths are
split into fixed-size blocks, each with its own seed stream, so results do not
depend on how blocks are distributed over workers.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hjb import NumericalError, PdeSolution, fit_power_law
from .market import MarketParams
from .mortality import MortalityModel, log_rate_increment, survival_curve
from .preferences import Preferences

log = logging.getLogger(__name__)

SERIES = ("consumption", "insurance_spend", "insurance_contracts", "pnl", "pnl_discounted", "pnl_yearly", "wealth")


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 1_000_000
    dt: float = 1.0 / 12.0
    horizon: float = 55.0
    seed: int = 20190101
    initial_pot: float = 126_636.0
    initial_lambda: float = 0.01
    percentiles: tuple = (5.0, 25.0, 50.0, 75.0, 95.0)
    start_age: float = 65.0
    controls: str = "power_law"  # or "lattice"
    insurance: bool = True
    block_size: int = 10_000
    record_every: float = 1.0  # years between recorded states
    max_abort_fraction: float = 1e-3

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.initial_pot > 0:
            raise ValueError("initial_pot must be > 0")
        if not self.initial_lambda > 0:
            raise ValueError("initial_lambda must be > 0")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if self.controls not in ("power_law", "lattice"):
            raise ValueError(f"unknown controls {self.controls!r}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if any(not 0 <= q <= 100 for q in self.percentiles):
            raise ValueError("percentiles must lie in [0, 100]")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))

    @property
    def record_stride(self) -> int:
        return max(1, int(round(self.record_every / self.dt)))


class ControlField:
    """Controls per unit wealth as functions of (lambda, t).

    With ``method="power_law"`` alpha g is replaced by A(t) lambda^B(t), fitted
    on each saved time slice and interpolated linearly in time.
    """

    def __init__(
        self,
        m: MortalityModel,
        p1: Preferences,
        g1: PdeSolution,
        g2: PdeSolution,
        method: str = "power_law",
        insurance: bool = True,
    ):
        self.m = m
        self.p1 = p1
        self.g1 = g1
        self.g2 = g2
        self.method = method
        self.insurance = insurance
        if method == "power_law":
            self._fit1 = self._fits(g1)
            self._fit2 = self._fits(g2)

    @staticmethod
    def _fits(g: PdeSolution) -> np.ndarray:
        out = np.empty((len(g.t), 2))
        for k, t in enumerate(g.t):
            f = fit_power_law(g, float(t))
            out[k] = (math.log(f.A), f.B)
        return out

    def _power(self, fits: np.ndarray, g: PdeSolution, t: float) -> tuple[float, float]:
        logA = float(np.interp(t, g.t, fits[:, 0]))
        B = float(np.interp(t, g.t, fits[:, 1]))
        return logA, B

    def log_g_and_slope(self, which: int, lam: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """log(alpha g) and d/dL log g for fund 1 or 2."""
        g = self.g1 if which == 1 else self.g2
        ll = np.log(lam)
        if self.method == "power_law":
            logA, B = self._power(self._fit1 if which == 1 else self._fit2, g, t)
            return logA + B * ll, np.full_like(ll, B)
        u = g.slice_log_g(t)
        du = np.gradient(u, g.h, edge_order=2)
        # linear extrapolation in L beyond the lattice
        lo, hi = g.L[0], g.L[-1]
        llc = np.clip(ll, lo, hi)
        slope = np.interp(llc, g.L, du)
        val = np.interp(llc, g.L, u) + slope * (ll - llc)
        return val, slope

    def at(self, lam: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(consumption per wealth, contracts per wealth, price) at (lam, t)."""
        u1, s1 = self.log_g_and_slope(1, lam, t)
        c_frac = np.exp(u1 / self.p1.xi)
        if not self.insurance:
            zero = np.zeros_like(lam)
            return c_frac, zero, zero
        _, s2 = self.log_g_and_slope(2, lam, t)
        q_frac = (s2 - s1) / (lam * (self.p1.alpha - 1.0))
        vol = self.m.vol(lam, t)
        price = self.m.drift(lam, t) + vol * vol * s2 / lam
        return c_frac, q_frac, price


@dataclass
class PathEnsemble:
    """Percentiles of the recorded series plus per-path totals."""

    ages: np.ndarray
    percentiles: tuple
    stats: dict  # name -> array [len(percentiles), len(ages)]
    mean: dict  # name -> array [len(ages)]
    total_consumption: np.ndarray  # per path, undiscounted, currency
    n_paths: int
    n_aborted: int
    n_ruined: int
    config: SimConfig = field(repr=False, default=None)

    def series(self, name: str, pct: float = 50.0) -> np.ndarray:
        return self.stats[name][list(self.percentiles).index(pct)]

    def rows(self):
        """Long-format rows (age, percentile, consumption, insurance_spend, pnl, wealth, ...)."""
        for j, age in enumerate(self.ages):
            for i, q in enumerate(self.percentiles):
                yield (float(age), float(q), *(float(self.stats[s][i, j]) for s in SERIES))


def _simulate_block(
    ctrl: ControlField,
    m: MortalityModel,
    mkt: MarketParams,
    cfg: SimConfig,
    pi: float,
    n: int,
    block: int,
) -> tuple[dict, np.ndarray, int, int]:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, block]))
    dt, sq = cfg.dt, math.sqrt(cfg.dt)
    n_steps, stride = cfg.n_steps, cfg.record_stride
    n_rec = n_steps // stride + 1
    rec = {s: np.empty((n_rec, n)) for s in SERIES}

    lam = np.full(n, cfg.initial_lambda)
    w = np.full(n, cfg.initial_pot)
    alive = np.ones(n, dtype=bool)
    aborted = np.zeros(n, dtype=bool)
    pnl = np.zeros(n)
    pnl_disc = np.zeros(n)
    pnl_last = np.zeros(n)
    total_c = np.zeros(n)

    def controls(t):
        c_frac, q_frac, price = ctrl.at(lam, t)
        c = np.where(alive, w * c_frac, 0.0)
        q = np.where(alive, w * q_frac, 0.0)
        return c, q, price

    def record(k, t, c, q, price):
        rec["consumption"][k] = c
        rec["insurance_contracts"][k] = q
        rec["insurance_spend"][k] = q * price
        rec["pnl"][k] = pnl
        rec["pnl_discounted"][k] = pnl_disc
        rec["pnl_yearly"][k] = pnl - pnl_last
        rec["wealth"][k] = w
        pnl_last[:] = pnl

    c, q, price = controls(0.0)
    record(0, 0.0, c, q, price)
    for i in range(n_steps):
        t = i * dt
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        new_lam = log_rate_increment(m, lam, t, dt, z2)
        # the contract pays the realised change in the mortality rate
        ins = q * ((new_lam - lam) - price * dt)
        dw = (lam * w + mkt.r * w * (1.0 - pi) + pi * w * mkt.mu - c) * dt + pi * w * mkt.sigma * sq * z1 + ins
        dw = np.where(alive, dw, 0.0)
        ins = np.where(alive, ins, 0.0)
        total_c += c * dt
        pnl += ins
        pnl_disc += ins * math.exp(-mkt.r * t)
        w = w + dw
        lam = new_lam

        bad = ~(np.isfinite(w) & np.isfinite(lam) & np.isfinite(pnl))
        if np.any(bad & ~aborted):
            aborted |= bad
            w = np.where(bad, 0.0, w)
            lam = np.where(np.isfinite(lam), lam, m.lam_max)
            pnl = np.where(np.isfinite(pnl), pnl, 0.0)
        ruined = w <= 0.0
        w = np.where(ruined, 0.0, w)
        alive &= ~ruined

        c, q, price = controls(t + dt)
        if (i + 1) % stride == 0:
            record((i + 1) // stride, t + dt, c, q, price)
    return rec, total_c, int(aborted.sum()), int((~alive).sum())


def simulate(
    m: MortalityModel,
    mkt: MarketParams,
    p1: Preferences,
    g1: PdeSolution,
    g2: PdeSolution,
    cfg: SimConfig,
    threads: int = 1,
) -> PathEnsemble:
    """Simulate ``cfg.n_paths`` wealth paths and reduce them to percentiles.

    ``g1`` is the insured finite fund (or its uninsured solve when
    ``cfg.insurance`` is False) and ``g2`` the infinite fund.
    """
    if g1.t[-1] < cfg.horizon - 1e-9 or g2.t[-1] < cfg.horizon - 1e-9:
        raise ValueError("solutions do not cover the simulation horizon")
    ctrl = ControlField(m, p1, g1, g2, cfg.controls, cfg.insurance)
    pi = mkt.merton_fraction(p1.alpha)
    sizes = [cfg.block_size] * (cfg.n_paths // cfg.block_size)
    if cfg.n_paths % cfg.block_size:
        sizes.append(cfg.n_paths % cfg.block_size)

    def run(b):
        return _simulate_block(ctrl, m, mkt, cfg, pi, sizes[b], b)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]

    n_aborted = sum(p[2] for p in parts)
    if n_aborted > cfg.max_abort_fraction * cfg.n_paths:
        raise NumericalError(f"{n_aborted} of {cfg.n_paths} paths aborted on non-finite values")
    if n_aborted:
        log.warning("%d paths aborted on non-finite values", n_aborted)

    pct = np.asarray(cfg.percentiles, dtype=float)
    stats, mean = {}, {}
    for s in SERIES:
        full = np.concatenate([p[0][s] for p in parts], axis=1)
        stats[s] = np.percentile(full, pct, axis=1)
        mean[s] = full.mean(axis=1)
    n_rec = stats[SERIES[0]].shape[1]
    ages = np.round(cfg.start_age + np.arange(n_rec) * cfg.record_stride * cfg.dt, 9)
    return PathEnsemble(
        ages=ages,
        percentiles=tuple(float(x) for x in pct),
        stats=stats,
        mean=mean,
        total_consumption=np.concatenate([p[1] for p in parts]),
        n_paths=cfg.n_paths,
        n_aborted=n_aborted,
        n_ruined=sum(p[3] for p in parts),
        config=cfg,
    )


def annuity_rate(
    m: MortalityModel,
    mkt: MarketParams,
    pot: float,
    lam0: float,
    horizon: float = 120.0,
    dt: float = 1.0 / 52.0,
    tol: float = 1e-8,
    n_paths: int = 20_000,
    seed: int = 0,
    survival=None,
) -> float:
    """Level annuity bought by ``pot``: pot / int e^{-rt} S(t) dt.

    The trapezoidal integral is truncated once S drops below ``tol``.
    ``survival`` overrides the model's survival curve with a callable of t.
    """
    if not pot > 0:
        raise ValueError("pot must be > 0")
    ts = np.arange(int(math.ceil(horizon / dt)) + 1) * dt
    if survival is None:
        S = survival_curve(m, lam0, ts, n_paths=n_paths, dt=dt, seed=seed)
    else:
        S = np.asarray(survival(ts), dtype=float)
    keep = S >= tol
    if not keep.all():
        cut = int(np.argmin(keep)) + 1
        ts, S = ts[:cut], S[:cut]
    y = np.exp(-mkt.r * ts) * S
    return pot / float(np.trapezoid(y, ts))


class Shape(str, enum.Enum):
    LATE_RISING = "late-rising"
    HUMP_SHAPED = "hump-shaped"
    FLAT = "flat"
    OTHER = "other"


@dataclass(frozen=True)
class ShapeReport:
    shape: Shape
    expected: Shape
    consistent: bool
    peak_age: float
    end_to_peak: float  # final / peak of the median path

    @property
    def flagged(self) -> bool:
        return not self.consistent


def classify_path(ages: np.ndarray, y: np.ndarray, flat_tol: float = 1e-3) -> tuple[Shape, float, float]:
    y = np.asarray(y, dtype=float)
    peak = float(np.max(y))
    if peak <= 0.0:
        return Shape.FLAT, float(ages[0]), 0.0
    k = int(np.argmax(y))
    end_ratio = float(y[-1] / peak)
    if (peak - float(np.min(y))) <= flat_tol * peak:
        return Shape.FLAT, float(ages[k]), end_ratio
    if k >= len(y) - 2 or end_ratio > 0.99:
        return Shape.LATE_RISING, float(ages[k]), end_ratio
    if y[0] < peak and end_ratio < 0.5:
        return Shape.HUMP_SHAPED, float(ages[k]), end_ratio
    return Shape.OTHER, float(ages[k]), end_ratio


def consumption_shape_report(e: PathEnsemble, p1: Preferences) -> ShapeReport:
    """Classify the median consumption path and compare with the sign of alpha1."""
    shape, peak_age, ratio = classify_path(e.ages, e.series("consumption", 50.0))
    expected = Shape.LATE_RISING if p1.alpha < 0 else Shape.HUMP_SHAPED
    return ShapeReport(shape, expected, shape is expected, peak_age, ratio)


def sign_change_age(ages: np.ndarray, y: np.ndarray) -> float:
    """Age at which ``y`` last changes from negative to positive (NaN if never)."""
    y = np.asarray(y, dtype=float)
    idx = np.where((y[:-1] < 0) & (y[1:] >= 0))[0]
    if idx.size == 0:
        return math.nan
    k = int(idx[-1])
    # linear interpolation of the crossing
    return float(ages[k] + (ages[k + 1] - ages[k]) * (-y[k]) / (y[k + 1] - y[k]))
