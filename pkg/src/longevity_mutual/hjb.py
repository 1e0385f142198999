"""Crank-Nicolson solver for the finite/infinite fund HJB equations.

Both PDEs are solved for u = log(alpha g) on a uniform grid in L = log(lambda),
backwards from a terminal time. With s = vol/lambda and
beta = drift/lambda - s^2/2 the equations read

    u_t + beta u_L + s^2 (u_LL + u_L^2) / 2 - kappa s^2 (u_L - v_L)^2
        + S(lambda) - xi exp(u / xi) = 0

where xi = alpha (rho - 1) / rho, S = market term + (alpha - 1) lambda and
kappa = alpha1 / (2 (alpha1 - 1)). The infinite (one-fund) problem has
kappa = 0; the finite fund couples to the infinite fund through
v_L = d/dL log g2.

Each time step is the nonlinear Crank-Nicolson equation solved by Newton
iteration on a banded Jacobian.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numba import njit

from .market import MarketParams
from .mortality import MortalityModel
from .preferences import Preferences

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Non-finite values or a singular system during a PDE solve."""

    def __init__(self, msg: str, L: float | None = None, t: float | None = None):
        where = "" if L is None else f" at L={L:.4g} (lambda={math.exp(L):.4g}), t={t:.4g}"
        super().__init__(msg + where)
        self.L = L
        self.t = t


@dataclass(frozen=True)
class SolverConfig:
    L_min: float = math.log(0.001)
    L_max: float = math.log(20.0)
    nL: int = 801
    T_final: float = 150.0
    nT: int = 15000
    theta: float = 0.5
    predictor: str = "linearized"
    newton_tol: float = 1e-10
    max_iter: int = 8
    save_every: int = 10
    # terminal time of the finite-fund solve; None means T_final
    T_final_finite: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.L_min < self.L_max:
            raise ValueError("L_min must be < L_max")
        if self.nL < 3:
            raise ValueError("nL must be >= 3")
        if self.nT < 1:
            raise ValueError("nT must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.predictor not in ("linearized", "explicit"):
            raise ValueError(f"unknown predictor {self.predictor!r}")

    @property
    def dt(self) -> float:
        return self.T_final / self.nT

    def grid(self) -> np.ndarray:
        return np.linspace(self.L_min, self.L_max, self.nL)

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PowerFit:
    A: float
    B: float
    residual: float

    def log_g(self, lam):
        return math.log(self.A) + self.B * np.log(lam)


@dataclass
class PdeSolution:
    """Solution lattice. ``log_g`` holds log(alpha g), which is always real."""

    L: np.ndarray
    t: np.ndarray  # ascending saved times
    log_g: np.ndarray  # shape (len(t), len(L))
    prefs: Preferences
    kind: str
    boundary_t: np.ndarray  # ascending, every time step
    boundary_left: np.ndarray  # d/dL log g at L_min
    boundary_right: np.ndarray  # d/dL log g at L_max
    diagnostics: dict = field(default_factory=dict)

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.L)

    @property
    def h(self) -> float:
        return float(self.L[1] - self.L[0])

    @property
    def xi(self) -> float:
        return self.prefs.xi

    @property
    def dlog_g_dL(self) -> np.ndarray:
        return np.gradient(self.log_g, self.h, axis=1, edge_order=2)

    @property
    def fitted_power(self) -> PowerFit:
        return fit_power_law(self, float(self.t[0]))

    def _time_weights(self, t: float):
        if t < self.t[0] - 1e-9 or t > self.t[-1] + 1e-9:
            raise ValueError(f"t={t} outside solved range [{self.t[0]}, {self.t[-1]}]")
        j = int(np.clip(np.searchsorted(self.t, t) - 1, 0, len(self.t) - 2))
        w = (t - self.t[j]) / (self.t[j + 1] - self.t[j])
        return j, min(max(w, 0.0), 1.0)

    def slice_log_g(self, t: float) -> np.ndarray:
        if len(self.t) == 1:
            return self.log_g[0]
        j, w = self._time_weights(t)
        return (1 - w) * self.log_g[j] + w * self.log_g[j + 1]

    def slice_dlog_g_dL(self, t: float) -> np.ndarray:
        return np.gradient(self.slice_log_g(t), self.h, edge_order=2)

    def log_g_at(self, lam, t: float):
        return np.interp(np.log(lam), self.L, self.slice_log_g(t))

    def dlog_g_dlam_at(self, lam, t: float):
        """d/d lambda of log g = (d/dL log g) / lambda."""
        return np.interp(np.log(lam), self.L, self.slice_dlog_g_dL(t)) / np.asarray(lam)

    def in_range(self, lam) -> bool:
        ll = np.log(np.asarray(lam, dtype=float))
        return bool(np.all((ll >= self.L[0] - 1e-12) & (ll <= self.L[-1] + 1e-12)))

    def restricted(self, lam_lo: float = 0.01, lam_hi: float = 10.0) -> "PdeSolution":
        m = (self.lam >= lam_lo * (1 - 1e-12)) & (self.lam <= lam_hi * (1 + 1e-12))
        return PdeSolution(
            L=self.L[m],
            t=self.t,
            log_g=self.log_g[:, m],
            prefs=self.prefs,
            kind=self.kind,
            boundary_t=self.boundary_t,
            boundary_left=self.boundary_left,
            boundary_right=self.boundary_right,
            diagnostics=dict(self.diagnostics, restricted=(lam_lo, lam_hi)),
        )

    def save(self, path: Path) -> None:
        np.savez_compressed(
            path,
            L=self.L,
            t=self.t,
            log_g=self.log_g,
            alpha=self.prefs.alpha,
            rho=self.prefs.rho,
            delta=self.prefs.delta,
            kind=self.kind,
            boundary_t=self.boundary_t,
            boundary_left=self.boundary_left,
            boundary_right=self.boundary_right,
            diagnostics=json.dumps(self.diagnostics, default=str),
        )

    @classmethod
    def load(cls, path: Path) -> "PdeSolution":
        with np.load(path, allow_pickle=False) as z:
            return cls(
                L=z["L"],
                t=z["t"],
                log_g=z["log_g"],
                prefs=Preferences(float(z["alpha"]), float(z["rho"]), float(z["delta"])),
                kind=str(z["kind"]),
                boundary_t=z["boundary_t"],
                boundary_left=z["boundary_left"],
                boundary_right=z["boundary_right"],
                diagnostics=json.loads(str(z["diagnostics"])),
            )


def fit_power_law(sol: PdeSolution, t: float, lam_lo: float = 0.01, lam_hi: float = 10.0) -> PowerFit:
    """Least-squares fit alpha g ~ A lambda^B over [lam_lo, lam_hi] at time t."""
    m = (sol.lam >= lam_lo) & (sol.lam <= lam_hi)
    x = sol.L[m]
    y = sol.slice_log_g(t)[m]
    B, logA = np.polyfit(x, y, 1)
    res = y - (logA + B * x)
    return PowerFit(A=math.exp(logA), B=float(B), residual=float(np.sqrt(np.mean(res**2))))


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


@dataclass
class _Problem:
    """Everything the stepper needs; coefficient callables take t (years)."""

    L: np.ndarray
    xi: float
    coef: Callable[[float], tuple[np.ndarray, np.ndarray, np.ndarray]]  # beta, s2, source
    bc_left: Optional[Callable[[float], float]]  # None: no condition (outflow)
    bc_right: Callable[[float], float]
    kappa: float = 0.0
    coupling: Optional[Callable[[float], np.ndarray]] = None


@njit(cache=True)
def _operator(u, h, beta, s2, src, xi, kappa, vL, gl, gr, left_free, jac):
    """F(u) and, if ``jac``, the banded Jacobian rows (lo, diag, up1, up2)."""
    n = u.size
    F = np.empty(n)
    lo = np.zeros(n)
    dg = np.zeros(n)
    up1 = np.zeros(n)
    up2 = np.zeros(n)
    inv2h = 1.0 / (2.0 * h)
    ih2 = 1.0 / (h * h)
    for i in range(n):
        if i == 0:
            if left_free:
                d1 = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * inv2h
                d2 = (u[0] - 2.0 * u[1] + u[2]) * ih2
            else:
                d1 = gl
                d2 = (2.0 * u[1] - 2.0 * u[0] - 2.0 * h * gl) * ih2
        elif i == n - 1:
            d1 = gr
            d2 = (2.0 * u[n - 2] - 2.0 * u[n - 1] + 2.0 * h * gr) * ih2
        else:
            d1 = (u[i + 1] - u[i - 1]) * inv2h
            d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * ih2
        e = math.exp(u[i] / xi)
        c1 = beta[i] + s2[i] * d1
        f = beta[i] * d1 + 0.5 * s2[i] * (d2 + d1 * d1) + src[i] - xi * e
        if kappa != 0.0:
            dd = d1 - vL[i]
            f -= kappa * s2[i] * dd * dd
            c1 -= 2.0 * kappa * s2[i] * dd
        F[i] = f
        if jac:
            c2 = 0.5 * s2[i]
            if i == 0:
                if left_free:
                    dg[0] = -3.0 * c1 * inv2h + c2 * ih2
                    up1[0] = 4.0 * c1 * inv2h - 2.0 * c2 * ih2
                    up2[0] = -c1 * inv2h + c2 * ih2
                else:
                    dg[0] = -2.0 * c2 * ih2
                    up1[0] = 2.0 * c2 * ih2
            elif i == n - 1:
                dg[i] = -2.0 * c2 * ih2
                lo[i] = 2.0 * c2 * ih2
            else:
                lo[i] = -c1 * inv2h + c2 * ih2
                up1[i] = c1 * inv2h + c2 * ih2
                dg[i] = -2.0 * c2 * ih2
            dg[i] -= e
    return F, lo, dg, up1, up2


@njit(cache=True)
def _newton_update(v, base, scale, h, beta, s2, src, xi, kappa, vL, gl, gr, left_free):
    """Solve (I - scale J) delta = -(v - base - scale F(v)) by the Thomas algorithm."""
    F, lo, dg, up1, up2 = _operator(v, h, beta, s2, src, xi, kappa, vL, gl, gr, left_free, True)
    n = v.size
    a = np.empty(n)  # sub-diagonal
    b = np.empty(n)
    c = np.empty(n)
    d = np.empty(n)
    for i in range(n):
        a[i] = -scale * lo[i]
        b[i] = 1.0 - scale * dg[i]
        c[i] = -scale * up1[i]
        d[i] = -(v[i] - base[i] - scale * F[i])
    # row 0 may reach column 2; eliminate it with row 1
    e02 = -scale * up2[0]
    if e02 != 0.0:
        f = e02 / c[1]
        b[0] -= f * a[1]
        c[0] -= f * b[1]
        d[0] -= f * d[1]
    for i in range(1, n):
        if b[i - 1] == 0.0:
            return np.full(n, np.nan)
        w = a[i] / b[i - 1]
        b[i] -= w * c[i - 1]
        d[i] -= w * d[i - 1]
    out = np.empty(n)
    out[n - 1] = d[n - 1] / b[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = (d[i] - c[i] * out[i + 1]) / b[i]
    return out


def _march(pb: _Problem, u_T: np.ndarray, T: float, nT: int, cfg: SolverConfig, label: str):
    """Backward march from t = T to t = 0. Returns saved slices and boundary series."""
    h = float(pb.L[1] - pb.L[0])
    dt = T / nT
    th = cfg.theta
    n_pts = pb.L.size
    no_coupling = np.zeros(n_pts)
    left_free = pb.bc_left is None
    u = u_T.astype(float).copy()
    saved_t = [T]
    saved_u = [u.copy()]
    bt = np.empty(nT + 1)
    bl = np.empty(nT + 1)
    br = np.empty(nT + 1)

    def record(k, uu, tt):
        bt[k] = tt
        bl[k] = (-3 * uu[0] + 4 * uu[1] - uu[2]) / (2 * h)
        br[k] = (3 * uu[-1] - 4 * uu[-2] + uu[-3]) / (2 * h)

    def state(t):
        beta, s2, src = pb.coef(t)
        gl = 0.0 if left_free else float(pb.bc_left(t))
        vL = no_coupling if pb.kappa == 0.0 else np.ascontiguousarray(pb.coupling(t), dtype=float)
        return beta, s2, src, gl, float(pb.bc_right(t)), vL

    record(0, u, T)
    max_iters = 0
    cur = state(T)
    for n in range(nT):
        t_new = T - (n + 1) * dt
        beta, s2, src, gl, gr, vL = cur
        F_old = _operator(u, h, beta, s2, src, pb.xi, pb.kappa, vL, gl, gr, left_free, False)[0]
        base = u + (1 - th) * dt * F_old
        nxt = state(t_new)
        beta, s2, src, gl, gr, vL = nxt
        if cfg.predictor == "explicit":
            v = u + dt * F_old
        else:
            v = u
        for it in range(cfg.max_iter):
            delta = _newton_update(v, base, th * dt, h, beta, s2, src, pb.xi, pb.kappa, vL, gl, gr, left_free)
            v = v + delta
            if not np.all(np.isfinite(v)):
                i = int(np.argmin(np.isfinite(v)))
                raise NumericalError(f"{label}: non-finite value", float(pb.L[i]), t_new)
            if np.max(np.abs(delta)) < cfg.newton_tol * max(1.0, np.max(np.abs(v))):
                break
        max_iters = max(max_iters, it + 1)
        u = v
        cur = nxt
        record(n + 1, u, t_new)
        if (n + 1) % cfg.save_every == 0 or n + 1 == nT:
            saved_t.append(t_new)
            saved_u.append(u.copy())
    order = slice(None, None, -1)
    return (
        np.array(saved_t)[order],
        np.array(saved_u)[order],
        bt[order],
        bl[order],
        br[order],
        {"max_newton_iterations": max_iters, "dt": dt, "T_final": T},
    )


def _coef_factory(m: MortalityModel, mkt: MarketParams, p: Preferences, L: np.ndarray, with_vol: bool):
    lam = np.exp(L)
    market = mkt.growth_term(p.alpha)
    src = market + (p.alpha - 1.0) * lam
    zero = np.zeros_like(lam)
    cache: dict = {}

    def coef(t: float):
        if m.time_homogeneous and "v" in cache:
            return cache["v"]
        drift = np.asarray(m.drift(lam, t), dtype=float)
        if with_vol:
            s = np.asarray(m.vol(lam, t), dtype=float) / lam
            s2 = s * s
        else:
            s2 = zero
        out = (drift / lam - 0.5 * s2, s2, src)
        if m.time_homogeneous:
            cache["v"] = out
        return out

    return coef


def _payoff(L: np.ndarray, p: Preferences) -> np.ndarray:
    """Terminal condition alpha g = lambda^xi."""
    return p.xi * L


def _boundary_fn(sol_t: np.ndarray, values: np.ndarray):
    return lambda t: float(np.interp(t, sol_t, values))


def solve_deterministic(
    m: MortalityModel, mkt: MarketParams, p: Preferences, cfg: SolverConfig, T: float | None = None
) -> PdeSolution:
    """One-fund problem with the mortality volatility switched off.

    Characteristics leave through L_min, so only the L_max condition
    d/dL log g = xi is imposed.
    """
    T = cfg.T_final if T is None else T
    nT = max(1, int(round(cfg.nT * T / cfg.T_final)))
    L = cfg.grid()
    pb = _Problem(
        L=L,
        xi=p.xi,
        coef=_coef_factory(m, mkt, p, L, with_vol=False),
        bc_left=None,
        bc_right=lambda t: p.xi,
    )
    t, u, bt, bl, br, diag = _march(pb, _payoff(L, p), T, nT, cfg, "deterministic")
    return PdeSolution(L, t, u, p, "deterministic", bt, bl, br, diag)


def solve_infinite(
    m: MortalityModel,
    mkt: MarketParams,
    p2: Preferences,
    cfg: SolverConfig,
    T: float | None = None,
    presolve: PdeSolution | None = None,
) -> PdeSolution:
    """Value function of a fund that does not trade insurance (the infinite fund).

    Neumann data at both ends come from the zero-volatility solve.
    """
    T = cfg.T_final if T is None else T
    nT = max(1, int(round(cfg.nT * T / cfg.T_final)))
    L = cfg.grid()
    det = presolve if presolve is not None else solve_deterministic(m, mkt, p2, cfg, T)
    if m.deterministic:
        det.kind = "infinite"
        return det
    pb = _Problem(
        L=L,
        xi=p2.xi,
        coef=_coef_factory(m, mkt, p2, L, with_vol=True),
        bc_left=_boundary_fn(det.boundary_t, det.boundary_left),
        bc_right=_boundary_fn(det.boundary_t, det.boundary_right),
    )
    t, u, bt, bl, br, diag = _march(pb, _payoff(L, p2), T, nT, cfg, "infinite")
    diag["config_key"] = cfg.key()
    return PdeSolution(L, t, u, p2, "infinite", bt, bl, br, diag)


solve_one_fund = solve_infinite


def solve_finite(
    m: MortalityModel,
    mkt: MarketParams,
    p1: Preferences,
    g2: PdeSolution,
    cfg: SolverConfig,
    alone: PdeSolution | None = None,
    T: float | None = None,
) -> PdeSolution:
    """Value function of the finite fund trading with the infinite fund ``g2``.

    ``alone`` is the finite fund's own one-fund solution; its boundary
    derivatives are the Neumann data. It is computed if not supplied.
    """
    if T is None:
        T = cfg.T_final if cfg.T_final_finite is None else cfg.T_final_finite
    nT = max(1, int(round(cfg.nT * T / cfg.T_final)))
    L = cfg.grid()
    if g2.L.shape != L.shape or not np.allclose(g2.L, L, rtol=0, atol=1e-12):
        raise ValueError("infinite-fund lattice does not match the solver grid")
    if g2.t[-1] < T - 1e-9:
        raise ValueError("infinite-fund solution does not cover the finite-fund horizon")
    if alone is None:
        alone = solve_infinite(m, mkt, p1, cfg)
    dvdl = g2.dlog_g_dL

    def coupling(t: float) -> np.ndarray:
        j, w = g2._time_weights(t)
        return (1 - w) * dvdl[j] + w * dvdl[j + 1]

    pb = _Problem(
        L=L,
        xi=p1.xi,
        coef=_coef_factory(m, mkt, p1, L, with_vol=not m.deterministic),
        bc_left=_boundary_fn(alone.boundary_t, alone.boundary_left),
        bc_right=_boundary_fn(alone.boundary_t, alone.boundary_right),
        kappa=p1.alpha / (2.0 * (p1.alpha - 1.0)),
        coupling=coupling,
    )
    t, u, bt, bl, br, diag = _march(pb, _payoff(L, p1), T, nT, cfg, "finite")
    diag["config_key"] = cfg.key()
    return PdeSolution(L, t, u, p1, "finite", bt, bl, br, diag)


def benefit_numeric(
    g1_insured: PdeSolution,
    g1_alone: PdeSolution,
    p1: Preferences,
    lam0: float = 0.01,
    t0: float = 0.0,
    method: str = "lattice",
) -> float:
    """Insurance benefit (percent) at (lam0, t0).

    ``method="lattice"`` interpolates log g on the grid; ``"power_law"`` reads
    both g's from their fitted power laws at t0.
    """
    for s in (g1_insured, g1_alone):
        if not s.in_range(lam0):
            raise ValueError(f"lambda={lam0} outside solution lattice")
    if method == "lattice":
        du = g1_insured.log_g_at(lam0, t0) - g1_alone.log_g_at(lam0, t0)
    elif method == "power_law":
        f1 = fit_power_law(g1_insured, t0)
        f0 = fit_power_law(g1_alone, t0)
        du = f1.log_g(lam0) - f0.log_g(lam0)
    else:
        raise ValueError(f"unknown method {method!r}")
    # g_I / g_NI = exp(du) > 0 by construction of the log form
    ratio = math.exp(float(du) / p1.alpha)
    if not np.isfinite(ratio):
        raise NumericalError("benefit ratio is not finite")
    return 100.0 * (ratio - 1.0)


def solve_cached(fn, cache_dir: Path | None, key: str) -> PdeSolution:
    """Memoise a solve in ``cache_dir`` under ``key``."""
    if cache_dir is None:
        return fn()
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{key}.npz"
    if path.exists():
        return PdeSolution.load(path)
    sol = fn()
    sol.save(path)
    return sol


def solve_key(kind: str, model_name: str, mkt: MarketParams, p: Preferences, cfg: SolverConfig, extra: str = "") -> str:
    blob = json.dumps(
        [kind, model_name, asdict(mkt), [p.alpha, p.rho, p.delta], asdict(cfg), extra], sort_keys=True
    ).encode()
    return f"{kind}-{hashlib.sha256(blob).hexdigest()[:20]}"
