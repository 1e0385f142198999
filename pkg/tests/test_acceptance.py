"""Reproduction targets, one test and one PASS/FAIL line per criterion.

Runs at the default resolution and takes several minutes.
"""

import csv
import itertools
import math
import time

import numpy as np
import pytest

from longevity_mutual.cli import BENEFIT_REL_TOL, CLEARING_TOL, DIAGONAL_TOL_PP, PUBLISHED_BENEFITS, Runner, main
from longevity_mutual.config import load_config
from longevity_mutual.decumulation import Shape, annuity_rate, classify_path
from longevity_mutual.hjb import SolverConfig, benefit_numeric, solve_finite, solve_infinite
from longevity_mutual.market import DEFAULT_MARKET, ZERO_MARKET
from longevity_mutual.mortality import StylizedParams, stylized_model
from longevity_mutual.preferences import Preferences, value_drift_estimate, aggregator
from longevity_mutual.pricing import clearing_check, optimal_controls, price_field
from longevity_mutual.stylized import alpha_axis, figure1_grid, solve_stylized, stylized_insurance_rate

from .conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

ORACLE_PAIRS = [
    (Preferences.vnm(-2.0), Preferences.vnm(-1.0)),
    (Preferences.vnm(0.5), Preferences.vnm(-1.0)),
    (Preferences.vnm(-1.0), Preferences.vnm(-0.5)),
]
ORACLE_TOL = 0.01
ORDER_MIN = 1.8
SOLVE_SECONDS = 120.0
ANNUITY_TARGET, ANNUITY_TOL, ANNUITY_SECONDS = 5000.0, 0.05, 60.0
AGGREGATOR_TOL = 1e-6
PNL_CROSS_AGE, PNL_CROSS_TOL = 105.0, 5.0
HUMP_END_AGE, HUMP_END_FRACTION = 110.0, 0.01

CLEARING_SEEN: dict[str, float] = {}


def report(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def table2_runner(tmp_path_factory):
    cfg = load_config(preset="table2").with_overrides(out=str(tmp_path_factory.mktemp("table2")))
    return Runner(cfg)


@pytest.fixture(scope="module")
def fan_dirs(tmp_path_factory):
    return {name: tmp_path_factory.mktemp(name) for name in ("fig2", "fig3")}


def test_stylized_oracle_equivalence():
    cfg = load_config(preset="stylized").solver
    m = stylized_model(StylizedParams(4.0, 1.0))
    worst_err, worst_time = 0.0, 0.0
    for p1, p2 in ORACLE_PAIRS:
        closed = solve_stylized(4.0, 1.0, p1, p2)
        assert closed.well_posed
        g2, t2 = _timed(lambda: solve_infinite(m, ZERO_MARKET, p2, cfg))
        g1, t1 = _timed(lambda: solve_finite(m, ZERO_MARKET, p1, g2, cfg))
        worst_time = max(worst_time, t1, t2)
        lam = g2.lam
        keep = (lam >= 0.01) & (lam <= 10.0)
        for sol, exact in ((g2, closed.g2), (g1, closed.g1)):
            num = np.exp(sol.slice_log_g(0.0)) / sol.prefs.alpha
            worst_err = max(worst_err, float(np.max(np.abs(num[keep] / exact(lam[keep]) - 1.0))))
        CLEARING_SEEN[f"stylized {p1.label()}|{p2.label()}"] = clearing_check(p2, g2, price_field(m, g2), m)

    grids = [201, 401, 801]
    sols = []
    p1, p2 = ORACLE_PAIRS[0]
    for n in grids:
        c = SolverConfig(nL=n, nT=500, T_final=5.0)
        g2 = solve_infinite(m, ZERO_MARKET, p2, c)
        sols.append(solve_finite(m, ZERO_MARKET, p1, g2, c).log_g[0])
    L0 = SolverConfig(nL=grids[0]).grid()
    keep = (np.exp(L0) >= 0.01) & (np.exp(L0) <= 10.0)
    d = [np.max(np.abs(sols[k + 1][:: 2 ** (k + 1)] - sols[k][:: 2**k])[keep]) for k in range(2)]
    order = math.log2(d[0] / d[1])
    ok = worst_err < ORACLE_TOL and order >= ORDER_MIN and worst_time < SOLVE_SECONDS
    report(
        "stylized oracle",
        ok,
        f"max rel err {worst_err:.2e} (< {ORACLE_TOL}), order {order:.2f} (>= {ORDER_MIN}), "
        f"slowest solve {worst_time:.0f}s (< {SOLVE_SECONDS:.0f}s)",
    )


def test_table2_subset(table2_runner):
    run = table2_runner
    cfg = run.cfg
    misses, parts = [], []
    for (a1, a2), ref in PUBLISHED_BENEFITS.items():
        p1, p2 = cfg.table2_prefs(a1), cfg.table2_prefs(a2)
        sol = run.pair(p1, p2)
        b = benefit_numeric(sol.g1, sol.alone, p1)
        parts.append(f"({a1:g},{a2:g})={b:.3f}% vs {ref:g}%")
        if abs(b - ref) > BENEFIT_REL_TOL * abs(ref):
            misses.append((a1, a2))
        CLEARING_SEEN[f"cbd {p1.label()}|{p2.label()}"] = clearing_check(
            p2, sol.g2, price_field(run.model, sol.g2), run.model
        )
    worst_diag = 0.0
    for a in cfg.table2_alphas:
        p = cfg.table2_prefs(a)
        sol = run.pair(p, p)
        worst_diag = max(worst_diag, abs(benefit_numeric(sol.g1, sol.alone, p)))
    ok = not misses and worst_diag <= DIAGONAL_TOL_PP
    report("table 2 subset", ok, f"{'; '.join(parts)}; max |diagonal| {worst_diag:.1e} pp")


def test_annuity_benchmark():
    cfg = load_config(preset="table2")
    a, secs = _timed(lambda: annuity_rate(cfg.mortality(), cfg.market, cfg.sim.initial_pot, cfg.sim.initial_lambda))
    ok = abs(a - ANNUITY_TARGET) <= ANNUITY_TOL * ANNUITY_TARGET and secs < ANNUITY_SECONDS
    report("annuity benchmark", ok, f"{a:.0f}/yr vs {ANNUITY_TARGET:.0f} +- {ANNUITY_TOL:.0%}, {secs:.1f}s")


def test_aggregator_limit():
    p = Preferences(-3.0, -1.0, 0.02)
    grid = itertools.product(np.linspace(0.2, 5.0, 5), np.linspace(0.1, 4.0, 5), np.geomspace(0.005, 0.5, 4))
    worst_rich, orders = 0.0, []
    for c, v_abs, lam in grid:
        V = v_abs / p.alpha
        f = aggregator(p, c, V, lam)
        e1 = abs(value_drift_estimate(p, c, V, lam, 2e-3, richardson=False) + f)
        e2 = abs(value_drift_estimate(p, c, V, lam, 1e-3, richardson=False) + f)
        orders.append(math.log2(e1 / e2))
        rich = value_drift_estimate(p, c, V, lam, 1e-4)
        worst_rich = max(worst_rich, abs(rich + f) / max(1.0, abs(f)))
    lo, hi = min(orders), max(orders)
    ok = worst_rich < AGGREGATOR_TOL and 0.9 <= lo and hi <= 1.1
    report("aggregator limit", ok, f"100 points, order in [{lo:.3f}, {hi:.3f}], Richardson err {worst_rich:.1e}")


def test_direction_of_trade(table2_runner):
    run = table2_runner
    alphas = (-10.0, -5.0, -3.0, -2.0)
    bad = []
    for a1, a2 in itertools.permutations(alphas, 2):
        p1, p2 = Preferences(a1, -1.0), Preferences(a2, -1.0)
        q_sty = float(stylized_insurance_rate(1.0, 0.01, p1, p2))
        if np.sign(q_sty) != np.sign(a1 - a2):
            bad.append(("stylized", a1, a2))
        sol = run.pair(p1, p2)
        q_cbd = float(optimal_controls(p1, run.cfg.market, sol.g1, sol.g2, 1.0, np.array([0.01]), 0.0).q_c[0])
        if np.sign(q_cbd) != np.sign(a1 - a2):
            bad.append(("cbd", a1, a2))
    report("direction of trade", not bad, f"12 ordered pairs x 2 models, mismatches {bad or 'none'}")


def _summary(path):
    with open(path) as f:
        return dict(csv.reader(line for line in f if not line.startswith("#")))


def _median_series(path, series):
    with open(path) as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    rows = [r for r in rows if float(r["percentile"]) == 50.0]
    return np.array([float(r["age"]) for r in rows]), np.array([float(r[series]) for r in rows])


def _run_fans(preset, out):
    args = ["--preset", preset, "--paths", "10000", "--out", str(out)]
    assert main(["fans", *args]) == 0
    first = (out / "fans.csv").read_bytes()
    assert main(["simulate", *args]) == 0
    return first == (out / "fans.csv").read_bytes()


def test_fan_charts(fan_dirs):
    msgs, ok = [], True
    for preset in ("fig2", "fig3"):
        out = fan_dirs[preset]
        same = _run_fans(preset, out)
        ok &= same
        s = _summary(out / "fans_summary.csv")
        ages, cons = _median_series(out / "fans.csv", "consumption")
        if preset == "fig2":
            _, pnl = _median_series(out / "fans.csv", "pnl_yearly")
            cross = float(s["pnl_yearly_turns_positive_age"])
            neg_before = bool(np.all(pnl[(ages > ages[0]) & (ages < 100)] < 0))  # first record is the start
            good = (s["consumption_shape"] == Shape.LATE_RISING.value and neg_before
                    and abs(cross - PNL_CROSS_AGE) <= PNL_CROSS_TOL)
            msgs.append(f"alpha1<0: consumption {s['consumption_shape']}, P&L<0 before 100 {neg_before}, "
                        f"turns positive at {cross:.1f}")
        else:
            _, spend = _median_series(out / "fans.csv", "insurance_spend")
            peak = float(np.max(cons))
            late = float(np.max(cons[ages >= HUMP_END_AGE])) / peak if peak > 0 else math.nan
            spend_shape = classify_path(ages, np.abs(spend))[0]
            good = (s["consumption_shape"] == Shape.HUMP_SHAPED.value and late < HUMP_END_FRACTION
                    and spend_shape is Shape.HUMP_SHAPED)
            msgs.append(f"alpha1>0: consumption {s['consumption_shape']}, after 110 {late:.1%} of peak, "
                        f"insurance spend {spend_shape.value}")
        ok &= good
        msgs.append(f"rerun byte-identical {same}")
    report("fan charts", bool(ok), "; ".join(msgs))


def test_figure1_classification():
    grid = figure1_grid(4.0, 1.0, alpha_axis(-10.0, 1.0, 111))
    ill = int(np.sum(grid.status != "well-posed"))
    diag_status = np.diag(grid.status)
    diag_ill = grid.alphas[diag_status != "well-posed"]
    diag_ben = np.diag(grid.benefit_pct)
    worst = float(np.nanmax(np.abs(diag_ben))) if np.any(np.isfinite(diag_ben)) else math.nan
    ok = ill > 0 and diag_ill.size == 0 and worst <= DIAGONAL_TOL_PP
    detail = f"{ill} ill-posed cells, max |diagonal| {worst:.1e} pp"
    if diag_ill.size:
        detail += f", diagonal ill-posed for alpha in [{diag_ill.min():g}, {diag_ill.max():g}]"
    report("figure 1 classification", ok, detail)


def test_market_clearing():
    assert CLEARING_SEEN, "run together with the solve-based criteria"
    worst = max(CLEARING_SEEN.values())
    report("market clearing", worst < CLEARING_TOL, f"{len(CLEARING_SEEN)} configurations, sup |q2|/w {worst:.1e}")
