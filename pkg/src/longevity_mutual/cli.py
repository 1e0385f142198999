"""Command-line entry point: ``longevity-mutual <command> [options]``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a target
missed under ``--check``.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, PRESET_NAMES, load_config
from .decumulation import (
    SERIES,
    annuity_rate,
    consumption_shape_report,
    sign_change_age,
    simulate,
)
from .hjb import (
    NumericalError,
    PdeSolution,
    benefit_numeric,
    fit_power_law,
    solve_cached,
    solve_finite,
    solve_infinite,
    solve_key,
)
from .mortality import MortalityDomainError
from .output import write_csv
from .preferences import PreferenceError, Preferences
from .pricing import clearing_check, control_fields, optimal_controls, price_field
from .stylized import alpha_axis, figure1_grid

log = logging.getLogger("longevity_mutual")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_MISS = 0, 1, 2, 3

# Published benefits (percent) for the CBD preset, keyed by (alpha1, alpha2).
PUBLISHED_BENEFITS = {
    (-5.0, -10.0): 7.76,
    (-2.0, -3.0): 0.62,
    (-3.0, -2.0): 0.5,
    (0.25, 0.15): 0.065,
}
BENEFIT_REL_TOL = 0.15
DIAGONAL_TOL_PP = 0.01
CLEARING_TOL = 1e-8


class CheckFailed(Exception):
    pass


@dataclass
class SolvedPair:
    g2: PdeSolution
    alone: PdeSolution
    g1: PdeSolution


class Runner:
    """Caches solves on disk under ``<out>/cache`` when enabled."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = cfg.mortality()
        self.cache_dir = cfg.out_dir / "cache" if cfg.cache else None

    def _key(self, kind: str, p: Preferences, extra: str = "") -> str:
        return solve_key(kind, self.cfg.model_name, self.cfg.market, p, self.cfg.solver, extra)

    def one_fund(self, p: Preferences) -> PdeSolution:
        return solve_cached(
            lambda: solve_infinite(self.model, self.cfg.market, p, self.cfg.solver),
            self.cache_dir,
            self._key("infinite", p),
        )

    def pair(self, p1: Preferences, p2: Preferences) -> SolvedPair:
        g2 = self.one_fund(p2)
        alone = self.one_fund(p1)
        g1 = solve_cached(
            lambda: solve_finite(self.model, self.cfg.market, p1, g2, self.cfg.solver, alone=alone),
            self.cache_dir,
            self._key("finite", p1, p2.label()),
        )
        return SolvedPair(g2, alone, g1)

    def cached_pair(self, p1: Preferences, p2: Preferences) -> SolvedPair | None:
        if self.cache_dir is None:
            return None
        keys = [self._key("infinite", p2), self._key("infinite", p1), self._key("finite", p1, p2.label())]
        paths = [self.cache_dir / f"{k}.npz" for k in keys]
        if not all(p.exists() for p in paths):
            return None
        return SolvedPair(*(PdeSolution.load(p) for p in paths))


def _write(cfg: ExperimentConfig, name: str, columns, rows, extra=None) -> Path:
    path = write_csv(cfg.out_dir / name, columns, rows, cfg.digest(), extra)
    log.info("wrote %s", path)
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_figure1(cfg: ExperimentConfig, args) -> None:
    lo, hi, res = cfg.fig1_alphas
    grid = figure1_grid(cfg.stylized_a, cfg.stylized_b, alpha_axis(lo, hi, res))
    rows = [(a1, a2, st, ben) for a1, a2, st, ben in grid.rows()]
    _write(cfg, "figure1.csv", ["alpha1", "alpha2", "status", "benefit_pct"], rows,
           {"model": f"stylized a={grid.a:g} b={grid.b:g}"})
    if cfg.svg:
        from .plotting import plot_figure1

        plot_figure1(grid, cfg.out_dir / "figure1.svg")
    diag = np.diag(grid.benefit_pct)
    n_bad = int(np.sum(grid.status != "well-posed"))
    print(f"figure1: {grid.alphas.size}^2 cells, ill-posed={n_bad}, max |diagonal|={np.nanmax(np.abs(diag)):.3g}%")
    diag_bad = grid.alphas[np.diag(grid.status) != "well-posed"]
    if diag_bad.size:
        print(f"figure1: {diag_bad.size} diagonal cells ill-posed, alpha in [{diag_bad.min():.3g}, {diag_bad.max():.3g}]")
    if args.check:
        if n_bad == 0:
            raise CheckFailed("no ill-posed region found")
        if diag_bad.size:
            raise CheckFailed(f"{diag_bad.size} diagonal cells are ill-posed")
        if np.max(np.abs(diag)) > 1e-9:
            raise CheckFailed("non-zero benefit on the diagonal")


def _parse_cells(spec: str | None) -> set[tuple[float, float]] | None:
    if not spec:
        return None
    out = set()
    for item in spec.split(","):
        a1, _, a2 = item.partition(":")
        if not _:
            raise ConfigError(f"cell {item!r} must look like alpha1:alpha2")
        out.add((_frac(a1), _frac(a2)))
    return out


def _frac(s: str) -> float:
    s = s.strip()
    if "/" in s:
        n, d = s.split("/")
        return float(n) / float(d)
    return float(s)


def _close(a: float, b: float) -> bool:
    return abs(a - b) < 1e-9


def table2_cell(run: Runner, p1: Preferences, p2: Preferences) -> dict:
    t0 = time.perf_counter()
    sol = run.pair(p1, p2)
    ben = benefit_numeric(sol.g1, sol.alone, p1)
    cs = optimal_controls(p1, run.cfg.market, sol.g1, sol.g2, 1.0, np.array([0.01]), 0.0, model=run.model)
    q = float(np.asarray(cs.q_c)[0])
    clr = clearing_check(sol.g2.prefs, sol.g2, price_field(run.model, sol.g2), run.model)
    fit = fit_power_law(sol.g1, 0.0)
    return {
        "benefit_pct": ben,
        "qc_per_wealth": q,
        "clearing_sup": clr,
        "fit_A": fit.A,
        "fit_B": fit.B,
        "newton_max_iter": sol.g1.diagnostics.get("max_newton_iterations", ""),
        "seconds": time.perf_counter() - t0,
    }


def cmd_table2(cfg: ExperimentConfig, args) -> None:
    run = Runner(cfg)
    wanted = _parse_cells(args.cells)
    cols = ["alpha1", "rho1", "alpha2", "rho2", "status", "benefit_pct", "published_pct", "qc_per_wealth",
            "clearing_sup", "fit_A", "fit_B", "message"]
    rows, misses = [], []
    for a2 in cfg.table2_alphas:
        for a1 in cfg.table2_alphas:
            if wanted is not None and not any(_close(a1, x) and _close(a2, y) for x, y in wanted):
                continue
            p1, p2 = cfg.table2_prefs(a1), cfg.table2_prefs(a2)
            ref = next((v for (x, y), v in PUBLISHED_BENEFITS.items() if _close(a1, x) and _close(a2, y)), math.nan)
            try:
                r = table2_cell(run, p1, p2)
            except (NumericalError, MortalityDomainError, FloatingPointError, ValueError) as exc:
                log.error("cell (%g, %g) failed: %s", a1, a2, exc)
                rows.append((a1, p1.rho, a2, p2.rho, "failed", math.nan, ref, math.nan, math.nan, math.nan,
                             math.nan, str(exc)))
                misses.append((a1, a2, "failed"))
                continue
            rows.append((a1, p1.rho, a2, p2.rho, "ok", r["benefit_pct"], ref, r["qc_per_wealth"],
                         r["clearing_sup"], r["fit_A"], r["fit_B"], ""))
            print(f"table2 alpha1={a1:g} alpha2={a2:g}: benefit {r['benefit_pct']:.4g}% "
                  f"(published {ref:g}%) in {r['seconds']:.1f}s", flush=True)
            if _close(a1, a2) and abs(r["benefit_pct"]) > DIAGONAL_TOL_PP:
                misses.append((a1, a2, r["benefit_pct"]))
            if math.isfinite(ref) and abs(r["benefit_pct"] - ref) > BENEFIT_REL_TOL * abs(ref):
                misses.append((a1, a2, r["benefit_pct"]))
            if r["clearing_sup"] > CLEARING_TOL:
                misses.append((a1, a2, "clearing"))
    _write(cfg, "table2.csv", cols, rows, {"model": cfg.model_name, "solver": cfg.solver.key()})
    if args.check and misses:
        raise CheckFailed(f"table 2 targets missed: {misses}")


def _fans(cfg: ExperimentConfig, args, pair: SolvedPair | None = None) -> None:
    run = Runner(cfg)
    p1, p2 = cfg.finite, cfg.infinite
    sol = pair if pair is not None else run.pair(p1, p2)
    e = simulate(run.model, cfg.market, p1, sol.g1, sol.g2, cfg.sim, threads=args.threads)
    ann = annuity_rate(run.model, cfg.market, cfg.sim.initial_pot, cfg.sim.initial_lambda)
    cols = ["age", "percentile", *SERIES]
    _write(cfg, "fans.csv", cols, e.rows(), {"paths": e.n_paths, "seed": cfg.sim.seed, "annuity": ann})
    shape = consumption_shape_report(e, p1)
    cross = sign_change_age(e.ages, e.series("pnl_yearly"))
    summary = [
        ("annuity_per_year", ann),
        ("consumption_shape", shape.shape.value),
        ("expected_shape", shape.expected.value),
        ("shape_consistent", shape.consistent),
        ("peak_age", shape.peak_age),
        ("end_to_peak", shape.end_to_peak),
        ("pnl_yearly_turns_positive_age", cross),
        ("mean_total_consumption", float(e.total_consumption.mean())),
        ("median_total_consumption", float(np.median(e.total_consumption))),
        ("paths_ruined", e.n_ruined),
        ("paths_aborted", e.n_aborted),
    ]
    _write(cfg, "fans_summary.csv", ["quantity", "value"], summary)
    if cfg.svg:
        from .plotting import plot_fan

        for s in ("consumption", "insurance_spend", "pnl_yearly", "wealth"):
            plot_fan(e, s, cfg.out_dir / f"fan_{s}.svg", annuity=ann)
    print(f"fans: annuity {ann:.0f}/yr, consumption {shape.shape.value} (expected {shape.expected.value}), "
          f"median yearly P&L turns positive at age {cross:.1f}")
    if args.check and not shape.consistent:
        raise CheckFailed("consumption shape disagrees with the sign of alpha1")


def cmd_fans(cfg: ExperimentConfig, args) -> None:
    _fans(cfg, args)


def cmd_simulate(cfg: ExperimentConfig, args) -> None:
    pair = Runner(cfg).cached_pair(cfg.finite, cfg.infinite)
    if pair is None:
        raise ConfigError("no cached solve for this configuration; run `solve` with the same config first")
    _fans(cfg, args, pair)


def cmd_solve(cfg: ExperimentConfig, args) -> None:
    run = Runner(cfg)
    p1, p2 = cfg.finite, cfg.infinite
    sol = run.pair(p1, p2)
    fields = control_fields(p1, cfg.market, run.model, sol.g1, sol.g2, 0.0)
    rows = zip(
        fields["lambda"], sol.g1.slice_log_g(0.0), sol.alone.slice_log_g(0.0), sol.g2.slice_log_g(0.0),
        fields["price"], fields["c_frac"], fields["pi_a"], fields["qc_per_wealth"],
    )
    cols = ["lambda", "log_alpha_g1", "log_alpha_g1_alone", "log_alpha_g2", "price", "c_frac", "pi_a",
            "qc_per_wealth"]
    f1, f2 = fit_power_law(sol.g1, 0.0), fit_power_law(sol.g2, 0.0)
    clr = clearing_check(p2, sol.g2, price_field(run.model, sol.g2), run.model)
    extra = {"A_fit_finite": f1.A, "B_fit_finite": f1.B, "A_fit_infinite": f2.A, "B_fit_infinite": f2.B,
             "clearing_sup": clr}
    _write(cfg, "solve.csv", cols, rows, extra)
    print(f"solve: finite fit A={f1.A:.6g} B={f1.B:.6g}; infinite fit A={f2.A:.6g} B={f2.B:.6g}; "
          f"clearing sup |q2|/w = {clr:.3e}")
    if not clr < CLEARING_TOL:
        raise NumericalError(f"clearing check {clr:.3e} exceeds {CLEARING_TOL:g}")


COMMANDS = {
    "figure1": (cmd_figure1, "figure1", "benefit heatmap under the stylized model"),
    "table2": (cmd_table2, "table2", "benefit matrix under the CBD model"),
    "fans": (cmd_fans, "fig2", "solve and simulate decumulation fan charts"),
    "solve": (cmd_solve, "fig2", "solve the finite and infinite fund problems"),
    "simulate": (cmd_simulate, "fig2", "simulate from a cached solve"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="longevity-mutual", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, default_preset, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI file layered over the preset")
        sp.add_argument("--preset", choices=PRESET_NAMES, default=default_preset)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--cells", help="table2 subset, e.g. --cells=-5:-10,1/4:3/20")
        sp.add_argument("--paths", type=int, help="number of simulated paths")
        sp.add_argument("--check", action="store_true", help="exit 3 if a reproduction target is missed")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1 or (args.paths is not None and args.paths < 1):
            raise ConfigError("--threads and --paths must be positive")
        cfg = load_config(args.config, args.preset).with_overrides(args.seed, args.paths, args.out)
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError, PreferenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, MortalityDomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckFailed as exc:
        print(f"target missed: {exc}", file=sys.stderr)
        return EXIT_MISS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
