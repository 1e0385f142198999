"""SVG figures: benefit heatmap and decumulation fan charts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap  # noqa: E402

from .decumulation import PathEnsemble  # noqa: E402
from .stylized import Figure1Grid  # noqa: E402

# fixed metadata keeps SVG output byte-identical across runs
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams.update({"svg.hashsalt": "longevity-mutual", "font.size": 9})

# red up to 10 %, blending to blue at 50 % and above
_BENEFIT_CMAP = LinearSegmentedColormap.from_list(
    "benefit", [(0.0, "#c0392b"), (0.2, "#c0392b"), (1.0, "#1f4e9c")]
)


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_figure1(grid: Figure1Grid, path: Path) -> Path:
    """Benefit heatmap over (alpha1, alpha2); ill-posed cells are black."""
    data = np.clip(grid.benefit_pct, 0.0, 50.0)
    cmap = _BENEFIT_CMAP.copy()
    cmap.set_bad("black")
    a = grid.alphas
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    mesh = ax.pcolormesh(a, a, np.ma.masked_invalid(data).T, cmap=cmap, vmin=0.0, vmax=50.0, shading="nearest")
    ax.set_xlabel(r"$\alpha_1$ (finite fund)")
    ax.set_ylabel(r"$\alpha_2$ (infinite fund)")
    ax.set_title(f"Insurance benefit, a={grid.a:g}, b={grid.b:g}")
    cb = fig.colorbar(mesh, ax=ax)
    cb.set_label("benefit (%), clipped at 50")
    fig.tight_layout()
    return _save(fig, path)


_FAN_LABELS = {
    "consumption": "consumption per year",
    "insurance_spend": "insurance spend per year",
    "insurance_contracts": "contracts held",
    "pnl": "cumulative insurance P&L",
    "pnl_yearly": "insurance P&L per year",
    "wealth": "wealth",
}


def plot_fan(e: PathEnsemble, series: str, path: Path, annuity: float | None = None) -> Path:
    """Shaded percentile bands with the median as a line."""
    y = e.stats[series]
    pct = list(e.percentiles)
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    n = len(pct)
    for i in range(n // 2):
        shade = 0.25 + 0.35 * i / max(1, n // 2 - 1)
        ax.fill_between(e.ages, y[i], y[n - 1 - i], color="#1f4e9c", alpha=shade, lw=0,
                        label=f"{pct[i]:g}-{pct[n - 1 - i]:g}%")
    if n % 2:
        ax.plot(e.ages, y[n // 2], color="black", lw=1.2, label=f"{pct[n // 2]:g}%")
    if annuity is not None and series == "consumption":
        ax.axhline(annuity, color="#c0392b", ls="--", lw=1.0, label="level annuity")
    if series.startswith("pnl"):
        ax.axhline(0.0, color="grey", lw=0.6)
    ax.set_xlabel("age")
    ax.set_ylabel(_FAN_LABELS.get(series, series))
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
