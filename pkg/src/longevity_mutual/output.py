"""CSV output with a provenance header."""

from __future__ import annotations

import csv
import platform
from importlib import metadata
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_MODULES = ("numpy", "scipy", "numba", "matplotlib")


def versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    try:
        out["artifact"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["artifact"] = "unknown"
    for mod in _MODULES:
        try:
            out[mod] = metadata.version(mod)
        except metadata.PackageNotFoundError:
            out[mod] = "missing"
    return out


def header_lines(config_hash: str, extra: dict | None = None) -> list[str]:
    lines = [f"# config_hash: {config_hash}"]
    lines.append("# versions: " + " ".join(f"{k}={v}" for k, v in versions().items()))
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if np.isfinite(x) else ("nan" if np.isnan(x) else str(float(x)))
    return str(x)


def write_csv(
    path: Path, columns: Sequence[str], rows: Iterable[Sequence], config_hash: str, extra: dict | None = None
) -> Path:
    """Write rows with ``#`` header comments; floats use repr so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in header_lines(config_hash, extra):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open() as fh:
        body = [line for line in fh if not line.startswith("#")]
    rows = list(csv.reader(body))
    return rows[0], rows[1:]
