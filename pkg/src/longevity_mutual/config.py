"""Experiment configuration read from INI files.

Every run starts from the packaged ``base.ini`` and layers a named preset
and/or a user file on top, so a preset only lists the keys it changes.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .hjb import SolverConfig
from .market import MarketParams
from .mortality import PRESETS, MortalityModel, StylizedParams, cbd_model, stylized_model
from .preferences import PreferenceError, Preferences
from .decumulation import SimConfig

PRESET_NAMES = ("figure1", "table2", "fig2", "fig3", "stylized")


class ConfigError(ValueError):
    pass


def _read_preset(parser: configparser.ConfigParser, name: str) -> None:
    text = resources.files(__package__).joinpath("presets", f"{name}.ini").read_text()
    parser.read_string(text, source=name)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    model_preset: str
    stylized_a: float
    stylized_b: float
    market: MarketParams
    finite: Preferences
    infinite: Preferences
    solver: SolverConfig
    sim: SimConfig
    fig1_alphas: tuple[float, float, int]
    table2_alphas: tuple[float, ...]
    table2_rho_neg: float
    table2_rho_pos: float
    out_dir: Path
    svg: bool
    cache: bool
    source_text: str

    def mortality(self) -> MortalityModel:
        if self.model_kind == "stylized":
            return stylized_model(StylizedParams(self.stylized_a, self.stylized_b))
        return cbd_model(PRESETS[self.model_preset])

    @property
    def model_name(self) -> str:
        if self.model_kind == "stylized":
            return f"stylized-{self.stylized_a:g}-{self.stylized_b:g}"
        return self.model_preset

    def table2_prefs(self, alpha: float) -> Preferences:
        return Preferences(alpha, self.table2_rho_neg if alpha < 0 else self.table2_rho_pos)

    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, paths: int | None = None, out: str | None = None):
        sim = self.sim
        if seed is not None:
            sim = replace(sim, seed=seed)
        if paths is not None:
            sim = replace(sim, n_paths=paths)
        extra = f"\n# overrides seed={seed} paths={paths}\n"
        return replace(
            self,
            sim=sim,
            out_dir=Path(out) if out is not None else self.out_dir,
            source_text=self.source_text + extra,
        )


def load_config(path: str | Path | None = None, preset: str | None = None) -> ExperimentConfig:
    """Build a configuration from base defaults, an optional preset and an optional file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (nL, nT)
    _read_preset(parser, "base")
    if preset is not None:
        if preset not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESET_NAMES)}")
        _read_preset(parser, preset)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        parser.read(path)
    try:
        return _build(parser)
    except (KeyError, ValueError, PreferenceError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cp: configparser.ConfigParser) -> ExperimentConfig:
    m, mk, s, sim, out = cp["model"], cp["market"], cp["solver"], cp["sim"], cp["outputs"]
    kind = m.get("kind")
    if kind not in ("cbd", "stylized"):
        raise ConfigError(f"model.kind must be cbd or stylized, not {kind!r}")
    if kind == "cbd" and m.get("preset") not in PRESETS:
        raise ConfigError(f"unknown mortality preset {m.get('preset')!r}")
    lam_lo, lam_hi = s.getfloat("lam_min"), s.getfloat("lam_max")
    if not 0 < lam_lo < lam_hi:
        raise ConfigError("solver lambda range must satisfy 0 < lam_min < lam_max")
    solver = SolverConfig(
        L_min=math.log(lam_lo),
        L_max=math.log(lam_hi),
        nL=s.getint("nL"),
        nT=s.getint("nT"),
        T_final=s.getfloat("T_final"),
        theta=s.getfloat("theta"),
        predictor=s.get("predictor"),
        newton_tol=s.getfloat("newton_tol"),
        max_iter=s.getint("max_iter"),
        save_every=s.getint("save_every"),
        T_final_finite=s.getfloat("T_final_finite") if "T_final_finite" in s else None,
    )
    simcfg = SimConfig(
        n_paths=sim.getint("n_paths"),
        dt=sim.getfloat("dt"),
        horizon=sim.getfloat("horizon"),
        seed=sim.getint("seed"),
        initial_pot=sim.getfloat("initial_pot"),
        initial_lambda=sim.getfloat("initial_lambda"),
        percentiles=_floats(sim.get("percentiles")),
        start_age=sim.getfloat("start_age"),
        controls=sim.get("controls"),
        block_size=sim.getint("block_size"),
    )
    f1 = cp["figure1"]
    t2 = cp["table2"]
    buf = []
    for sec in cp.sections():
        buf.append(f"[{sec}]")
        buf.extend(f"{k} = {v}" for k, v in sorted(cp[sec].items()))
    return ExperimentConfig(
        model_kind=kind,
        model_preset=m.get("preset"),
        stylized_a=m.getfloat("a"),
        stylized_b=m.getfloat("b"),
        market=MarketParams(mk.getfloat("r"), mk.getfloat("mu"), mk.getfloat("sigma")),
        finite=Preferences(cp["finite"].getfloat("alpha"), cp["finite"].getfloat("rho"), cp["finite"].getfloat("delta")),
        infinite=Preferences(
            cp["infinite"].getfloat("alpha"), cp["infinite"].getfloat("rho"), cp["infinite"].getfloat("delta")
        ),
        solver=solver,
        sim=simcfg,
        fig1_alphas=(f1.getfloat("alpha_lo"), f1.getfloat("alpha_hi"), f1.getint("resolution")),
        table2_alphas=_floats(t2.get("alphas")),
        table2_rho_neg=t2.getfloat("rho_negative"),
        table2_rho_pos=t2.getfloat("rho_positive"),
        out_dir=Path(out.get("dir")),
        svg=out.getboolean("svg"),
        cache=out.getboolean("cache"),
        source_text="\n".join(buf),
    )
