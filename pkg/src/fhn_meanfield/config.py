"""Run configuration: ``key = value`` files with sections, named presets."""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .grid import Grid2D
from .model import ConfigError, ModelParams, WeightParams

# Presets. "bistable" and "excitable" come from scripts/find_presets.py
# (deterministic fixed points plus the particle regime scan); "small-eps" is
# the weak-connectivity setting with unit diffusion.
PRESETS: dict[str, ModelParams] = {
    "small-eps": ModelParams(a=1.0, b=1.0, lam=0.2, i0=0.0, eps=0.1, sigma=math.sqrt(2.0)),
    "bistable": ModelParams(a=0.05, b=0.02, lam=1.8, i0=-0.427, eps=0.0, sigma=0.5),
    "excitable": ModelParams(a=0.08, b=0.064, lam=0.2, i0=0.0, eps=0.0, sigma=0.5),
}


def preset(name: str) -> ModelParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _floats(s: str) -> list[float]:
    return [float(z) for z in s.replace(",", " ").split()]


def _ints(s: str) -> list[int]:
    return [int(z) for z in s.replace(",", " ").split()]


@dataclass(frozen=True)
class InitSpec:
    kind: str = "gaussian"
    mean_x: float = 0.0
    mean_v: float = 0.0
    var_x: float = 0.2
    var_v: float = 0.2
    cov_xv: float = 0.0


@dataclass(frozen=True)
class RunSpec:
    T: float = 10.0
    dt: float = 1e-3
    stride: int = 100
    seed: int = 0
    boundary_tol: float = 1e-8


@dataclass(frozen=True)
class ParticleSpec:
    n: int = 2000
    J: float | None = None  # defaults to eps
    attractive: bool = False
    snapshots: bool = False


@dataclass(frozen=True)
class ChaosSpec:
    n_list: tuple = (100, 200, 400, 800, 1600, 3200)
    trials: int = 20
    T: float = 1.0
    dt: float = 1e-3


@dataclass(frozen=True)
class StationarySpec:
    j_seeds: tuple | None = None
    tol: float = 1e-12


@dataclass(frozen=True)
class SpectrumSpec:
    k: int = 8
    shift: float = 0.05
    tol: float = 1e-10
    decay: bool = False
    amplitude: float = 1e-2
    decay_T: float = 15.0


@dataclass(frozen=True)
class RegimeSpec:
    J_list: tuple = (0.1, 1.0, 3.0)
    seeds: tuple = (1, 2, 3, 4, 5)
    n: int = 2000
    T: float = 300.0
    dt: float = 0.01
    ratio: float = 5.0
    separation: float = 4.0
    burn_in: float = 0.2
    attractive: bool = True


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams = ModelParams()
    weight: WeightParams = WeightParams()
    grid: Grid2D = Grid2D()
    run: RunSpec = RunSpec()
    init: InitSpec = InitSpec()
    particles: ParticleSpec = ParticleSpec()
    chaos: ChaosSpec = ChaosSpec()
    stationary: StationarySpec = StationarySpec()
    spectrum: SpectrumSpec = SpectrumSpec()
    regime: RegimeSpec = RegimeSpec()
    preset: str | None = None
    text: str = field(default="", compare=False, repr=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]


_MODEL_KEYS = {"a": "a", "b": "b", "lambda": "lam", "lam": "lam", "i0": "i0", "eps": "eps", "sigma": "sigma"}


def _coerce(cls, section: configparser.SectionProxy | dict, name: str):
    kw = {}
    known = {f.name.lower(): f for f in fields(cls)}  # configparser lowercases keys
    for low, raw in section.items():
        if low not in known:
            raise ConfigError(f"[{name}] unknown key {low!r}")
        key = known[low].name
        default = known[low].default
        try:
            if isinstance(default, bool):
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[key] = int(raw)
            elif isinstance(default, float):
                kw[key] = float(raw)
            elif isinstance(default, tuple) or default is None:
                vals = _floats(raw)
                if key in ("n_list", "seeds"):
                    vals = _ints(raw)
                if key == "J" and len(vals) == 1:
                    kw[key] = vals[0]
                else:
                    kw[key] = tuple(vals)
            else:
                kw[key] = str(raw).strip()
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from None
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def parse_config(text: str, preset_name: str | None = None, seed: int | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    model_sec = dict(cp["model"]) if cp.has_section("model") else {}
    name = preset_name or model_sec.pop("preset", None)
    model_sec.pop("preset", None)
    base = preset(name) if name else ModelParams()
    changes = {}
    kappa = None
    for key, raw in model_sec.items():
        if key == "kappa":
            kappa = float(raw)
        elif key in ("paper_sde_signs", "attractive"):
            changes[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key in _MODEL_KEYS:
            try:
                changes[_MODEL_KEYS[key]] = float(raw)
            except ValueError:
                raise ConfigError(f"[model] {key} = {raw!r} is not a number") from None
        else:
            raise ConfigError(f"[model] unknown key {key!r}")
    model = base.replace(**changes)
    weight = WeightParams() if kappa is None else WeightParams(kappa)
    sections = {
        "grid": (Grid2D, Grid2D()), "run": (RunSpec, RunSpec()), "init": (InitSpec, InitSpec()),
        "particles": (ParticleSpec, ParticleSpec()), "chaos": (ChaosSpec, ChaosSpec()),
        "stationary": (StationarySpec, StationarySpec()), "spectrum": (SpectrumSpec, SpectrumSpec()),
        "regime": (RegimeSpec, RegimeSpec()),
    }
    for s in cp.sections():
        if s != "model" and s not in sections:
            raise ConfigError(f"unknown section [{s}]")
    built = {k: (_coerce(cls, cp[k], k) if cp.has_section(k) else dflt) for k, (cls, dflt) in sections.items()}
    if seed is not None:
        built["run"] = replace(built["run"], seed=int(seed))
    cfg = RunConfig(model=model, weight=weight, preset=name, text=text + f"\n#preset={name} seed={seed}\n", **built)
    validate(cfg)
    return cfg


def load_config(path, preset_name: str | None = None, seed: int | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), preset_name, seed)


def validate(cfg: RunConfig) -> None:
    r = cfg.run
    if not (r.T > 0 and r.dt > 0 and r.stride >= 1):
        raise ConfigError("[run] needs T > 0, dt > 0, stride >= 1")
    if cfg.init.kind not in ("gaussian", "uniform", "point"):
        raise ConfigError(f"[init] unknown kind {cfg.init.kind!r}")
    if cfg.init.kind == "gaussian":
        det = cfg.init.var_x * cfg.init.var_v - cfg.init.cov_xv**2
        if not (cfg.init.var_x > 0 and det > 0):
            raise ConfigError("[init] covariance must be positive definite")
    if cfg.particles.n < 1:
        raise ConfigError("[particles] n must be >= 1")
    if cfg.particles.J is not None and cfg.particles.J < 0:
        raise ConfigError("[particles] J must be >= 0")
    c = cfg.chaos
    if len(c.n_list) < 2 or min(c.n_list) < 1 or c.trials < 1 or not (c.T > 0 and c.dt > 0):
        raise ConfigError("[chaos] needs >= 2 positive N values, trials >= 1, T > 0, dt > 0")
    if cfg.spectrum.k < 2 or not cfg.spectrum.shift > 0:
        raise ConfigError("[spectrum] needs k >= 2 and shift > 0")
    g = cfg.regime
    if not g.J_list or not g.seeds or g.n < 1 or not (g.T > 0 and g.dt > 0) or not 0 <= g.burn_in < 1:
        raise ConfigError("[regime] invalid J_list/seeds/n/T/dt/burn_in")
    if any(J < 0 for J in g.J_list):
        raise ConfigError("[regime] J values must be >= 0")
