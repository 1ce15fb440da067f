"""INI experiment configuration.

Relative paths are resolved against the directory holding the config file.
Every key is optional; defaults reproduce the reference settings::

    [experiment]
    seed = 0
    manifest = fleet/manifest.json
    output_dir = results
    workers = 1
    targets =                    ; empty = every unit with a fault time
    strategies = H-9m, H-2m, H-Inc, H-H, H-M, UFA
    all_pairs = helm, ufan       ; empty disables the all-pairs runs
    save_models = true

    [fleet]                      ; read by `generate`
    output_dir = fleet
    n_units = 10
    n_faulted = 2
    period_minutes = 5
    ...                          ; any keyword of random_fleet_config

    [helm]                       ; HelmParams overrides
    [ufan]                       ; TrainConfig overrides (seed comes from [experiment])
    [incremental]
    r_grid = 0.05, 0.10, 0.15, 0.20, 0.25
    sliding = false
"""

from __future__ import annotations

import configparser
import inspect
from dataclasses import dataclass, field, fields
from pathlib import Path

from .helm import HelmParams
from .strategies import R_GRID, STRATEGIES
from .synthfleet import random_fleet_config
from .ufan import TrainConfig


class ConfigError(ValueError):
    pass


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def _coerce(text: str, like):
    if isinstance(like, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(float(v) for v in _split(text))
    return text.strip()


def _overrides(section: configparser.SectionProxy | None, defaults: dict, name: str) -> dict:
    out = {}
    if section is None:
        return out
    for key, text in section.items():
        if key not in defaults:
            raise ConfigError(f"[{name}] unknown key {key!r}; expected one of {sorted(defaults)}")
        try:
            out[key] = _coerce(text, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    return out


def _fleet_defaults() -> dict:
    sig = inspect.signature(random_fleet_config)
    return {k: p.default for k, p in sig.parameters.items() if p.default is not inspect.Parameter.empty}


@dataclass
class ExperimentConfig:
    seed: int = 0
    manifest: Path = Path("fleet/manifest.json")
    output_dir: Path = Path("results")
    workers: int = 1
    targets: list[str] = field(default_factory=list)
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    all_pairs: list[str] = field(default_factory=lambda: ["helm", "ufan"])
    save_models: bool = True
    fleet_dir: Path = Path("fleet")
    fleet: dict = field(default_factory=dict)
    helm: HelmParams = field(default_factory=HelmParams)
    ufan: TrainConfig = field(default_factory=TrainConfig)
    r_grid: tuple[float, ...] = R_GRID
    sliding: bool = False

    def validate(self) -> None:
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; expected a subset of {list(STRATEGIES)}")
        bad = [m for m in self.all_pairs if m not in ("helm", "ufan")]
        if bad:
            raise ConfigError(f"all_pairs accepts helm and ufan, got {bad}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(not 0.0 <= r <= 1.0 for r in self.r_grid) or not self.r_grid:
            raise ConfigError("r_grid must hold ratios in [0, 1]")

    def fleet_config(self):
        return random_fleet_config(self.seed, **self.fleet)

    def with_overrides(self, seed: int | None = None, output_dir: str | Path | None = None,
                       workers: int | None = None) -> "ExperimentConfig":
        if seed is not None:
            self.seed = seed
            self.ufan = TrainConfig(**{**vars(self.ufan), "seed": seed})
        if output_dir is not None:
            self.output_dir = Path(output_dir)
        if workers is not None:
            self.workers = workers
        self.validate()
        return self


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Parse an INI file (``None`` gives the defaults)."""
    cfg = ExperimentConfig()
    if path is None:
        cfg.validate()
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    known = {"experiment", "fleet", "helm", "ufan", "incremental"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    base = path.parent

    def resolve(p: str) -> Path:
        q = Path(p.strip())
        return q if q.is_absolute() else base / q

    exp = parser["experiment"] if parser.has_section("experiment") else {}
    try:
        cfg.seed = int(exp.get("seed", cfg.seed))
        cfg.workers = int(exp.get("workers", cfg.workers))
    except ValueError as exc:
        raise ConfigError(f"[experiment] {exc}") from exc
    cfg.manifest = resolve(exp.get("manifest", str(cfg.manifest)))
    cfg.output_dir = resolve(exp.get("output_dir", str(cfg.output_dir)))
    cfg.targets = _split(exp.get("targets", ""))
    if "strategies" in exp:
        cfg.strategies = _split(exp["strategies"])
    if "all_pairs" in exp:
        cfg.all_pairs = _split(exp["all_pairs"])
    if "save_models" in exp:
        cfg.save_models = _coerce(exp["save_models"], True)
    unknown = set(exp) - {"seed", "workers", "manifest", "output_dir", "targets", "strategies", "all_pairs",
                          "save_models"}
    if unknown:
        raise ConfigError(f"[experiment] unknown keys {sorted(unknown)}")

    if parser.has_section("fleet"):
        sec = parser["fleet"]
        if "output_dir" in sec:
            cfg.fleet_dir = resolve(sec["output_dir"])
        rest = {k: v for k, v in sec.items() if k != "output_dir"}
        fake = configparser.ConfigParser()
        fake.read_dict({"fleet": rest})
        cfg.fleet = _overrides(fake["fleet"], _fleet_defaults(), "fleet")
        cfg.fleet.pop("seed", None)
    else:
        cfg.fleet_dir = base / cfg.fleet_dir

    helm_defaults = {f.name: getattr(HelmParams(), f.name) for f in fields(HelmParams)}
    cfg.helm = HelmParams(**_overrides(parser["helm"] if parser.has_section("helm") else None, helm_defaults, "helm"))
    ufan_defaults = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    ufan_defaults.pop("seed")
    cfg.ufan = TrainConfig(**_overrides(parser["ufan"] if parser.has_section("ufan") else None, ufan_defaults, "ufan"),
                           seed=cfg.seed)

    if parser.has_section("incremental"):
        inc = _overrides(parser["incremental"], {"r_grid": R_GRID, "sliding": False}, "incremental")
        cfg.r_grid = inc.get("r_grid", cfg.r_grid)
        cfg.sliding = inc.get("sliding", cfg.sliding)
    cfg.validate()
    return cfg
