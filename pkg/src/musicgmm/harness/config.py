"""Experiment configuration: flat TOML files and built-in presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..channel_model import ScenarioConfig
from ..estimators import ESTIMATOR_TAGS

SWEEPABLE = ("snr_db", "rician_K_db", "angular_spread_deg", "T")
# parameters whose change invalidates trained models
TRAINING_KEYS = (
    "M", "spacing_ratio", "n_clusters", "angular_spread_deg", "rician_K_db", "train_size",
    "n_components", "grid_multiplier", "seed", "em_max_iterations", "em_tol", "em_reg", "em_init",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. Defaults are the full paper-scale setup."""

    M: int = 64
    spacing_ratio: float = 0.5
    T: int = 10
    n_clusters: int = 3
    angular_spread_deg: float = 2.0
    rician_K_db: float = 0.0
    snr_db: tuple[float, ...] = (0.0,)
    sweep: str = "snr_db"
    sweep_values: tuple[float, ...] = ()
    trials: int = 1000
    train_size: int = 150_000
    n_components: int = 128
    grid_multiplier: int = 16
    estimators: tuple[str, ...] = ESTIMATOR_TAGS
    seed: int = 0
    output: str = "results.csv"
    em_max_iterations: int = 200
    em_tol: float = 1e-6
    em_reg: float | None = None
    em_init: str = "farthest"
    s_max: int = 16
    p_max: int = 8
    threads: int = 1
    # same scenario/noise draws at every sweep point (trial seed ignores the sweep index)
    common_random_numbers: bool = True
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for key in ("M", "T", "n_clusters", "trials", "train_size", "n_components",
                    "grid_multiplier", "em_max_iterations", "s_max", "p_max", "threads"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be positive")
        if not self.snr_db:
            raise ValueError("snr_db must not be empty")
        if self.sweep not in SWEEPABLE:
            raise ValueError(f"sweep must be one of {SWEEPABLE}, got {self.sweep!r}")
        if self.sweep != "snr_db" and not self.sweep_values:
            raise ValueError(f"sweep over {self.sweep} needs sweep_values")
        unknown = set(self.estimators) - set(ESTIMATOR_TAGS)
        if unknown:
            raise ValueError(f"unknown estimator tags: {sorted(unknown)}")
        if self.n_components > self.train_size:
            raise ValueError("n_components must not exceed train_size")

    def replace(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw)

    @property
    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(self.M, self.spacing_ratio, self.n_clusters,
                              self.angular_spread_deg, self.rician_K_db)

    def sweep_points(self) -> list[tuple[str, float, ExperimentConfig]]:
        """``(sweep_param label, sweep value, config at that point)`` in run order."""
        if self.sweep == "snr_db":
            return [("snr_db", float(s), self.replace(snr_db=(s,))) for s in self.snr_db]
        points = []
        for snr in self.snr_db:
            label = f"{self.sweep}@snr_db={snr:g}"
            for v in self.sweep_values:
                value = int(v) if self.sweep == "T" else float(v)
                points.append((label, float(v), self.replace(snr_db=(snr,), **{self.sweep: value})))
        return points

    def training_dict(self) -> dict:
        return {k: getattr(self, k) for k in TRAINING_KEYS}

    def training_hash(self) -> str:
        blob = json.dumps(self.training_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()

    def training_label(self) -> str:
        return f"K{self.rician_K_db:g}_as{self.angular_spread_deg:g}"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("name")
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ValueError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(value)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if key == "em_reg":
        return None if value in (None, "none", "") else float(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{key} must be an integer")
        return int(float(value))
    if isinstance(default, float):
        return float(value)
    return value


def config_from_mapping(mapping: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    return base.replace(**{k: _coerce(k, v) for k, v in mapping.items()})


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read a flat TOML file (``key = value`` lines; lists for multi-valued keys)."""
    with open(path, "rb") as f:
        data = tomllib.load(f)
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat; found tables {nested}")
    cfg = config_from_mapping(data, base)
    return dataclasses.replace(cfg, name=str(path))


def parse_override(text: str) -> tuple[str, object]:
    """Parse a ``key=value`` command-line override using TOML value syntax."""
    if "=" not in text:
        raise ValueError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def dump_config(config: ExperimentConfig) -> str:
    """Render as a flat TOML document that :func:`load_config` reads back."""
    lines = []
    for k, v in config.to_dict().items():
        if v is None:
            continue
        lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


# --- presets -----------------------------------------------------------------------

DESK_SCALE = dict(trials=200, train_size=20_000, n_components=64)
PAPER_SCALE = dict(trials=1000, train_size=150_000, n_components=128)

_SNR_GRID = tuple(float(s) for s in range(-15, 21, 5))

PRESETS: dict[str, dict] = {
    # NMSE vs SNR, K = 10 dB
    "fig2a": dict(sweep="snr_db", snr_db=_SNR_GRID, rician_K_db=10.0),
    # NMSE vs SNR, K = 0 dB
    "fig2b": dict(sweep="snr_db", snr_db=_SNR_GRID, rician_K_db=0.0),
    # NMSE vs Rician factor at 0 dB SNR
    "fig3": dict(sweep="rician_K_db", snr_db=(0.0,),
                 sweep_values=tuple(float(k) for k in range(-6, 11, 2))),
    # NMSE vs angular spread at 0 dB SNR, K = 0 dB
    "fig4": dict(sweep="angular_spread_deg", snr_db=(0.0,), rician_K_db=0.0,
                 sweep_values=(0.2, 0.5, 1.0, 2.0, 5.0)),
    # DoA RMSE / NMSE vs number of snapshots; K and angular spread are not
    # printed with the table, the defaults (0 dB, 2 deg) are assumed
    "table1": dict(sweep="T", snr_db=(0.0, -10.0), sweep_values=(1, 3, 5, 10, 20, 100),
                   estimators=("music-gmm",), rician_K_db=0.0),
}


def preset(name: str, paper_scale: bool = False) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    scale = PAPER_SCALE if paper_scale else DESK_SCALE
    cfg = ExperimentConfig(**{**scale, **PRESETS[name]}, output=f"{name}.csv")
    return dataclasses.replace(cfg, name=name)
