"""Scenario configuration: TOML parsing, defaults and validation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

METHODS = ("perfect-csi", "amp", "dcs-amp", "ml", "gmp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RoomConfig:
    width_m: float = 5.0
    depth_m: float = 5.0
    height_m: float = 3.0
    ap_x_m: float = 2.5
    ap_height_m: float = 1.5
    ceiling_coef: float = -0.6
    wall_x0_coef: float = -0.6
    wall_x1_coef: float = -0.6
    floor_coef: float = -0.6
    floor_reflections: bool = False
    enabled: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 16
    n_rf: int = 4
    wavelength_m: float = 0.005
    l_ap_m: float = 0.20
    l_sta_m: float = 0.04
    d_m: float = 0.8
    q_bits: int = 2
    zc_root: int = 9
    m_pilots: tuple = (16,)
    snr_db: tuple = (10.0,)
    trials: int = 100
    d_min_m: float = 0.3
    d_max_m: float = 1.3
    grid_deg: float = 1.0
    factor_samples: int = 2000
    delta_e: float = 0.9
    dcs_passes: int = 12
    amp_iters: int = 25
    amp_tol: float = 1e-6
    em_iters: int = 8
    gamma_set_deg: tuple = tuple(range(-60, 61, 15))
    theta_set_deg: tuple = tuple(range(10, 181, 10))
    room: RoomConfig = field(default_factory=RoomConfig)
    methods: tuple = METHODS
    master_seed: int = 0
    output_dir: str = "results"
    # energy-metric sweep
    energy_d_min_m: float = 0.2
    energy_d_max_m: float = 3.0
    energy_points: int = 30
    energy_gamma_deg: float = 0.0
    energy_theta_deg: float = 45.0
    # aoa-demo geometry
    demo_gamma_deg: float = 0.0
    demo_theta_deg: float = 0.0

    def __post_init__(self):
        # one canonical element type per sequence so equal configs hash alike
        for name, cast in _SEQUENCE_FIELDS.items():
            object.__setattr__(self, name, _as_tuple(getattr(self, name), cast))
        validate(self)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def _positive(cfg, names):
    for name in names:
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")


def validate(cfg: ScenarioConfig) -> None:
    _positive(cfg, ["n", "n_rf", "wavelength_m", "l_ap_m", "l_sta_m", "d_m", "q_bits",
                    "d_min_m", "d_max_m", "grid_deg", "delta_e", "factor_samples",
                    "energy_d_min_m", "energy_d_max_m", "energy_points"])
    if cfg.trials < 0:
        raise ConfigError("trials must be nonnegative")
    if cfg.d_min_m > cfg.d_max_m:
        raise ConfigError("d_min_m must not exceed d_max_m")
    if cfg.delta_e > 1:
        raise ConfigError("delta_e must lie in (0, 1]")
    if not cfg.m_pilots:
        raise ConfigError("m_pilots must not be empty")
    for m in cfg.m_pilots:
        if not 1 <= m <= cfg.n ** 2:
            raise ConfigError(f"m_pilots={m} must lie in [1, n^2={cfg.n ** 2}]")
    if not cfg.snr_db:
        raise ConfigError("snr_db must not be empty")
    if not cfg.methods:
        raise ConfigError("methods must not be empty")
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) in methods: {', '.join(bad)}")
    if len(cfg.gamma_set_deg) < cfg.n_rf:
        raise ConfigError("gamma_set_deg needs at least n_rf distinct values")
    if not 0 < cfg.grid_deg < 180:
        raise ConfigError("grid_deg must lie in (0, 180)")
    if cfg.dcs_passes < 1 or cfg.amp_iters < 1 or cfg.em_iters < 1:
        raise ConfigError("iteration counts must be at least 1")


def _as_tuple(value, cast):
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    return (cast(value),)


_SEQUENCE_FIELDS = {"m_pilots": int, "snr_db": float, "gamma_set_deg": float,
                    "theta_set_deg": float, "methods": str}


def from_mapping(data: dict) -> ScenarioConfig:
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    kw = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key: {key}")
        if key == "room":
            if not isinstance(value, dict):
                raise ConfigError("room must be a table")
            room_known = {f.name for f in dataclasses.fields(RoomConfig)}
            for rk in value:
                if rk not in room_known:
                    raise ConfigError(f"unknown key: room.{rk}")
            kw["room"] = RoomConfig(**value)
        elif key in _SEQUENCE_FIELDS:
            kw[key] = _as_tuple(value, _SEQUENCE_FIELDS[key])
        else:
            kw[key] = value
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str | Path | None) -> ScenarioConfig:
    """Read a TOML scenario file; omitted keys keep their defaults."""
    if path is None:
        return ScenarioConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return from_mapping(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_config(cfg: ScenarioConfig) -> str:
    """Resolved configuration as TOML text (round-trips through ``from_mapping``)."""
    d = cfg.to_dict()
    room = d.pop("room")
    lines = [f"{k} = {_toml_value(v)}" for k, v in d.items()]
    lines.append("")
    lines.append("[room]")
    lines += [f"{k} = {_toml_value(v)}" for k, v in room.items()]
    return "\n".join(lines) + "\n"
