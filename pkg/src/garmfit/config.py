"""Fit configuration: every weight, radius, threshold, and stage toggle.

Defaults carry the published operating point; anything the source method left
unspecified (iteration caps, step sizes, probe geometry) is pinned here so runs
are reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class FitConfig:
    # stage 1: body initialization
    pose_reg_weight: float = 1e-3
    shape_weight: float = 1.0
    # stage 2: boundary fitting
    edge_avg_weight: float = 0.025
    edge_var_weight: float = 2.5
    # stage 3: shape fitting
    penetration_weight: float = 0.1
    boundary_weight: float = 0.1
    laplacian_weight: float = 100.0
    # field geometry
    boundary_radius: float = 1e-3
    iso_threshold: float = 0.5
    truncation_distance: float = 0.05
    # active-area probing
    probe_count: int = 16
    probe_extent: float = 0.08
    # iteration caps, initial steps, convergence
    init_iterations: int = 500
    boundary_iterations: int = 300
    shape_iterations: int = 400
    init_step: float = 0.02
    boundary_step: float = 1e-3
    shape_step: float = 1e-3
    plateau_tolerance: float = 1e-7
    init_plateau_window: int = 20
    boundary_plateau_window: int = 10
    shape_plateau_window: int = 20
    init_chamfer_samples: int = 2000
    # stage toggles (ablations)
    enable_init: bool = True
    enable_boundary: bool = True
    enable_shape: bool = True
    probe_gate: bool = True

    def validate(self) -> "FitConfig":
        for name in ("pose_reg_weight", "shape_weight", "edge_avg_weight", "edge_var_weight",
                     "penetration_weight", "boundary_weight", "laplacian_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("boundary_radius", "truncation_distance", "probe_extent",
                     "init_step", "boundary_step", "shape_step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.probe_count < 1:
            raise ConfigError("probe_count must be at least 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(FitConfig)}


def _coerce(name: str, value):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    kind = _FIELD_TYPES[name]
    if kind in ("bool", bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
        raise ConfigError(f"{name} expects a boolean, got {value!r}")
    if kind in ("int", int):
        out = int(value)
        if isinstance(value, str) or out == value:
            return out
        raise ConfigError(f"{name} expects an integer, got {value!r}")
    return float(value)


def config_from_mapping(data: dict, base: FitConfig | None = None) -> FitConfig:
    cfg = dataclasses.replace(base) if base else FitConfig()
    for key, value in data.items():
        setattr(cfg, key, _coerce(key, value))
    return cfg.validate()


def load_config(path, base: FitConfig | None = None) -> FitConfig:
    """Read a JSON or TOML config file; unknown keys are an error."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            try:
                import tomli as tomllib
            except ModuleNotFoundError as exc:
                raise ConfigError("TOML config needs tomli on this interpreter; use JSON") from exc
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a table of key = value")
    return config_from_mapping(data, base)


def apply_overrides(cfg: FitConfig, pairs: list[str]) -> FitConfig:
    """Apply key=value overrides (repeatable --set flags)."""
    data = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        data[key.strip()] = value.strip()
    return config_from_mapping(data, cfg)
