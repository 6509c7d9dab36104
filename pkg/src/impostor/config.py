"""Flat key-value run configuration shared by the CLI commands.

The file format is one ``key = value`` pair per line; blank lines and lines
starting with ``#`` are ignored. Unknown keys are rejected so typos fail fast.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .core import ConfigError, GridMap, TimeScheme


@dataclass
class RunConfig:
    # map
    origin_lat: float = 0.0
    origin_lon: float = 0.0
    cell_size_m: float = 1000.0
    width_cells: int = 12
    height_cells: int = 9
    # time discretization
    n_semantic: int = 4
    n_mobility: int = 24
    n_user: int = 288
    utc_offset_s: int = 0
    # dataset
    dataset_path: str = ""
    dataset_format: str = "private-car"  # or taxi-occupancy
    # model parameters
    alpha: float = 0.5
    beta: float = 0.5
    cluster_threshold: float = 0.75
    parking_numerator_km: float = 9.0
    window_hours: float = 15.0
    k_max: int = 10
    epsilon: float = 1e-6
    rng_seed: int = 0
    max_candidates: int = 128
    rank_sample: int = 2000
    default_speed_kmh: float = 30.0
    min_speed_samples: int = 10
    # artifact locations
    out_dir: str = "out"
    store_path: str = ""

    def __post_init__(self) -> None:
        if abs(self.alpha + self.beta - 1.0) > 1e-9 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative and sum to 1")
        if not 0.0 <= self.cluster_threshold <= 1.0:
            raise ConfigError("cluster_threshold must lie in [0, 1]")
        if self.parking_numerator_km <= 0:
            raise ConfigError("parking_numerator_km must be positive")
        if self.window_hours <= 0:
            raise ConfigError("window_hours must be positive")
        if self.k_max < 1:
            raise ConfigError("k_max must be at least 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.dataset_format not in ("taxi-occupancy", "private-car"):
            raise ConfigError(f"unknown dataset_format {self.dataset_format!r}")

    @property
    def grid(self) -> GridMap:
        return GridMap(
            origin_lat=self.origin_lat,
            origin_lon=self.origin_lon,
            width_cells=self.width_cells,
            height_cells=self.height_cells,
            cell_size_m=self.cell_size_m,
        )

    @property
    def scheme(self) -> TimeScheme:
        return TimeScheme(
            n_semantic=self.n_semantic,
            n_mobility=self.n_mobility,
            n_user=self.n_user,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(), overrides)
