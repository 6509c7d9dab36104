"""Bundling and persistence of the offline-built models.

The offline pass turns seed traces into four artifacts: a speed table (for
threshold station extraction), the semantic model, the per-interval mobility
model, and the empirical path-rank distribution. The online synthesizer only
ever reads these.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .core import GridMap, TimeScheme, Trace
from .mobility import (
    MobilityModel,
    RankDistribution,
    build_mobility,
    estimate_rank_distribution,
    load_mobility_model,
    load_rank_distribution,
    save_mobility_model,
    save_rank_distribution,
)
from .semantics import SemanticModel, build_semantic_model, load_semantic_model, save_semantic_model
from .stations import (
    Section,
    SpeedTable,
    Station,
    build_speed_table,
    extract_sections,
    extract_stations_occupancy,
    extract_stations_parking,
    read_speed_table,
    write_speed_table,
)

SPEEDS_FILE = "speed_table.csv"


@dataclass
class OfflineModels:
    cfg: RunConfig
    semantic: SemanticModel
    mobility: MobilityModel
    ranks: RankDistribution
    speeds: SpeedTable

    @property
    def grid(self) -> GridMap:
        return self.cfg.grid

    @property
    def scheme(self) -> TimeScheme:
        return self.cfg.scheme

    def extract_stations(self, trace: Trace) -> list[Station]:
        if self.cfg.dataset_format == "taxi-occupancy":
            return extract_stations_occupancy(trace)
        return extract_stations_parking(trace, self.speeds, self.cfg.parking_numerator_km)


def extract_all(
    traces: list[Trace], cfg: RunConfig, speeds: SpeedTable
) -> tuple[list[Station], list[Section]]:
    stations: list[Station] = []
    sections: list[Section] = []
    for trace in traces:
        if cfg.dataset_format == "taxi-occupancy":
            st = extract_stations_occupancy(trace)
        else:
            st = extract_stations_parking(trace, speeds, cfg.parking_numerator_km)
        stations.extend(st)
        sections.extend(extract_sections(trace, st))
    return stations, sections


def build_offline_models(traces: list[Trace], cfg: RunConfig) -> OfflineModels:
    grid, scheme = cfg.grid, cfg.scheme
    speeds = build_speed_table(
        traces, grid, scheme,
        min_samples=cfg.min_speed_samples,
        default_kmh=cfg.default_speed_kmh,
    )
    stations, sections = extract_all(traces, cfg, speeds)
    semantic = build_semantic_model(
        stations, scheme,
        alpha=cfg.alpha, beta=cfg.beta,
        epsilon=cfg.epsilon, threshold=cfg.cluster_threshold,
    )
    mobility = build_mobility(sections, grid, scheme)
    ranks = estimate_rank_distribution(
        sections, mobility,
        k_max=cfg.k_max, sample=cfg.rank_sample, seed=cfg.rng_seed,
    )
    return OfflineModels(cfg=cfg, semantic=semantic, mobility=mobility, ranks=ranks, speeds=speeds)


def save_offline_models(models: OfflineModels, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_semantic_model(models.semantic, out)
    save_mobility_model(models.mobility, out)
    save_rank_distribution(models.ranks, out)
    write_speed_table(models.speeds, out / SPEEDS_FILE)


def load_offline_models(cfg: RunConfig, out_dir: str | Path) -> OfflineModels:
    out = Path(out_dir)
    return OfflineModels(
        cfg=cfg,
        semantic=load_semantic_model(out),
        mobility=load_mobility_model(out, cfg.grid, cfg.scheme),
        ranks=load_rank_distribution(out),
        speeds=read_speed_table(out / SPEEDS_FILE),
    )
