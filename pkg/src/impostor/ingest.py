"""Dataset ingestion and the synthetic-city generator.

Two entry points: :func:`parse_dataset` standardizes raw GPS CSVs into
per-vehicle traces, and :func:`generate_synthetic_city` fabricates a
commuter city with known region classes so that model-recovery can be
scored against ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    SECONDS_PER_DAY,
    DataError,
    GridMap,
    MalformedRow,
    MissingOccupancy,
    OutOfBounds,
    RawFix,
    Record,
    TimeScheme,
    Trace,
    fix_to_region,
    greedy_path,
    make_record,
)

RAW_HEADER = ["vehicle_id", "timestamp", "lat", "lon"]
TRACE_HEADER = ["vehicle_id", "day", "second_of_day", "region"]
LABEL_HEADER = ["region", "class"]

CITY_CLASSES = ("home", "work", "leisure", "transit")


@dataclass
class DatasetDescriptor:
    format: str  # taxi-occupancy | private-car
    path: str
    grid: GridMap
    scheme: TimeScheme
    utc_offset_s: int = 0

    def __post_init__(self) -> None:
        if self.format not in ("taxi-occupancy", "private-car"):
            raise DataError(f"unknown dataset format {self.format!r}")


@dataclass
class ParseResult:
    traces: list[Trace]
    dropped: int = 0
    duplicates: int = 0
    rows: int = 0


def _parse_occupancy(raw: str) -> bool | None:
    raw = raw.strip()
    if raw == "":
        return None
    if raw in ("0", "1"):
        return raw == "1"
    raise ValueError(f"occupancy must be 0 or 1, got {raw!r}")


def parse_dataset(desc: DatasetDescriptor) -> ParseResult:
    """Read a raw GPS CSV into timestamp-sorted, grid-standardized traces.

    Out-of-bounds fixes (bad lat/lon or outside the map) are dropped and
    counted; duplicate (vehicle, timestamp) rows keep the first occurrence.
    """
    path = Path(desc.path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != RAW_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(RAW_HEADER)}[,occupancy]")
        per_vehicle: dict[str, dict[int, RawFix]] = {}
        result = ParseResult(traces=[])
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) not in (4, 5):
                raise MalformedRow(f"{path}:{rowno}: expected 4 or 5 fields, got {len(row)}")
            try:
                vid = row[0].strip()
                ts = int(row[1])
                lat = float(row[2])
                lon = float(row[3])
                occ = _parse_occupancy(row[4]) if len(row) == 5 else None
            except ValueError as exc:
                raise MalformedRow(f"{path}:{rowno}: {exc}") from exc
            if desc.format == "taxi-occupancy" and occ is None:
                raise MissingOccupancy(f"{path}:{rowno}: occupancy required for taxi data")
            result.rows += 1
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                result.dropped += 1
                continue
            bucket = per_vehicle.setdefault(vid, {})
            if ts in bucket:
                result.duplicates += 1
                continue
            bucket[ts] = RawFix(vehicle_id=vid, timestamp=ts, lat=lat, lon=lon, occupancy=occ)

    for vid in sorted(per_vehicle):
        records = []
        for ts in sorted(per_vehicle[vid]):
            fix = per_vehicle[vid][ts]
            try:
                region = fix_to_region(fix, desc.grid)
            except OutOfBounds:
                result.dropped += 1
                continue
            local = fix.timestamp + desc.utc_offset_s
            records.append(
                make_record(
                    region=region,
                    day=local // SECONDS_PER_DAY,
                    second_of_day=local % SECONDS_PER_DAY,
                    scheme=desc.scheme,
                    occupancy=fix.occupancy,
                )
            )
        if records:
            result.traces.append(Trace(vehicle_id=vid, records=records))
    return result


def write_traces(traces: list[Trace], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for trace in sorted(traces, key=lambda t: t.vehicle_id):
            for rec in trace.records:
                writer.writerow([trace.vehicle_id, rec.day, rec.second_of_day, rec.region])


def read_traces(path: str | Path, scheme: TimeScheme) -> list[Trace]:
    per_vehicle: dict[str, list[Record]] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(TRACE_HEADER)}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vid, day, sec, region = row[0], int(row[1]), int(row[2]), int(row[3])
            except (ValueError, IndexError) as exc:
                raise MalformedRow(f"{path}:{rowno}: {exc}") from exc
            per_vehicle.setdefault(vid, []).append(
                make_record(region=region, day=day, second_of_day=sec, scheme=scheme)
            )
    traces = []
    for vid in sorted(per_vehicle):
        records = sorted(per_vehicle[vid], key=lambda r: r.t_abs)
        traces.append(Trace(vehicle_id=vid, records=records))
    return traces


def write_labels(labels: dict[int, str], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_HEADER)
        for region in sorted(labels):
            writer.writerow([region, labels[region]])


def read_labels(path: str | Path) -> dict[int, str]:
    labels: dict[int, str] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABEL_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(LABEL_HEADER)}")
        for row in reader:
            if row:
                labels[int(row[0])] = row[1]
    return labels


# --------------------------------------------------------------------------
# Synthetic city
# --------------------------------------------------------------------------

# Default share of regions per latent class.
CLASS_FRACTIONS = {"home": 0.40, "work": 0.25, "leisure": 0.15, "transit": 0.20}

# Seconds to cross one cell while driving: straight / diagonal (about 30 km/h
# on 1 km cells, so parking thresholds land near 9/30 h = 1080 s).
STRAIGHT_STEP_S = 120
DIAGONAL_STEP_S = 170

# Cadence of parked records inside a dwell.
PARK_STEP_S = 1800


@dataclass
class SyntheticCitySpec:
    grid: GridMap
    scheme: TimeScheme
    n_agents: int
    n_days: int
    class_layout: dict[int, str] = field(default_factory=dict)
    schedule_noise_min: float = 30.0
    p_leisure: float = 0.4
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.class_layout:
            self.class_layout = make_class_layout(self.grid, self.rng_seed)
        if set(self.class_layout) != set(range(self.grid.n_regions)):
            raise DataError("class_layout must assign every region exactly once")
        unknown = set(self.class_layout.values()) - set(CITY_CLASSES)
        if unknown:
            raise DataError(f"unknown classes in layout: {sorted(unknown)}")
        for cls in ("home", "work", "leisure"):
            if cls not in self.class_layout.values():
                raise DataError(f"layout has no {cls} region")


def make_class_layout(
    grid: GridMap, seed: int, fractions: dict[str, float] | None = None
) -> dict[int, str]:
    """Assign every region one latent class, shuffled deterministically."""
    fractions = fractions or CLASS_FRACTIONS
    rng = np.random.default_rng([seed, 0xC17])
    regions = rng.permutation(grid.n_regions)
    layout: dict[int, str] = {}
    counts = {
        cls: max(1, int(round(f * grid.n_regions))) for cls, f in fractions.items()
    }
    i = 0
    for cls in CITY_CLASSES:
        for _ in range(counts.get(cls, 0)):
            if i < len(regions):
                layout[int(regions[i])] = cls
                i += 1
    while i < len(regions):  # rounding remainder becomes transit
        layout[int(regions[i])] = "transit"
        i += 1
    return layout


def _dwell_records(region: int, t_start: int, t_end: int, out: list[tuple[int, int]]) -> None:
    """Parked records every PARK_STEP_S plus one at the exact dwell end.

    The final record pins the departure second so that the following drive
    step yields a clean speed sample instead of a near-zero one.
    """
    t = t_start
    while t < t_end:
        out.append((t, region))
        t += PARK_STEP_S
    out.append((t_end, region))


def _drive_records(
    src: int, dst: int, t_depart: int, grid: GridMap, out: list[tuple[int, int]]
) -> int:
    """Append one record per cell entered; returns the arrival second."""
    path = greedy_path(src, dst, grid)
    t = t_depart
    prev_col, prev_row = grid.cell_of(src)
    for rid in path[1:]:
        col, row = grid.cell_of(rid)
        step = DIAGONAL_STEP_S if (col != prev_col and row != prev_row) else STRAIGHT_STEP_S
        t += step
        out.append((t, rid))
        prev_col, prev_row = col, row
    return t


def generate_synthetic_city(spec: SyntheticCitySpec) -> tuple[list[Trace], dict[int, str]]:
    """Commuter traces with ground-truth region classes.

    Every agent drives home -> work in the morning and work -> home (or
    work -> leisure -> home) in the evening, with Gaussian schedule noise.
    Parked dwells at destinations far exceed any plausible station threshold.
    """
    rng = np.random.default_rng([spec.rng_seed, 0x5EED])
    by_class: dict[str, list[int]] = {cls: [] for cls in CITY_CLASSES}
    for region in sorted(spec.class_layout):
        by_class[spec.class_layout[region]].append(region)

    noise_s = spec.schedule_noise_min * 60.0
    traces: list[Trace] = []
    for agent in range(spec.n_agents):
        home = int(rng.choice(by_class["home"]))
        work = int(rng.choice(by_class["work"]))
        leisure = int(rng.choice(by_class["leisure"]))
        stamped: list[tuple[int, int]] = []
        day_offset = 0
        for _ in range(spec.n_days):
            t_dep = int(np.clip(7.5 * 3600 + rng.normal(0.0, noise_s), 4 * 3600, 11 * 3600))
            t_ret = int(np.clip(17.5 * 3600 + rng.normal(0.0, noise_s), 15 * 3600, 21 * 3600))
            go_leisure = rng.random() < spec.p_leisure

            _dwell_records(home, day_offset, day_offset + t_dep, stamped)
            t = _drive_records(home, work, day_offset + t_dep, spec.grid, stamped)
            t_leave_work = max(day_offset + t_ret, t + PARK_STEP_S)
            _dwell_records(work, t, t_leave_work, stamped)
            if go_leisure:
                t = _drive_records(work, leisure, t_leave_work, spec.grid, stamped)
                stay = int(max(PARK_STEP_S, 90 * 60 + rng.normal(0.0, noise_s)))
                _dwell_records(leisure, t, t + stay, stamped)
                t = _drive_records(leisure, home, t + stay, spec.grid, stamped)
            else:
                t = _drive_records(work, home, t_leave_work, spec.grid, stamped)
            day_offset += SECONDS_PER_DAY
            # idle at home until the next day's records pick up at day_offset
            tail = min(day_offset - 1, t + PARK_STEP_S)
            if tail > t:
                stamped.append((tail, home))

        records = []
        last_t = -1
        for t, region in stamped:
            if t <= last_t:  # collapse collisions from clamped schedules
                continue
            records.append(
                make_record(
                    region=region,
                    day=t // SECONDS_PER_DAY,
                    second_of_day=t % SECONDS_PER_DAY,
                    scheme=spec.scheme,
                )
            )
            last_t = t
        traces.append(Trace(vehicle_id=f"agent{agent:05d}", records=records))
    return traces, dict(spec.class_layout)
