"""Station and section extraction from standardized traces.

A station is the record where a vehicle starts or ends a meaningful stop
(a phased destination), never a traffic pause. Two extraction modes exist:
occupancy-signal transitions for taxi data, and parking-duration thresholds
for private-car data. Sections are the travel legs between consecutive
depart/arrive stations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    DataError,
    GridMap,
    MalformedRow,
    MissingSignal,
    Record,
    TimeScheme,
    Trace,
    region_distance,
    second_to_interval,
)

ARRIVE = "arrive"
DEPART = "depart"

STATION_HEADER = ["vehicle_id", "region", "interval", "second_of_day", "kind"]


@dataclass(frozen=True, slots=True)
class Station:
    record: Record
    kind: str  # arrive | depart
    vehicle_id: str


@dataclass(slots=True)
class Section:
    start: Station
    end: Station
    records: list[Record]


@dataclass
class SpeedTable:
    """Mean speed (km/h) per region per mobility interval.

    Cells with too few samples fall back to the global mean; an empty table
    falls back to ``default_kmh``.
    """

    n_mobility: int
    speeds: dict[tuple[int, int], float] = field(default_factory=dict)
    global_kmh: float = 30.0

    def speed(self, region: int, interval: int) -> float:
        return self.speeds.get((region, interval), self.global_kmh)

    def threshold_s(self, region: int, interval: int, numerator_km: float = 9.0) -> float:
        """Parking threshold in seconds: numerator/v(r,t) hours."""
        return numerator_km / self.speed(region, interval) * 3600.0


def build_speed_table(
    traces: list[Trace],
    grid: GridMap,
    scheme: TimeScheme,
    min_samples: int = 10,
    default_kmh: float = 30.0,
) -> SpeedTable:
    """Estimate v(r,t) from displacement over elapsed time of moving pairs.

    Each cross-region step contributes one sample to its source region at
    the source record's mobility interval. Non-adjacent jumps are gaps, not
    movement, and are skipped.
    """
    sums: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    total = 0.0
    n = 0
    for trace in traces:
        for prev, cur in zip(trace.records, trace.records[1:]):
            if prev.region == cur.region or not grid.adjacent(prev.region, cur.region):
                continue
            dt = cur.t_abs - prev.t_abs
            if dt <= 0:
                continue
            kmh = region_distance(prev.region, cur.region, grid) / 1000.0 / (dt / 3600.0)
            key = (prev.region, second_to_interval(prev.second_of_day, scheme.n_mobility))
            sums[key] = sums.get(key, 0.0) + kmh
            counts[key] = counts.get(key, 0) + 1
            total += kmh
            n += 1
    global_kmh = total / n if n else default_kmh
    speeds = {
        key: sums[key] / counts[key]
        for key in sums
        if counts[key] >= min_samples
    }
    return SpeedTable(n_mobility=scheme.n_mobility, speeds=speeds, global_kmh=global_kmh)


def _dedup(stations: list[Station]) -> list[Station]:
    # same vehicle, region, day, N_U interval and kind counts once
    seen = set()
    out = []
    for st in stations:
        key = (st.vehicle_id, st.record.region, st.record.day, st.record.interval, st.kind)
        if key not in seen:
            seen.add(key)
            out.append(st)
    return out


def extract_stations_occupancy(trace: Trace) -> list[Station]:
    """Stations from occupancy transitions.

    A 0->1 flip means a passenger got on, i.e. left the location: depart.
    A 1->0 flip means a passenger got off and went into it: arrive.
    """
    out = []
    for prev, cur in zip(trace.records, trace.records[1:]):
        if prev.occupancy is None or cur.occupancy is None:
            raise MissingSignal(f"trace {trace.vehicle_id} has records without occupancy")
        if prev.occupancy == cur.occupancy:
            continue
        kind = DEPART if cur.occupancy else ARRIVE
        out.append(Station(record=cur, kind=kind, vehicle_id=trace.vehicle_id))
    if trace.records and trace.records[0].occupancy is None:
        raise MissingSignal(f"trace {trace.vehicle_id} has records without occupancy")
    return _dedup(out)


def extract_stations_parking(
    trace: Trace,
    speeds: SpeedTable,
    numerator_km: float = 9.0,
) -> list[Station]:
    """Stations from dwells strictly longer than the per-(region, interval) threshold.

    A dwell is a maximal run of consecutive records in one region; its
    threshold is evaluated at the run's first record.
    """
    out = []
    records = trace.records
    i = 0
    while i < len(records):
        j = i
        while j + 1 < len(records) and records[j + 1].region == records[i].region:
            j += 1
        first, last = records[i], records[j]
        interval = second_to_interval(first.second_of_day, speeds.n_mobility)
        if last.t_abs - first.t_abs > speeds.threshold_s(first.region, interval, numerator_km):
            out.append(Station(record=first, kind=ARRIVE, vehicle_id=trace.vehicle_id))
            out.append(Station(record=last, kind=DEPART, vehicle_id=trace.vehicle_id))
        i = j + 1
    return _dedup(out)


def extract_sections(trace: Trace, stations: list[Station]) -> list[Section]:
    """One section per consecutive (depart, next arrive) station pair."""
    index_of = {(r.day, r.second_of_day): i for i, r in enumerate(trace.records)}
    sections = []
    for a, b in zip(stations, stations[1:]):
        if a.kind != DEPART or b.kind != ARRIVE:
            continue
        ia = index_of.get((a.record.day, a.record.second_of_day))
        ib = index_of.get((b.record.day, b.record.second_of_day))
        if ia is None or ib is None:
            raise DataError("station record not found in trace")
        if ia >= ib:
            continue
        sections.append(Section(start=a, end=b, records=trace.records[ia : ib + 1]))
    return sections


def write_stations(stations: list[Station], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATION_HEADER)
        for st in stations:
            writer.writerow(
                [st.vehicle_id, st.record.region, st.record.interval,
                 st.record.second_of_day, st.kind]
            )


def read_stations(path: str | Path) -> list[Station]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != STATION_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(STATION_HEADER)}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rec = Record(
                    region=int(row[1]),
                    interval=int(row[2]),
                    second_of_day=int(row[3]),
                )
                out.append(Station(record=rec, kind=row[4], vehicle_id=row[0]))
            except (ValueError, IndexError) as exc:
                raise MalformedRow(f"{path}:{rowno}: {exc}") from exc
    return out


SPEED_HEADER = ["region", "interval", "v_kmh", "samples"]


def write_speed_table(table: SpeedTable, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPEED_HEADER)
        # region -1 row carries the global fallback and the interval count
        writer.writerow([-1, table.n_mobility, repr(table.global_kmh), 0])
        for region, interval in sorted(table.speeds):
            writer.writerow([region, interval, repr(table.speeds[(region, interval)]), 1])


def read_speed_table(path: str | Path) -> SpeedTable:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SPEED_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(SPEED_HEADER)}")
        meta = next(reader)
        table = SpeedTable(n_mobility=int(meta[1]), global_kmh=float(meta[2]))
        for row in reader:
            if row:
                table.speeds[(int(row[0]), int(row[1]))] = float(row[2])
    return table
