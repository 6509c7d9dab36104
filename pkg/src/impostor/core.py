"""Domain types and spatio-temporal discretization shared by every module.

A city map is a rectangular grid of fixed-size square cells ("regions"),
identified by row-major 0-based ids. A day is cut into a configurable number
of equal intervals; three bucket counts coexist (semantic, mobility, user
sampling) and all of them must divide 86400 seconds evenly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SECONDS_PER_DAY = 86400

# Equirectangular projection: meters per degree of latitude is treated as
# constant; meters per degree of longitude is scaled by cos(origin latitude).
M_PER_DEG_LAT = 111_320.0


class ImpostorError(Exception):
    """Base class for all errors raised by this package."""


class OutOfBounds(ImpostorError):
    """GPS fix lies outside the configured map."""


class InvalidBucketCount(ImpostorError):
    """Interval count does not divide the day evenly."""


class MalformedRow(ImpostorError):
    """CSV row cannot be parsed; carries the 1-based row number."""


class MissingOccupancy(ImpostorError):
    """Dataset format requires an occupancy flag on every row."""


class MissingSignal(ImpostorError):
    """Occupancy-based station extraction needs a signal on every record."""


class LengthMismatch(ImpostorError):
    """Two distributions compared pointwise have different lengths."""


class AllZeroFlow(ImpostorError):
    """Region has no flow events in one direction; excluded from scoring."""


class UnclusteredRegion(ImpostorError):
    """Region is not part of the semantic clustering."""


class EmptyCandidateSet(ImpostorError):
    """No fake-record candidates exist for a station."""


class Unreachable(ImpostorError):
    """No path exists between two regions in a transition graph."""


class ConfigError(ImpostorError):
    """Bad key or value in a run configuration."""


class DataError(ImpostorError):
    """Input data violates a documented precondition."""


@dataclass(frozen=True)
class GridMap:
    """Rectangular grid over a city, anchored at a lat/lon origin corner.

    Region ids are row-major: ``rid = row * width_cells + col`` with the
    origin cell (south-west corner) as region 0.
    """

    origin_lat: float
    origin_lon: float
    width_cells: int
    height_cells: int
    cell_size_m: float = 1000.0

    def __post_init__(self) -> None:
        if self.width_cells < 1 or self.height_cells < 1:
            raise ConfigError("grid must be at least 1x1 cell")
        if self.cell_size_m <= 0:
            raise ConfigError("cell_size_m must be positive")

    @property
    def n_regions(self) -> int:
        return self.width_cells * self.height_cells

    @property
    def m_per_deg_lon(self) -> float:
        return M_PER_DEG_LAT * math.cos(math.radians(self.origin_lat))

    def contains(self, rid: int) -> bool:
        return 0 <= rid < self.n_regions

    def _check(self, rid: int) -> None:
        if not self.contains(rid):
            raise OutOfBounds(f"region id {rid} outside 0..{self.n_regions - 1}")

    def cell_of(self, rid: int) -> tuple[int, int]:
        """Return (col, row) of a region id."""
        self._check(rid)
        return rid % self.width_cells, rid // self.width_cells

    def region_of(self, col: int, row: int) -> int:
        if not (0 <= col < self.width_cells and 0 <= row < self.height_cells):
            raise OutOfBounds(f"cell ({col},{row}) outside the grid")
        return row * self.width_cells + col

    def center_m(self, rid: int) -> tuple[float, float]:
        """Projected metric coordinates (east, north) of the cell center."""
        col, row = self.cell_of(rid)
        return (col + 0.5) * self.cell_size_m, (row + 0.5) * self.cell_size_m

    def neighbors(self, rid: int) -> list[int]:
        """8-neighborhood on the grid; a region is never adjacent to itself."""
        col, row = self.cell_of(rid)
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                c, r = col + dc, row + dr
                if 0 <= c < self.width_cells and 0 <= r < self.height_cells:
                    out.append(r * self.width_cells + c)
        return out

    def adjacent(self, a: int, b: int) -> bool:
        if a == b:
            return False
        ca, ra = a % self.width_cells, a // self.width_cells
        cb, rb = b % self.width_cells, b // self.width_cells
        return abs(ca - cb) <= 1 and abs(ra - rb) <= 1


@dataclass(frozen=True)
class TimeScheme:
    """Bucket counts for the three discretizations of a day."""

    n_semantic: int = 4
    n_mobility: int = 24
    n_user: int = 288

    def __post_init__(self) -> None:
        for n in (self.n_semantic, self.n_mobility, self.n_user):
            if n <= 0 or SECONDS_PER_DAY % n != 0:
                raise InvalidBucketCount(f"{n} does not divide {SECONDS_PER_DAY}")


@dataclass(frozen=True)
class RawFix:
    """One raw GPS report before standardization."""

    vehicle_id: str
    timestamp: int
    lat: float
    lon: float
    occupancy: bool | None = None


@dataclass(frozen=True, slots=True)
class Record:
    """Discretized (region, time) pair, the atomic unit of every trace.

    ``interval`` is the user-sampling (N_U) bucket of ``second_of_day``;
    coarser bucketings are recomputed from ``second_of_day`` where needed.
    ``day`` orders records across midnight.
    """

    region: int
    interval: int
    second_of_day: int
    day: int = 0
    occupancy: bool | None = None

    @property
    def t_abs(self) -> int:
        return self.day * SECONDS_PER_DAY + self.second_of_day


@dataclass(slots=True)
class Trace:
    """Time-ordered records of one vehicle."""

    vehicle_id: str
    records: list[Record] = field(default_factory=list)

    def gap_indices(self, grid: GridMap) -> list[int]:
        """Positions i where records i-1 and i are neither equal nor adjacent.

        Gaps are flagged, never silently bridged; downstream consumers split
        at them.
        """
        out = []
        for i in range(1, len(self.records)):
            a, b = self.records[i - 1].region, self.records[i].region
            if a != b and not grid.adjacent(a, b):
                out.append(i)
        return out


def second_to_interval(second_of_day: float, n: int) -> int:
    """Map a second-of-day to its 0-based bucket under n buckets per day."""
    if n <= 0 or SECONDS_PER_DAY % n != 0:
        raise InvalidBucketCount(f"{n} does not divide {SECONDS_PER_DAY}")
    if not 0 <= second_of_day < SECONDS_PER_DAY:
        raise DataError(f"second_of_day {second_of_day} outside [0, {SECONDS_PER_DAY})")
    return int(second_of_day // (SECONDS_PER_DAY // n))


def make_record(
    region: int,
    day: int,
    second_of_day: int,
    scheme: TimeScheme,
    occupancy: bool | None = None,
) -> Record:
    """Build a Record with its N_U interval filled in."""
    return Record(
        region=region,
        interval=second_to_interval(second_of_day, scheme.n_user),
        second_of_day=second_of_day,
        day=day,
        occupancy=occupancy,
    )


def _cell_index(meters: float, cell_size: float, n_cells: int) -> int:
    """0-based cell index with boundary points assigned to the lower cell.

    Values within a relative 1e-9 of a cell edge snap onto it first, so the
    tie-break survives the float round trip through degrees.
    """
    u = meters / cell_size
    nearest = round(u)
    if abs(u - nearest) <= 1e-9 * max(1.0, abs(nearest)):
        u = float(nearest)
    if u < 0.0 or u > n_cells:
        raise OutOfBounds(f"coordinate {meters} m outside the map")
    return max(0, math.ceil(u) - 1)


def fix_to_region(fix: RawFix, grid: GridMap) -> int:
    """Locate the grid cell containing a GPS fix.

    Boundary points belong to the cell with the smaller index (the south/west
    cell), so the map's east and north edges are still in bounds.
    """
    x = (fix.lon - grid.origin_lon) * grid.m_per_deg_lon
    y = (fix.lat - grid.origin_lat) * M_PER_DEG_LAT
    try:
        col = _cell_index(x, grid.cell_size_m, grid.width_cells)
        row = _cell_index(y, grid.cell_size_m, grid.height_cells)
    except OutOfBounds:
        raise OutOfBounds(f"fix at ({fix.lat},{fix.lon}) outside the map") from None
    return row * grid.width_cells + col


def region_distance(a: int, b: int, grid: GridMap) -> float:
    """Straight-line meters between two cell centers on the projected plane."""
    xa, ya = grid.center_m(a)
    xb, yb = grid.center_m(b)
    return math.hypot(xa - xb, ya - yb)


def greedy_path(src: int, dst: int, grid: GridMap) -> list[int]:
    """Straight-line neighbor stepping from src to dst, inclusive of both.

    Each step moves one cell toward the target (diagonally while both axes
    differ), which is a shortest 8-neighborhood path on the grid.
    """
    grid._check(dst)
    col, row = grid.cell_of(src)
    tc, tr = grid.cell_of(dst)
    path = [src]
    while (col, row) != (tc, tr):
        col += (tc > col) - (tc < col)
        row += (tr > row) - (tr < row)
        path.append(row * grid.width_cells + col)
    return path
