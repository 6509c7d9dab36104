import pytest

from impostor.core import MissingSignal, Record, TimeScheme, Trace, make_record
from impostor.stations import (
    ARRIVE,
    DEPART,
    SpeedTable,
    Station,
    build_speed_table,
    extract_sections,
    extract_stations_occupancy,
    extract_stations_parking,
    read_speed_table,
    read_stations,
    write_speed_table,
    write_stations,
)

SCHEME = TimeScheme()


def rec(region, sec, day=0, occ=None):
    return make_record(region=region, day=day, second_of_day=sec, scheme=SCHEME, occupancy=occ)


def trace(*records, vid="v"):
    return Trace(vehicle_id=vid, records=list(records))


def flat_speeds(kmh=30.0):
    return SpeedTable(n_mobility=24, speeds={}, global_kmh=kmh)


class TestOccupancyStations:
    def test_constant_signal_yields_nothing(self):
        t = trace(rec(0, 0, occ=False), rec(1, 60, occ=False), rec(2, 120, occ=False))
        assert extract_stations_occupancy(t) == []

    def test_pickup_then_dropoff(self):
        t = trace(
            rec(0, 0, occ=False),
            rec(1, 600, occ=True),   # pickup: passenger leaves this location
            rec(2, 1200, occ=True),
            rec(3, 1800, occ=False),  # dropoff: passenger goes into this location
        )
        stations = extract_stations_occupancy(t)
        assert [(s.kind, s.record.region) for s in stations] == [
            (DEPART, 1),
            (ARRIVE, 3),
        ]

    def test_same_region_interval_pickups_deduplicated(self):
        t = trace(
            rec(0, 0, occ=False),
            rec(1, 60, occ=True),
            rec(1, 90, occ=False),
            rec(1, 120, occ=True),  # same region, same 300 s interval
            rec(2, 1000, occ=False),
        )
        stations = extract_stations_occupancy(t)
        departs = [s for s in stations if s.kind == DEPART]
        assert len(departs) == 1

    def test_missing_signal_raises(self):
        t = trace(rec(0, 0, occ=False), rec(1, 60))
        with pytest.raises(MissingSignal):
            extract_stations_occupancy(t)


class TestParkingStations:
    def test_threshold_arithmetic(self):
        # v = 30 km/h: threshold = 9/30 h = 1080 s
        assert flat_speeds(30.0).threshold_s(0, 0) == pytest.approx(1080.0)

    def test_long_dwell_emits_two_stations(self):
        t = trace(rec(4, 0), rec(4, 600), rec(4, 1200), rec(5, 1300))
        stations = extract_stations_parking(t, flat_speeds(30.0))
        assert [(s.kind, s.record.second_of_day) for s in stations] == [
            (ARRIVE, 0),
            (DEPART, 1200),
        ]

    def test_short_dwell_emits_nothing(self):
        t = trace(rec(4, 0), rec(4, 900), rec(5, 1000))
        assert extract_stations_parking(t, flat_speeds(30.0)) == []

    def test_dwell_exactly_at_threshold_is_not_a_station(self):
        t = trace(rec(4, 0), rec(4, 1080), rec(5, 1200))
        assert extract_stations_parking(t, flat_speeds(30.0)) == []

    def test_never_dwelling_trace_is_empty(self):
        t = trace(rec(0, 0), rec(1, 120), rec(2, 240), rec(3, 360))
        assert extract_stations_parking(t, flat_speeds(30.0)) == []

    def test_dwell_across_midnight(self):
        t = trace(rec(4, 85000, day=0), rec(4, 400, day=1), rec(5, 600, day=1))
        stations = extract_stations_parking(t, flat_speeds(30.0))
        assert [s.kind for s in stations] == [ARRIVE, DEPART]
        assert stations[0].record.day == 0 and stations[1].record.day == 1

    def test_custom_numerator(self):
        # numerator 3 km at 30 km/h: threshold 360 s
        t = trace(rec(4, 0), rec(4, 500), rec(5, 600))
        assert extract_stations_parking(t, flat_speeds(30.0), numerator_km=3.0) != []

    def test_lower_speed_never_adds_stations(self, city_traces, grid, scheme):
        fast = flat_speeds(30.0)
        slow = flat_speeds(10.0)  # threshold triples
        for t in city_traces[:10]:
            n_fast = len(extract_stations_parking(t, fast))
            n_slow = len(extract_stations_parking(t, slow))
            assert n_slow <= n_fast


class TestSections:
    def test_too_few_stations(self):
        t = trace(rec(0, 0), rec(1, 100))
        assert extract_sections(t, []) == []
        only = Station(record=t.records[0], kind=DEPART, vehicle_id="v")
        assert extract_sections(t, [only]) == []

    def test_commute_with_stopover(self):
        # depart A, arrive B, depart B, arrive C: two sections
        t = trace(
            rec(0, 0), rec(1, 120), rec(2, 240),
            rec(2, 2000), rec(3, 2120), rec(4, 2240),
        )
        stations = [
            Station(record=t.records[0], kind=DEPART, vehicle_id="v"),
            Station(record=t.records[2], kind=ARRIVE, vehicle_id="v"),
            Station(record=t.records[3], kind=DEPART, vehicle_id="v"),
            Station(record=t.records[5], kind=ARRIVE, vehicle_id="v"),
        ]
        sections = extract_sections(t, stations)
        assert len(sections) == 2
        assert [r.region for r in sections[0].records] == [0, 1, 2]
        assert [r.region for r in sections[1].records] == [2, 3, 4]

    def test_taxi_ride_single_section(self):
        t = trace(
            rec(0, 0, occ=False), rec(1, 120, occ=True),
            rec(2, 240, occ=True), rec(3, 360, occ=False),
        )
        stations = extract_stations_occupancy(t)
        sections = extract_sections(t, stations)
        assert len(sections) == 1
        assert [r.region for r in sections[0].records] == [1, 2, 3]

    def test_station_records_exist_in_trace(self, city_traces, grid, scheme):
        speeds = build_speed_table(city_traces, grid, scheme)
        for t in city_traces[:10]:
            keys = {(r.day, r.second_of_day) for r in t.records}
            for st in extract_stations_parking(t, speeds):
                assert (st.record.day, st.record.second_of_day) in keys

    def test_sections_and_dwells_tile_the_station_span(self, city_traces, grid, scheme):
        speeds = build_speed_table(city_traces, grid, scheme)
        for t in city_traces[:10]:
            stations = extract_stations_parking(t, speeds)
            if len(stations) < 2:
                continue
            sections = extract_sections(t, stations)
            index_of = {(r.day, r.second_of_day): i for i, r in enumerate(t.records)}
            covered = set()
            for sec in sections:
                ia = index_of[(sec.start.record.day, sec.start.record.second_of_day)]
                ib = index_of[(sec.end.record.day, sec.end.record.second_of_day)]
                covered.update(range(ia, ib + 1))
            for a, b in zip(stations, stations[1:]):
                if a.kind == ARRIVE and b.kind == DEPART:  # dwell interior
                    ia = index_of[(a.record.day, a.record.second_of_day)]
                    ib = index_of[(b.record.day, b.record.second_of_day)]
                    covered.update(range(ia, ib + 1))
            first = index_of[(stations[0].record.day, stations[0].record.second_of_day)]
            last = index_of[(stations[-1].record.day, stations[-1].record.second_of_day)]
            assert covered == set(range(first, last + 1))


class TestSpeedTable:
    def test_built_speeds_near_design_speed(self, city_traces, grid, scheme):
        speeds = build_speed_table(city_traces, grid, scheme)
        assert speeds.global_kmh == pytest.approx(30.0, rel=0.1)
        for v in speeds.speeds.values():
            assert v > 0

    def test_fallback_to_global(self):
        table = SpeedTable(n_mobility=24, speeds={(1, 2): 50.0}, global_kmh=25.0)
        assert table.speed(1, 2) == 50.0
        assert table.speed(9, 9) == 25.0

    def test_round_trip(self, tmp_path, city_traces, grid, scheme):
        speeds = build_speed_table(city_traces, grid, scheme)
        write_speed_table(speeds, tmp_path / "speeds.csv")
        again = read_speed_table(tmp_path / "speeds.csv")
        assert again.n_mobility == speeds.n_mobility
        assert again.global_kmh == speeds.global_kmh
        assert again.speeds == speeds.speeds


def test_station_csv_round_trip(tmp_path, city_traces, grid, scheme):
    speeds = build_speed_table(city_traces, grid, scheme)
    stations = extract_stations_parking(city_traces[0], speeds)
    write_stations(stations, tmp_path / "stations.csv")
    again = read_stations(tmp_path / "stations.csv")
    assert [(s.vehicle_id, s.record.region, s.record.interval, s.record.second_of_day, s.kind)
            for s in stations] == \
           [(s.vehicle_id, s.record.region, s.record.interval, s.record.second_of_day, s.kind)
            for s in again]
