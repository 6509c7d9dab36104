import numpy as np
import pytest

from impostor.core import (
    GridMap,
    Record,
    TimeScheme,
    Trace,
    UnclusteredRegion,
    make_record,
    region_distance,
)
from impostor.mobility import RankDistribution
from impostor.semantics import build_semantic_model
from impostor.stations import ARRIVE, DEPART, Station
from impostor.synthesizer import (
    FLAG_DEGENERATE,
    FLAG_GEO_FALLBACK,
    FLAG_SINGLETON_FALLBACK,
    FakeRecordStore,
    QueryContext,
    add_timestamps,
    candidate_fakes,
    fill_section,
    make_query_context,
    match_station_pairs,
    select_template,
    synthesize,
)

SCHEME = TimeScheme()


def rec(region, sec, day=0):
    return make_record(region=region, day=day, second_of_day=sec, scheme=SCHEME)


def station(region, sec, kind, day=0, vid="u"):
    return Station(record=rec(region, sec, day), kind=kind, vehicle_id=vid)


class TestSelectTemplate:
    def _ctx(self, target_sec=12 * 3600):
        return QueryContext(user_id="u", target=rec(5, target_sec), trajectory=[], n=2)

    def test_special_preferred_over_nearer_ordinary(self):
        store = FakeRecordStore()
        special = station(1, 10 * 3600, DEPART)
        ordinary = station(2, 11 * 3600, DEPART)
        after = station(3, 13 * 3600, ARRIVE)
        store.put("u", 1, special.record.interval, [rec(7, 10 * 3600)])
        template = select_template(self._ctx(), store, [special, ordinary, after])
        assert template[0] is special

    def test_nearest_ordinary_on_each_side(self):
        store = FakeRecordStore()
        sts = [
            station(1, 8 * 3600, DEPART),
            station(2, 11 * 3600, DEPART),
            station(3, 13 * 3600, ARRIVE),
            station(4, 18 * 3600, ARRIVE),
        ]
        template = select_template(self._ctx(), store, sts)
        assert template[0] is sts[1]
        assert template[-1] is sts[2]

    def test_no_station_after_target_uses_target(self):
        store = FakeRecordStore()
        sts = [station(1, 8 * 3600, DEPART)]
        ctx = self._ctx()
        template = select_template(ctx, store, sts)
        assert template[0] is sts[0]
        assert template[-1].record == ctx.target

    def test_no_station_before_target_uses_target(self):
        store = FakeRecordStore()
        sts = [station(3, 14 * 3600, ARRIVE)]
        ctx = self._ctx()
        template = select_template(ctx, store, sts)
        assert template[0].record == ctx.target
        assert template[-1] is sts[0]

    def test_interior_stations_kept_in_order(self):
        store = FakeRecordStore()
        sts = [
            station(1, 9 * 3600, DEPART),
            station(2, 10 * 3600, ARRIVE),
            station(2, 13 * 3600, DEPART),
            station(3, 14 * 3600, ARRIVE),
        ]
        template = select_template(self._ctx(), store, sts)
        assert template == sts

    def test_empty_stations_degenerate(self):
        ctx = self._ctx()
        template = select_template(ctx, FakeRecordStore(), [])
        assert len(template) == 1
        assert template[0].record == ctx.target


class TestCandidateFakes:
    def test_special_station_pass_through(self, models):
        store = FakeRecordStore()
        region = models.semantic.graph.regions[0]
        st = station(region, 8 * 3600, ARRIVE)
        stored = [rec(models.semantic.graph.regions[1], 8 * 3600)]
        store.put("u", region, st.record.interval, stored)
        cands, flags = candidate_fakes(st, models.semantic, store, "u")
        assert cands == stored
        assert flags == set()

    def test_ordinary_station_cluster_minus_self(self, models):
        store = FakeRecordStore()
        clustering = models.semantic.clustering
        cluster = next(c for c in clustering.clusters if len(c) >= 3)
        region = cluster[0]
        st = station(region, 8 * 3600, ARRIVE)
        cands, flags = candidate_fakes(st, models.semantic, store, "u")
        regions = {c.region for c in cands}
        assert region not in regions
        assert regions <= set(cluster)
        assert all(c.second_of_day == st.record.second_of_day for c in cands)

    def test_unclustered_region_raises(self, models):
        unclustered = next(
            r for r in range(models.grid.n_regions)
            if r not in models.semantic.clustering.cluster_of
        )
        st = station(unclustered, 8 * 3600, ARRIVE)
        with pytest.raises(UnclusteredRegion):
            candidate_fakes(st, models.semantic, FakeRecordStore(), "u")

    def test_singleton_cluster_falls_back_with_flag(self):
        sts = []
        # two workplace-like regions and one lonely leisure-like region
        for day, sec_in, sec_out, region in [
            (0, 8 * 3600, 17 * 3600, 1),
            (1, 8 * 3600, 17 * 3600, 2),
            (0, 20 * 3600, 21 * 3600, 9),
        ]:
            sts.append(Station(record=make_record(region, day, sec_in, SCHEME), kind=ARRIVE, vehicle_id="x"))
            sts.append(Station(record=make_record(region, day, sec_out, SCHEME), kind=DEPART, vehicle_id="x"))
        semantic = build_semantic_model(sts, SCHEME)
        lonely = semantic.clustering.clusters[semantic.clustering.cluster_of[9]]
        assert lonely == [9]
        st = station(9, 20 * 3600, ARRIVE)
        cands, flags = candidate_fakes(st, semantic, FakeRecordStore(), "u")
        assert FLAG_SINGLETON_FALLBACK in flags
        assert {c.region for c in cands} == {1, 2}

    def test_forbidden_region_removed(self, models):
        clustering = models.semantic.clustering
        cluster = next(c for c in clustering.clusters if len(c) >= 3)
        st = station(cluster[0], 8 * 3600, ARRIVE)
        cands, _ = candidate_fakes(
            st, models.semantic, FakeRecordStore(), "u", forbidden_region=cluster[1]
        )
        assert cluster[1] not in {c.region for c in cands}

    def test_max_candidates_cap(self, models):
        clustering = models.semantic.clustering
        cluster = max(clustering.clusters, key=len)
        st = station(cluster[0], 8 * 3600, ARRIVE)
        cands, _ = candidate_fakes(
            st, models.semantic, FakeRecordStore(), "u", max_candidates=3
        )
        assert len(cands) == 3


class TestMatchStationPairs:
    def test_single_candidates(self, grid):
        s = [rec(0, 100)]
        e = [rec(5, 200)]
        pairs, _, flags = match_station_pairs(s, e, 3000.0, 3, grid)
        assert pairs == [(s[0], e[0])] * 3

    def test_two_by_two_zero_delta_matching(self, grid):
        # real distance 1000 m; (s0,e0) and (s1,e1) hit it exactly
        s = [rec(0, 0), rec(12, 0)]
        e = [rec(1, 100), rec(13, 100)]
        pairs, _, _ = match_station_pairs(s, e, 1000.0, 2, grid)
        assert set((a.region, b.region) for a, b in pairs) == {(0, 1), (12, 13)}

    def test_top_n_by_distance_mismatch(self):
        grid = GridMap(origin_lat=0.0, origin_lon=0.0, width_cells=80, height_cells=1,
                       cell_size_m=100.0)
        # real pair distance 3.0 km; candidate end distances 2.9, 7.0, 3.2 km
        s = [rec(0, 0), rec(1, 0), rec(2, 0)]
        e = [rec(29, 100), rec(71, 100), rec(34, 100)]
        pairs, _, _ = match_station_pairs(s, e, 3000.0, 2, grid)
        deltas = sorted(
            abs(3000.0 - region_distance(a.region, b.region, grid)) for a, b in pairs
        )
        assert deltas == pytest.approx([100.0, 200.0])

    def test_fewer_pairs_cycle_with_flag(self, grid):
        s = [rec(0, 0)]
        e = [rec(1, 100)]
        pairs, _, flags = match_station_pairs(s, e, 500.0, 4, grid)
        assert len(pairs) == 4
        assert "pair_reuse" in flags


class TestFillAndTimestamps:
    def test_adjacent_direct_path(self, models):
        ranks = RankDistribution(probs=np.array([1.0]))
        graph = models.mobility.graphs[sorted(models.mobility.graphs)[0]]
        src = next(iter(graph.weights))
        dst = next(iter(graph.weights[src]))
        s = rec(src, (graph.interval * 3600) % 86400)
        e = rec(dst, (graph.interval * 3600 + 240) % 86400)
        path, flags = fill_section(s, e, models, ranks, np.random.default_rng(0))
        assert path[0] == src and path[-1] == dst

    def test_same_region_trivial(self, models):
        ranks = RankDistribution(probs=np.array([1.0]))
        s, e = rec(5, 100), rec(5, 700)
        path, flags = fill_section(s, e, models, ranks, np.random.default_rng(0))
        assert path == [5]

    def test_unreachable_uses_geographic_fallback(self, models):
        ranks = RankDistribution(probs=np.array([1.0]))
        # 3 am graph is empty in the commuter city
        s, e = rec(0, 3 * 3600), rec(107, 3 * 3600 + 1800)
        path, flags = fill_section(s, e, models, ranks, np.random.default_rng(0))
        assert FLAG_GEO_FALLBACK in flags
        assert path[0] == 0 and path[-1] == 107

    def test_gamma_scaling(self, models):
        # 3 am tensor is empty, so both crossings use the fallback duration:
        # gamma rescales them onto the span and the midpoint lands halfway
        path = [0, 1, 2]
        records, flags = add_timestamps(
            path, 0, 1000, models.mobility, interval=3, grid=models.grid,
            n_user=SCHEME.n_user,
        )
        assert records[0].et_s == 0.0
        assert records[1].et_s == pytest.approx(500.0)
        assert records[-1].et_s == 1000.0
        ets = [r.et_s for r in records]
        assert all(a < b for a, b in zip(ets, ets[1:]))
        # ET 500 s lands in the second 300 s user bucket
        assert records[1].cloak_interval == 1
        assert records[0].cloak_interval == 0


class TestSynthesize:
    def _query(self, models, city_traces, trace_idx=0, n=3, record_idx=40):
        trace = city_traces[trace_idx]
        target = trace.records[record_idx]
        return make_query_context(trace, target, n=n, window_hours=15.0)

    def test_station_count_matches_template(self, models, city_traces):
        store = FakeRecordStore()
        ctx = self._query(models, city_traces)
        result = synthesize(ctx, models, store, rng=np.random.default_rng(0))
        assert len(result.impostors) == ctx.n
        for imp in result.impostors:
            assert len(imp.stations) == len(result.template)

    def test_no_real_region_at_target_interval(self, models, city_traces):
        store = FakeRecordStore()
        for idx in (10, 40, 80):
            ctx = self._query(models, city_traces, record_idx=idx)
            result = synthesize(ctx, models, store, rng=np.random.default_rng(idx))
            for imp in result.impostors:
                for r in imp.records:
                    assert not (
                        r.region == ctx.target.region
                        and r.cloak_interval == ctx.target.interval
                    )
            for fake in result.fake_queries:
                assert fake.region != ctx.target.region

    def test_fake_stations_stay_in_cluster(self, models, city_traces):
        store = FakeRecordStore()
        ctx = self._query(models, city_traces)
        result = synthesize(ctx, models, store, rng=np.random.default_rng(0))
        cluster_of = models.semantic.clustering.cluster_of
        for imp in result.impostors:
            if FLAG_SINGLETON_FALLBACK in imp.flags:
                continue
            for st_real, st_fake in zip(result.template, imp.stations):
                assert cluster_of[st_fake.region] == cluster_of[st_real.record.region]
                assert st_fake.region != st_real.record.region

    def test_et_endpoints_and_monotonicity(self, models, city_traces):
        store = FakeRecordStore()
        ctx = self._query(models, city_traces)
        result = synthesize(ctx, models, store, rng=np.random.default_rng(0))
        t_s = result.template[0].record.t_abs
        t_e = result.template[-1].record.t_abs
        for imp in result.impostors:
            ets = [r.et_s for r in imp.records]
            assert ets[0] == float(t_s)
            assert ets[-1] == float(t_e)
            assert all(a < b for a, b in zip(ets, ets[1:]))

    def test_repeat_query_reuses_store(self, models, city_traces):
        store = FakeRecordStore()
        ctx = self._query(models, city_traces)
        first = synthesize(ctx, models, store, rng=np.random.default_rng(0))
        second = synthesize(ctx, models, store, rng=np.random.default_rng(999))
        assert [[s.region for s in imp.stations] for imp in first.impostors] == \
               [[s.region for s in imp.stations] for imp in second.impostors]

    def test_deterministic_with_seed(self, models, city_traces):
        ctx = self._query(models, city_traces)
        a = synthesize(ctx, models, FakeRecordStore(), rng=np.random.default_rng(5))
        b = synthesize(ctx, models, FakeRecordStore(), rng=np.random.default_rng(5))
        assert [(imp.stations, imp.records) for imp in a.impostors] == \
               [(imp.stations, imp.records) for imp in b.impostors]

    def test_degenerate_singleton_trajectory(self, models, city_traces):
        trace = city_traces[0]
        target = trace.records[30]
        ctx = QueryContext(user_id="u", target=target, trajectory=[target], n=2)
        result = synthesize(ctx, models, FakeRecordStore(), rng=np.random.default_rng(1))
        assert FLAG_DEGENERATE in result.flags
        assert len(result.impostors) == 2
        for imp, fake in zip(result.impostors, result.fake_queries):
            assert len(imp.records) == 1
            assert fake.interval == target.interval
            assert fake.region != target.region

    def test_fake_queries_at_target_interval(self, models, city_traces):
        store = FakeRecordStore()
        ctx = self._query(models, city_traces)
        result = synthesize(ctx, models, store, rng=np.random.default_rng(0))
        assert len(result.fake_queries) == ctx.n
        for fake in result.fake_queries:
            assert fake.interval == ctx.target.interval


class TestStore:
    def test_put_then_get(self):
        store = FakeRecordStore()
        fakes = [rec(3, 100)]
        assert store.put("u", 5, 2, fakes)
        assert store.get("u", 5, 2) == fakes

    def test_earliest_entry_wins(self):
        store = FakeRecordStore()
        store.put("u", 5, 2, [rec(3, 100)])
        assert not store.put("u", 5, 2, [rec(4, 100)])
        assert store.get("u", 5, 2)[0].region == 3

    def test_jsonl_replay(self, tmp_path):
        path = tmp_path / "store.jsonl"
        store = FakeRecordStore(path)
        store.put("u", 5, 2, [rec(3, 100, day=1)])
        store.put("u", 6, 3, [rec(4, 200)])
        again = FakeRecordStore(path)
        assert len(again) == 2
        assert again.get("u", 5, 2) == [Record(region=3, interval=2, second_of_day=100, day=1)]

    def test_replay_keeps_earliest_on_duplicate_lines(self, tmp_path):
        path = tmp_path / "store.jsonl"
        line = '{"fakes": [[3, 2, 100, 0]], "interval": 2, "region": 5, "user": "u"}\n'
        dup = '{"fakes": [[9, 2, 100, 0]], "interval": 2, "region": 5, "user": "u"}\n'
        path.write_text(line + dup)
        store = FakeRecordStore(path)
        assert store.get("u", 5, 2)[0].region == 3
