"""Online impostor-trace synthesis.

Given one real record and the trajectory around it, pick a station template,
replace every station with a semantically interchangeable fake (reusing any
fakes issued before for the same station), connect the fakes with k-th
shortest paths in the mobility graph, and spread timestamps so the fake
journey spans exactly the real one. The records of each impostor falling in
the queried interval form the fake query set.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .core import (
    SECONDS_PER_DAY,
    DataError,
    EmptyCandidateSet,
    Record,
    Trace,
    UnclusteredRegion,
    Unreachable,
    greedy_path,
    region_distance,
    second_to_interval,
)
from .matching import kuhn_munkres
from .mobility import MobilityModel, RankDistribution, iter_shortest_paths
from .offline import OfflineModels
from .semantics import SemanticModel, cluster_centroid, semantic_distance
from .stations import ARRIVE, DEPART, Station

FLAG_DEGENERATE = "degenerate_template"
FLAG_GEO_FALLBACK = "geo_fallback"
FLAG_K_TRUNCATED = "k_truncated"
FLAG_PAIR_REUSE = "pair_reuse"
FLAG_SINGLETON_FALLBACK = "singleton_fallback"
FLAG_STORE_CONFLICT = "store_conflict"
FLAG_TARGET_EXCISED = "target_excised"
FLAG_ZERO_PHI = "zero_phi"


@dataclass
class QueryContext:
    """One location query: the target record plus the trajectory around it."""

    user_id: str
    target: Record
    trajectory: list[Record]
    n: int


def make_query_context(
    trace: Trace, target: Record, n: int, window_hours: float = 15.0
) -> QueryContext:
    """Restrict a trace to the +/- window around the target record."""
    half = window_hours * 3600.0
    records = [r for r in trace.records if abs(r.t_abs - target.t_abs) <= half]
    return QueryContext(user_id=trace.vehicle_id, target=target, trajectory=records, n=n)


class FakeRecordStore:
    """Fake records issued before, keyed by (user, region, N_U interval).

    A station with a stored entry is "special" and must reuse those fakes.
    Collisions keep the earliest entry. Persistence is an append-only JSONL
    log replayed at startup; mutations are serialized by a lock.
    """

    def __init__(self, path: str | FsPath | None = None):
        self._data: dict[tuple[str, int, int], list[Record]] = {}
        self._path = FsPath(path) if path else None
        self._lock = threading.Lock()
        if self._path and self._path.exists():
            self._replay()

    def _replay(self) -> None:
        with self._path.open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                key = (entry["user"], entry["region"], entry["interval"])
                if key in self._data:
                    continue  # earliest entry wins
                self._data[key] = [
                    Record(region=r, interval=iv, second_of_day=sec, day=day)
                    for r, iv, sec, day in entry["fakes"]
                ]

    def __len__(self) -> int:
        return len(self._data)

    def get(self, user_id: str, region: int, interval: int) -> list[Record] | None:
        return self._data.get((user_id, region, interval))

    def put(self, user_id: str, region: int, interval: int, fakes: list[Record]) -> bool:
        """Store fakes for a station key; returns False if the key existed."""
        key = (user_id, region, interval)
        with self._lock:
            if key in self._data:
                return False
            self._data[key] = list(fakes)
            if self._path:
                entry = {
                    "user": user_id,
                    "region": region,
                    "interval": interval,
                    "fakes": [[f.region, f.interval, f.second_of_day, f.day] for f in fakes],
                }
                with self._path.open("a") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return True


@dataclass(frozen=True, slots=True)
class ImpostorRecord:
    region: int
    et_s: float  # estimated absolute second of reaching the region
    cloak_interval: int


@dataclass
class ImpostorTrace:
    records: list[ImpostorRecord]
    stations: list[Record]
    flags: set[str] = field(default_factory=set)


@dataclass
class SynthesisResult:
    impostors: list[ImpostorTrace]
    fake_queries: list[Record]
    template: list[Station]
    flags: set[str] = field(default_factory=set)


def _is_special(store: FakeRecordStore, user_id: str, st: Station) -> bool:
    return store.get(user_id, st.record.region, st.record.interval) is not None


def select_template(
    ctx: QueryContext, store: FakeRecordStore, stations: list[Station]
) -> list[Station]:
    """Start/end stations around the target plus every station between them.

    Special stations win over ordinary ones on each side; with no station on
    a side, the target itself serves as that station. Returns a single
    pseudo-station when the trajectory offers nothing else.
    """
    t_target = ctx.target.t_abs
    before = [s for s in stations if s.record.t_abs <= t_target]
    after = [s for s in stations if s.record.t_abs > t_target]

    def nearest(side: list[Station], latest: bool) -> Station | None:
        if not side:
            return None
        specials = [s for s in side if _is_special(store, ctx.user_id, s)]
        pool = specials or side
        key = lambda s: s.record.t_abs
        return max(pool, key=key) if latest else min(pool, key=key)

    start = nearest(before, latest=True)
    end = nearest(after, latest=False)
    if start is None and end is None:
        return [Station(record=ctx.target, kind=ARRIVE, vehicle_id=ctx.user_id)]
    if start is None:
        start = Station(record=ctx.target, kind=DEPART, vehicle_id=ctx.user_id)
    if end is None:
        end = Station(record=ctx.target, kind=ARRIVE, vehicle_id=ctx.user_id)
    if start.record.t_abs >= end.record.t_abs:
        return [start]
    interior = sorted(
        (s for s in stations if start.record.t_abs < s.record.t_abs < end.record.t_abs),
        key=lambda s: s.record.t_abs,
    )
    return [start] + interior + [end]


def _cluster_members(semantic: SemanticModel, region: int) -> tuple[int, list[int]]:
    cid = semantic.clustering.cluster_of.get(region)
    if cid is None:
        raise UnclusteredRegion(f"region {region} has no semantic cluster")
    return cid, [r for r in semantic.clustering.clusters[cid] if r != region]


def _nearest_other_cluster(semantic: SemanticModel, region: int, own_cid: int) -> list[int]:
    """Members of the cluster whose centroid is semantically closest."""
    base = semantic.flows[region]
    best = None
    for cid in range(len(semantic.clustering.clusters)):
        if cid == own_cid or not semantic.clustering.clusters[cid]:
            continue
        d = semantic_distance(base, cluster_centroid(semantic, cid))
        if best is None or (d, cid) < best[:2]:
            best = (d, cid)
    if best is None:
        raise EmptyCandidateSet(f"no alternative cluster for region {region}")
    return list(semantic.clustering.clusters[best[1]])


def candidate_fakes(
    station: Station,
    semantic: SemanticModel,
    store: FakeRecordStore,
    user_id: str,
    forbidden_region: int | None = None,
    max_candidates: int | None = None,
) -> tuple[list[Record], set[str]]:
    """Candidate fake records for one station.

    Special stations pass their stored fakes through. Ordinary stations draw
    from their own cluster minus themselves; singleton clusters fall back to
    the semantically nearest other cluster (flagged). ``forbidden_region``
    (the live query's real region) never appears among candidates.
    """
    flags: set[str] = set()
    rec = station.record
    stored = store.get(user_id, rec.region, rec.interval)
    if stored is not None:
        kept = [f for f in stored if f.region != forbidden_region]
        if kept:
            if len(kept) < len(stored):
                flags.add(FLAG_STORE_CONFLICT)
            return kept, flags
        flags.add(FLAG_STORE_CONFLICT)  # stored set unusable, fall through

    cid, members = _cluster_members(semantic, rec.region)
    members = [r for r in members if r != forbidden_region]
    if not members:
        members = [r for r in _nearest_other_cluster(semantic, rec.region, cid)
                   if r != forbidden_region and r != rec.region]
        flags.add(FLAG_SINGLETON_FALLBACK)
        if not members:
            raise EmptyCandidateSet(f"region {rec.region}: no usable fake candidates")
    if max_candidates is not None and len(members) > max_candidates:
        # keep the semantically closest ones; graph weight is the similarity
        members = sorted(
            members, key=lambda r: (-semantic.graph.similarity(rec.region, r), r)
        )[:max_candidates]
        members.sort()
    cands = [
        Record(region=r, interval=rec.interval, second_of_day=rec.second_of_day, day=rec.day)
        for r in members
    ]
    return cands, flags


def match_station_pairs(
    s_cands: list[Record],
    e_cands: list[Record],
    real_pair_distance: float,
    n: int,
    grid,
) -> tuple[list[tuple[Record, Record]], dict[Record, Record], set[str]]:
    """Assign fake start candidates to fake end candidates, then keep top n.

    Edge weight is -|d(real pair) - d(candidate pair)|, maximized by the
    Kuhn-Munkres assignment; the n matched pairs with the smallest distance
    mismatch are returned (cycled, and flagged, when fewer exist).
    """
    if not s_cands or not e_cands:
        raise DataError("both candidate sets must be non-empty")
    s_unique = list(dict.fromkeys(s_cands))
    e_unique = list(dict.fromkeys(e_cands))
    w = np.empty((len(s_unique), len(e_unique)))
    for i, s in enumerate(s_unique):
        for j, e in enumerate(e_unique):
            w[i, j] = -abs(real_pair_distance - region_distance(s.region, e.region, grid))
    assignment = kuhn_munkres(w)
    matched = sorted(
        ((-w[i, j], s_unique[i], e_unique[j]) for i, j in assignment),
        key=lambda t: (t[0], t[1].region, t[2].region),
    )
    match_map = {s: e for _, s, e in matched}
    flags: set[str] = set()
    pairs = [(s, e) for _, s, e in matched[:n]]
    if len(pairs) < n:
        flags.add(FLAG_PAIR_REUSE)
        while len(pairs) < n:
            pairs.append(pairs[len(pairs) % len(matched)])
    return pairs, match_map, flags


def _cloak(et_abs: float, n_user: int) -> int:
    return second_to_interval(et_abs % SECONDS_PER_DAY, n_user)


def add_timestamps(
    path: list[int],
    t_s: int,
    t_e: int,
    model: MobilityModel,
    interval: int,
    grid,
    n_user: int,
) -> tuple[list[ImpostorRecord], set[str]]:
    """Estimated arrival seconds for every region of a filled path.

    Modeled crossing times are scaled so the trip spans exactly (t_s, t_e);
    the first record lands on t_s and the last on t_e. The crossing time of
    the start region, whose entry direction is unknown, is the count-weighted
    mean over observed predecessors.
    """
    if len(path) < 2:
        raise DataError("path must contain at least two regions")
    if t_e <= t_s:
        raise DataError("t_e must be after t_s")
    flags: set[str] = set()
    crossings = []
    for j in range(len(path) - 1):
        if j == 0:
            num = 0.0
            den = 0
            for pred in grid.neighbors(path[0]):
                key = (path[0], pred, path[1])
                cnt = model.tensor.entry_count(interval, key)
                if cnt:
                    num += model.tensor.sums[interval][key]
                    den += cnt
            dur = num / den if den else model.default_traverse_s
        else:
            mean = model.tensor.mean(interval, path[j], path[j - 1], path[j + 1])
            dur = mean if mean is not None else model.default_traverse_s
        crossings.append(max(dur, 1e-3))
    phi = sum(crossings)
    if phi <= 0.0:
        flags.add(FLAG_ZERO_PHI)
        ets = [float(x) for x in np.linspace(t_s, t_e, num=len(path))]
    else:
        gamma = (t_e - t_s) / phi
        ets = [float(t_s)]
        psi = 0.0
        for c in crossings:
            psi += c
            ets.append(t_s + gamma * psi)
        ets[-1] = float(t_e)
    records = [
        ImpostorRecord(region=r, et_s=et, cloak_interval=_cloak(et, n_user))
        for r, et in zip(path, ets)
    ]
    return records, flags


def fill_section(
    s_rec: Record,
    e_rec: Record,
    models: OfflineModels,
    ranks: RankDistribution,
    rng: np.random.Generator,
) -> tuple[list[int], set[str]]:
    """Region path for one fake section, with k sampled from the rank model."""
    return _fill_with_k(s_rec, e_rec, models, ranks.sample_k(rng))


def _section_interval(s_rec: Record, e_rec: Record, n_mobility: int) -> int:
    mid = (s_rec.t_abs + e_rec.t_abs) / 2.0
    return second_to_interval(mid % SECONDS_PER_DAY, n_mobility)


def _fill_with_k(
    s_rec: Record, e_rec: Record, models: OfflineModels, k: int
) -> tuple[list[int], set[str]]:
    if s_rec.region == e_rec.region:
        return [s_rec.region], set()
    flags: set[str] = set()
    interval = _section_interval(s_rec, e_rec, models.cfg.n_mobility)
    graph = models.mobility.graphs.get(interval)
    if graph is not None:
        try:
            paths = []
            for i, path in enumerate(iter_shortest_paths(graph, s_rec.region, e_rec.region), 1):
                paths.append(path)
                if i == k:
                    break
            if len(paths) < k:
                flags.add(FLAG_K_TRUNCATED)
            return list(paths[-1].nodes), flags
        except Unreachable:
            pass
    flags.add(FLAG_GEO_FALLBACK)
    return greedy_path(s_rec.region, e_rec.region, models.grid), flags


def _violates(records: list[ImpostorRecord], forbidden: tuple[int, int]) -> bool:
    region, interval = forbidden
    return any(r.region == region and r.cloak_interval == interval for r in records)


def _build_section(
    s_rec: Record,
    e_rec: Record,
    t_s: int,
    t_e: int,
    models: OfflineModels,
    k: int,
    forbidden: tuple[int, int],
) -> tuple[list[ImpostorRecord], set[str]]:
    """Fill and timestamp one section, avoiding the forbidden (region, interval).

    Alternative path ranks are tried first, then the geographic fallback;
    as a last resort the offending records are excised (flagged).
    """
    n_user = models.cfg.n_user
    if s_rec.region == e_rec.region:
        recs = [
            ImpostorRecord(region=s_rec.region, et_s=float(t_s), cloak_interval=_cloak(t_s, n_user)),
            ImpostorRecord(region=e_rec.region, et_s=float(t_e), cloak_interval=_cloak(t_e, n_user)),
        ]
        return recs, set()

    interval = _section_interval(s_rec, e_rec, models.cfg.n_mobility)

    def timestamped(path: list[int], fl: set[str]) -> tuple[list[ImpostorRecord], set[str]]:
        recs, tflags = add_timestamps(path, t_s, t_e, models.mobility, interval, models.grid, n_user)
        return recs, fl | tflags

    path, flags = _fill_with_k(s_rec, e_rec, models, k)
    records, flags = timestamped(path, flags)
    if not _violates(records, forbidden):
        return records, flags

    # the sampled rank crosses the real record: try other ranks in order
    graph = models.mobility.graphs.get(interval)
    if graph is not None:
        try:
            cap = max(k, models.cfg.k_max)
            for i, alt in enumerate(iter_shortest_paths(graph, s_rec.region, e_rec.region), 1):
                if i > cap:
                    break
                if list(alt.nodes) == path:
                    continue
                alt_records, alt_flags = timestamped(list(alt.nodes), set(flags))
                if not _violates(alt_records, forbidden):
                    return alt_records, alt_flags
        except Unreachable:
            pass
    geo = greedy_path(s_rec.region, e_rec.region, models.grid)
    geo_records, geo_flags = timestamped(geo, flags | {FLAG_GEO_FALLBACK})
    if not _violates(geo_records, forbidden):
        return geo_records, geo_flags
    kept = [r for r in records if not (r.region == forbidden[0] and r.cloak_interval == forbidden[1])]
    return kept, flags | {FLAG_TARGET_EXCISED}


def _normalize(candidate: Record, station: Station) -> Record:
    """Pin a candidate's region to the station's own time coordinates."""
    rec = station.record
    return Record(
        region=candidate.region,
        interval=rec.interval,
        second_of_day=rec.second_of_day,
        day=rec.day,
    )


def _pick_fake_query(
    impostor: ImpostorTrace, target: Record, n_user: int
) -> Record:
    """The impostor's record published for the target's interval."""
    at_interval = [
        r for r in impostor.records
        if r.cloak_interval == target.interval and r.region != target.region
    ]
    pool = at_interval or [r for r in impostor.records if r.region != target.region]
    best = min(pool, key=lambda r: (abs(r.et_s - target.t_abs), r.et_s))
    et = int(best.et_s)
    return Record(
        region=best.region,
        interval=target.interval,
        second_of_day=et % SECONDS_PER_DAY,
        day=et // SECONDS_PER_DAY,
    )


def synthesize(
    ctx: QueryContext,
    models: OfflineModels,
    store: FakeRecordStore,
    rng: np.random.Generator | int = 0,
) -> SynthesisResult:
    """Produce n impostor traces and the fake records for the query interval.

    The trajectory's stations between the selected start and end become the
    template; each impostor mirrors its station count. The store is updated
    so repeated queries reuse the same fakes, and no impostor ever carries
    the real region at the target's interval.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if ctx.n < 1:
        raise DataError("impostor count must be at least 1")
    if not ctx.trajectory:
        raise DataError("empty trajectory")
    records = sorted(ctx.trajectory, key=lambda r: r.t_abs)
    if not records[0].t_abs <= ctx.target.t_abs <= records[-1].t_abs:
        raise DataError("target outside the trajectory time span")
    target = ctx.target
    n = ctx.n
    trace = Trace(vehicle_id=ctx.user_id, records=records)
    stations = models.extract_stations(trace)
    template = select_template(ctx, store, stations)

    # stations flanking the target in time also exclude its real region, so
    # every impostor keeps at least one non-target station near the query
    flanking: set[int] = set()
    for i in range(len(template) - 1):
        if template[i].record.t_abs <= target.t_abs <= template[i + 1].record.t_abs:
            flanking = {i, i + 1}
            break

    def forbidden_for(idx: int, st: Station) -> int | None:
        if idx in flanking or st.record.interval == target.interval:
            return target.region
        return None

    if len(template) == 1:
        # collapsed template: one fake record drawn from the target's cluster
        st = template[0]
        cands, flags = candidate_fakes(
            st, models.semantic, store, ctx.user_id,
            forbidden_region=target.region,
            max_candidates=models.cfg.max_candidates,
        )
        flags.add(FLAG_DEGENERATE)
        if len(cands) >= n:
            chosen_idx = sorted(rng.choice(len(cands), size=n, replace=False).tolist())
            chosen = [cands[i] for i in chosen_idx]
        else:
            flags.add(FLAG_PAIR_REUSE)
            chosen = [cands[i % len(cands)] for i in range(n)]
        fakes = [_normalize(c, st) for c in chosen]
        store.put(ctx.user_id, st.record.region, st.record.interval, fakes)
        impostors = []
        for fake in fakes:
            rec = ImpostorRecord(
                region=fake.region,
                et_s=float(target.t_abs),
                cloak_interval=target.interval,
            )
            impostors.append(ImpostorTrace(records=[rec], stations=[fake], flags=set(flags)))
        return SynthesisResult(
            impostors=impostors,
            fake_queries=list(fakes),
            template=template,
            flags=flags,
        )

    # candidate sets per template station
    cand_sets: list[list[Record]] = []
    station_flags: set[str] = set()
    for idx, st in enumerate(template):
        cands, flags = candidate_fakes(
            st, models.semantic, store, ctx.user_id,
            forbidden_region=forbidden_for(idx, st),
            max_candidates=models.cfg.max_candidates,
        )
        cand_sets.append(cands)
        station_flags |= flags

    # chain fake stations pairwise; the end fakes of one pair seed the next
    chains: list[list[Record]] = []
    chain_flags: list[set[str]] = []
    for i in range(len(template) - 1):
        real_d = region_distance(template[i].record.region, template[i + 1].record.region,
                                 models.grid)
        e_side = cand_sets[i + 1]
        if i == 0:
            pairs, _, mflags = match_station_pairs(cand_sets[0], e_side, real_d, n, models.grid)
            n_matched = len(dict.fromkeys(pairs))
            for j, (s, e) in enumerate(pairs):
                fl = set(station_flags) | mflags if j >= n_matched else set(station_flags)
                chains.append([_normalize(s, template[0]), _normalize(e, template[1])])
                chain_flags.append(fl)
        else:
            ends = [chain[-1] for chain in chains]
            pairs, match_map, mflags = match_station_pairs(ends, e_side, real_d, n, models.grid)
            reuse_cycle = [e for _, e in pairs]
            for j, chain in enumerate(chains):
                partner = match_map.get(chain[-1])
                if partner is None:
                    partner = reuse_cycle[j % len(reuse_cycle)]
                    chain_flags[j].add(FLAG_PAIR_REUSE)
                chain.append(_normalize(partner, template[i + 1]))

    for i, st in enumerate(template):
        store.put(
            ctx.user_id, st.record.region, st.record.interval,
            [chain[i] for chain in chains],
        )

    # one rank draw per (section, unique endpoint pair)
    k_memo: dict[tuple[int, int, int], int] = {}
    for i in range(len(template) - 1):
        for chain in chains:
            key = (i, chain[i].region, chain[i + 1].region)
            if key not in k_memo:
                k_memo[key] = models.ranks.sample_k(rng)

    forbidden = (target.region, target.interval)
    impostors = []
    for j, chain in enumerate(chains):
        recs: list[ImpostorRecord] = []
        flags = set(chain_flags[j])
        for i in range(len(template) - 1):
            t_s = template[i].record.t_abs
            t_e = template[i + 1].record.t_abs
            k = k_memo[(i, chain[i].region, chain[i + 1].region)]
            section_recs, sflags = _build_section(
                chain[i], chain[i + 1], t_s, t_e, models, k, forbidden
            )
            flags |= sflags
            if recs and section_recs and section_recs[0].region == recs[-1].region \
                    and section_recs[0].et_s == recs[-1].et_s:
                section_recs = section_recs[1:]
            recs.extend(section_recs)
        impostors.append(ImpostorTrace(records=recs, stations=list(chain), flags=flags))

    fake_queries = [_pick_fake_query(imp, target, models.cfg.n_user) for imp in impostors]
    all_flags = station_flags.union(*(imp.flags for imp in impostors)) if impostors else station_flags
    return SynthesisResult(
        impostors=impostors,
        fake_queries=fake_queries,
        template=template,
        flags=all_flags,
    )
