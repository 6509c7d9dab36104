"""Per-interval mobility model: transition graphs, runtime tensor, path ranks.

Each mobility interval gets a directed graph whose edge weights are
``-ln P(r'|r)``, so the k-th most probable trace between two regions is the
k-th shortest path. Traversal times live in a sparse tensor keyed by
(region, entered-from, exited-to).
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterator

import numpy as np

from .core import (
    SECONDS_PER_DAY,
    DataError,
    GridMap,
    MalformedRow,
    TimeScheme,
    Unreachable,
    second_to_interval,
)
from .stations import Section

EDGES_FILE = "mobility_edges.csv"
TENSOR_FILE = "mobility_tensor.csv"
RANKS_FILE = "rank_distribution.csv"

# Fallback speed used when no traversal sample exists at all.
FALLBACK_SPEED_KMH = 30.0


@dataclass
class TransitionGraph:
    """Directed transition graph for one mobility interval."""

    interval: int
    counts: dict[int, dict[int, int]] = field(default_factory=dict)
    probs: dict[int, dict[int, float]] = field(default_factory=dict)
    weights: dict[int, dict[int, float]] = field(default_factory=dict)

    def add(self, src: int, dst: int, count: int = 1) -> None:
        self.counts.setdefault(src, {})
        self.counts[src][dst] = self.counts[src].get(dst, 0) + count

    def finalize(self) -> None:
        self.probs = {}
        self.weights = {}
        for src in self.counts:
            total = sum(self.counts[src].values())
            self.probs[src] = {}
            self.weights[src] = {}
            for dst in sorted(self.counts[src]):
                p = self.counts[src][dst] / total
                self.probs[src][dst] = p
                self.weights[src][dst] = -math.log(p)


@dataclass
class RuntimeTensor:
    """Sparse mean traversal seconds keyed by (interval, region, from, to)."""

    sums: dict[int, dict[tuple[int, int, int], float]] = field(default_factory=dict)
    counts: dict[int, dict[tuple[int, int, int], int]] = field(default_factory=dict)

    def add(self, interval: int, key: tuple[int, int, int], seconds: float, count: int = 1) -> None:
        self.sums.setdefault(interval, {})
        self.counts.setdefault(interval, {})
        self.sums[interval][key] = self.sums[interval].get(key, 0.0) + seconds
        self.counts[interval][key] = self.counts[interval].get(key, 0) + count

    def mean(self, interval: int, region: int, come_from: int, go_to: int) -> float | None:
        key = (region, come_from, go_to)
        cnt = self.counts.get(interval, {}).get(key)
        if not cnt:
            return None
        return self.sums[interval][key] / cnt

    def entry_count(self, interval: int, key: tuple[int, int, int]) -> int:
        return self.counts.get(interval, {}).get(key, 0)


@dataclass
class MobilityModel:
    n_mobility: int
    graphs: dict[int, TransitionGraph]
    tensor: RuntimeTensor
    default_traverse_s: float

    def graph(self, interval: int) -> TransitionGraph | None:
        return self.graphs.get(interval)


@dataclass(frozen=True)
class Path:
    nodes: tuple[int, ...]
    weight: float

    @property
    def probability(self) -> float:
        return math.exp(-self.weight)


@dataclass
class KspResult:
    paths: list[Path]
    truncated: bool  # True when fewer than the requested k paths exist


def _default_traverse(tensor: RuntimeTensor, grid: GridMap) -> float:
    total = 0.0
    n = 0
    for interval in tensor.sums:
        for key, s in tensor.sums[interval].items():
            total += s
            n += tensor.counts[interval][key]
    if n:
        return total / n
    return grid.cell_size_m / (FALLBACK_SPEED_KMH / 3.6)


def _split_contiguous(records, grid: GridMap):
    """Split a record list at time stalls and non-adjacent jumps."""
    seg = []
    for rec in records:
        if not seg:
            seg = [rec]
            continue
        prev = seg[-1]
        ok = rec.t_abs > prev.t_abs and (
            rec.region == prev.region or grid.adjacent(prev.region, rec.region)
        )
        if ok:
            seg.append(rec)
        else:
            if len(seg) > 1:
                yield seg
            seg = [rec]
    if len(seg) > 1:
        yield seg


def section_interval(section: Section, n_mobility: int) -> int:
    """Mobility interval at the section's temporal midpoint.

    A whole section is modeled (and later filled) inside one interval graph,
    so its transitions must all land in that graph regardless of how many
    interval boundaries the drive crosses.
    """
    mid = (section.start.record.t_abs + section.end.record.t_abs) / 2.0
    return second_to_interval(mid % SECONDS_PER_DAY, n_mobility)


def build_mobility(sections: list[Section], grid: GridMap, scheme: TimeScheme) -> MobilityModel:
    """Accumulate transition counts and traversal times from seed sections."""
    graphs: dict[int, TransitionGraph] = {}
    tensor = RuntimeTensor()
    for section in sections:
        t = section_interval(section, scheme.n_mobility)
        for seg in _split_contiguous(section.records, grid):
            for prev, cur in zip(seg, seg[1:]):
                if prev.region == cur.region:
                    continue
                graphs.setdefault(t, TransitionGraph(interval=t)).add(prev.region, cur.region)
            # collapse into visits: (region, first time, last time)
            runs = []
            for rec in seg:
                if runs and runs[-1][0] == rec.region:
                    runs[-1][2] = rec.t_abs
                else:
                    runs.append([rec.region, rec.t_abs, rec.t_abs])
            for (ra, _, ta), (rb, _, _), (rc, tc, _) in zip(runs, runs[1:], runs[2:]):
                tensor.add(t, (rb, ra, rc), float(tc - ta))
    for g in graphs.values():
        g.finalize()
    return MobilityModel(
        n_mobility=scheme.n_mobility,
        graphs=graphs,
        tensor=tensor,
        default_traverse_s=_default_traverse(tensor, grid),
    )


# --------------------------------------------------------------------------
# k shortest loopless paths (Yen over Dijkstra)
# --------------------------------------------------------------------------


def _dijkstra(
    adj: dict[int, dict[int, float]],
    src: int,
    dst: int,
    banned_nodes: set[int] | frozenset = frozenset(),
    banned_edges: set[tuple[int, int]] | frozenset = frozenset(),
) -> tuple[float, tuple[int, ...]] | None:
    """Shortest path by predecessor tracking; deterministic for fixed input."""
    dist = {src: 0.0}
    parent: dict[int, int] = {}
    settled: set[int] = set()
    heap: list[tuple[float, int]] = [(0.0, src)]
    while heap:
        d, node = heapq.heappop(heap)
        if node == dst:
            path = [node]
            while node != src:
                node = parent[node]
                path.append(node)
            return d, tuple(reversed(path))
        if node in settled:
            continue
        settled.add(node)
        for nxt, w in adj.get(node, {}).items():
            if nxt in settled or nxt in banned_nodes:
                continue
            if (node, nxt) in banned_edges:
                continue
            nd = d + w
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                parent[nxt] = node
                heapq.heappush(heap, (nd, nxt))
    return None


def iter_shortest_paths(graph: TransitionGraph, src: int, dst: int) -> Iterator[Path]:
    """Yield loopless paths in nondecreasing weight order (lazily).

    Equal-weight paths come out in lexicographic node order. Raises
    Unreachable when no path exists at all.
    """
    if src == dst:
        raise DataError("src and dst must differ")
    adj = graph.weights
    first = _dijkstra(adj, src, dst)
    if first is None:
        raise Unreachable(f"no path {src} -> {dst} in interval {graph.interval}")
    yield Path(nodes=first[1], weight=first[0])
    found: list[tuple[float, tuple[int, ...]]] = [first]
    dev_index = 0  # spur positions below the deviation point are already covered
    candidates: list[tuple[float, tuple[int, ...], int]] = []
    queued: set[tuple[int, ...]] = {first[1]}
    while True:
        prev = found[-1][1]
        prefix_w = [0.0]
        for a, b in zip(prev, prev[1:]):
            prefix_w.append(prefix_w[-1] + adj[a][b])
        for j in range(dev_index, len(prev) - 1):
            root = prev[: j + 1]
            banned_edges = {
                (nodes[j], nodes[j + 1])
                for _, nodes in found
                if len(nodes) > j + 1 and nodes[: j + 1] == root
            }
            banned_nodes = set(root[:-1])
            spur = _dijkstra(adj, prev[j], dst, banned_nodes, banned_edges)
            if spur is None:
                continue
            total_nodes = root[:-1] + spur[1]
            if total_nodes in queued:
                continue
            queued.add(total_nodes)
            heapq.heappush(candidates, (prefix_w[j] + spur[0], total_nodes, j))
        if not candidates:
            return
        dist, nodes, dev_index = heapq.heappop(candidates)
        found.append((dist, nodes))
        yield Path(nodes=nodes, weight=dist)


def k_shortest_paths(graph: TransitionGraph, src: int, dst: int, k: int) -> KspResult:
    """First k loopless paths; flags truncation when fewer exist."""
    if k < 1:
        raise DataError("k must be at least 1")
    paths = []
    for path in iter_shortest_paths(graph, src, dst):
        paths.append(path)
        if len(paths) == k:
            return KspResult(paths=paths, truncated=False)
    return KspResult(paths=paths, truncated=True)


# --------------------------------------------------------------------------
# Rank distribution
# --------------------------------------------------------------------------


@dataclass
class RankDistribution:
    """Empirical distribution of which k-th most probable path sections follow."""

    probs: np.ndarray  # probs[i] = P(k = i + 1)

    @property
    def k_max(self) -> int:
        return len(self.probs)

    def sample_k(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.k_max, p=self.probs)) + 1


def section_path(section: Section) -> tuple[int, ...]:
    """Region run sequence of a section (consecutive duplicates collapsed)."""
    nodes: list[int] = []
    for rec in section.records:
        if not nodes or nodes[-1] != rec.region:
            nodes.append(rec.region)
    return tuple(nodes)


def estimate_rank_distribution(
    sections: list[Section],
    model: MobilityModel,
    k_max: int = 10,
    sample: int | None = None,
    seed: int = 0,
) -> RankDistribution:
    """Rank each section's actual path among the k shortest of its interval.

    Ranks beyond k_max (or paths that match none) fold into the k_max
    bucket; sections with unreachable endpoints are skipped. An empty input
    yields the uniform fallback.
    """
    picked = sections
    if sample is not None and len(sections) > sample:
        rng = np.random.default_rng([seed, 0xA11C])
        idx = sorted(rng.choice(len(sections), size=sample, replace=False))
        picked = [sections[i] for i in idx]
    counts = np.zeros(k_max, dtype=np.int64)
    cache: dict[tuple[int, tuple[int, ...]], int | None] = {}
    for section in picked:
        actual = section_path(section)
        if len(actual) < 2 or actual[0] == actual[-1]:
            continue
        t = section_interval(section, model.n_mobility)
        graph = model.graphs.get(t)
        if graph is None:
            continue
        key = (t, actual)
        if key not in cache:
            cache[key] = _path_rank(graph, actual, k_max)
        rank = cache[key]
        if rank is not None:
            counts[rank - 1] += 1
    total = counts.sum()
    if total == 0:
        return RankDistribution(probs=np.full(k_max, 1.0 / k_max))
    return RankDistribution(probs=counts / total)


def _path_weight(graph: TransitionGraph, nodes: tuple[int, ...]) -> float:
    total = 0.0
    for a, b in zip(nodes, nodes[1:]):
        w = graph.weights.get(a, {}).get(b)
        if w is None:
            return math.inf
        total += w
    return total


def _path_rank(graph: TransitionGraph, actual: tuple[int, ...], k_max: int) -> int | None:
    """Rank of a concrete path among the loopless shortest, capped at k_max.

    Paths dearer than the actual one can never match it, so enumeration
    stops early; None means the endpoints are unreachable.
    """
    w_actual = _path_weight(graph, actual)
    try:
        for i, path in enumerate(iter_shortest_paths(graph, actual[0], actual[-1]), start=1):
            if i >= k_max or path.weight > w_actual + 1e-12:
                return k_max
            if path.nodes == actual:
                return i
    except Unreachable:
        return None
    return k_max


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def save_mobility_model(model: MobilityModel, out_dir: str | FsPath) -> None:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / EDGES_FILE).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "from", "to", "count", "prob"])
        for t in sorted(model.graphs):
            g = model.graphs[t]
            for src in sorted(g.counts):
                for dst in sorted(g.counts[src]):
                    writer.writerow([t, src, dst, g.counts[src][dst], repr(g.probs[src][dst])])
    with (out / TENSOR_FILE).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "rB", "rA", "rC", "mean_s", "count"])
        for t in sorted(model.tensor.sums):
            for key in sorted(model.tensor.sums[t]):
                cnt = model.tensor.counts[t][key]
                mean = model.tensor.sums[t][key] / cnt
                writer.writerow([t, key[0], key[1], key[2], repr(mean), cnt])


def load_mobility_model(out_dir: str | FsPath, grid: GridMap, scheme: TimeScheme) -> MobilityModel:
    out = FsPath(out_dir)
    graphs: dict[int, TransitionGraph] = {}
    with (out / EDGES_FILE).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "from", "to", "count", "prob"]:
            raise MalformedRow(f"{out / EDGES_FILE}: bad header")
        for row in reader:
            if not row:
                continue
            t, src, dst, count = int(row[0]), int(row[1]), int(row[2]), int(row[3])
            graphs.setdefault(t, TransitionGraph(interval=t)).add(src, dst, count)
    for g in graphs.values():
        g.finalize()
    tensor = RuntimeTensor()
    with (out / TENSOR_FILE).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "rB", "rA", "rC", "mean_s", "count"]:
            raise MalformedRow(f"{out / TENSOR_FILE}: bad header")
        for row in reader:
            if not row:
                continue
            t, rb, ra, rc = int(row[0]), int(row[1]), int(row[2]), int(row[3])
            mean, count = float(row[4]), int(row[5])
            tensor.add(t, (rb, ra, rc), mean * count, count)
    return MobilityModel(
        n_mobility=scheme.n_mobility,
        graphs=graphs,
        tensor=tensor,
        default_traverse_s=_default_traverse(tensor, grid),
    )


def save_rank_distribution(ranks: RankDistribution, out_dir: str | FsPath) -> None:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / RANKS_FILE).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "prob"])
        for i, p in enumerate(ranks.probs, start=1):
            writer.writerow([i, repr(float(p))])


def load_rank_distribution(out_dir: str | FsPath) -> RankDistribution:
    out = FsPath(out_dir)
    probs = []
    with (out / RANKS_FILE).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                probs.append(float(row[1]))
    return RankDistribution(probs=np.array(probs, dtype=np.float64))
