"""Region semantics: flow distributions, pairwise similarity, clustering.

Regions are scored by when people arrive and leave them. Two regions whose
flow-in/flow-out distributions over the day are close (symmetric KL) are
semantically interchangeable; hierarchical clustering over the similarity
graph groups them into latent classes.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    AllZeroFlow,
    DataError,
    LengthMismatch,
    MalformedRow,
    TimeScheme,
    second_to_interval,
)
from .stations import ARRIVE, Station

GSIM_MAGIC = b"GSIM"

DISTRIBUTIONS_FILE = "semantic_distributions.csv"
SIMILARITY_FILE = "semantic_similarity.bin"
CLUSTERS_FILE = "semantic_clusters.csv"


@dataclass
class FlowHistogram:
    region: int
    n_in: np.ndarray
    n_out: np.ndarray


@dataclass
class FlowDistribution:
    p_in: np.ndarray
    p_out: np.ndarray


@dataclass
class SimilarityGraph:
    """Symmetric similarity weights in [0, 1] over the scored regions.

    ``weights[i][j]`` corresponds to ``regions[i]`` and ``regions[j]``;
    ``z`` is the maximum pairwise semantic distance used as normalizer.
    """

    regions: list[int]
    weights: np.ndarray
    z: float

    def __post_init__(self) -> None:
        self._index = {r: i for i, r in enumerate(self.regions)}

    def index(self, region: int) -> int:
        return self._index[region]

    def similarity(self, a: int, b: int) -> float:
        return float(self.weights[self._index[a], self._index[b]])


@dataclass
class SemanticClustering:
    cluster_of: dict[int, int]
    clusters: list[list[int]]


@dataclass
class SemanticModel:
    n_semantic: int
    flows: dict[int, FlowDistribution]
    graph: SimilarityGraph
    clustering: SemanticClustering
    skipped: list[int] = field(default_factory=list)


def accumulate_flows(stations: list[Station], scheme: TimeScheme) -> dict[int, FlowHistogram]:
    """Count arrive events into n_in and depart events into n_out per region."""
    hists: dict[int, FlowHistogram] = {}
    for st in stations:
        h = hists.get(st.record.region)
        if h is None:
            h = FlowHistogram(
                region=st.record.region,
                n_in=np.zeros(scheme.n_semantic, dtype=np.int64),
                n_out=np.zeros(scheme.n_semantic, dtype=np.int64),
            )
            hists[st.record.region] = h
        t = second_to_interval(st.record.second_of_day, scheme.n_semantic)
        if st.kind == ARRIVE:
            h.n_in[t] += 1
        else:
            h.n_out[t] += 1
    return hists


def _smooth(counts: np.ndarray, epsilon: float) -> np.ndarray:
    smoothed = counts.astype(np.float64) + epsilon
    return smoothed / smoothed.sum()


def normalize_flows(hist: FlowHistogram, epsilon: float = 1e-6) -> FlowDistribution:
    """Add-epsilon smoothing then normalization of both flow directions."""
    if hist.n_in.sum() == 0 or hist.n_out.sum() == 0:
        raise AllZeroFlow(f"region {hist.region} has an all-zero flow direction")
    return FlowDistribution(p_in=_smooth(hist.n_in, epsilon), p_out=_smooth(hist.n_out, epsilon))


def kl(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence with natural log; inputs must be positive."""
    if len(p) != len(q):
        raise LengthMismatch(f"{len(p)} vs {len(q)}")
    return float(np.sum(p * np.log(p / q)))


def skl(p: np.ndarray, q: np.ndarray) -> float:
    """Symmetric KL: mean of both divergence directions."""
    return 0.5 * (kl(p, q) + kl(q, p))


def semantic_distance(a: FlowDistribution, b: FlowDistribution,
                      alpha: float = 0.5, beta: float = 0.5) -> float:
    """Weighted SKL over the flow-in and flow-out distributions."""
    return alpha * skl(a.p_in, b.p_in) + beta * skl(a.p_out, b.p_out)


def _pairwise_skl(p: np.ndarray) -> np.ndarray:
    # KL[i,j] = sum_t p[i,t]*(log p[i,t] - log p[j,t]), vectorized
    logp = np.log(p)
    h = np.sum(p * logp, axis=1)
    cross = p @ logp.T
    klm = h[:, None] - cross
    return 0.5 * (klm + klm.T)


def build_similarity(
    flows: dict[int, FlowDistribution], alpha: float = 0.5, beta: float = 0.5
) -> SimilarityGraph:
    """Pairwise semantic distances normalized into similarity weights."""
    if abs(alpha + beta - 1.0) > 1e-9 or alpha < 0 or beta < 0:
        raise DataError("alpha and beta must be nonnegative and sum to 1")
    regions = sorted(flows)
    n = len(regions)
    if n == 0:
        return SimilarityGraph(regions=[], weights=np.zeros((0, 0)), z=0.0)
    p_in = np.stack([flows[r].p_in for r in regions])
    p_out = np.stack([flows[r].p_out for r in regions])
    dist = alpha * _pairwise_skl(p_in) + beta * _pairwise_skl(p_out)
    dist = 0.5 * (dist + dist.T)  # kill rounding asymmetry
    np.fill_diagonal(dist, 0.0)
    z = float(dist.max())
    if z > 0.0:
        weights = 1.0 - dist / z
        np.clip(weights, 0.0, 1.0, out=weights)
    else:
        weights = np.ones_like(dist)
    np.fill_diagonal(weights, 1.0)
    return SimilarityGraph(regions=regions, weights=weights, z=z)


def cluster_regions(graph: SimilarityGraph, threshold: float = 0.75) -> SemanticClustering:
    """Average-linkage agglomerative clustering on distance 1 - weight.

    Merging stops once the smallest inter-cluster distance exceeds
    ``1 - threshold``; ties are broken toward the lowest region ids so the
    result is deterministic.
    """
    n = len(graph.regions)
    if n == 0:
        return SemanticClustering(cluster_of={}, clusters=[])
    dist = (1.0 - graph.weights).astype(np.float64).copy()
    np.fill_diagonal(dist, np.inf)
    cutoff = 1.0 - threshold
    members: dict[int, list[int]] = {i: [graph.regions[i]] for i in range(n)}
    sizes = np.ones(n)
    active = [True] * n

    while len(members) > 1:
        mn = dist.min()
        if not np.isfinite(mn) or mn > cutoff:
            break
        pairs = np.argwhere(dist == mn)
        best = None
        for i, j in pairs:
            if i > j:
                continue
            key = tuple(sorted((members[int(i)][0], members[int(j)][0])))
            if best is None or key < best[0]:
                best = (key, int(i), int(j))
        _, i, j = best
        si, sj = sizes[i], sizes[j]
        merged = (si * dist[i, :] + sj * dist[j, :]) / (si + sj)
        dist[i, :] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        members[i] = sorted(members[i] + members[j])
        del members[j]
        sizes[i] = si + sj
        active[j] = False

    clusters = sorted(members.values(), key=lambda c: c[0])
    cluster_of = {}
    for cid, cluster in enumerate(clusters):
        for region in cluster:
            cluster_of[region] = cid
    return SemanticClustering(cluster_of=cluster_of, clusters=clusters)


def build_semantic_model(
    stations: list[Station],
    scheme: TimeScheme,
    alpha: float = 0.5,
    beta: float = 0.5,
    epsilon: float = 1e-6,
    threshold: float = 0.75,
) -> SemanticModel:
    """Full offline semantic pass: flows -> similarity -> clusters."""
    hists = accumulate_flows(stations, scheme)
    flows: dict[int, FlowDistribution] = {}
    skipped = []
    for region in sorted(hists):
        try:
            flows[region] = normalize_flows(hists[region], epsilon)
        except AllZeroFlow:
            skipped.append(region)
    graph = build_similarity(flows, alpha, beta)
    clustering = cluster_regions(graph, threshold)
    return SemanticModel(
        n_semantic=scheme.n_semantic,
        flows=flows,
        graph=graph,
        clustering=clustering,
        skipped=skipped,
    )


def cluster_centroid(model: SemanticModel, cluster_id: int) -> FlowDistribution:
    """Mean member distribution of a cluster, renormalized."""
    regions = model.clustering.clusters[cluster_id]
    p_in = np.mean([model.flows[r].p_in for r in regions], axis=0)
    p_out = np.mean([model.flows[r].p_out for r in regions], axis=0)
    return FlowDistribution(p_in=p_in / p_in.sum(), p_out=p_out / p_out.sum())


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def save_semantic_model(model: SemanticModel, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    regions = model.graph.regions

    with (out / DISTRIBUTIONS_FILE).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "dir"] + [f"t{i}" for i in range(model.n_semantic)])
        for region in regions:
            flow = model.flows[region]
            writer.writerow([region, "in"] + [repr(float(x)) for x in flow.p_in])
            writer.writerow([region, "out"] + [repr(float(x)) for x in flow.p_out])

    with (out / SIMILARITY_FILE).open("wb") as fh:
        header = GSIM_MAGIC + struct.pack("<IIf", len(regions), model.n_semantic, model.graph.z)
        fh.write(header)
        fh.write(model.graph.weights.astype("<f4").tobytes(order="C"))

    with (out / CLUSTERS_FILE).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "cluster"])
        for region in sorted(model.clustering.cluster_of):
            writer.writerow([region, model.clustering.cluster_of[region]])


def load_semantic_model(out_dir: str | Path) -> SemanticModel:
    out = Path(out_dir)

    flows: dict[int, FlowDistribution] = {}
    halves: dict[int, dict[str, np.ndarray]] = {}
    with (out / DISTRIBUTIONS_FILE).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_semantic = len(header) - 2
        for row in reader:
            if not row:
                continue
            halves.setdefault(int(row[0]), {})[row[1]] = np.array(
                [float(x) for x in row[2:]], dtype=np.float64
            )
    for region, parts in halves.items():
        if "in" not in parts or "out" not in parts:
            raise MalformedRow(f"region {region} missing a flow direction")
        flows[region] = FlowDistribution(p_in=parts["in"], p_out=parts["out"])

    raw = (out / SIMILARITY_FILE).read_bytes()
    if raw[:4] != GSIM_MAGIC:
        raise MalformedRow(f"{out / SIMILARITY_FILE}: bad magic")
    n, n_sem, z = struct.unpack("<IIf", raw[4:16])
    if n_sem != n_semantic:
        raise MalformedRow("similarity header disagrees with distributions file")
    weights = np.frombuffer(raw[16:], dtype="<f4").reshape(n, n).astype(np.float64)
    regions = sorted(flows)
    if len(regions) != n:
        raise MalformedRow("similarity matrix size disagrees with distributions file")
    graph = SimilarityGraph(regions=regions, weights=weights, z=float(z))

    cluster_of: dict[int, int] = {}
    with (out / CLUSTERS_FILE).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                cluster_of[int(row[0])] = int(row[1])
    n_clusters = max(cluster_of.values()) + 1 if cluster_of else 0
    clusters: list[list[int]] = [[] for _ in range(n_clusters)]
    for region in sorted(cluster_of):
        clusters[cluster_of[region]].append(region)
    clustering = SemanticClustering(cluster_of=cluster_of, clusters=clusters)

    return SemanticModel(
        n_semantic=n_semantic, flows=flows, graph=graph, clustering=clustering
    )
