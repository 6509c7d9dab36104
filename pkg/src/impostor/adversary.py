"""Inference attack and preservation-efficacy harness.

The adversary watches the blended query stream, builds one Markov transition
profile per user from the training period, and then tries to pick the real
trace out of each blended set by maximum likelihood. Preservation efficacy is
the fraction of sets where that guess is wrong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .core import SECONDS_PER_DAY, DataError, GridMap, Trace
from .offline import OfflineModels, build_offline_models
from .synthesizer import (
    FakeRecordStore,
    ImpostorTrace,
    QueryContext,
    SynthesisResult,
    make_query_context,
    select_template,
    synthesize,
)

METHOD_CODES = {"none": 0, "impostor": 1, "random-walk": 2, "copies": 3}


@dataclass
class UserProfile:
    """Per-user first-order Markov profile with add-epsilon smoothing."""

    user_id: str
    n_regions: int
    epsilon: float
    trans: dict[int, dict[int, int]] = field(default_factory=dict)
    row_totals: dict[int, int] = field(default_factory=dict)
    init: dict[int, int] = field(default_factory=dict)
    n_init: int = 0

    def observe(self, sequence: list[int]) -> None:
        if not sequence:
            return
        self.init[sequence[0]] = self.init.get(sequence[0], 0) + 1
        self.n_init += 1
        for a, b in zip(sequence, sequence[1:]):
            self.trans.setdefault(a, {})
            self.trans[a][b] = self.trans[a].get(b, 0) + 1
            self.row_totals[a] = self.row_totals.get(a, 0) + 1

    def trans_prob(self, a: int, b: int) -> float:
        c = self.trans.get(a, {}).get(b, 0)
        total = self.row_totals.get(a, 0)
        return (c + self.epsilon) / (total + self.epsilon * self.n_regions)

    def init_prob(self, r: int) -> float:
        return (self.init.get(r, 0) + self.epsilon) / (self.n_init + self.epsilon * self.n_regions)

    def loglik(self, sequence: list[int]) -> float:
        if not sequence:
            raise DataError("cannot score an empty sequence")
        total = math.log(self.init_prob(sequence[0]))
        for a, b in zip(sequence, sequence[1:]):
            total += math.log(self.trans_prob(a, b))
        return total


def build_profiles(
    sequences: dict[str, list[list[int]]], n_regions: int, epsilon: float = 1e-6
) -> dict[str, UserProfile]:
    """One smoothed Markov profile per user from interval-skeleton sequences."""
    profiles = {}
    for user in sorted(sequences):
        profile = UserProfile(user_id=user, n_regions=n_regions, epsilon=epsilon)
        for seq in sequences[user]:
            profile.observe(seq)
        profiles[user] = profile
    return profiles


@dataclass
class ObservationSet:
    """One blended set: the real skeleton and its fakes, order-agnostic.

    The truth index exists only for harness scoring and must never reach
    attacker-visible serializations.
    """

    query_id: str
    skeletons: list[list[int]]
    truth_index: int


def infer_real(obs: ObservationSet, profile: UserProfile, rng: np.random.Generator) -> int:
    """Index of the maximum-likelihood skeleton; exact ties break uniformly."""
    logliks = [profile.loglik(sk) for sk in obs.skeletons]
    best = max(logliks)
    tied = [i for i, ll in enumerate(logliks) if ll == best]
    if len(tied) == 1:
        return tied[0]
    return int(tied[int(rng.integers(len(tied)))])


def baseline_random_walk(
    ctx: QueryContext, n: int, grid: GridMap, rng: np.random.Generator, length: int
) -> list[list[int]]:
    """Adjacency-respecting random walks matching the template skeleton length."""
    walks = []
    for _ in range(n):
        cur = int(rng.integers(grid.n_regions))
        walk = [cur]
        while len(walk) < length:
            nbrs = grid.neighbors(cur)
            cur = int(nbrs[int(rng.integers(len(nbrs)))])
            walk.append(cur)
        walks.append(walk)
    return walks


@dataclass
class EfficacyReport:
    method: str
    n_impostors: int
    n_sets: int
    errors: int

    @property
    def efficacy(self) -> float:
        return self.errors / self.n_sets if self.n_sets else 0.0


# --------------------------------------------------------------------------
# Harness
# --------------------------------------------------------------------------


def split_traces_by_day(
    traces: list[Trace], train_frac: float = 0.7
) -> tuple[list[Trace], list[Trace], list[int]]:
    """Day-based split; every day goes wholly to one side."""
    all_days = sorted({r.day for t in traces for r in t.records})
    if not all_days:
        raise DataError("no records to split")
    n_train = max(1, min(len(all_days) - 1, int(round(train_frac * len(all_days)))))
    train_days = set(all_days[:n_train])
    train, evaluation = [], []
    for t in traces:
        a = [r for r in t.records if r.day in train_days]
        b = [r for r in t.records if r.day not in train_days]
        if a:
            train.append(Trace(t.vehicle_id, a))
        if b:
            evaluation.append(Trace(t.vehicle_id, b))
    return train, evaluation, all_days[n_train:]


def resample_skeleton(
    points: list[tuple[float, int]], t0: float, t1: float, step: float
) -> list[int]:
    """Region held at each step time in [t0, t1]; the latest point wins."""
    if not points:
        raise DataError("cannot resample an empty trace")
    points = sorted(points)
    n_steps = int((t1 - t0) // step) + 1
    out = []
    i = 0
    cur = points[0][1]
    for j in range(n_steps):
        tau = t0 + j * step
        while i < len(points) and points[i][0] <= tau:
            cur = points[i][1]
            i += 1
        out.append(cur)
    return out


def _impostor_points(imp: ImpostorTrace) -> list[tuple[float, int]]:
    return [(r.et_s, r.region) for r in imp.records]


def _trajectory_points(ctx: QueryContext) -> list[tuple[float, int]]:
    return [(float(r.t_abs), r.region) for r in ctx.trajectory]


def observe_query(
    method: str,
    ctx: QueryContext,
    models: OfflineModels,
    store: FakeRecordStore,
    rng: np.random.Generator,
) -> tuple[list[int], list[list[int]]]:
    """Run one defense method on a query; returns (real skeleton, fake skeletons)."""
    step = SECONDS_PER_DAY / models.cfg.n_user
    if method == "impostor":
        result = synthesize(ctx, models, store, rng)
        t0 = result.template[0].record.t_abs
        t1 = result.template[-1].record.t_abs
        real = resample_skeleton(_trajectory_points(ctx), t0, t1, step)
        fakes = [
            resample_skeleton(_impostor_points(imp), t0, t1, step)
            for imp in result.impostors
        ]
        return real, fakes
    stations = models.extract_stations(Trace(ctx.user_id, sorted(ctx.trajectory, key=lambda r: r.t_abs)))
    template = select_template(ctx, store, stations)
    t0 = template[0].record.t_abs
    t1 = template[-1].record.t_abs
    real = resample_skeleton(_trajectory_points(ctx), t0, t1, step)
    if method == "none":
        return real, []
    if method == "copies":
        return real, [list(real) for _ in range(ctx.n)]
    if method == "random-walk":
        return real, baseline_random_walk(ctx, ctx.n, models.grid, rng, len(real))
    raise DataError(f"unknown method {method!r}")


def _query_for_day(
    trace: Trace, day: int, models: OfflineModels, n: int,
    window_hours: float, rng: np.random.Generator,
) -> QueryContext | None:
    """Pick one of the day's records as the query target.

    Sampling records rather than stations mirrors real usage: most queries
    are issued while parked somewhere, in the middle of a dwell.
    """
    todays = [r for r in trace.records if r.day == day]
    if not todays:
        return None
    target = todays[int(rng.integers(len(todays)))]
    return make_query_context(trace, target, n, window_hours)


def evaluate_efficacy(
    method: str,
    eval_queries: list[QueryContext],
    n_impostors: int,
    models: OfflineModels,
    store: FakeRecordStore,
    profiles: dict[str, UserProfile],
    seed: int = 0,
) -> EfficacyReport:
    """Attack every blended set produced by a method; report the error rate."""
    code = METHOD_CODES.get(method)
    if code is None:
        raise DataError(f"unknown method {method!r}")
    rng = np.random.default_rng([seed, code, n_impostors, 2])
    errors = 0
    n_sets = 0
    for qid, ctx in enumerate(eval_queries):
        ctx = QueryContext(ctx.user_id, ctx.target, ctx.trajectory, n_impostors)
        real, fakes = observe_query(method, ctx, models, store, rng)
        if not fakes:
            n_sets += 1  # attacker cannot be wrong
            continue
        obs = ObservationSet(
            query_id=f"{method}-{n_impostors}-{qid}",
            skeletons=[real] + fakes,
            truth_index=0,
        )
        guess = infer_real(obs, profiles[ctx.user_id], rng)
        n_sets += 1
        if guess != obs.truth_index:
            errors += 1
    return EfficacyReport(method=method, n_impostors=n_impostors, n_sets=n_sets, errors=errors)


@dataclass
class ExperimentResult:
    reports: list[EfficacyReport]
    nested: dict[int, EfficacyReport] = field(default_factory=dict)


def run_efficacy_experiment(
    traces: list[Trace],
    cfg: RunConfig,
    methods: tuple[str, ...] = ("impostor", "random-walk"),
    n_list: tuple[int, ...] = (1, 4, 7, 10),
    train_frac: float = 0.7,
    max_users: int | None = None,
    queries_per_user_day: int = 1,
    train_queries_per_day: int = 2,
    seed: int = 0,
    models: OfflineModels | None = None,
    nested_n_list: tuple[int, ...] | None = None,
) -> ExperimentResult:
    """End-to-end efficacy comparison on a day-split of the traces.

    For each (method, n) the adversary trains per-user profiles on the
    blended stream that method would have published over the training days;
    running the defense there also warms the fake-record store, so
    evaluation-day fakes stay consistent with history. Every evaluation-day
    query is then attacked by maximum likelihood. ``nested_n_list``
    additionally scores impostor prefixes inside the max-n run, which
    isolates the effect of n on otherwise identical queries.
    """
    train_traces, eval_traces, eval_days = split_traces_by_day(traces, train_frac)
    if models is None:
        models = build_offline_models(train_traces, cfg)

    train_by_user = {t.vehicle_id: t for t in train_traces}
    eval_by_user = {t.vehicle_id: t for t in eval_traces}
    users = sorted(set(train_by_user) & set(eval_by_user))
    if max_users is not None and len(users) > max_users:
        pick_rng = np.random.default_rng([seed, 7])
        idx = sorted(pick_rng.choice(len(users), size=max_users, replace=False).tolist())
        users = [users[i] for i in idx]

    # fixed query targets shared across methods and n
    qrng = np.random.default_rng([seed, 8])
    eval_queries: list[QueryContext] = []
    for user in users:
        trace = eval_by_user[user]
        days = sorted({r.day for r in trace.records})
        for day in days:
            for _ in range(queries_per_user_day):
                ctx = _query_for_day(trace, day, models, 1, cfg.window_hours, qrng)
                if ctx is not None:
                    eval_queries.append(ctx)

    trng = np.random.default_rng([seed, 9])
    train_day_targets: dict[str, list[QueryContext]] = {}
    for user in users:
        trace = train_by_user[user]
        days = sorted({r.day for r in trace.records})
        targets = []
        for day in days:
            for _ in range(train_queries_per_day):
                ctx = _query_for_day(trace, day, models, 1, cfg.window_hours, trng)
                if ctx is not None:
                    targets.append(ctx)
        train_day_targets[user] = targets

    result = ExperimentResult(reports=[])
    for method in methods:
        for n in n_list:
            store = FakeRecordStore()
            code = METHOD_CODES[method]
            rng = np.random.default_rng([seed, code, n, 1])
            sequences: dict[str, list[list[int]]] = {u: [] for u in users}
            for user in users:
                for ctx in train_day_targets[user]:
                    ctx_n = QueryContext(ctx.user_id, ctx.target, ctx.trajectory, n)
                    real, fakes = observe_query(method, ctx_n, models, store, rng)
                    sequences[user].append(real)
                    sequences[user].extend(fakes)
            profiles = build_profiles(sequences, models.grid.n_regions, cfg.epsilon)
            report = evaluate_efficacy(method, eval_queries, n, models, store, profiles, seed)
            result.reports.append(report)

            if method == "impostor" and nested_n_list and n == max(nested_n_list):
                result.nested = _nested_efficacies(
                    eval_queries, nested_n_list, models, store, profiles, seed, n
                )
    return result


def _nested_efficacies(
    eval_queries: list[QueryContext],
    n_list: tuple[int, ...],
    models: OfflineModels,
    store: FakeRecordStore,
    profiles: dict[str, UserProfile],
    seed: int,
    n_max: int,
) -> dict[int, EfficacyReport]:
    """Efficacy of impostor prefixes within a single max-n run.

    Scoring the first n fakes of the same blended sets makes the efficacy
    pointwise non-decreasing in n whenever likelihoods are tie-free.
    """
    rng = np.random.default_rng([seed, METHOD_CODES["impostor"], n_max, 3])
    stats = {n: [0, 0] for n in n_list}  # n -> [sets, errors]
    for ctx in eval_queries:
        ctx_n = QueryContext(ctx.user_id, ctx.target, ctx.trajectory, n_max)
        real, fakes = observe_query("impostor", ctx_n, models, store, rng)
        profile = profiles[ctx.user_id]
        ll_real = profile.loglik(real)
        ll_fakes = [profile.loglik(sk) for sk in fakes]
        # one tie-break draw per set keeps the error pointwise monotone in n
        u = float(rng.random())
        for n in n_list:
            prefix = ll_fakes[:n]
            best_fake = max(prefix) if prefix else -math.inf
            stats[n][0] += 1
            if best_fake > ll_real:
                stats[n][1] += 1
            elif best_fake == ll_real and prefix:
                tied = sum(1 for ll in prefix if ll == best_fake)
                if u < tied / (tied + 1):
                    stats[n][1] += 1
    return {
        n: EfficacyReport(method="impostor-nested", n_impostors=n,
                          n_sets=sets, errors=errors)
        for n, (sets, errors) in stats.items()
    }
