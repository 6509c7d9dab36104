"""Command-line entry points for reproducible runs.

Subcommands: ingest, gen-city, build-offline, synthesize, evaluate, stats.
Every command is a pure function of (config, inputs, seed); reruns against
the same inputs produce byte-identical artifacts. Exit codes: 0 success,
2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import resource
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .adversary import run_efficacy_experiment
from .config import RunConfig, load_config
from .core import ConfigError, DataError, ImpostorError, MalformedRow, RawFix, fix_to_region, make_record
from .ingest import (
    DatasetDescriptor,
    SyntheticCitySpec,
    generate_synthetic_city,
    parse_dataset,
    read_traces,
    write_labels,
    write_traces,
)
from .offline import build_offline_models, extract_all, load_offline_models, save_offline_models
from .stations import build_speed_table
from .synthesizer import FakeRecordStore, make_query_context, synthesize

ARTIFACT_FILES = [
    "semantic_distributions.csv",
    "semantic_similarity.bin",
    "semantic_clusters.csv",
    "mobility_edges.csv",
    "mobility_tensor.csv",
    "rank_distribution.csv",
    "speed_table.csv",
]


def _peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["rng_seed"] = str(args.seed)
    if args.out_dir is not None:
        out["out_dir"] = args.out_dir
    return out


def _config(args) -> RunConfig:
    if args.config:
        return load_config(args.config, _overrides(args))
    from .config import parse_config_text

    return parse_config_text("", _overrides(args))


def cmd_ingest(args, cfg: RunConfig) -> int:
    path = args.input or cfg.dataset_path
    if not path:
        raise ConfigError("no dataset path (use --input or dataset_path)")
    desc = DatasetDescriptor(
        format=cfg.dataset_format,
        path=path,
        grid=cfg.grid,
        scheme=cfg.scheme,
        utc_offset_s=cfg.utc_offset_s,
    )
    result = parse_dataset(desc)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_traces(result.traces, out / "traces.csv")
    kept = sum(len(t.records) for t in result.traces)
    print(f"ingest: {len(result.traces)} vehicles, {kept} records kept, "
          f"{result.dropped} dropped, {result.duplicates} duplicates")
    return 0


def cmd_gen_city(args, cfg: RunConfig) -> int:
    spec = SyntheticCitySpec(
        grid=cfg.grid,
        scheme=cfg.scheme,
        n_agents=args.agents,
        n_days=args.days,
        schedule_noise_min=args.noise,
        rng_seed=cfg.rng_seed,
    )
    traces, labels = generate_synthetic_city(spec)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_traces(traces, out / "traces.csv")
    write_labels(labels, out / "labels.csv")
    n_records = sum(len(t.records) for t in traces)
    print(f"gen-city: {len(traces)} agents, {args.days} days, {n_records} records")
    return 0


def cmd_build_offline(args, cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    traces_path = args.traces or out / "traces.csv"
    t_read = time.perf_counter()
    traces = read_traces(traces_path, cfg.scheme)
    n_records = sum(len(t.records) for t in traces)
    t_build = time.perf_counter()
    models = build_offline_models(traces, cfg)
    t_save = time.perf_counter()
    save_offline_models(models, out)
    t_end = time.perf_counter()
    artifact_bytes = sum((out / name).stat().st_size for name in ARTIFACT_FILES)
    print(f"build-offline: {n_records} records from {len(traces)} vehicles")
    print(f"build-offline: read {t_build - t_read:.2f}s, "
          f"build {t_save - t_build:.2f}s, write {t_end - t_save:.2f}s")
    print(f"build-offline: peak_rss_mb={_peak_rss_mb():.1f} artifact_bytes={artifact_bytes}")
    return 0


def _read_queries(path: str | Path, cfg: RunConfig):
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["user_id", "second_of_day", "lat", "lon"]:
            raise MalformedRow(f"{path}: expected header user_id,second_of_day,lat,lon[,day]")
        has_day = len(header) > 4 and header[4] == "day"
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                user = row[0]
                sec = int(row[1])
                lat, lon = float(row[2]), float(row[3])
                day = int(row[4]) if has_day and len(row) > 4 and row[4] != "" else None
            except (ValueError, IndexError) as exc:
                raise MalformedRow(f"{path}:{rowno}: {exc}") from exc
            rows.append((user, sec, lat, lon, day))
    return rows


def cmd_synthesize(args, cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    models = load_offline_models(cfg, out)
    store_path = cfg.store_path or out / "store.jsonl"
    store = FakeRecordStore(store_path)
    trajectories = {t.vehicle_id: t for t in read_traces(args.trajectories, cfg.scheme)}
    queries = _read_queries(args.queries, cfg)

    imp_dir = out / "impostors"
    imp_dir.mkdir(parents=True, exist_ok=True)
    blended_rows = []
    latencies = []
    for qid, (user, sec, lat, lon, day) in enumerate(queries):
        trace = trajectories.get(user)
        if trace is None:
            raise DataError(f"query {qid}: no trajectory for user {user!r}")
        if day is None:
            day = trace.records[-1].day
        region = fix_to_region(RawFix(user, 0, lat, lon), cfg.grid)
        target = make_record(region=region, day=day, second_of_day=sec, scheme=cfg.scheme)
        ctx = make_query_context(trace, target, args.n, cfg.window_hours)
        rng = np.random.default_rng([cfg.rng_seed, qid])
        t0 = time.perf_counter()
        result = synthesize(ctx, models, store, rng)
        latencies.append(time.perf_counter() - t0)
        for j, imp in enumerate(result.impostors):
            with (imp_dir / f"q{qid:04d}_imp{j}.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["region", "cloak_interval", "ET_s"])
                for rec in imp.records:
                    writer.writerow([rec.region, rec.cloak_interval, repr(rec.et_s)])
        rows = [(qid, target.region, target.interval)] + [
            (qid, f.region, f.interval) for f in result.fake_queries
        ]
        order = rng.permutation(len(rows))
        blended_rows.extend(rows[i] for i in order)

    with (out / "blended_queries.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "region", "interval"])
        writer.writerows(blended_rows)

    per_impostor = [t / args.n for t in latencies]
    print(f"synthesize: {len(queries)} queries, n={args.n}")
    if latencies:
        print(f"synthesize: per-impostor median={1e3 * statistics.median(per_impostor):.2f}ms "
              f"p99={1e3 * float(np.quantile(per_impostor, 0.99)):.2f}ms")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces = read_traces(args.traces, cfg.scheme)
    methods = tuple(args.methods.split(","))
    n_list = tuple(int(x) for x in args.n_list.split(","))
    result = run_efficacy_experiment(
        traces, cfg,
        methods=methods,
        n_list=n_list,
        train_frac=args.train_frac,
        max_users=args.max_users,
        seed=cfg.rng_seed,
    )
    with (out / "efficacy_report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n_impostors", "n_sets", "errors", "efficacy"])
        for rep in result.reports:
            writer.writerow([rep.method, rep.n_impostors, rep.n_sets, rep.errors,
                             repr(rep.efficacy)])
    with (out / "efficacy_curve.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n", "efficacy"])
        for rep in result.reports:
            writer.writerow([rep.method, rep.n_impostors, repr(rep.efficacy)])
    for rep in result.reports:
        print(f"evaluate: {rep.method} n={rep.n_impostors} sets={rep.n_sets} "
              f"errors={rep.errors} efficacy={rep.efficacy:.4f}")
    return 0


def cmd_stats(args, cfg: RunConfig) -> int:
    traces = read_traces(args.traces, cfg.scheme)
    n_records = sum(len(t.records) for t in traces)
    days = sorted({r.day for t in traces for r in t.records})
    speeds = build_speed_table(traces, cfg.grid, cfg.scheme,
                               min_samples=cfg.min_speed_samples,
                               default_kmh=cfg.default_speed_kmh)
    stations, sections = extract_all(traces, cfg, speeds)
    regions = {r.region for t in traces for r in t.records}
    print(f"stats: vehicles={len(traces)} records={n_records} days={len(days)}")
    print(f"stats: regions_visited={len(regions)} of {cfg.grid.n_regions}")
    print(f"stats: stations={len(stations)} sections={len(sections)} "
          f"global_speed_kmh={speeds.global_kmh:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impostor")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="override rng_seed")
    parser.add_argument("--out-dir", help="override out_dir")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw GPS CSV into standardized traces")
    p.add_argument("--input", help="raw dataset CSV (default: config dataset_path)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-city", help="generate the synthetic commuter city")
    p.add_argument("--agents", type=int, default=500)
    p.add_argument("--days", type=int, default=20)
    p.add_argument("--noise", type=float, default=30.0, help="schedule noise (minutes)")
    p.set_defaults(func=cmd_gen_city)

    p = sub.add_parser("build-offline", help="build and persist the offline models")
    p.add_argument("--traces", help="standardized traces CSV (default: out_dir/traces.csv)")
    p.set_defaults(func=cmd_build_offline)

    p = sub.add_parser("synthesize", help="synthesize impostors for a query file")
    p.add_argument("--queries", required=True, help="CSV user_id,second_of_day,lat,lon[,day]")
    p.add_argument("--trajectories", required=True, help="standardized traces CSV")
    p.add_argument("--n", type=int, default=4, help="impostors per query")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="run the inference-attack efficacy harness")
    p.add_argument("--traces", required=True, help="standardized traces CSV")
    p.add_argument("--methods", default="impostor,random-walk")
    p.add_argument("--n-list", default="1,4,7,10")
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--max-users", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="summarize a standardized traces CSV")
    p.add_argument("--traces", required=True)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ImpostorError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
