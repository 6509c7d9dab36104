import csv
import filecmp
import math
from pathlib import Path

import pytest

from impostor.cli import main
from impostor.core import M_PER_DEG_LAT

CONFIG = """
origin_lat = 31.0
origin_lon = 121.3
width_cells = 12
height_cells = 9
rng_seed = 7
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG)
    return str(path)


def _run(*args):
    return main(list(args))


def _gen_city(config_file, out_dir, agents=12, days=3):
    code = _run(
        "--config", config_file, "--out-dir", str(out_dir),
        "gen-city", "--agents", str(agents), "--days", str(days),
    )
    assert code == 0


def test_gen_city_and_stats(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    _gen_city(config_file, out)
    assert (out / "traces.csv").exists()
    assert (out / "labels.csv").exists()
    code = _run("--config", config_file, "stats", "--traces", str(out / "traces.csv"))
    assert code == 0
    captured = capsys.readouterr().out
    assert "vehicles=12" in captured


def test_build_synthesize_pipeline(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    _gen_city(config_file, out)
    assert _run("--config", config_file, "--out-dir", str(out), "build-offline") == 0
    for name in (
        "semantic_distributions.csv", "semantic_similarity.bin", "semantic_clusters.csv",
        "mobility_edges.csv", "mobility_tensor.csv", "rank_distribution.csv",
        "speed_table.csv",
    ):
        assert (out / name).exists(), name

    # one query for the first agent at noon, at its home cell center
    with (out / "traces.csv").open() as fh:
        reader = csv.reader(fh)
        next(reader)
        first = next(reader)
    vid = first[0]
    lat = 31.0 + 500.0 / M_PER_DEG_LAT
    lon = 121.3 + 500.0 / (M_PER_DEG_LAT * math.cos(math.radians(31.0)))
    qfile = tmp_path / "queries.csv"
    qfile.write_text(
        "user_id,second_of_day,lat,lon,day\n"
        f"{vid},43200,{lat},{lon},1\n"
    )
    code = _run(
        "--config", config_file, "--out-dir", str(out),
        "synthesize", "--queries", str(qfile),
        "--trajectories", str(out / "traces.csv"), "--n", "2",
    )
    assert code == 0
    assert (out / "blended_queries.csv").exists()
    assert (out / "store.jsonl").exists()
    imps = sorted((out / "impostors").glob("q0000_imp*.csv"))
    assert len(imps) == 2
    with (out / "blended_queries.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["query_id", "region", "interval"]
    assert len(rows) == 1 + 3  # header + real + 2 fakes


def test_evaluate_smoke(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    _gen_city(config_file, out, agents=16, days=6)
    code = _run(
        "--config", config_file, "--out-dir", str(out),
        "evaluate", "--traces", str(out / "traces.csv"),
        "--methods", "impostor,random-walk", "--n-list", "1,2",
        "--max-users", "4",
    )
    assert code == 0
    with (out / "efficacy_report.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "n_impostors", "n_sets", "errors", "efficacy"]
    assert len(rows) == 5  # header + 2 methods x 2 n values
    assert (out / "efficacy_curve.csv").exists()


def test_reruns_are_byte_identical(tmp_path, config_file):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        _gen_city(config_file, out, agents=8, days=2)
        assert _run("--config", config_file, "--out-dir", str(out), "build-offline") == 0
        outs.append(out)
    names = [p.name for p in outs[0].iterdir() if p.is_file()]
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
    assert mismatch == [] and errors == []


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1")
    assert _run("--config", str(bad), "stats", "--traces", "x.csv") == 2


def test_data_error_exit_code(tmp_path, config_file):
    assert _run("--config", config_file, "stats", "--traces", str(tmp_path / "missing.csv")) == 3


def test_seed_flag_changes_city(tmp_path, config_file):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    _run("--config", config_file, "--out-dir", str(out1), "--seed", "1",
         "gen-city", "--agents", "4", "--days", "1")
    _run("--config", config_file, "--out-dir", str(out2), "--seed", "2",
         "gen-city", "--agents", "4", "--days", "1")
    assert (out1 / "traces.csv").read_text() != (out2 / "traces.csv").read_text()
