import json
import subprocess
import sys

import numpy as np
import pytest

from reseed.cli import TIMING_KEYS, atomic_write, main
from reseed.graph import format_edge_list, from_edges, load_edge_list, load_labels

from _graphs import clique_pair


@pytest.fixture
def cliques(tmp_path):
    g, labels = clique_pair(50)
    edges = tmp_path / "two_cliques.edges"
    edges.write_text(format_edge_list(g))
    lab = tmp_path / "labels.txt"
    lab.write_text("".join(f"{x}\n" for x in labels))
    return edges, lab


def run(*args):
    return main([str(a) for a in args])


def summary(d):
    return json.loads((d / "summary.json").read_text())


def without_timing(s):
    return {k: v for k, v in s.items() if k not in TIMING_KEYS}


def test_cluster_two_cliques(tmp_path, cliques, capsys):
    edges, lab = cliques
    out = tmp_path / "out"
    assert run("cluster", "--input", edges, "--labels", lab, "--R", 2, "--speed", 5,
               "--seed", 7, "--out-dir", out) == 0
    part = np.loadtxt(out / "partition.txt", dtype=int)
    assert sorted(np.bincount(part).tolist()) == [50, 50]
    s = summary(out)
    assert s["purity"] == 1.0
    assert s["iterations"] >= 1 and "m_eff" in s and "version" in s
    assert s["config"]["R"] == 2 and s["config"]["seed"] == 7
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "run,iteration,elapsed_s,m_eff,changed_frac,purity"


def test_cluster_missing_R(tmp_path, cliques, capsys):
    assert run("cluster", "--input", cliques[0], "--out-dir", tmp_path) == 1
    assert "--R" in capsys.readouterr().err


def test_cluster_bad_flag_is_config_error(tmp_path, cliques):
    assert run("cluster", "--input", cliques[0], "--R", 2, "--grow", "bogus",
               "--out-dir", tmp_path) == 1
    assert run("cluster", "--input", cliques[0], "--R", 2, "--speed", 1, "--delta-m", 1,
               "--out-dir", tmp_path) == 1
    assert run("cluster", "--input", cliques[0], "--R", 2, "--alpha", 0.5,
               "--out-dir", tmp_path) == 1


def test_cluster_disconnected(tmp_path, capsys):
    p = tmp_path / "d.edges"
    p.write_text("0 1\n2 3\n")
    assert run("cluster", "--input", p, "--R", 2, "--out-dir", tmp_path / "o") == 3
    err = capsys.readouterr().err.strip()
    assert "graph has 2 components" in err and len(err.splitlines()) == 1


def test_io_errors(tmp_path, cliques):
    assert run("cluster", "--input", tmp_path / "missing", "--R", 2, "--out-dir", tmp_path) == 2
    bad = tmp_path / "bad.edges"
    bad.write_text("0 0\n")
    assert run("cluster", "--input", bad, "--R", 2, "--out-dir", tmp_path) == 2
    lab = tmp_path / "short.txt"
    lab.write_text("0\n1\n")
    assert run("cluster", "--input", cliques[0], "--labels", lab, "--R", 2,
               "--out-dir", tmp_path) == 2


def test_cluster_matrix_market(tmp_path):
    p = tmp_path / "g.mtx"
    p.write_text("%%MatrixMarket matrix coordinate pattern symmetric\n"
                 "4 4 4\n2 1\n3 2\n4 3\n1 1\n")
    assert run("cluster", "--input", p, "--format", "mtx", "--R", 2,
               "--out-dir", tmp_path / "o") == 0


def test_determinism_and_config_round_trip(tmp_path, cliques):
    edges, lab = cliques
    args = ["--input", edges, "--labels", lab, "--R", 2, "--grow", "ppr", "--seed", 3]
    assert run("cluster", *args, "--out-dir", tmp_path / "a") == 0
    assert run("cluster", *args, "--out-dir", tmp_path / "b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "partition.txt").read_bytes() == (b / "partition.txt").read_bytes()
    assert without_timing(summary(a)) == without_timing(summary(b))
    assert run("cluster", "--config", a / "summary.json", "--out-dir", tmp_path / "c") == 0
    assert (a / "partition.txt").read_bytes() == (tmp_path / "c" / "partition.txt").read_bytes()


def test_flags_override_config(tmp_path, cliques):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(cliques[0]), "R": 3, "seed": 1}))
    assert run("cluster", "--config", cfg, "--R", 2, "--out-dir", tmp_path / "o") == 0
    assert summary(tmp_path / "o")["config"]["R"] == 2
    cfg.write_text(json.dumps({"input": str(cliques[0]), "R": 2, "colour": 1}))
    assert run("cluster", "--config", cfg, "--out-dir", tmp_path / "o") == 1


def test_multilevel_small_graph_single_level(tmp_path, cliques):
    edges, lab = cliques
    assert run("multilevel", "--input", edges, "--labels", lab, "--R", 2,
               "--out-dir", tmp_path / "o") == 0
    s = summary(tmp_path / "o")
    assert s["levels"] == 1 and s["level_sizes"] == [100]


def test_multilevel_levels_and_trivial(tmp_path, cliques):
    edges, lab = cliques
    assert run("multilevel", "--input", edges, "--labels", lab, "--R", 2, "--nsm", 20,
               "--ksm", 50, "--out-dir", tmp_path / "o") == 0
    s = summary(tmp_path / "o")
    sizes = s["level_sizes"]
    assert sizes[0] == 100 and all(a > b for a, b in zip(sizes, sizes[1:]))
    assert s["purity"] == 1.0
    assert run("multilevel", "--input", edges, "--labels", lab, "--R", 2, "--nsm", 20,
               "--ksm", 50, "--refinement", "trivial", "--out-dir", tmp_path / "t") == 0
    assert summary(tmp_path / "t")["iterations"] == 50


def test_generate(tmp_path):
    out = tmp_path / "gen"
    assert run("generate", "--n-per-block", 40, "--blocks", 3, "--degree", 6,
               "--mixing", 0, "--out-dir", out) == 0
    s = summary(out)
    assert s["empirical_mixing"] == 0.0
    assert len(load_labels(out / "labels.txt")) == 120
    assert load_edge_list(out / "graph.edges").n_vertices == 120
    assert run("generate", "--n-per-block", 5, "--blocks", 2, "--degree", 8,
               "--out-dir", out) == 1


def test_generate_ten_thousand_vertices(tmp_path):
    out = tmp_path / "gen"
    assert run("generate", "--n-per-block", 1000, "--blocks", 10, "--degree", 16,
               "--mixing", 0.45, "--out-dir", out) == 0
    assert len(load_labels(out / "labels.txt")) == 10_000


def test_perturb(tmp_path):
    rng = np.random.default_rng(0)
    n = 200
    key = rng.choice(n * (n - 1) // 2, size=1000, replace=False)
    iu, ju = np.triu_indices(n, 1)
    g = from_edges(n, iu[key], ju[key])
    src = tmp_path / "g.edges"
    src.write_text(format_edge_list(g))
    assert run("perturb", "--input", src, "--fraction", 0.5, "--out", tmp_path / "p.edges") == 0
    assert load_edge_list(tmp_path / "p.edges").n_edges == 1500
    assert run("perturb", "--input", src, "--fraction", 0, "--out", tmp_path / "z.edges") == 0
    assert (tmp_path / "z.edges").read_bytes() == src.read_bytes()
    tri = tmp_path / "tri.edges"
    tri.write_text("0 1\n1 2\n0 2\n")
    assert run("perturb", "--input", tri, "--fraction", 0.5, "--out", tmp_path / "x") == 1


def test_bench(tmp_path, cliques):
    edges, lab = cliques
    out = tmp_path / "b"
    assert run("bench", "--input", edges, "--labels", lab, "--R", 2, "--runs", 3,
               "--threads", 1, "--target-purity", 0.9, "--target-purity", 1.5,
               "--out-dir", out) == 0
    s = summary(out)
    assert s["runs"] == 3 and s["purity_mean"] == 1.0 and s["purity_std"] == 0.0
    assert s["time_to_purity_s"]["1.5"] == [None, None, None]
    assert s["aggregate_time_to_purity_s"]["1.5"] is None
    lines = (out / "runs.csv").read_text().splitlines()
    assert {ln.split(",")[0] for ln in lines[1:]} == {"0", "1", "2"}
    assert (out / "aggregate.csv").read_text().startswith("elapsed_s,purity_mean")


def test_bench_single_run_aggregate_equals_trace(tmp_path, cliques):
    edges, lab = cliques
    out = tmp_path / "b"
    assert run("bench", "--input", edges, "--labels", lab, "--R", 2, "--runs", 1,
               "--out-dir", out) == 0
    runs = np.genfromtxt(out / "runs.csv", delimiter=",", names=True)
    agg = np.genfromtxt(out / "aggregate.csv", delimiter=",", names=True)
    np.testing.assert_array_equal(np.atleast_1d(runs["purity"]), np.atleast_1d(agg["purity_mean"]))
    np.testing.assert_array_equal(np.atleast_1d(agg["purity_std"]), 0)


def test_bench_thread_count_does_not_change_results(tmp_path, cliques, monkeypatch):
    edges, lab = cliques
    base = ["bench", "--input", edges, "--labels", lab, "--R", 2, "--runs", 4, "--seed", 5]
    assert run(*base, "--threads", 1, "--out-dir", tmp_path / "one") == 0
    monkeypatch.setenv("RESEED_THREADS", "2")
    assert run(*base, "--out-dir", tmp_path / "two") == 0
    a = (tmp_path / "one" / "partitions.txt").read_bytes()
    assert a == (tmp_path / "two" / "partitions.txt").read_bytes()


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "x.txt"
    target.write_text("old\n")

    atomic_write(target, "new\n")
    assert target.read_text() == "new\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_console_entry_point(tmp_path, cliques):
    proc = subprocess.run([sys.executable, "-m", "reseed.cli", "cluster", "--input",
                           str(cliques[0]), "--R", "2", "--out-dir", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "reseed.cli", "cluster"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
