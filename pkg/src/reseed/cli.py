"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 algorithm error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (aggregate_runs, aggregate_time_to_purity, aggregate_to_csv, purity,
                         time_to_purity, traces_to_csv)
from .graph import (GraphError, SparseGraph, add_noise_edges, check_labels, format_edge_list,
                    generate_sbm, load_edge_list, load_labels, load_matrix_market,
                    mixing_fraction)
from .incres import GrowConfig, IncresError, SeedSchedule, StoppingRule, incres_run
from .multigrid import multilevel_run

log = logging.getLogger("reseed")

EXIT_CONFIG, EXIT_IO, EXIT_ALGO = 1, 2, 3
GROW_NAMES = {"walk": "walk", "lazy": "lazy_walk", "diffusion": "diffusion", "ppr": "ppr"}
# wall-clock fields; everything else in a summary is reproducible
TIMING_KEYS = ("elapsed_s", "time_to_purity_s", "aggregate_time_to_purity_s")


class ConfigError(Exception):
    pass


class InputError(Exception):
    """Unreadable or malformed input file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Small I/O helpers
# ---------------------------------------------------------------------------

def atomic_write(path, text: str) -> None:
    """Write through a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def format_partition(assignment) -> str:
    return "".join(f"{int(c)}\n" for c in assignment)


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

DEFAULTS = {
    "format": "edges",
    "speed": None,
    "delta_m": None,
    "grow": "lazy",
    "alpha": None,
    "termination": "full_coverage",
    "max_iters": 10_000,
    "stable_iters": 10,
    "seed": 0,
    "runs": 1,
    "threads": None,
    "nsm": 500,
    "ksm": 250,
    "refinement": "incres",
    "target_purity": [],
    "multilevel": False,
}

# keys echoed into summaries and accepted from --config files
CONFIG_KEYS = ("input", "format", "labels", "R", "speed", "delta_m", "grow", "alpha",
               "termination", "max_iters", "stable_iters", "seed", "runs", "nsm", "ksm",
               "refinement", "target_purity", "multilevel")


def _add_run_flags(p: argparse.ArgumentParser, *, multilevel: bool, bench: bool) -> None:
    d = argparse.SUPPRESS
    p.add_argument("--config", help="JSON config (or a previous summary.json); flags win")
    p.add_argument("--input", default=d, help="graph file")
    p.add_argument("--format", choices=["edges", "mtx"], default=d)
    p.add_argument("--labels", default=d, help="ground-truth label file")
    p.add_argument("--R", type=int, default=d, help="number of clusters")
    p.add_argument("--speed", type=float, default=d)
    p.add_argument("--delta-m", dest="delta_m", type=float, default=d)
    p.add_argument("--grow", choices=sorted(GROW_NAMES), default=d)
    p.add_argument("--alpha", type=float, default=d)
    p.add_argument("--termination", choices=["full_coverage", "row_coverage"], default=d)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=d)
    p.add_argument("--stable-iters", dest="stable_iters", type=int, default=d,
                   help="0 disables the convergence test")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out-dir", dest="out_dir", default=d)
    if multilevel or bench:
        p.add_argument("--nsm", type=int, default=d, help="coarsest graph size target")
        p.add_argument("--ksm", type=int, default=d, help="iterations on the coarsest graph")
        p.add_argument("--refinement", choices=["incres", "trivial"], default=d)
    if bench:
        p.add_argument("--runs", type=int, default=d)
        p.add_argument("--threads", type=int, default=d)
        p.add_argument("--target-purity", dest="target_purity", type=float,
                       action="append", default=d)
        p.add_argument("--multilevel", action="store_true", default=d,
                       help="benchmark the coarsen/cluster/refine variant")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reseed", description="Incremental reseeding graph clustering")
    parser.add_argument("--version", action="version", version=f"reseed {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", help="run INCRES on a graph")
    _add_run_flags(p, multilevel=False, bench=False)
    p = sub.add_parser("multilevel", help="coarsen, cluster and refine")
    _add_run_flags(p, multilevel=True, bench=False)
    p = sub.add_parser("bench", help="repeated seeded runs with aggregated purity traces")
    _add_run_flags(p, multilevel=True, bench=True)

    p = sub.add_parser("generate", help="write a planted-partition benchmark graph")
    p.add_argument("--kind", choices=["sbm"], default="sbm")
    p.add_argument("--n-per-block", dest="n_per_block", type=int, default=1000)
    p.add_argument("--blocks", type=int, default=10)
    p.add_argument("--degree", type=float, default=16.0)
    p.add_argument("--mixing", type=float, default=0.45)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", required=True)

    p = sub.add_parser("perturb", help="add uniformly random noise edges")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["edges", "mtx"], default="edges")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output edge-list path")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if isinstance(loaded, dict) and isinstance(loaded.get("config"), dict):
            loaded = loaded["config"]
        unknown = set(loaded) - set(CONFIG_KEYS) - {"out_dir", "threads"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in ("command", "config", "verbose"):
            continue
        cfg[key] = val
    return cfg


def validate(cfg: dict, command: str) -> None:
    if not cfg.get("input"):
        raise ConfigError("--input is required")
    if cfg.get("R") is None:
        raise ConfigError("--R is required")
    if cfg["R"] < 2:
        raise ConfigError("--R must be >= 2")
    if cfg.get("speed") is not None and cfg.get("delta_m") is not None:
        raise ConfigError("give either --speed or --delta-m, not both")
    if cfg.get("delta_m") is not None and (command == "multilevel" or cfg.get("multilevel")):
        raise ConfigError("--delta-m is not supported with multilevel; use --speed")
    if cfg.get("speed") is None and cfg.get("delta_m") is None:
        cfg["speed"] = 5.0
    if cfg["speed"] is not None and cfg["speed"] <= 0:
        raise ConfigError("--speed must be positive")
    if cfg["delta_m"] is not None and cfg["delta_m"] < 0:
        raise ConfigError("--delta-m must be >= 0")
    if cfg["grow"] not in GROW_NAMES:
        raise ConfigError(f"unknown --grow {cfg['grow']!r}")
    if cfg["alpha"] is not None and cfg["grow"] != "ppr":
        raise ConfigError("--alpha only applies to --grow ppr")
    if cfg["max_iters"] < 1:
        raise ConfigError("--max-iters must be >= 1")
    if cfg["stable_iters"] is not None and cfg["stable_iters"] < 0:
        raise ConfigError("--stable-iters must be >= 0")
    if cfg["seed"] < 0:
        raise ConfigError("--seed must be >= 0")
    if cfg["runs"] < 1:
        raise ConfigError("--runs must be >= 1")
    if cfg["nsm"] < 2 or cfg["ksm"] < 2:
        raise ConfigError("--nsm and --ksm must be >= 2")
    if cfg.get("out_dir") is None:
        raise ConfigError("--out-dir is required")
    try:
        grow_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def grow_config(cfg: dict) -> GrowConfig:
    return GrowConfig(variant=GROW_NAMES[cfg["grow"]], alpha=cfg["alpha"],
                      termination=cfg["termination"])


def stopping_rule(cfg: dict) -> StoppingRule:
    stable = cfg["stable_iters"] or None
    return StoppingRule(max_iterations=cfg["max_iters"], stable_iterations=stable)


def load_graph(path, fmt: str) -> SparseGraph:
    try:
        if fmt == "mtx":
            g, dropped = load_matrix_market(path)
            if dropped:
                log.info("dropped %d diagonal entries", dropped)
            return g
        return load_edge_list(path)
    except (OSError, GraphError) as exc:
        raise InputError(str(exc)) from exc


def _echo(cfg: dict) -> dict:
    return {k: cfg.get(k) for k in CONFIG_KEYS}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _one_run(g, labels, cfg: dict, seed: int, multilevel: bool):
    """Returns (partition, trace, extra summary fields)."""
    gc = grow_config(cfg)
    if multilevel:
        res = multilevel_run(g, cfg["R"], cfg["nsm"], cfg["ksm"], gc, seed,
                             cfg["refinement"], speed=cfg["speed"], labels=labels)
        extra = {
            "levels": res.hierarchy.n_levels,
            "level_sizes": res.hierarchy.sizes[::-1],
            "coarsening_stalled": res.hierarchy.stalled,
            "total_grow_steps": res.total_grow_steps,
        }
        if res.schedule is not None:
            extra["seeds_per_level"] = res.schedule.m_per_level[::-1]
            extra["iterations_per_level"] = res.schedule.k_per_level[::-1]
        return res.partition, res.trace, extra
    if cfg["delta_m"] is not None:
        sched = SeedSchedule(m=1.0, delta_m=cfg["delta_m"])
    else:
        sched = SeedSchedule.from_speed(cfg["speed"], g.n_vertices, cfg["R"])
    res = incres_run(g, cfg["R"], sched, gc, seed, stopping_rule(cfg), labels=labels)
    extra = {
        "converged": res.converged,
        "m_eff": res.m_eff,
        "delta_m": sched.delta_m,
        "total_grow_steps": res.total_grow_steps,
    }
    return res.partition, res.trace, extra


def _load_inputs(cfg: dict):
    g = load_graph(cfg["input"], cfg["format"])
    labels = None
    if cfg.get("labels"):
        try:
            labels = check_labels(load_labels(cfg["labels"]), g.n_vertices)
        except (OSError, GraphError, ValueError) as exc:
            raise InputError(f"{cfg['labels']}: {exc}") from exc
    if cfg["R"] > g.n_vertices:
        raise ConfigError(f"--R {cfg['R']} exceeds the {g.n_vertices} vertices")
    return g, labels


def cmd_cluster(cfg: dict, multilevel: bool = False) -> int:
    g, labels = _load_inputs(cfg)
    t0 = time.perf_counter()
    part, trace, extra = _one_run(g, labels, cfg, cfg["seed"], multilevel)
    elapsed = time.perf_counter() - t0
    out = Path(cfg["out_dir"])
    summary = {
        "command": "multilevel" if multilevel else "cluster",
        "n_vertices": g.n_vertices,
        "n_edges": g.n_edges,
        "iterations": len(trace),
        "elapsed_s": elapsed,
        "cluster_sizes": part.sizes().tolist(),
        "purity": purity(part, labels) if labels is not None else None,
        "version": version_string(),
        "config": _echo(cfg),
        **extra,
    }
    atomic_write(out / "partition.txt", format_partition(part.assignment))
    atomic_write(out / "trace.csv", traces_to_csv([trace], [0]))
    write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("iterations", "purity", "elapsed_s")}))
    return 0


_WORKER_STATE: dict = {}


def _worker_init(cfg: dict) -> None:
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["inputs"] = _load_inputs(cfg)


def _bench_worker(run: int):
    cfg = _WORKER_STATE["cfg"]
    g, labels = _WORKER_STATE["inputs"]
    part, trace, extra = _one_run(g, labels, cfg, cfg["seed"] + run, cfg["multilevel"])
    return run, part.assignment, trace, extra


def _threads(cfg: dict) -> int:
    if cfg.get("threads"):
        return max(1, int(cfg["threads"]))
    env = os.environ.get("RESEED_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RESEED_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def cmd_bench(cfg: dict) -> int:
    g, labels = _load_inputs(cfg)
    runs = cfg["runs"]
    workers = min(_threads(cfg), runs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(cfg,)) as pool:
            results = list(pool.map(_bench_worker, range(runs)))
    else:
        _WORKER_STATE.update(cfg=cfg, inputs=(g, labels))
        results = [_bench_worker(r) for r in range(runs)]
    results.sort(key=lambda x: x[0])
    traces = [r[2] for r in results]
    out = Path(cfg["out_dir"])
    summary = {
        "command": "bench",
        "n_vertices": g.n_vertices,
        "runs": runs,
        "iterations": [len(t) for t in traces],
        "total_grow_steps": [r[3]["total_grow_steps"] for r in results],
        "version": version_string(),
        "config": _echo(cfg),
    }
    if labels is not None:
        finals = np.array([purity(r[1], labels) for r in results])
        agg = aggregate_runs(traces)
        summary["purity_mean"] = float(finals.mean())
        summary["purity_std"] = float(finals.std())
        summary["purities"] = finals.tolist()
        summary["time_to_purity_s"] = {
            str(t): [time_to_purity(tr, t) for tr in traces] for t in cfg["target_purity"]
        }
        summary["aggregate_time_to_purity_s"] = {
            str(t): aggregate_time_to_purity(agg, t) for t in cfg["target_purity"]
        }
        atomic_write(out / "aggregate.csv", aggregate_to_csv(agg))
    elif cfg["target_purity"]:
        raise ConfigError("--target-purity needs --labels")
    atomic_write(out / "runs.csv", traces_to_csv(traces, [r[0] for r in results]))
    atomic_write(out / "partitions.txt",
                 "".join(" ".join(map(str, r[1].tolist())) + "\n" for r in results))
    write_json(out / "summary.json", summary)
    brief = {k: summary.get(k) for k in ("runs", "purity_mean", "purity_std")}
    print(json.dumps(brief))
    return 0


def cmd_generate(args) -> int:
    g, labels = generate_sbm(args.n_per_block, args.blocks, args.degree, args.mixing, args.seed)
    out = Path(args.out_dir)
    atomic_write(out / "graph.edges", format_edge_list(g))
    atomic_write(out / "labels.txt", format_partition(labels))
    summary = {
        "kind": args.kind,
        "n_vertices": g.n_vertices,
        "n_edges": g.n_edges,
        "mean_degree": float(g.degree.mean()),
        "empirical_mixing": mixing_fraction(g, labels),
        "params": {"n_per_block": args.n_per_block, "blocks": args.blocks,
                   "degree": args.degree, "mixing": args.mixing, "seed": args.seed},
        "version": version_string(),
    }
    write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("n_vertices", "n_edges", "mean_degree",
                                               "empirical_mixing")}))
    return 0


def cmd_perturb(args) -> int:
    g = load_graph(args.input, args.format)
    h = add_noise_edges(g, args.fraction, args.seed)
    atomic_write(args.out, format_edge_list(h))
    print(json.dumps({"n_edges_in": g.n_edges, "n_edges_out": h.n_edges}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"reseed: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("cluster", "multilevel", "bench"):
            cfg = resolve_config(args)
            if args.command == "multilevel":
                cfg["multilevel"] = True
            validate(cfg, args.command)
            if args.command == "bench":
                return cmd_bench(cfg)
            return cmd_cluster(cfg, multilevel=args.command == "multilevel")
        if args.command == "generate":
            return cmd_generate(args)
        return cmd_perturb(args)
    except ConfigError as exc:
        print(f"reseed: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, OSError) as exc:
        print(f"reseed: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GraphError as exc:
        # generator and perturbation parameter problems
        print(f"reseed: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IncresError, ValueError) as exc:
        print(f"reseed: error: {exc}", file=sys.stderr)
        return EXIT_ALGO

if __name__ == "__main__":
    sys.exit(main())
