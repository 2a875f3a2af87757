"""Command line entry point: ``dvamp <command> [options]``.

Commands: gen, simulate, train, evaluate, bounds, export-milp.

Settings come from built-in defaults, then an optional INI-style ``--config``
file with ``[cluster]``, ``[train]`` and ``[workload]`` sections, then flags.
Every output file records the resolved config hash and seed.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .cluster import ClusterConfig
from .drl import TrainConfig, evaluate, train, write_curves
from .env import run_episode, write_episode_log
from .errors import DvampError, ShapeError
from .metrics import aggregate_runs, bound_report, write_bound_sweep
from .oracle import export_milp
from .qnet import load_checkpoint, save_checkpoint
from .schedulers import QPolicy, make_scheduler
from .workload import (frozen_episodes, gen_adversarial, gen_synthetic, load_sidecar_config,
                       load_trace, save_trace, sidecar_path)

log = logging.getLogger("dvamp")

OUT_ENV = "DVAMP_OUT"


@dataclasses.dataclass
class RunConfig:
    cluster: ClusterConfig
    train: TrainConfig
    workload: dict
    out: str
    seed: int

    def to_dict(self):
        return {"cluster": self.cluster.to_dict(), "train": self.train.to_dict(),
                "workload": dict(self.workload), "out": self.out, "seed": self.seed}

    def hash(self):
        payload = self.to_dict()
        payload.pop("out")
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _parse_value(text, default):
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(x) for x in text.split(","))
    return text.strip()


def load_run_config(path=None, overrides=None):
    cluster = ClusterConfig().to_dict()
    cluster["capacities"] = tuple(cluster["capacities"])
    train_cfg = TrainConfig().to_dict()
    workload = {"kind": "trace"}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise DvampError(f"cannot read config file {path}")
        for key, text in parser["cluster"].items() if parser.has_section("cluster") else []:
            cluster[key] = _parse_value(text, cluster.get(key, ""))
        for key, text in parser["train"].items() if parser.has_section("train") else []:
            if key not in train_cfg:
                raise DvampError(f"unknown [train] key {key!r}")
            train_cfg[key] = _parse_value(text, train_cfg[key])
        if parser.has_section("workload"):
            workload.update(parser["workload"].items())
    overrides = overrides or {}
    for key, value in overrides.get("cluster", {}).items():
        if value is not None:
            cluster[key] = value
    for key, value in overrides.get("train", {}).items():
        if value is not None:
            train_cfg[key] = value
    seed = overrides.get("seed")
    if seed is None:
        seed = train_cfg["seed"]
    train_cfg["seed"] = seed
    out = overrides.get("out") or os.environ.get(OUT_ENV) or "dvamp-out"
    return RunConfig(ClusterConfig(**cluster), TrainConfig(**train_cfg), workload, out, seed)


def _meta(run):
    return {"config_hash": run.hash(), "seed": run.seed}


def _write_csv(path, header, rows, meta):
    with open(path, "w", newline="") as f:
        for k, v in meta.items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, payload, meta):
    with open(path, "w") as f:
        json.dump({**meta, **payload}, f, indent=1, sort_keys=True)


def _load_trace_and_config(args, run):
    config = run.cluster
    if os.path.exists(sidecar_path(args.trace)) and not args.config:
        config = load_sidecar_config(args.trace)
    if getattr(args, "m", None):
        config = config.with_m(args.m)
    return load_trace(args.trace, config), config


def _episodes(args, trace, run, split):
    return frozen_episodes(trace, split, args.episodes, run.train.episode_len, run.train.eval_seed)


def _run_one(job):
    trace, spec, name, seed, config = job
    return run_episode(trace, spec, make_scheduler(name, seed), config)


def _run_all(trace, specs, name, seed, config, workers):
    jobs = [(trace, s, name, seed, config) for s in specs]
    if workers <= 1 or len(jobs) < 2:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# -- commands -----------------------------------------------------------------

def cmd_gen(args, run):
    os.makedirs(run.out, exist_ok=True)
    if args.kind == "adversarial":
        sched = make_scheduler(args.scheduler, run.seed)
        trace, config, targets = gen_adversarial(args.m or 2, args.q, args.mu, sched)
        extra = {"targets": targets, "scheduler": args.scheduler}
    else:
        config = run.cluster.with_m(args.m) if args.m else run.cluster
        w = run.workload
        trace = gen_synthetic(args.n, config, seed=run.seed,
                              arrival_rate=float(w.get("arrival_rate", args.rate)),
                              mean_lifetime=float(w.get("mean_lifetime", args.mean_life)))
        extra = {}
    name = args.name or args.kind
    if not os.path.splitext(name)[1]:
        name += ".csv"
    path = os.path.join(run.out, name)
    save_trace(trace, path, config)
    _write_json(os.path.join(run.out, os.path.splitext(os.path.basename(path))[0] + ".manifest.json"),
                {"kind": args.kind, "requests": len(trace), "cluster": config.to_dict(), **extra},
                _meta(run))
    print(path)


def cmd_simulate(args, run):
    trace, config = _load_trace_and_config(args, run)
    specs = _episodes(args, trace, run, args.split)
    results = _run_all(trace, specs, args.scheduler, run.seed, config, args.workers)
    os.makedirs(run.out, exist_ok=True)
    rows = [(i, s.start_index, s.length, r.total_wait) for i, (s, r) in enumerate(zip(specs, results))]
    stem = f"simulate_{args.scheduler}_{args.split}"
    _write_csv(os.path.join(run.out, stem + ".csv"), ("episode", "start", "length", "total_wait"),
               rows, _meta(run))
    if args.log_dir:
        os.makedirs(args.log_dir, exist_ok=True)
        for i, r in enumerate(results):
            write_episode_log(r, os.path.join(args.log_dir, f"episode_{i:04d}.csv"))
    totals = [r.total_wait for r in results]
    summary = {"scheduler": args.scheduler, "split": args.split, "episodes": len(totals),
               "mean": sum(totals) / len(totals) if totals else 0.0, "trace_stats": trace.stats,
               "run": run.to_dict()}
    _write_json(os.path.join(run.out, stem + ".json"), summary, _meta(run))
    print(json.dumps({"mean_total_wait": summary["mean"], "episodes": len(totals)}))


def cmd_train(args, run):
    trace, config = _load_trace_and_config(args, run)
    os.makedirs(run.out, exist_ok=True)
    result = train(trace, config, run.train, arch=args.arch)
    meta = _meta(run)
    ckpt = os.path.join(run.out, f"{args.arch}_best.json")
    save_checkpoint(result.best_net, ckpt, extra={**meta, "arch": args.arch, "m": config.m,
                                                 "best_epoch": result.best_epoch,
                                                 "best_valid": result.best_score})
    curves = os.path.join(run.out, f"{args.arch}_curves.csv")
    with open(curves, "w") as f:
        for k, v in meta.items():
            f.write(f"# {k}={v}\n")
    tmp = curves + ".tmp"
    write_curves(result.curves, tmp)
    with open(tmp) as src, open(curves, "a") as dst:
        dst.write(src.read())
    os.remove(tmp)
    _write_json(os.path.join(run.out, f"{args.arch}_manifest.json"),
                {"arch": args.arch, "run": run.to_dict(), "best_epoch": result.best_epoch,
                 "best_valid": result.best_score, "transitions_stored": result.transitions_stored},
                meta)
    print(ckpt)


def cmd_evaluate(args, run):
    trace, config = _load_trace_and_config(args, run)
    if args.checkpoint:
        net, extra = load_checkpoint(args.checkpoint)
        trained_m = extra.get("m")
        if getattr(net, "m", None) is not None and net.m != config.m:
            raise ShapeError(f"architecture bound to m={net.m}; cannot evaluate with m={config.m}")
        scheduler = QPolicy(net)
        label = f"{net.arch}@m={trained_m}"
    else:
        scheduler = make_scheduler(args.scheduler, run.seed)
        label = args.scheduler
    specs = _episodes(args, trace, run, args.split)
    stats = evaluate(scheduler, trace, config, specs)
    os.makedirs(run.out, exist_ok=True)
    payload = {"policy": label, "split": args.split, "m": config.m, **stats.to_dict()}
    if len(stats.totals) >= 5:
        payload.update(aggregate_runs(stats.totals))
    name = f"evaluate_{label.replace('@', '_').replace('=', '')}_m{config.m}_{args.split}.json"
    _write_json(os.path.join(run.out, name), payload, _meta(run))
    print(json.dumps({"policy": label, "m": config.m, "mean_total_wait": stats.mean}))


def cmd_bounds(args, run):
    reports = []
    for m in args.m_list:
        for q in args.q_list:
            for mu in args.mu_list:
                reports.append(bound_report(m, q, mu, make_scheduler(args.scheduler, run.seed)))
    os.makedirs(run.out, exist_ok=True)
    path = os.path.join(run.out, "bounds.csv")
    write_bound_sweep(reports, path, meta=_meta(run))
    with open(path) as f:
        sys.stdout.write("".join(line for line in f if not line.startswith("#")))


def cmd_export_milp(args, run):
    trace, config = _load_trace_and_config(args, run)
    text = export_milp(trace, config, horizon=args.horizon, strict_fifo=args.strict_fifo)
    os.makedirs(run.out, exist_ok=True)
    path = args.output or os.path.join(run.out, "dvamp.lp")
    meta = _meta(run)
    with open(path, "w") as f:
        f.write("".join(f"\\ {k}={v}\n" for k, v in meta.items()) + text)
    print(path)


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def build_parser():
    p = argparse.ArgumentParser(prog="dvamp", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file overriding the default settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./dvamp-out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write an adversarial or synthetic trace")
    g.add_argument("kind", choices=["adversarial", "synthetic"])
    g.add_argument("--m", type=int)
    g.add_argument("--q", type=int, default=2)
    g.add_argument("--mu", type=int, default=3)
    g.add_argument("--scheduler", default="first_fit",
                   choices=["first_fit", "balance_fit", "random"])
    g.add_argument("--n", type=int, default=20000)
    g.add_argument("--rate", type=float, default=0.3)
    g.add_argument("--mean-life", type=float, default=30.0)
    g.add_argument("--name")
    g.set_defaults(func=cmd_gen)

    def trace_opts(sp, episodes=100):
        sp.add_argument("--trace", required=True)
        sp.add_argument("--m", type=int, help="override the PM count")
        sp.add_argument("--episodes", type=int, default=episodes)
        sp.add_argument("--episode-len", type=int)
        sp.add_argument("--split", default="test", choices=["train", "valid", "test"])

    s = sub.add_parser("simulate", help="run a heuristic scheduler over frozen episodes")
    trace_opts(s)
    s.add_argument("--scheduler", default="first_fit", choices=["first_fit", "balance_fit", "random"])
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--log-dir", help="also write per-episode logs here")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a DQN scheduler")
    trace_opts(t)
    t.add_argument("--arch", default="spane", choices=["spane", "mlp", "mlp_aug"])
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint or heuristic")
    trace_opts(e)
    group = e.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--scheduler", choices=["first_fit", "balance_fit", "random", "qnet"])
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bounds", help="sweep the greedy lower-bound instance")
    b.add_argument("--m", dest="m_list", type=_int_list, default=[2, 3, 5])
    b.add_argument("--q", dest="q_list", type=_int_list, default=[2, 50])
    b.add_argument("--mu", dest="mu_list", type=_int_list, default=[3, 10])
    b.add_argument("--scheduler", default="first_fit", choices=["first_fit", "balance_fit", "random"])
    b.set_defaults(func=cmd_bounds)

    x = sub.add_parser("export-milp", help="write the offline problem as an LP file")
    x.add_argument("--trace", required=True)
    x.add_argument("--m", type=int)
    x.add_argument("--horizon", type=int)
    x.add_argument("--strict-fifo", action="store_true")
    x.add_argument("--output")
    x.set_defaults(func=cmd_export_milp)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    train_over = {"epochs": getattr(args, "epochs", None),
                  "episode_len": getattr(args, "episode_len", None)}
    try:
        run = load_run_config(args.config, {"train": train_over, "seed": args.seed, "out": args.out})
        if getattr(args, "scheduler", None) == "qnet" and not getattr(args, "checkpoint", None):
            raise DvampError("--scheduler qnet needs --checkpoint")
        args.func(args, run)
    except (DvampError, OSError, ValueError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
