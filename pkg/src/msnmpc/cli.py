"""Command line entry point: ``run``, ``sweep`` and ``compare``."""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, config_to_dict, load_config
from .sim_harness import emit_outputs, run_episode

log = logging.getLogger("msnmpc")


def _seed_range(text: str) -> list:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("seed range is empty")
    return list(range(lo, hi + 1))


def _solver_overrides(args) -> dict:
    over = {}
    if args.tol is not None:
        over["tolerance"] = args.tol
    if args.max_iter is not None:
        over["max_iterations"] = args.max_iter
    if args.time_budget_ms is not None:
        over["time_budget_ms"] = args.time_budget_ms
    return over


def _resolve(args, seed=None):
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=seed if seed is not None else getattr(args, "seed", None),
        mode=args.controller,
        solver=_solver_overrides(args),
        max_sim_time=args.max_sim_time,
    )


def _summary_line(m) -> str:
    return (
        f"seed={m.seed} controller={m.controller} reached={m.reached_goal} "
        f"path={m.path_length:.3f} m collisions={m.collision_count} "
        f"clearance={m.min_obstacle_clearance:.3f} m solve={m.mean_solve_time:.2f} ms "
        f"duration={m.duration:.2f} s"
    )


def cmd_run(args) -> int:
    cfg = _resolve(args)
    trace, metrics = run_episode(cfg)
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.name}_{cfg.controller.mode}_s{cfg.delays.seed}"
    emit_outputs(trace, metrics, out, config=cfg, figures=not args.no_figures)
    print(_summary_line(metrics))
    print(f"outputs written to {out}")
    return 0


def _sweep_one(job):
    cfg, out, figures = job
    trace, metrics = run_episode(cfg)
    if out is not None:
        emit_outputs(trace, metrics, out, config=cfg, figures=figures)
    return metrics


def _aggregate(metrics) -> dict:
    paths = [m.path_length for m in metrics]
    return {
        "controller": metrics[0].controller,
        "n_runs": len(metrics),
        "seeds": [m.seed for m in metrics],
        "reached": sum(m.reached_goal for m in metrics),
        "collision_free": sum(m.collision_count == 0 for m in metrics),
        "median_path_length": statistics.median(paths),
        "mean_path_length": statistics.fmean(paths),
        "mean_solve_time": statistics.fmean(m.mean_solve_time for m in metrics),
        "max_solve_time": max(m.max_solve_time for m in metrics),
        "final_y": [m.final_position[1] for m in metrics],
    }


def cmd_sweep(args) -> int:
    base = _resolve(args)
    out = Path(args.out) if args.out else Path("runs") / f"{base.name}_{base.controller.mode}_sweep"
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (base.with_overrides(seed=s), out / f"seed_{s}" if not args.summary_only else None, not args.no_figures)
        for s in args.seeds
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            metrics = list(pool.map(_sweep_one, jobs))
    else:
        metrics = [_sweep_one(j) for j in jobs]
    for m in metrics:
        print(_summary_line(m))
    summary = _aggregate(metrics)
    summary["config"] = config_to_dict(base)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"{summary['reached']}/{summary['n_runs']} reached goal, "
        f"{summary['collision_free']}/{summary['n_runs']} collision-free, "
        f"median path {summary['median_path_length']:.3f} m, "
        f"mean solve {summary['mean_solve_time']:.2f} ms"
    )
    print(f"summary written to {out / 'summary.json'}")
    return 0


def _load_result(path) -> dict:
    p = Path(path)
    if (p / "summary.json").exists():
        s = json.loads((p / "summary.json").read_text())
        return {
            "label": p.name,
            "controller": s["controller"],
            "path_length": s["median_path_length"],
            "mean_solve_time": s["mean_solve_time"],
            "max_solve_time": s["max_solve_time"],
            "reached": f"{s['reached']}/{s['n_runs']}",
            "collision_free": f"{s['collision_free']}/{s['n_runs']}",
        }
    if (p / "metrics.json").exists():
        m = json.loads((p / "metrics.json").read_text())
        return {
            "label": p.name,
            "controller": m["controller"],
            "path_length": m["path_length"],
            "mean_solve_time": m["mean_solve_time"],
            "max_solve_time": m["max_solve_time"],
            "reached": "yes" if m["reached_goal"] else "no",
            "collision_free": "yes" if m["collision_count"] == 0 else f"no ({m['collision_count']})",
        }
    raise FileNotFoundError(f"{p} holds neither metrics.json nor summary.json")


def format_comparison(a: dict, b: dict) -> str:
    rows = [
        ("path length [m]", f"{a['path_length']:.2f}", f"{b['path_length']:.2f}"),
        ("mean solve time [ms]", f"{a['mean_solve_time']:.2f}", f"{b['mean_solve_time']:.2f}"),
        ("max solve time [ms]", f"{a['max_solve_time']:.2f}", f"{b['max_solve_time']:.2f}"),
        ("reached goal", a["reached"], b["reached"]),
        ("collision free", a["collision_free"], b["collision_free"]),
    ]
    head = ("", f"A: {a['controller']}", f"B: {b['controller']}")
    widths = [max(len(r[i]) for r in (head, *rows)) for i in range(3)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in (head, *rows)]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_compare(args) -> int:
    a, b = _load_result(args.a), _load_result(args.b)
    print(f"A = {args.a}\nB = {args.b}")
    print(format_comparison(a, b))
    return 0


def _add_episode_args(p):
    p.add_argument("--config", required=True, help="JSON episode config, or a shipped name such as scenario1")
    p.add_argument("--controller", choices=("multistage", "standard"), default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--tol", type=float, default=None, help="solver stationarity tolerance")
    p.add_argument("--max-iter", type=int, default=None, help="solver iteration cap per cycle")
    p.add_argument("--time-budget-ms", type=float, default=None, help="solver wall-clock budget per cycle")
    p.add_argument("--max-sim-time", type=float, default=None, help="episode length override [s]")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msnmpc", description="Delay-aware multi-stage NMPC simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one episode")
    _add_episode_args(run)
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="simulate a range of seeds")
    _add_episode_args(sweep)
    sweep.add_argument("--seeds", type=_seed_range, required=True, help="inclusive range A..B")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sweep.add_argument("--summary-only", action="store_true", help="write summary.json only")
    sweep.set_defaults(func=cmd_sweep)

    cmp_ = sub.add_parser("compare", help="tabulate two runs or sweeps side by side")
    cmp_.add_argument("--a", required=True)
    cmp_.add_argument("--b", required=True)
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
