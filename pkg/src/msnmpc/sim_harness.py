"""Closed-loop simulation of a remotely controlled MAV under random round-trip delays.

Each control cycle draws one round-trip delay ``d``. The controller solves
on the state measured at the cycle start; the plant keeps the previously
applied input for ``d`` seconds and then switches to the new command. The
next cycle starts ``max(t_s, d)`` after the current one. Between events the
plant is integrated with forward Euler at ``plant_substep``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .config import EpisodeConfig, config_to_dict
from .delay_model import DelayBuffer, FitDegenerateError, ScenarioSet, fit_gamma, sample_delay, scenario_weights
from .dynamics import STATE_DIM
from .obstacles import pack_obstacles
from .ocp import OcpProblem
from .solver import OcpSolution, solve, shift_warm_start

log = logging.getLogger(__name__)

STATE_COLUMNS = ("px", "py", "pz", "vx", "vy", "vz", "phi", "theta")
INPUT_COLUMNS = ("T_cmd", "phi_cmd", "theta_cmd")
_EVENT_EPS = 1e-12


def trace_header(n_branches: int) -> list:
    weights = [f"w{i + 1}" for i in range(n_branches)]
    return ["t", *STATE_COLUMNS, *INPUT_COLUMNS, "delay", "alpha_hat", "beta_hat", *weights, "solve_ms"]


@dataclass
class CycleRecord:
    t: float
    delay: float
    period: float
    alpha_hat: float
    beta_hat: float
    weights: np.ndarray
    command: np.ndarray
    status: str
    iterations: int
    solve_ms: float
    cost: float
    residual: float


@dataclass
class SimulationTrace:
    """Plant samples at substep resolution plus one row per control cycle start.

    ``u`` is the input the plant held over the substep ending at ``t`` (for a
    cycle row, the input carried into that cycle). Cycle quantities (delay,
    fitted Gamma parameters, weights, solve time) are repeated on every row
    of their cycle. ``solve_ms`` is NaN unless wall-clock logging was enabled.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    delay: np.ndarray
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    weights: np.ndarray
    solve_ms: np.ndarray
    cycles: list = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def positions(self) -> np.ndarray:
        return self.x[:, :3]

    @property
    def n_branches(self) -> int:
        return int(self.weights.shape[1])


@dataclass
class EpisodeMetrics:
    path_length: float
    reached_goal: bool
    time_to_goal: Optional[float]
    final_distance: float
    min_obstacle_clearance: float
    collision_count: int
    mean_solve_time: float
    max_solve_time: float
    duration: float
    n_cycles: int
    solver_failures: int
    final_position: tuple
    controller: str
    seed: int

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["final_position"] = list(self.final_position)
        return d


class _TraceBuilder:
    def __init__(self, n_branches: int):
        self.rows_t, self.rows_x, self.rows_u = [], [], []
        self.cycle_cols = []  # (delay, alpha, beta, weights, solve_ms) per row
        self.n_branches = n_branches

    def add(self, t, x, u, cyc):
        self.rows_t.append(t)
        self.rows_x.append(x)
        self.rows_u.append(u)
        self.cycle_cols.append(cyc)

    def add_block(self, ts, xs, u, cyc):
        for t, x in zip(ts, xs):
            self.add(float(t), x, u, cyc)

    def build(self, cycles) -> SimulationTrace:
        k = len(self.rows_t)
        w = np.array([c[3] for c in self.cycle_cols], dtype=float).reshape(k, self.n_branches)
        return SimulationTrace(
            t=np.array(self.rows_t, dtype=float),
            x=np.array(self.rows_x, dtype=float).reshape(k, STATE_DIM),
            u=np.array(self.rows_u, dtype=float).reshape(k, 3),
            delay=np.array([c[0] for c in self.cycle_cols], dtype=float),
            alpha_hat=np.array([c[1] for c in self.cycle_cols], dtype=float),
            beta_hat=np.array([c[2] for c in self.cycle_cols], dtype=float),
            weights=w,
            solve_ms=np.array([c[4] for c in self.cycle_cols], dtype=float),
            cycles=cycles,
        )


def _integrate(x, u, duration, dt, params):
    n_full = int(math.floor(duration / dt + 1e-9))
    tail = duration - n_full * dt
    if tail < _EVENT_EPS:
        tail = 0.0
    states = _kernels.integrate_held(x, np.ascontiguousarray(u, dtype=float), dt, n_full, tail, params)
    offsets = np.arange(1, n_full + 1) * dt
    if tail > 0.0:
        offsets = np.append(offsets, duration)
    else:
        offsets[-1] = duration
    return offsets, states


def run_episode(config: EpisodeConfig) -> tuple:
    """Simulate one episode; returns ``(SimulationTrace, EpisodeMetrics)``.

    A failed solve keeps the plant on its held input (the command is not
    replaced) and is recorded with status ``failed``.
    """
    ctrl = config.controller
    model = config.model
    mp = model.packed
    dt = float(config.plant_substep)
    goal = np.asarray(config.goal, dtype=float)
    hover = model.hover_input()

    scenarios: ScenarioSet = ctrl.initial_scenarios()
    times = scenarios.sampling_times
    adaptive = ctrl.adaptive(config.delays.enabled)
    x = np.zeros(STATE_DIM)
    x[:3] = config.start
    x_ref = np.zeros(STATE_DIM)
    x_ref[:3] = goal

    problem = OcpProblem(
        horizon=int(ctrl.horizon),
        scenarios=scenarios,
        x0=x,
        x_ref=x_ref,
        u_ref=hover,
        u_prev=hover,
        weights=ctrl.ocp_weights(),
        obstacles=[o.inflated(ctrl.safety_margin) for o in config.obstacles],
        bounds=ctrl.bounds(model.g),
        model=model,
    )
    solver_cfg = ctrl.solver.to_solver_config()

    rng = np.random.default_rng(int(config.delays.seed))
    truth = config.delays.truth
    buffer = DelayBuffer(int(config.delays.n_max))
    warm = np.tile(hover, (problem.horizon, 1))
    warm[:, 2] += float(ctrl.warm_start_tilt)

    builder = _TraceBuilder(len(times))
    cycles = []
    u_applied = hover.copy()
    alpha_hat = beta_hat = math.nan
    t = 0.0
    reached_at = None
    t_end = float(config.max_sim_time)

    while t < t_end - _EVENT_EPS and reached_at is None:
        if adaptive and len(buffer) >= 2:
            try:
                fit = fit_gamma(buffer)
                scenarios = ScenarioSet(times, tuple(scenario_weights(fit, times, ctrl.tail_policy)))
                alpha_hat, beta_hat = fit.alpha, fit.beta
            except FitDegenerateError:
                pass  # keep the last valid weights
        problem = problem.with_state(x.copy(), u_prev=u_applied.copy(), scenarios=scenarios)
        sol: OcpSolution = solve(problem, warm, solver_cfg)
        if sol.ok:
            command = sol.u_seq[0].copy()
            warm = shift_warm_start(sol)
        else:
            log.warning("solve failed at t=%.3f: %s", t, sol.message)
            command = u_applied.copy()
            warm = shift_warm_start(warm)

        d = sample_delay(rng, truth) if config.delays.enabled else 0.0
        if config.delays.enabled:
            buffer.push(d)
        period = max(float(ctrl.nominal_sampling_time), d)
        stop = min(t + period, t_end)
        weights = np.array(scenarios.weights)
        logged_ms = sol.solve_time if config.log_solve_time else math.nan
        cyc = (d, alpha_hat, beta_hat, weights, logged_ms)
        cycles.append(
            CycleRecord(t, d, period, alpha_hat, beta_hat, weights, command, sol.status,
                        sol.iterations, sol.solve_time, sol.final_cost, sol.final_residual)
        )
        builder.add(t, x.copy(), u_applied.copy(), cyc)

        switch = min(t + d, stop)
        for seg_start, seg_end, u in ((t, switch, u_applied), (switch, stop, command)):
            duration = seg_end - seg_start
            if duration <= _EVENT_EPS:
                continue
            offsets, states = _integrate(x, u, duration, dt, mp)
            stamps = seg_start + offsets
            if config.stop_at_goal:
                dist = np.linalg.norm(states[:, :3] - goal, axis=1)
                hit = np.flatnonzero(dist <= config.goal_radius)
                if hit.size:
                    k = int(hit[0]) + 1
                    stamps, states = stamps[:k], states[:k]
                    reached_at = float(stamps[-1])
            # the row at the cycle end is written as the next cycle's record
            is_last = reached_at is None and seg_end == stop and stop < t_end - _EVENT_EPS
            keep = len(stamps) - 1 if is_last else len(stamps)
            builder.add_block(stamps[:keep], states[:keep], u.copy(), cyc)
            x = states[-1].copy()
            if reached_at is not None:
                break
        u_applied = command
        t = stop

    trace = builder.build(cycles)
    metrics = compute_metrics(trace, config, reached_at)
    return trace, metrics


def path_length(trace) -> float:
    """Sum of distances between consecutive recorded plant positions."""
    p = trace.positions if isinstance(trace, SimulationTrace) else np.asarray(trace, float)[:, :3]
    if len(p) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def collision_check(trace, obstacles) -> tuple:
    """``(collision_count, min_clearance)`` over the actual plant path.

    A sample collides when its violation is positive. Clearance is the
    signed horizontal distance to the nearest lateral surface, counting only
    samples below that obstacle's cap; it is ``inf`` when no sample is.
    """
    p = trace.positions if isinstance(trace, SimulationTrace) else np.asarray(trace, float)[:, :3]
    if not obstacles or len(p) == 0:
        return 0, math.inf
    packed = pack_obstacles(obstacles)
    count = 0
    for q in p:
        if _kernels.point_violation(q[0], q[1], q[2], packed) > 0.0:
            count += 1
    clearance = math.inf
    for cx, cy, r, h in packed:
        below = p[:, 2] < h
        if np.any(below):
            dist = np.hypot(p[below, 0] - cx, p[below, 1] - cy) - r
            clearance = min(clearance, float(dist.min()))
    return count, clearance


def compute_metrics(trace: SimulationTrace, config: EpisodeConfig, reached_at=None) -> EpisodeMetrics:
    goal = np.asarray(config.goal, dtype=float)
    count, clearance = collision_check(trace, config.obstacles)
    final = trace.positions[-1]
    final_distance = float(np.linalg.norm(final - goal))
    solve_ms = np.array([c.solve_ms for c in trace.cycles], dtype=float)
    if reached_at is None and final_distance <= config.goal_radius:
        reached_at = float(trace.t[-1])
    return EpisodeMetrics(
        path_length=path_length(trace),
        reached_goal=reached_at is not None,
        time_to_goal=reached_at,
        final_distance=final_distance,
        min_obstacle_clearance=clearance,
        collision_count=int(count),
        mean_solve_time=float(solve_ms.mean()) if solve_ms.size else 0.0,
        max_solve_time=float(solve_ms.max()) if solve_ms.size else 0.0,
        duration=float(trace.t[-1]),
        n_cycles=len(trace.cycles),
        solver_failures=sum(c.status == "failed" for c in trace.cycles),
        final_position=tuple(float(v) for v in final),
        controller=config.controller.mode,
        seed=int(config.delays.seed),
    )


# ---------------------------------------------------------------- output files


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def _parse(s: str) -> float:
    return math.nan if s == "" else float(s)


def write_trace_csv(trace: SimulationTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(trace.n_branches))
        for k in range(len(trace)):
            w.writerow(
                [_fmt(trace.t[k]), *map(_fmt, trace.x[k]), *map(_fmt, trace.u[k]), _fmt(trace.delay[k]),
                 _fmt(trace.alpha_hat[k]), _fmt(trace.beta_hat[k]), *map(_fmt, trace.weights[k]),
                 _fmt(trace.solve_ms[k])]
            )


CYCLE_COLUMNS = ("t", "delay", "period", "alpha_hat", "beta_hat", *INPUT_COLUMNS,
                 "status", "iterations", "solve_ms", "cost", "residual")


def write_cycles_csv(cycles, path, n_branches: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CYCLE_COLUMNS, *(f"w{i + 1}" for i in range(n_branches))])
        for c in cycles:
            w.writerow(
                [_fmt(c.t), _fmt(c.delay), _fmt(c.period), _fmt(c.alpha_hat), _fmt(c.beta_hat),
                 *map(_fmt, c.command), c.status, c.iterations, _fmt(c.solve_ms), _fmt(c.cost),
                 _fmt(c.residual), *map(_fmt, c.weights)]
            )


def read_cycles_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_w = len(header) - len(CYCLE_COLUMNS)
        for row in reader:
            v = dict(zip(CYCLE_COLUMNS, row))
            out.append(CycleRecord(
                t=_parse(v["t"]), delay=_parse(v["delay"]), period=_parse(v["period"]),
                alpha_hat=_parse(v["alpha_hat"]), beta_hat=_parse(v["beta_hat"]),
                weights=np.array([_parse(s) for s in row[len(CYCLE_COLUMNS):]], dtype=float).reshape(n_w),
                command=np.array([_parse(v[c]) for c in INPUT_COLUMNS]),
                status=v["status"], iterations=int(v["iterations"]), solve_ms=_parse(v["solve_ms"]),
                cost=_parse(v["cost"]), residual=_parse(v["residual"]),
            ))
    return out


def read_trace(run_dir) -> SimulationTrace:
    """Load ``trace.csv`` (and ``cycles.csv`` when present) from a run directory."""
    run_dir = Path(run_dir)
    with open(run_dir / "trace.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_parse(s) for s in row] for row in reader]
    n_w = sum(1 for h in header if h.startswith("w") and h[1:].isdigit())
    if header != trace_header(n_w):
        raise ValueError(f"unexpected trace header: {header}")
    a = np.array(rows, dtype=float).reshape(-1, len(header))
    cycles_path = run_dir / "cycles.csv"
    cycles = read_cycles_csv(cycles_path) if cycles_path.exists() else []
    i_w = 15
    return SimulationTrace(
        t=a[:, 0], x=a[:, 1:9], u=a[:, 9:12], delay=a[:, 12], alpha_hat=a[:, 13], beta_hat=a[:, 14],
        weights=a[:, i_w:i_w + n_w], solve_ms=a[:, i_w + n_w], cycles=cycles,
    )


def _write_table(path, header, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def write_plot_data(trace: SimulationTrace, config: Optional[EpisodeConfig], out_dir) -> list:
    """Per-figure CSVs: 3D path, attitude and thrust, delays and weights, obstacles."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []

    def table(name, header, cols):
        _write_table(d / name, header, cols)
        written.append(d / name)

    p = trace.positions
    table("path_3d.csv", ["t", "px", "py", "pz"], [trace.t, p[:, 0], p[:, 1], p[:, 2]])
    table(
        "attitude_thrust.csv",
        ["t", "phi", "theta", *INPUT_COLUMNS],
        [trace.t, trace.x[:, 6], trace.x[:, 7], trace.u[:, 0], trace.u[:, 1], trace.u[:, 2]],
    )
    cyc = trace.cycles
    w = np.array([c.weights for c in cyc], dtype=float).reshape(len(cyc), trace.n_branches)
    table(
        "delays_weights.csv",
        ["t", "delay", "alpha_hat", "beta_hat", *(f"w{i + 1}" for i in range(trace.n_branches))],
        [[c.t for c in cyc], [c.delay for c in cyc], [c.alpha_hat for c in cyc],
         [c.beta_hat for c in cyc], *w.T],
    )
    if config is not None:
        obs = pack_obstacles(config.obstacles)
        table("obstacles.csv", ["center_x", "center_y", "radius", "height"], list(obs.T))
    return written


def emit_outputs(trace: SimulationTrace, metrics: EpisodeMetrics, out_dir, config=None, figures=True) -> dict:
    """Write trace, cycle log, metrics, plot data and (optionally) figures to ``out_dir``."""
    if trace is None or len(trace) == 0:
        raise ValueError("refusing to write outputs for an empty trace")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / "trace.csv")
    write_cycles_csv(trace.cycles, out / "cycles.csv", trace.n_branches)
    (out / "metrics.json").write_text(json.dumps(metrics.as_dict(), indent=2, allow_nan=True) + "\n")
    if config is not None:
        (out / "config.json").write_text(json.dumps(config_to_dict(config), indent=2) + "\n")
    files = {"trace": out / "trace.csv", "metrics": out / "metrics.json"}
    files["plot_data"] = write_plot_data(trace, config, out / "plot_data")
    if figures:
        from .plotting import render_figures

        files["figures"] = render_figures(trace, config, out / "figures")
    return files
