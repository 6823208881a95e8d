"""Closed-loop path-following runs: the controller plans with an identified
model while a separate plant is stepped with the chosen input.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._rollout import RolloutEvaluator
from .control import (
    TABLE3_GAINS, InputConstraints, MppiPidPlanner, MppiPlanner, OptimizerConfig, PidLaw, PidState,
    pid_step, project_input,
)
from .cost import CostWeights
from .dynamics import NX, STATE_NAMES, ResidualDynamicsModel, speed_of
from .path import build_hermite_path, nearest_point

CONTROLLERS = ("pid", "mppi", "mppi_pid")
DIVERGENCE_DISTANCE = 10.0
STOP_TICKS = 10


class ModelPlant:
    """Use a dynamics model as the plant (the "perfect model" ablation)."""

    def __init__(self, model: ResidualDynamicsModel):
        self.model = model

    def step(self, x, u, dt, rng=None):
        if abs(dt - self.model.h) > 1e-12:
            raise ValueError("model plant only supports its own step size")
        return self.model.step(x, u)


@dataclass(frozen=True)
class Scenario:
    name: str = "curve"
    start: tuple = (0.0, 0.0, 0.0)
    goal: tuple = (1.7, 1.7, math.pi / 2)
    path_points: int = 800
    duration: float = 40.0
    h: float = 0.0667
    controller: str = "mppi_pid"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    constraints: InputConstraints = field(default_factory=InputConstraints)
    cost: CostWeights = field(default_factory=CostWeights)
    law: PidLaw = field(default_factory=PidLaw)
    theta0: tuple = TABLE3_GAINS
    plant: str = "ground_truth"  # or "identified"
    seed: int = 0
    workers: int = 1
    backend: str | None = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.plant not in ("ground_truth", "identified"):
            raise ValueError("plant must be 'ground_truth' or 'identified'")
        if not (self.duration > 0 and self.h > 0):
            raise ValueError("duration and h must be positive")

    @property
    def samples(self) -> int:
        return 0 if self.controller == "pid" else self.optimizer.I

    @property
    def stem(self) -> str:
        return f"{self.name}_{self.controller}_{self.samples}_{self.seed}"


def default_scenarios() -> dict:
    """Straight line, single 90-degree curve, and the two halves of an S-curve."""
    return {
        "straight": Scenario(name="straight", start=(0.0, 0.0, 0.0), goal=(8.0, 0.0, 0.0), duration=100.0),
        "curve": Scenario(name="curve"),
        "s_curve_a": Scenario(name="s_curve_a", start=(0.0, 0.0, 0.0), goal=(2.0, 2.0, math.pi / 2)),
        "s_curve_b": Scenario(name="s_curve_b", start=(2.0, 2.0, math.pi / 2), goal=(4.0, 4.0, 0.0)),
    }


@dataclass
class RunRecord:
    scenario: Scenario
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    e_path: np.ndarray
    du: np.ndarray  # |delta a|, |delta delta| per tick
    ess: np.ndarray  # (ticks, N_iter); empty columns for fixed PID
    theta: np.ndarray  # (ticks, 9); empty for conventional MPPI
    wall: np.ndarray
    reason: str = "duration"
    diverged: bool = False
    reached_goal: bool = False

    @property
    def ticks(self) -> int:
        return len(self.t)

    def columns(self):
        n_it = self.ess.shape[1]
        cols = (["t", *STATE_NAMES, "a", "delta", "e_path", "abs_da", "abs_ddelta"]
                + [f"ess_{i}" for i in range(n_it)] + [f"theta_{i}" for i in range(self.theta.shape[1])])
        data = np.column_stack([self.t, self.x, self.u, self.e_path, self.du, self.ess, self.theta])
        return cols, data

    def to_csv(self, path) -> None:
        cols, data = self.columns()
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for row in data:
                w.writerow([repr(float(v)) for v in row])

    def write_timing(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "wall_seconds"])
            for t, s in zip(self.t, self.wall):
                w.writerow([repr(float(t)), repr(float(s))])

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.name, "controller": self.scenario.controller,
            "I": self.scenario.samples, "seed": self.scenario.seed, "ticks": self.ticks,
            "mean_e_path": float(self.e_path.mean()), "max_e_path": float(self.e_path.max()),
            "mean_abs_da": float(self.du[:, 0].mean()), "mean_abs_ddelta": float(self.du[:, 1].mean()),
            "completed": bool(self.reached_goal and not self.diverged), "diverged": self.diverged,
            "reason": self.reason, "mean_tick_seconds": float(self.wall.mean()),
        }


def initial_state(s: Scenario) -> np.ndarray:
    """At the start pose, moving along the heading at the reference speed."""
    x0 = np.zeros(NX)
    x0[0], x0[1] = s.start[0], s.start[1]
    x0[2], x0[3] = math.sin(s.start[2]), math.cos(s.start[2])
    x0[4], x0[5] = s.cost.V_ref * x0[3], s.cost.V_ref * x0[2]
    return x0


def run_scenario(s: Scenario, model: ResidualDynamicsModel, plant, x0=None, u_prev=None,
                 pid0: PidState | None = None) -> RunRecord:
    """Closed loop: measure, plan, apply to ``plant`` for one step of ``h``, record.

    Ends at ``duration``, after ``STOP_TICKS`` consecutive slow ticks inside
    the goal ball, when the vehicle passes the end of the path, or when the
    path error exceeds ``DIVERGENCE_DISTANCE`` (flagged as diverged).
    """
    if abs(model.h - s.h) > 1e-12:
        raise ValueError(f"model step {model.h} differs from scenario step {s.h}")
    if plant is model:
        raise ValueError("plant and planning model must be different objects; wrap with ModelPlant")
    path = build_hermite_path(s.start, s.goal, s.path_points)
    goal = path.goal
    tangent_end = path.tangents[-1]
    law = s.law
    x = initial_state(s) if x0 is None else np.array(x0, dtype=float)
    u_prev = np.asarray(law.u_bias if u_prev is None else u_prev, dtype=float)
    pid = pid0 if pid0 is not None else PidState(u_prev=u_prev)
    rng = np.random.default_rng([s.seed, 1])
    ev = planner = None
    if s.controller != "pid":
        ev = RolloutEvaluator(model, path, s.cost, s.constraints, backend=s.backend, workers=s.workers)
        cfg = replace(s.optimizer, seed=s.seed)
        if s.controller == "mppi":
            planner = MppiPlanner(ev, cfg, s.constraints, s.cost, law.u_bias)
        else:
            planner = MppiPidPlanner(ev, cfg, s.constraints, s.cost, law, s.theta0)
    n_it = 0 if s.controller == "pid" else s.optimizer.N_iter
    n_th = 9 if s.controller == "mppi_pid" else 0
    T = int(math.floor(s.duration / s.h + 1e-9))
    rows_x, rows_u, rows_e, rows_du, rows_ess, rows_th, rows_wall = [], [], [], [], [], [], []
    reason, diverged, reached, slow = "duration", False, False, 0
    try:
        for k in range(T):
            tick0 = time.perf_counter()
            q = nearest_point(path, x[:2])
            errors = law.errors(path, x, s.cost.V_ref, q)
            ess, th = [], []
            if s.controller == "pid":
                u, pid, _ = pid_step(s.theta0, pid, errors, law.u_bias, s.h, s.constraints)
            elif s.controller == "mppi":
                u, info = planner.plan(x, u_prev, step=k)
                ess = info["ess"]
            else:
                u, pid, info = planner.plan(x, pid, errors, s.h, step=k)
                ess, th = info["ess"], info["theta"]
            if not np.array_equal(project_input(u, u_prev, s.constraints), u):
                raise AssertionError(f"tick {k}: input {u} violates the constraints for u_prev={u_prev}")
            wall = time.perf_counter() - tick0
            e_path = math.hypot(x[0] - q.point[0], x[1] - q.point[1])
            rows_x.append(x.copy())
            rows_u.append(np.array(u, dtype=float))
            rows_e.append(e_path)
            rows_du.append(np.abs(np.asarray(u) - u_prev))
            rows_ess.append(ess)
            rows_th.append(th)
            rows_wall.append(wall)
            if e_path > DIVERGENCE_DISTANCE:
                reason, diverged = "diverged", True
                break
            dist_goal = math.hypot(x[0] - goal[0], x[1] - goal[1])
            if dist_goal <= s.cost.eps_goal_pos:
                reached = True
                slow = slow + 1 if speed_of(x) < s.cost.eps_goal_vel else 0
                if slow >= STOP_TICKS:
                    reason = "stopped"
                    break
            else:
                slow = 0
            if q.k == path.M - 1 and (x[:2] - goal) @ tangent_end > 0:
                reason = "overshoot"
                break
            x = plant.step(x, u, s.h, rng)
            u_prev = np.asarray(u, dtype=float)
    finally:
        if ev is not None:
            ev.close()
    n = len(rows_x)
    return RunRecord(
        s, s.h * np.arange(n), np.array(rows_x).reshape(n, NX), np.array(rows_u).reshape(n, 2),
        np.array(rows_e), np.array(rows_du).reshape(n, 2), np.array(rows_ess, dtype=float).reshape(n, n_it),
        np.array(rows_th, dtype=float).reshape(n, n_th), np.array(rows_wall), reason, diverged, reached,
    )


def run_chain(scenarios, model, plant) -> list[RunRecord]:
    """Run scenarios back to back, each starting from the previous final state."""
    out, x, u_prev = [], None, None
    for s in scenarios:
        rec = run_scenario(s, model, plant, x0=x, u_prev=u_prev)
        out.append(rec)
        if rec.diverged:
            break
        x, u_prev = rec.x[-1], rec.u[-1]
    return out


# -- experiment matrix --------------------------------------------------------

def matrix_scenarios(base: Scenario, controllers=CONTROLLERS, budgets=(2048, 16), seeds=range(5)):
    """Scenario list for the grid; fixed PID has no sample budget and runs once per seed."""
    out = []
    for c in controllers:
        for seed in seeds:
            if c == "pid":
                out.append(replace(base, controller=c, seed=seed))
                continue
            for I in budgets:
                out.append(replace(base, controller=c, seed=seed, optimizer=replace(base.optimizer, I=I)))
    return out


def _run_one(args):
    s, model, plant, out_dir = args
    rec = run_scenario(s, model, plant)
    if out_dir is not None:
        save_record(rec, out_dir)
    return rec


def run_many(scenarios, model, plant, out_dir=None, jobs: int = 1) -> list[RunRecord]:
    tasks = [(s, model, plant, out_dir) for s in scenarios]
    if jobs <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(_run_one, tasks))


def summarize(records) -> list[dict]:
    """Per-cell aggregates (mean over seeds of per-run statistics)."""
    cells: dict = {}
    for r in records:
        cells.setdefault((r.scenario.name, r.scenario.controller, r.scenario.samples), []).append(r.summary())
    rows = []
    for (name, ctrl, I), runs in sorted(cells.items()):
        rows.append({
            "scenario": name, "controller": ctrl, "I": I, "runs": len(runs),
            "mean_e_path": float(np.mean([r["mean_e_path"] for r in runs])),
            "max_e_path": float(np.max([r["max_e_path"] for r in runs])),
            "mean_abs_da": float(np.mean([r["mean_abs_da"] for r in runs])),
            "mean_abs_ddelta": float(np.mean([r["mean_abs_ddelta"] for r in runs])),
            "completion_rate": float(np.mean([r["completed"] for r in runs])),
            "mean_tick_seconds": float(np.mean([r["mean_tick_seconds"] for r in runs])),
        })
    return rows


def cell(rows, controller, I=None) -> dict:
    for r in rows:
        if r["controller"] == controller and (I is None or r["I"] == I):
            return r
    raise KeyError((controller, I))


SUMMARY_KEYS = ("scenario", "controller", "I", "runs", "mean_e_path", "max_e_path", "mean_abs_da",
                "mean_abs_ddelta", "completion_rate", "mean_tick_seconds")


def write_summary(rows, out_dir) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_KEYS)
        w.writeheader()
        w.writerows(rows)
    (out_dir / "summary.json").write_text(json.dumps(rows, indent=1))


def format_table(rows) -> str:
    head = f"{'scenario':<10} {'controller':<9} {'I':>5} {'mean e':>8} {'max e':>8} {'|da|':>7} {'|dd|':>7} {'done':>5} {'s/tick':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['scenario']:<10} {r['controller']:<9} {r['I']:>5} {r['mean_e_path']:8.4f} "
                     f"{r['max_e_path']:8.4f} {r['mean_abs_da']:7.3f} {r['mean_abs_ddelta']:7.3f} "
                     f"{r['completion_rate']:5.2f} {r['mean_tick_seconds']:7.3f}")
    return "\n".join(lines)


def save_record(rec: RunRecord, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / f"{rec.scenario.stem}.csv"
    rec.to_csv(p)
    rec.write_timing(out_dir / f"{rec.scenario.stem}_timing.csv")
    return p


def write_svg(path, ref_points, trajectories: dict, size: int = 480, margin: int = 24) -> None:
    """Reference path dashed, each trajectory solid, equal axis scaling."""
    pts = [np.asarray(ref_points)[:, :2]] + [np.asarray(t)[:, :2] for t in trajectories.values()]
    allp = np.concatenate(pts)
    lo, hi = allp.min(0), allp.max(0)
    scale = (size - 2 * margin) / max(float(np.max(hi - lo)), 1e-9)

    def poly(p):
        xy = [(margin + (a - lo[0]) * scale, size - margin - (b - lo[1]) * scale) for a, b in p]
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in xy)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<polyline points="{poly(pts[0])}" fill="none" stroke="black" stroke-dasharray="6,4"/>']
    for i, (name, traj) in enumerate(trajectories.items()):
        c = colors[i % len(colors)]
        parts.append(f'<polyline points="{poly(np.asarray(traj)[:, :2])}" fill="none" stroke="{c}"/>')
        parts.append(f'<text x="{margin}" y="{margin + 14 * (i + 1)}" fill="{c}" font-size="12">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
