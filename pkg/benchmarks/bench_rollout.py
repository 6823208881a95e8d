"""Time the compiled rollout kernel against the numpy fallback.

    python benchmarks/bench_rollout.py --samples 16 256 2048 --repeat 3
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mppi_pid._rollout import BACKENDS, RolloutEvaluator
from mppi_pid.control import TABLE3_GAINS, TABLE3_SIGMA_THETA, InputConstraints, PidLaw, PidState
from mppi_pid.cost import CostWeights
from mppi_pid.dynamics import MlpParams, PhysicalParams, ResidualDynamicsModel
from mppi_pid.path import build_hermite_path


def demo_model(seed: int) -> ResidualDynamicsModel:
    in_scale = np.array([1.0, 1.0, 0.7, 0.7, 0.1, 0.02, 0.1, 25.0, 30.0])
    nn = MlpParams.init_uniform(in_scale, out_dim=3, rng=seed)
    return ResidualDynamicsModel(PhysicalParams(0.0025, 1.0, 2.5, 1.5), nn)


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, nargs="+", default=[16, 256, 2048])
    p.add_argument("--horizon", type=int, default=60)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--model", help="identified model JSON (default: random residual network)")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    model = ResidualDynamicsModel.load(args.model) if args.model else demo_model(args.seed)
    path = build_hermite_path((0.0, 0.0, 0.0), (1.7, 1.7, np.pi / 2), 800)
    cw, cons, law = CostWeights(), InputConstraints(), PidLaw()
    x0 = np.array([0.0, 0.02, 0.0, 1.0, 0.1, 0.0, 0.0])
    u_prev = np.array(law.u_bias)
    vref = np.full(args.horizon, cw.V_ref)
    rng = np.random.default_rng(args.seed)
    pid = PidState(u_prev=u_prev)

    evals = {name: RolloutEvaluator(model, path, cw, cons, backend=name) for name in BACKENDS}
    print(f"backends: {', '.join(evals)}; horizon {args.horizon}; best of {args.repeat}")
    print(f"{'kind':<6} {'I':>6} " + " ".join(f"{n + ' s':>12}" for n in evals) + f" {'speedup':>8} {'max rel diff':>13}")
    for I in args.samples:
        U = u_prev + rng.normal(size=(I, args.horizon, 2)) * [8.0, 6.0]
        th = np.asarray(TABLE3_GAINS) + rng.normal(size=(I, 9)) * TABLE3_SIGMA_THETA
        cases = {
            "mppi": lambda ev: ev.mppi_costs(x0, u_prev, U, vref),
            "pid": lambda ev: ev.pid_costs(x0, u_prev, th, pid, np.array(law.u_bias),
                                           np.array(law.error_signs), vref),
        }
        for kind, fn in cases.items():
            times = {n: best_of(lambda: fn(ev), args.repeat) for n, ev in evals.items()}
            costs = [fn(ev) for ev in evals.values()]
            diff = max(float(np.max(np.abs(c - costs[0]) / np.maximum(np.abs(costs[0]), 1e-300))) for c in costs)
            speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{kind:<6} {I:>6} " + " ".join(f"{t:12.4f}" for t in times.values())
                  + f" {speed:8.1f} {diff:13.2e}")
    for ev in evals.values():
        ev.close()


if __name__ == "__main__":
    main()
