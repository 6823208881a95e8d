import math
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_model
from mppi_pid._rollout import BACKENDS, CHUNK, DEFAULT_BACKEND, RolloutEvaluator
from mppi_pid.control import TABLE3_GAINS, TABLE3_SIGMA_THETA, InputConstraints, PidLaw, PidState, pid_step, project_input
from mppi_pid.cost import CostWeights, stage_cost
from mppi_pid.path import build_hermite_path, nearest_point

PATH = build_hermite_path((0.0, 0.0, 0.0), (1.7, 1.7, math.pi / 2), 800)
CW = CostWeights()
CONS = InputConstraints()
LAW = PidLaw()
X0 = np.array([0.05, 0.03, 0.1, math.sqrt(1 - 0.01), 0.1, 0.01, 0.02])
UP = np.array([40.0, 2.0])


def oracle_mppi(model, U, vref):
    """Per-sample scalar loop over the module-level building blocks."""
    out = []
    for seq in U:
        x, up, J = X0.copy(), UP.copy(), 0.0
        for t, u in enumerate(seq):
            u = project_input(u, up, CONS)
            J += stage_cost(x, u, up, nearest_point(PATH, x[:2]), CW, PATH.goal, vref[t])
            x, up = model.step(x, u), u
        out.append(J)
    return np.array(out)


def oracle_pid(model, thetas, pid, vref):
    out = []
    for th in thetas:
        x, st, J = X0.copy(), pid, 0.0
        for t in range(len(vref)):
            q = nearest_point(PATH, x[:2])
            e = LAW.errors(PATH, x, vref[t], q)
            up = st.u_prev
            u, st, _ = pid_step(th, st, e, LAW.u_bias, model.h, CONS)
            J += stage_cost(x, u, up, q, CW, PATH.goal, vref[t])
            x = model.step(x, u)
        out.append(J)
    return np.array(out)


def samples(n, N, seed=0):
    rng = np.random.default_rng(seed)
    U = UP + rng.normal(size=(n, N, 2)) * [8.0, 6.0]
    th = np.asarray(TABLE3_GAINS) + rng.normal(size=(n, 9)) * TABLE3_SIGMA_THETA
    return U, th


@pytest.mark.parametrize("backend", sorted(BACKENDS))
@pytest.mark.parametrize("seed", [0, 1])
def test_backends_match_scalar_oracle(backend, seed):
    model = random_model(seed)
    U, th = samples(6, 20, seed)
    vref = np.full(20, 0.1)
    ev = RolloutEvaluator(model, PATH, CW, CONS, backend=backend)
    assert np.allclose(ev.mppi_costs(X0, UP, U, vref), oracle_mppi(model, U, vref), rtol=1e-10)
    pid = PidState(np.array([0.01, -0.02, 0.005]), np.array([0.0, 0.01, -0.02]), UP)
    got = ev.pid_costs(X0, UP, th, pid, np.array(LAW.u_bias), np.array(LAW.error_signs), vref)
    assert np.allclose(got, oracle_pid(model, th, pid, vref), rtol=1e-10)
    fresh = PidState(u_prev=UP)
    got = ev.pid_costs(X0, UP, th, fresh, np.array(LAW.u_bias), np.array(LAW.error_signs), vref)
    assert np.allclose(got, oracle_pid(model, th, fresh, vref), rtol=1e-10)


def test_physical_only_model_matches_oracle(phys_model):
    U, th = samples(4, 15, 3)
    vref = np.full(15, 0.1)
    for backend in BACKENDS:
        ev = RolloutEvaluator(phys_model, PATH, CW, CONS, backend=backend)
        assert np.allclose(ev.mppi_costs(X0, UP, U, vref), oracle_mppi(phys_model, U, vref), rtol=1e-11)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_compiled_and_python_agree_at_full_size():
    model = random_model(4)
    U, th = samples(300, 60, 4)
    vref = np.full(60, 0.1)
    a = RolloutEvaluator(model, PATH, CW, CONS, backend="compiled")
    b = RolloutEvaluator(model, PATH, CW, CONS, backend="python")
    assert np.allclose(a.mppi_costs(X0, UP, U, vref), b.mppi_costs(X0, UP, U, vref), rtol=1e-12)
    pid = PidState(u_prev=UP)
    args = (np.array(LAW.u_bias), np.array(LAW.error_signs), vref)
    assert np.allclose(a.pid_costs(X0, UP, th, pid, *args), b.pid_costs(X0, UP, th, pid, *args), rtol=1e-12)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_compiled_nearest_point_far_from_path():
    # states far off the path exercise the block pruning in the compiled search
    model = random_model(5, scale=0.0)
    rng = np.random.default_rng(5)
    for _ in range(20):
        x0 = X0.copy()
        x0[:2] = rng.uniform(-4, 6, 2)
        U = UP + rng.normal(size=(3, 10, 2)) * [8.0, 6.0]
        vref = np.full(10, 0.1)
        a = RolloutEvaluator(model, PATH, CW, CONS, backend="compiled").mppi_costs(x0, UP, U, vref)
        b = RolloutEvaluator(model, PATH, CW, CONS, backend="python").mppi_costs(x0, UP, U, vref)
        assert np.allclose(a, b, rtol=1e-13)


def test_workers_do_not_change_results():
    model = random_model(6)
    U, th = samples(3 * CHUNK + 17, 12, 6)
    vref = np.full(12, 0.1)
    serial = RolloutEvaluator(model, PATH, CW, CONS, workers=1)
    pooled = RolloutEvaluator(model, PATH, CW, CONS, workers=3)
    assert np.array_equal(serial.mppi_costs(X0, UP, U, vref), pooled.mppi_costs(X0, UP, U, vref))
    pid = PidState(u_prev=UP)
    args = (np.array(LAW.u_bias), np.array(LAW.error_signs), vref)
    assert np.array_equal(serial.pid_costs(X0, UP, th, pid, *args), pooled.pid_costs(X0, UP, th, pid, *args))
    pooled.close()


def test_unknown_backend_and_kernel_size_limit():
    with pytest.raises(ValueError):
        RolloutEvaluator(random_model(0), PATH, CW, CONS, backend="gpu")
    if "compiled" in BACKENDS:
        from conftest import PHYS, U_SCALE, X_SCALE
        from mppi_pid.dynamics import MlpParams, ResidualDynamicsModel
        wide = MlpParams.init_uniform(np.concatenate([X_SCALE, U_SCALE]), 3, hidden=300, rng=0)
        with pytest.raises(ValueError):
            RolloutEvaluator(ResidualDynamicsModel(PHYS, wide), PATH, CW, CONS, backend="compiled")


def test_pure_python_selected_by_environment():
    env = dict(os.environ, MPPI_PID_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import mppi_pid; print(mppi_pid.DEFAULT_BACKEND, sorted(mppi_pid.BACKENDS))"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split()[0] == "python"
    assert DEFAULT_BACKEND in BACKENDS
