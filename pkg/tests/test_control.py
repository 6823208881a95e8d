import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mppi_pid.control import (
    TABLE3_GAINS, TABLE3_SIGMA_THETA, DegenerateWeightsError, InfeasibleConstraintsError, InputConstraints,
    MppiPidPlanner, MppiPlanner, OptimizerConfig, PidLaw, PidState, error_basis, ess_of, pid_step,
    project_input, project_sequence, sequential_clip, sequential_clip_difference, weights_and_update,
    with_sigma_theta,
)
from mppi_pid.cost import CostWeights

C = InputConstraints()


@st.composite
def box_case(draw):
    f = st.floats(-50, 50, allow_nan=False)
    lo, hi = sorted((draw(f), draw(f)))
    dlo = -draw(st.floats(0, 10))
    dhi = draw(st.floats(0, 10))
    up = draw(st.floats(lo, hi))
    u = draw(st.floats(-80, 80))
    return InputConstraints((lo, lo), (hi, hi), (dlo, dlo), (dhi, dhi)), np.array([up, up]), np.array([u, -u])


def test_table_bounds():
    assert C.u_min == (0.0, -65.0) and C.u_max == (100.0, 65.0)
    assert C.du_max[0] == pytest.approx(32 * 0.0667) and C.du_max[1] == pytest.approx(100 * 0.0667)
    c2 = InputConstraints.from_rates((0, -65), (100, 65), (32, 100), 0.0667)
    assert np.allclose(c2.as_array(), C.as_array(), rtol=1e-15)


@given(box_case())
def test_sequential_clip_equals_closed_form_clamp(case):
    c, up, u = case
    lo, hi = c.bounds(up)
    want = np.minimum(np.maximum(u, lo), hi)
    assert np.array_equal(sequential_clip(u, up, c), want)
    assert np.array_equal(project_input(u, up, c), want)
    assert np.allclose(sequential_clip_difference(u, up, c), want, rtol=0, atol=1e-12)


@settings(max_examples=30)
@given(box_case())
def test_projection_matches_grid_search(case):
    c, up, u = case
    lo, hi = c.bounds(up)
    p = project_input(u, up, c)
    for j in range(2):
        grid = np.arange(lo[j], hi[j] + 1e-3, 1e-3)
        grid = grid[grid <= hi[j]]
        best = grid[np.argmin(np.abs(grid - u[j]))]
        assert abs(best - p[j]) <= 1e-3 + 1e-9


@given(box_case())
def test_projection_idempotent_and_feasible(case):
    c, up, u = case
    p = project_input(u, up, c)
    lo, hi = c.bounds(up)
    assert np.all(lo <= p) and np.all(p <= hi)
    assert np.array_equal(project_input(p, up, c), p)


def test_empty_feasible_set_is_reported():
    c = InputConstraints((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (0.5, 0.5))
    with pytest.raises(InfeasibleConstraintsError):
        project_input([0.5, 0.5], [5.0, 5.0], c)
    with pytest.raises(InfeasibleConstraintsError):
        InputConstraints((1.0, 0.0), (0.0, 1.0), (-1.0, -1.0), (1.0, 1.0))


def test_project_sequence_chains_rate_limits():
    U = np.array([[100.0, 65.0]] * 5)
    P = project_sequence(U, [40.0, 0.0], C)
    assert np.allclose(np.diff(np.vstack([[40.0, 0.0], P]), axis=0), [C.du_max] * 5, rtol=1e-12)


def test_error_basis_reproduces_pid_law():
    rng = np.random.default_rng(0)
    e, i, d = rng.normal(size=(3, 3))
    th = rng.normal(size=9)
    E = error_basis(e, i, d)
    want = [th[0] * e[0] + th[1] * i[0] + th[2] * d[0],
            th[3] * e[1] + th[4] * i[1] + th[5] * d[1] + th[6] * e[2] + th[7] * i[2] + th[8] * d[2]]
    assert np.allclose(E @ th, want, rtol=1e-14)


def test_pid_step_integral_derivative_and_projection():
    wide = InputConstraints((-1e6, -1e6), (1e6, 1e6), (-1e6, -1e6), (1e6, 1e6))
    th = np.arange(1.0, 10.0)
    s0 = PidState(u_prev=np.array([40.0, 0.0]))
    u1, s1, E1 = pid_step(th, s0, [0.1, 0.2, 0.3], (40.0, 0.0), 0.5, wide)
    assert np.array_equal(s1.integral, [0.05, 0.1, 0.15])
    assert np.array_equal(E1[:, [2, 5, 8]], np.zeros((2, 3)))
    assert u1[0] == pytest.approx(40 + 1 * 0.1 + 2 * 0.05)
    u2, s2, E2 = pid_step(th, s1, [0.2, 0.2, 0.1], (40.0, 0.0), 0.5, wide)
    assert E2[0, 2] == pytest.approx(0.2) and E2[1, 8] == pytest.approx(-0.4)
    assert np.array_equal(s2.u_prev, u2)
    u3, _, _ = pid_step(th * 1e4, s1, [1.0, 1.0, 1.0], (40.0, 0.0), 0.5, C)
    assert np.array_equal(u3, project_input(u3, s1.u_prev, C))


def test_weights_constant_costs_give_plain_mean():
    eps = np.random.default_rng(1).normal(size=(100, 4))
    m, batch = weights_and_update(np.full(100, 3.0), eps, 1.0)
    assert np.allclose(m, eps.mean(axis=0), rtol=1e-13, atol=1e-15)
    assert ess_of(batch.weights) == pytest.approx(100)


def test_weighted_mean_matches_direct_formula_and_is_order_insensitive():
    rng = np.random.default_rng(2)
    eps = rng.normal(size=(257, 5))
    J = rng.exponential(size=257)
    perm = rng.permutation(257)
    a, batch = weights_and_update(J, eps, 0.7)
    w = np.exp(-J / 0.7)
    assert np.allclose(a, (w @ eps) / w.sum(), rtol=1e-13, atol=1e-15)
    assert np.allclose(batch.normalized_weights.sum(), 1.0, rtol=1e-15)
    b, _ = weights_and_update(J[perm], eps[perm], 0.7)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)
    assert np.array_equal(a, weights_and_update(J, eps, 0.7)[0])


def test_weights_degenerate_and_validation():
    with pytest.raises(ValueError):
        weights_and_update(np.zeros(3), np.zeros((3, 1)), 0.0)
    with pytest.raises(DegenerateWeightsError):
        weights_and_update(np.array([np.nan, np.nan]), np.zeros((2, 1)), 1.0)


def test_ess_examples():
    assert ess_of([1, 1, 2]) == pytest.approx(16 / 6)
    assert ess_of([1, 1e-300, 1e-300]) == pytest.approx(1.0)


def test_optimizer_config_defaults_and_validation():
    cfg = OptimizerConfig()
    assert (cfg.N, cfg.I, cfg.N_iter, cfg.lam, cfg.sigma_u) == (60, 2048, 3, 1.0, (8.0, 6.0))
    assert cfg.sigma_theta == TABLE3_SIGMA_THETA
    assert TABLE3_GAINS == (50.0, 0.20, 10.0, 100.0, 0.10, 5.0, 150.0, 0.10, 3.0)
    for bad in (dict(I=0), dict(N=0), dict(lam=0.0), dict(sigma_u=(-1.0, 1.0))):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)
    a = cfg.rng(3, 1).standard_normal(4)
    assert np.array_equal(a, cfg.rng(3, 1).standard_normal(4))
    assert not np.array_equal(a, cfg.rng(3, 2).standard_normal(4))
    assert not np.array_equal(a, cfg.rng(4, 1).standard_normal(4))


class QuadraticInputs:
    """Cost ``sum_t |u_t - target|^2`` of the projected sequence, model free."""

    def __init__(self, target, c):
        self.target, self.c = np.asarray(target), c

    def mppi_costs(self, x0, u_prev, U, vref):
        out = np.empty(len(U))
        for i, seq in enumerate(U):
            P = project_sequence(seq, u_prev, self.c)
            out[i] = np.sum((P - self.target) ** 2)
        return out


def test_mppi_moves_nominal_toward_cheaper_inputs():
    wide = InputConstraints((-1e3, -1e3), (1e3, 1e3), (-1e3, -1e3), (1e3, 1e3))
    cfg = OptimizerConfig(N=5, I=512, N_iter=3, lam=50.0, sigma_u=(4.0, 4.0))
    planner = MppiPlanner(QuadraticInputs([45.0, 3.0], wide), cfg, wide, CostWeights(), (40.0, 0.0))
    u0, info = planner.plan(np.zeros(7), np.array([40.0, 0.0]))
    assert abs(u0[0] - 45.0) < 2.5 and abs(u0[1] - 3.0) < 2.5
    assert len(info["ess"]) == 3 and all(1 <= e <= 512 for e in info["ess"])
    assert np.array_equal(planner.nominal[-1], planner.nominal[-2])


class QuadraticGains:
    def __init__(self, target):
        self.target = np.asarray(target)

    def pid_costs(self, x0, u_prev, thetas, pid, u_bias, signs, vref):
        return np.sum((thetas - self.target) ** 2, axis=1)


def test_mppi_pid_gain_update_and_final_pid_step():
    target = np.asarray(TABLE3_GAINS) + 1.0
    cfg = OptimizerConfig(N=5, I=4096, N_iter=3, lam=5.0, sigma_theta=(1.0,) * 9)
    planner = MppiPidPlanner(QuadraticGains(target), cfg, C, CostWeights(), PidLaw())
    pid = PidState(u_prev=np.array([40.0, 0.0]))
    u0, new_pid, info = planner.plan(np.zeros(7), pid, [0.01, 0.02, -0.01], 0.0667)
    assert np.max(np.abs(info["theta"] - target)) < 0.7
    want, _, _ = pid_step(info["theta"], pid, [0.01, 0.02, -0.01], (40.0, 0.0), 0.0667, C)
    assert np.array_equal(u0, want)
    assert np.array_equal(new_pid.u_prev, u0)


def test_zero_gain_noise_leaves_gains_unchanged():
    cfg = with_sigma_theta(OptimizerConfig(N=5, I=16), [0.0] * 9)
    planner = MppiPidPlanner(QuadraticGains(np.zeros(9)), cfg, C, CostWeights(), PidLaw())
    theta, _ = planner.optimize(np.zeros(7), PidState(u_prev=np.array([40.0, 0.0])))
    assert np.array_equal(theta, np.asarray(TABLE3_GAINS))
