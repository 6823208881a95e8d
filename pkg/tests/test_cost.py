import math

import numpy as np
import pytest

from mppi_pid.cost import CostWeights, goal_penalty, stage_cost
from mppi_pid.path import build_hermite_path, nearest_point

CW = CostWeights()
PATH = build_hermite_path((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), 800)


def test_defaults_match_parameter_table():
    assert CW.as_array().tolist() == [50.0, 500.0, 10.0, 0.05, 50000.0, 0.10, 0.04]
    assert CW.V_ref == 0.10
    assert np.array_equal(CW.v_ref_schedule(60), np.full(60, 0.1))


def test_invalid_weights():
    with pytest.raises(ValueError):
        CostWeights(w_path=-1)
    with pytest.raises(ValueError):
        CostWeights(eps_goal_vel=0)


def test_goal_penalty_cases():
    g = np.array([2.0, 0.0])
    inside_fast = np.array([1.95, 0, 0, 1, 0.1, 0, 0])
    assert goal_penalty(inside_fast, g, 0.1, 0.04) == pytest.approx(0.06 ** 2, rel=1e-12)
    inside_slow = inside_fast.copy()
    inside_slow[4] = 0.03
    assert goal_penalty(inside_slow, g, 0.1, 0.04) == 0.0
    outside = inside_fast.copy()
    outside[0] = 1.5
    assert goal_penalty(outside, g, 0.1, 0.04) == 0.0


def test_goal_penalty_is_discontinuous_at_threshold():
    g = np.array([0.0, 0.0])
    x = np.zeros(7)
    x[3] = 1.0
    x[4] = 0.04
    assert goal_penalty(x, g, 0.1, 0.04) == 0.0
    x[4] = 0.04 - 1e-12
    assert goal_penalty(x, g, 0.1, 0.04) == 0.0
    x[0] = 0.1 + 1e-9
    x[4] = 0.5
    assert goal_penalty(x, g, 0.1, 0.04) == 0.0


def test_stage_cost_hand_value():
    psi = 0.2
    x = np.array([1.0, 0.05, math.sin(psi), math.cos(psi), 0.12, 0.0, 0.0])
    q = nearest_point(PATH, x[:2])
    u, up = np.array([41.0, 3.0]), np.array([40.0, 1.0])
    want = (50 * (0.12 - 0.1) ** 2 + 500 * ((1.0 - q.point[0]) ** 2 + 0.05 ** 2)
            + 10 * (1 - math.cos(psi)) + 0.05 * (1 + 4))
    assert stage_cost(x, u, up, q, CW, PATH.goal) == pytest.approx(want, rel=1e-12)


def test_stage_cost_zero_on_path_at_reference():
    x = np.array([PATH.points[300, 0], 0.0, 0.0, 1.0, 0.1, 0.0, 0.0])
    q = nearest_point(PATH, x[:2])
    u = np.array([40.0, 0.0])
    assert stage_cost(x, u, u, q, CW, PATH.goal) == pytest.approx(0.0, abs=1e-12)
