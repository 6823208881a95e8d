import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import PHYS, X_SCALE, U_SCALE, random_model
from mppi_pid.dynamics import (
    DEG2RAD, ConfigurationError, DegenerateHeadingError, MlpParams, PhysicalParams, ResidualDynamicsModel,
    euler_step, mlp_forward, normalize_trig, phys_derivative, residual_step, residual_weight, rollout,
)

finite = st.floats(-5, 5, allow_nan=False)
angles = st.floats(-math.pi, math.pi)


def test_zero_state_zero_input_has_zero_derivative():
    assert np.array_equal(phys_derivative(np.zeros(7), np.zeros(2), PHYS), np.zeros(7))


def test_pure_forward_speed_decays_at_k_v():
    x = np.array([0, 0, 0, 1, 1.0, 0, 0])
    d = phys_derivative(x, np.zeros(2), PhysicalParams(0.0025, 1.0, 2.5, 1.5))
    assert np.allclose(d, [1, 0, 0, 0, -1, 0, 0], atol=0, rtol=0)


def test_hand_evaluated_derivative():
    s, c = math.sin(0.3), math.cos(0.3)
    x = np.array([1.0, 2.0, s, c, 0.2, 0.05, 0.1])
    u = np.array([40.0, 20.0])
    V = math.hypot(0.2, 0.05)
    want = [0.2, 0.05, c * 0.1, -s * 0.1,
            0.0025 * 40 * c - 0.2 - 0.1 * 0.05,
            0.0025 * 40 * s - 0.05 + 0.1 * 0.2,
            2.5 * V * 20 * DEG2RAD - 1.5 * 0.1]
    assert np.allclose(phys_derivative(x, u, PHYS), want, rtol=1e-14, atol=1e-16)


@given(V=st.floats(0, 2), psi=angles, a=st.floats(0, 100), r=finite)
def test_velocity_rows_reduce_to_scalar_speed_law(V, psi, a, r):
    c, s = math.cos(psi), math.sin(psi)
    x = np.array([0, 0, s, c, V * c, V * s, r])
    d = phys_derivative(x, np.array([a, 0.0]), PHYS)
    assert abs(d[4] * c + d[5] * s - (PHYS.k_a * a - PHYS.k_V * V)) < 1e-10


def test_euler_step_identity_for_zero_derivative_and_accelerates_from_rest():
    x = np.array([0.5, -0.2, 0, 1, 0, 0, 0])
    assert np.array_equal(euler_step(x, np.zeros(2), PHYS, 0.1), x)
    assert euler_step(x, np.array([50.0, 0]), PHYS, 0.1)[4] > 0
    with pytest.raises(ValueError):
        euler_step(x, np.zeros(2), PHYS, 0.0)


def test_euler_step_does_not_normalize():
    x = np.array([0, 0, 0, 1, 0, 0, 1.0])
    xn = euler_step(x, np.zeros(2), PHYS, 0.5)
    assert xn[2] ** 2 + xn[3] ** 2 > 1


def test_normalize_trig_examples():
    assert np.array_equal(normalize_trig([0, 0, 0, 1, 0, 0, 0])[2:4], [0, 1])
    assert np.array_equal(normalize_trig([0, 0, 0, 2, 0, 0, 0])[2:4], [0, 1])
    assert np.allclose(normalize_trig([0, 0, 0.3, 0.4, 0, 0, 0])[2:4], [0.6, 0.8], rtol=1e-15)
    with pytest.raises(DegenerateHeadingError):
        normalize_trig(np.zeros(7))


def test_residual_weight_examples():
    x = np.zeros(7)
    assert residual_weight(x, 0.2) == 0.0
    x[4] = 0.2
    assert residual_weight(x, 0.2) == 0.5
    x[4] = 0.1
    assert residual_weight(x, 0.2) == pytest.approx(0.2, rel=1e-15)
    with pytest.raises(ValueError):
        residual_weight(x, 0.0)


@given(v1=st.floats(0, 10), v2=st.floats(0, 10))
def test_residual_weight_monotone_and_bounded(v1, v2):
    a, b = sorted((v1, v2))
    wa = residual_weight(np.array([0, 0, 0, 1, a, 0, 0]), 0.2)
    wb = residual_weight(np.array([0, 0, 0, 1, 0, b, 0]), 0.2)
    assert 0 <= wa <= wb < 1


def test_zero_network_gives_zero_residual():
    nn = MlpParams.zeros(np.ones(9), 3)
    assert np.array_equal(mlp_forward(nn, np.ones(7), np.ones(2)), np.zeros(3))


def test_single_unit_hand_network_is_relu_of_vx():
    W0 = np.zeros((50, 9))
    W0[0, 4] = 1.0
    W1 = np.zeros((50, 50))
    W1[0, 0] = 1.0
    W2 = np.zeros((3, 50))
    W2[0, 0] = 1.0
    nn = MlpParams((W0, W1, W2), (np.zeros(50), np.zeros(50), np.zeros(3)), np.ones(9))
    for vx in (-0.7, 0.0, 0.3):
        x = np.array([0, 0, 0, 1, vx, 0, 0])
        assert np.array_equal(mlp_forward(nn, x, np.zeros(2)), [max(vx, 0.0), 0, 0])


def test_mlp_input_dimension_mismatch_is_configuration_error():
    nn = MlpParams.zeros(np.ones(9), 3)
    with pytest.raises(ConfigurationError):
        mlp_forward(nn, np.ones(6), np.ones(2))


@given(alpha=st.floats(0.5, 2.0), seed=st.integers(0, 50))
def test_mlp_is_positively_homogeneous_without_biases(alpha, seed):
    nn = MlpParams.init_uniform(np.ones(9), 3, rng=seed)
    nn = MlpParams(nn.weights, tuple(np.zeros_like(b) for b in nn.biases), nn.in_scale)
    z = np.random.default_rng(seed).normal(size=9)
    assert np.allclose(nn.forward_normalized(alpha * z), alpha * nn.forward_normalized(z), rtol=1e-12, atol=1e-14)


def test_zero_network_step_equals_normalized_euler_rollout(phys_model):
    rng = np.random.default_rng(3)
    U = rng.normal([40, 0], [20, 30], size=(60, 2))
    x0 = np.array([0, 0, 0, 1, 0.1, 0, 0])
    a = rollout(phys_model.step, x0, U)
    b = rollout(lambda x, u: normalize_trig(euler_step(x, u, PHYS, 0.0667)), x0, U)
    assert np.array_equal(a, b)


def test_residual_vanishes_at_zero_speed_and_respects_mask():
    m = random_model(1)
    x = np.array([0.3, 0.1, 0.6, 0.8, 0, 0, 0.2])
    u = np.array([40.0, 10.0])
    assert np.array_equal(m.residual(x, u), np.zeros(7))
    x[4] = 0.15
    res = m.residual(x, u)
    assert np.all(res[:4] == 0) and np.any(res[4:] != 0)


@settings(max_examples=50)
@given(seed=st.integers(0, 1000))
def test_rollouts_stay_on_trig_manifold(seed):
    rng = np.random.default_rng(seed)
    m = random_model(seed % 5)
    psi = rng.uniform(-math.pi, math.pi)
    x = np.array([0, 0, math.sin(psi), math.cos(psi), 0.1, 0.0, 0.0])
    for u in rng.normal([40, 0], [30, 40], size=(30, 2)):
        x = residual_step(m, x, u)
        assert abs(x[2] ** 2 + x[3] ** 2 - 1) < 1e-12


def test_step_is_batched_consistently(model):
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(size=(5, 2)), np.tile([0.6, 0.8], (5, 1)), rng.normal(0.1, 0.05, (5, 3))])
    U = rng.normal([40, 0], [10, 20], size=(5, 2))
    batch = model.step(X, U)
    for i in range(5):
        assert np.allclose(batch[i], model.step(X[i], U[i]), rtol=1e-13, atol=1e-15)


def test_model_json_round_trip_is_exact(tmp_path, model):
    p = tmp_path / "m.json"
    model.save(p)
    back = ResidualDynamicsModel.load(p)
    for a, b in zip(model.nn.flat(), back.nn.flat()):
        assert a == b
    assert back.phys == model.phys and np.array_equal(back.mask, model.mask)
    x = np.array([0.1, 0.2, 0.6, 0.8, 0.1, 0.01, 0.05])
    assert np.array_equal(back.step(x, [40, 5]), model.step(x, [40, 5]))


def test_model_rejects_bad_schema_and_shapes(model):
    d = model.to_dict()
    d["schema_version"] = 99
    with pytest.raises(ConfigurationError):
        ResidualDynamicsModel.from_dict(d)
    with pytest.raises(ConfigurationError):
        ResidualDynamicsModel(PHYS, model.nn, mask=np.array([0, 0, 0, 0, 1, 1, 0]))
    with pytest.raises(ConfigurationError):
        PhysicalParams(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        ResidualDynamicsModel.physical_only(PHYS, X_SCALE, U_SCALE, v_th=0.0)


def test_flat_round_trip(model):
    theta = model.nn.flat()
    assert np.array_equal(model.nn.with_flat(theta).flat(), theta)
    assert theta.size == 9 * 50 + 50 + 50 * 50 + 50 + 50 * 3 + 3
