"""PID law, input projection, and the two sampling-based planners.

``MppiPlanner`` samples whole input sequences (dimension ``N * n_u``);
``MppiPidPlanner`` samples the 9 PID gains and generates inputs through the
PID law inside each rollout. Both share :func:`weights_and_update`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .path import pid_errors

N_GAINS = 9
GAIN_NAMES = ("Kp_speed", "Ki_speed", "Kd_speed", "Kp_lat", "Ki_lat", "Kd_lat", "Kp_ang", "Ki_ang", "Kd_ang")
TABLE3_GAINS = (50.0, 0.20, 10.0, 100.0, 0.10, 5.0, 150.0, 0.10, 3.0)
TABLE3_SIGMA_THETA = (10.0, 0.10, 5.0, 30.0, 0.05, 2.0, 20.0, 0.05, 2.0)


class InfeasibleConstraintsError(ValueError):
    pass


class DegenerateWeightsError(RuntimeError):
    pass


@dataclass(frozen=True)
class InputConstraints:
    u_min: tuple = (0.0, -65.0)
    u_max: tuple = (100.0, 65.0)
    du_min: tuple = (-32.0 * 0.0667, -100.0 * 0.0667)
    du_max: tuple = (32.0 * 0.0667, 100.0 * 0.0667)

    def __post_init__(self):
        a = self.as_array()
        if np.any(a[0] > a[1]) or np.any(a[2] > a[3]):
            raise InfeasibleConstraintsError("lower bounds exceed upper bounds")

    @classmethod
    def from_rates(cls, u_min, u_max, rate_max, h):
        """Symmetric one-step bounds ``|du| <= rate * h``."""
        r = np.asarray(rate_max, dtype=float) * h
        return cls(tuple(u_min), tuple(u_max), tuple(-r), tuple(r))

    def as_array(self) -> np.ndarray:
        return np.array([self.u_min, self.u_max, self.du_min, self.du_max], dtype=float)

    def bounds(self, u_prev):
        """Closed-form box ``[L(u_prev), U(u_prev)]`` of the feasible set."""
        a = self.as_array()
        up = np.asarray(u_prev, dtype=float)
        return np.maximum(a[0], up + a[2]), np.minimum(a[1], up + a[3])


def sequential_clip(u, u_prev, c: InputConstraints) -> np.ndarray:
    """Rate clip followed by box clip, with the rate clip written on shifted bounds."""
    a = c.as_array()
    up = np.asarray(u_prev, dtype=float)
    v = np.minimum(np.maximum(np.asarray(u, dtype=float), up + a[2]), up + a[3])
    return np.minimum(np.maximum(v, a[0]), a[1])


def sequential_clip_difference(u, u_prev, c: InputConstraints) -> np.ndarray:
    """Same as :func:`sequential_clip` but clipping the increment ``u - u_prev``."""
    a = c.as_array()
    up = np.asarray(u_prev, dtype=float)
    return np.clip(up + np.clip(np.asarray(u, dtype=float) - up, a[2], a[3]), a[0], a[1])


def project_input(u, u_prev, c: InputConstraints) -> np.ndarray:
    """Euclidean projection onto ``U(u_prev)``; raises if the set is empty."""
    lo, hi = c.bounds(u_prev)
    if np.any(lo > hi):
        raise InfeasibleConstraintsError(f"empty constraint set for u_prev={np.asarray(u_prev)}")
    return sequential_clip(u, u_prev, c)


def project_sequence(U, u_prev, c: InputConstraints) -> np.ndarray:
    out = np.empty_like(np.asarray(U, dtype=float))
    up = np.asarray(u_prev, dtype=float)
    for t, u in enumerate(U):
        up = out[t] = project_input(u, up, c)
    return out


@dataclass(frozen=True)
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_error: np.ndarray | None = None
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(2))


def error_basis(e, integral, deriv) -> np.ndarray:
    """``E`` with ``u = u_bias + E @ theta`` for the gain ordering of ``GAIN_NAMES``."""
    E = np.zeros((2, N_GAINS))
    E[0, 0:3] = e[0], integral[0], deriv[0]
    E[1, 3:6] = e[1], integral[1], deriv[1]
    E[1, 6:9] = e[2], integral[2], deriv[2]
    return E


def pid_step(gains, state: PidState, errors, u_bias, h: float, c: InputConstraints):
    """One PID update: returns ``(u, new_state, E)``.

    Integral is the rectangular sum including the current error; the
    derivative is a backward difference, zero on the very first call.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    e = np.asarray(errors, dtype=float)
    integral = state.integral + e * h
    deriv = np.zeros(3) if state.prev_error is None else (e - state.prev_error) / h
    E = error_basis(e, integral, deriv)
    raw = np.asarray(u_bias, dtype=float) + E @ np.asarray(gains, dtype=float)
    u = project_input(raw, state.u_prev, c)
    return u, PidState(integral, e, u), E


@dataclass(frozen=True)
class PidLaw:
    """Error extraction for the path-following PID.

    ``error_signs`` multiplies ``(e_speed, e_lat, e_ang)`` before the PID; the
    default ``(1, -1, -1)`` makes positive steering gains stabilizing for a
    left-pointing normal and a positive steering-to-yaw-rate gain.
    """

    u_bias: tuple = (40.0, 0.0)
    error_signs: tuple = (1.0, -1.0, -1.0)

    def errors(self, path, x, V_ref, query=None) -> np.ndarray:
        return np.asarray(pid_errors(path, x, V_ref, query)) * np.asarray(self.error_signs)


@dataclass(frozen=True)
class OptimizerConfig:
    N: int = 60
    I: int = 2048
    N_iter: int = 3
    lam: float = 1.0
    sigma_u: tuple = (8.0, 6.0)
    sigma_theta: tuple = TABLE3_SIGMA_THETA
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.I < 1 or self.N_iter < 1:
            raise ValueError("N, I and N_iter must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if np.any(np.asarray(self.sigma_u) < 0) or np.any(np.asarray(self.sigma_theta) < 0):
            raise ValueError("noise standard deviations must be >= 0")

    def rng(self, step: int, iteration: int) -> np.random.Generator:
        """Independent stream per (control step, iteration)."""
        return np.random.default_rng([self.seed, step, iteration])


@dataclass(frozen=True)
class SampleBatch:
    perturbations: np.ndarray
    costs: np.ndarray
    weights: np.ndarray
    normalized_weights: np.ndarray


def weights_and_update(costs, perturbations, lam: float):
    """Exponentially weighted mean of the perturbations.

    Weights are ``exp(-(J - min J) / lam)``. Reductions run over the sample
    axis in index order, so the result depends only on the sample ordering,
    which is fixed by the seed and never by the number of workers.
    """
    J = np.asarray(costs, dtype=float)
    eps = np.asarray(perturbations, dtype=float)
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    w = np.exp(-(J - J.min()) / lam)
    total = math.fsum(w)
    if not total > 0:
        raise DegenerateWeightsError("all weights underflowed")
    flat = eps.reshape(len(J), -1)
    m_hat = np.sum(w[:, None] * flat, axis=0) / total
    return m_hat.reshape(eps.shape[1:]), SampleBatch(eps, J, w, w / total)


def ess_of(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return math.fsum(w) ** 2 / math.fsum(w * w)


class MppiPlanner:
    """Conventional MPPI over the input sequence."""

    def __init__(self, evaluator, cfg: OptimizerConfig, constraints: InputConstraints, cw, u_init):
        self.ev = evaluator
        self.cfg = cfg
        self.c = constraints
        self.cw = cw
        self.nominal = np.tile(np.asarray(u_init, dtype=float), (cfg.N, 1))

    def plan(self, x0, u_prev, step: int = 0):
        cfg = self.cfg
        sigma = np.asarray(cfg.sigma_u, dtype=float)
        vref = self.cw.v_ref_schedule(cfg.N, step)
        ess = []
        for it in range(cfg.N_iter):
            eps = cfg.rng(step, it).standard_normal((cfg.I, cfg.N, 2)) * sigma
            J = self.ev.mppi_costs(x0, u_prev, self.nominal[None] + eps, vref)
            m_hat, batch = weights_and_update(J, eps, cfg.lam)
            ess.append(ess_of(batch.weights))
            self.nominal = project_sequence(self.nominal + m_hat, u_prev, self.c)
        u0 = self.nominal[0].copy()
        self.nominal = np.concatenate([self.nominal[1:], self.nominal[-1:]])
        return u0, {"ess": ess}


class MppiPidPlanner:
    """MPPI over PID gains held constant across the horizon."""

    def __init__(self, evaluator, cfg: OptimizerConfig, constraints: InputConstraints, cw,
                 law: PidLaw, theta0=TABLE3_GAINS):
        self.ev = evaluator
        self.cfg = cfg
        self.c = constraints
        self.cw = cw
        self.law = law
        self.theta = np.asarray(theta0, dtype=float).copy()

    def optimize(self, x0, pid: PidState, step: int = 0):
        cfg = self.cfg
        sigma = np.asarray(cfg.sigma_theta, dtype=float)
        vref = self.cw.v_ref_schedule(cfg.N, step)
        ess = []
        for it in range(cfg.N_iter):
            eps = cfg.rng(step, it).standard_normal((cfg.I, N_GAINS)) * sigma
            J = self.ev.pid_costs(x0, pid.u_prev, self.theta[None] + eps, pid,
                                  self.law.u_bias, self.law.error_signs, vref)
            m_hat, batch = weights_and_update(J, eps, cfg.lam)
            ess.append(ess_of(batch.weights))
            self.theta = self.theta + m_hat
        return self.theta.copy(), ess

    def plan(self, x0, pid: PidState, errors, h: float, step: int = 0):
        """Optimize gains then apply one PID step from the live state ``pid``."""
        theta, ess = self.optimize(x0, pid, step)
        u0, new_pid, E = pid_step(theta, pid, errors, self.law.u_bias, h, self.c)
        return u0, new_pid, {"ess": ess, "theta": theta, "E": E}


def fixed_pid_plan(theta, pid: PidState, errors, law: PidLaw, h, c):
    return pid_step(theta, pid, errors, law.u_bias, h, c)


def with_sigma_theta(cfg: OptimizerConfig, sigma) -> OptimizerConfig:
    return replace(cfg, sigma_theta=tuple(float(s) for s in sigma))
