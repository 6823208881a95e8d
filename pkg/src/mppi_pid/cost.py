"""Path-following stage cost with the (discontinuous) goal-region speed penalty."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import IC, IS, IVX, IVY, IX, IY


@dataclass(frozen=True)
class CostWeights:
    w_V: float = 50.0
    w_path: float = 500.0
    w_align: float = 10.0
    w_du: float = 0.05
    w_goal: float = 50000.0
    eps_goal_pos: float = 0.10
    eps_goal_vel: float = 0.04
    V_ref: float = 0.10

    def __post_init__(self):
        for name in ("w_V", "w_path", "w_align", "w_du", "w_goal"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.eps_goal_pos > 0 and self.eps_goal_vel > 0):
            raise ValueError("goal thresholds must be > 0")

    def v_ref_schedule(self, N: int, t0: int = 0) -> np.ndarray:
        """Reference speed for steps ``t0 .. t0+N-1``; constant by default."""
        return np.full(N, self.V_ref)

    def as_array(self) -> np.ndarray:
        return np.array([self.w_V, self.w_path, self.w_align, self.w_du, self.w_goal,
                         self.eps_goal_pos, self.eps_goal_vel])


def goal_penalty(x, p_goal, eps_pos: float, eps_vel: float) -> float:
    speed = math.hypot(x[IVX], x[IVY])
    if math.hypot(x[IX] - p_goal[0], x[IY] - p_goal[1]) <= eps_pos and speed >= eps_vel:
        return (speed - eps_vel) ** 2
    return 0.0


def stage_cost(x, u, u_prev, q, cw: CostWeights, p_goal, V_ref: float | None = None) -> float:
    """Stage cost for state ``x`` given its nearest-point query ``q``."""
    V_ref = cw.V_ref if V_ref is None else V_ref
    speed = math.hypot(x[IVX], x[IVY])
    dx, dy = x[IX] - q.point[0], x[IY] - q.point[1]
    align = max(0.0, 1.0 - (x[IC] * q.tangent[0] + x[IS] * q.tangent[1]))
    du0, du1 = u[0] - u_prev[0], u[1] - u_prev[1]
    return (
        cw.w_V * (speed - V_ref) ** 2
        + cw.w_path * (dx * dx + dy * dy)
        + cw.w_align * align
        + cw.w_du * (du0 * du0 + du1 * du1)
        + cw.w_goal * goal_penalty(x, p_goal, cw.eps_goal_pos, cw.eps_goal_vel)
    )
