"""Forklift dynamics: physical model, Euler step, MLP residual and model I/O.

State layout is ``[X, Y, s, c, vX, vY, r]`` where ``(s, c)`` are sin/cos of
the yaw. The control input is ``[a, delta]`` with the accelerator command
``a`` dimensionless and the steering angle ``delta`` in degrees.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IX, IY, IS, IC, IVX, IVY, IR = range(7)
IA, IDELTA = 0, 1
NX, NU = 7, 2

STATE_NAMES = ("X", "Y", "s", "c", "vX", "vY", "r")
INPUT_NAMES = ("a", "delta")

FORKLIFT_MASK = (0, 0, 0, 0, 1, 1, 1)
SCHEMA_VERSION = 1
DEG2RAD = math.pi / 180.0


class ConfigurationError(ValueError):
    """Inconsistent model parameters or array shapes."""


class DegenerateHeadingError(ValueError):
    """Raised when ``s = c = 0`` so the heading cannot be normalized."""


@dataclass(frozen=True)
class PhysicalParams:
    k_a: float
    k_V: float
    k_delta: float
    k_r: float

    def __post_init__(self):
        for name in ("k_a", "k_V", "k_delta", "k_r"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigurationError(f"{name} must be finite and > 0, got {val}")

    def as_array(self) -> np.ndarray:
        return np.array([self.k_a, self.k_V, self.k_delta, self.k_r])


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights of a ``linear-ReLU-linear-ReLU-linear`` network.

    ``weights[l]`` has shape ``(out, in)``. Inputs are divided by
    ``in_scale`` before the first layer; the output stays in normalized
    units and callers rescale it.
    """

    weights: tuple
    biases: tuple
    in_scale: np.ndarray

    def __post_init__(self):
        ws = tuple(np.ascontiguousarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.ascontiguousarray(b, dtype=float) for b in self.biases)
        scale = np.ascontiguousarray(self.in_scale, dtype=float)
        if len(ws) != 3 or len(bs) != 3:
            raise ConfigurationError("MLP must have exactly 3 linear layers")
        if scale.ndim != 1 or scale.shape[0] != ws[0].shape[1]:
            raise ConfigurationError(
                f"in_scale has shape {scale.shape}, expected ({ws[0].shape[1]},)"
            )
        if not np.all(scale > 0):
            raise ConfigurationError("normalization scales must be strictly positive")
        for l, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {l}: bias {b.shape} vs weight {w.shape}")
            if l > 0 and w.shape[1] != ws[l - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {l} expects {w.shape[1]} inputs, previous layer emits {ws[l - 1].shape[0]}"
                )
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "in_scale", scale)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[2].shape[0]

    @property
    def hidden(self) -> tuple[int, int]:
        return self.weights[0].shape[0], self.weights[1].shape[0]

    @classmethod
    def zeros(cls, in_scale, out_dim: int = 3, hidden: int = 50) -> "MlpParams":
        in_dim = len(in_scale)
        return cls(
            weights=(np.zeros((hidden, in_dim)), np.zeros((hidden, hidden)), np.zeros((out_dim, hidden))),
            biases=(np.zeros(hidden), np.zeros(hidden), np.zeros(out_dim)),
            in_scale=in_scale,
        )

    @classmethod
    def init_uniform(cls, in_scale, out_dim: int, hidden: int = 50, rng=None) -> "MlpParams":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
        rng = np.random.default_rng(rng)
        dims = [len(in_scale), hidden, hidden, out_dim]
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(1.0 / fan_in)
            ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(tuple(ws), tuple(bs), in_scale)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, theta: np.ndarray) -> "MlpParams":
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[k:k + w.size].reshape(w.shape))
            k += w.size
            bs.append(theta[k:k + b.size].copy())
            k += b.size
        if k != theta.size:
            raise ConfigurationError(f"flat vector has {theta.size} entries, expected {k}")
        return MlpParams(tuple(ws), tuple(bs), self.in_scale)

    def forward_normalized(self, z: np.ndarray) -> np.ndarray:
        """Forward pass on already-normalized inputs, batched along axis 0."""
        h = np.maximum(z @ self.weights[0].T + self.biases[0], 0.0)
        h = np.maximum(h @ self.weights[1].T + self.biases[1], 0.0)
        return h @ self.weights[2].T + self.biases[2]


def phys_derivative(x, u, p: PhysicalParams) -> np.ndarray:
    """Continuous-time right-hand side of the physical forklift model.

    Works on a single state ``(7,)`` or a batch ``(B, 7)`` with matching
    inputs ``(2,)`` / ``(B, 2)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    s, c, vx, vy, r = x[..., IS], x[..., IC], x[..., IVX], x[..., IVY], x[..., IR]
    a, delta = u[..., IA], u[..., IDELTA] * DEG2RAD
    speed = np.sqrt(vx * vx + vy * vy)
    return np.stack(
        [
            vx,
            vy,
            c * r,
            -s * r,
            p.k_a * a * c - p.k_V * vx - r * vy,
            p.k_a * a * s - p.k_V * vy + r * vx,
            p.k_delta * speed * delta - p.k_r * r,
        ],
        axis=-1,
    )


def euler_step(x, u, p: PhysicalParams, h: float) -> np.ndarray:
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    return x + h * phys_derivative(x, u, p)


def normalize_trig(x) -> np.ndarray:
    x = np.array(x, dtype=float, copy=True)
    norm = np.sqrt(x[..., IS] ** 2 + x[..., IC] ** 2)
    if np.any(norm == 0):
        raise DegenerateHeadingError("s = c = 0: heading undefined")
    x[..., IS] /= norm
    x[..., IC] /= norm
    return x


def residual_weight(x, v_th: float):
    """State-dependent residual weight ``V^2 / (V^2 + v_th^2)``."""
    if not v_th > 0:
        raise ValueError("v_th must be positive")
    x = np.asarray(x, dtype=float)
    v2 = x[..., IVX] ** 2 + x[..., IVY] ** 2
    return v2 / (v2 + v_th * v_th)


def mlp_forward(nn: MlpParams, x, u) -> np.ndarray:
    """Residual in normalized units for state(s) ``x`` and input(s) ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] + u.shape[-1] != nn.in_dim:
        raise ConfigurationError(
            f"network expects {nn.in_dim} inputs, got {x.shape[-1]} + {u.shape[-1]}"
        )
    z = np.concatenate([x, u], axis=-1) / nn.in_scale
    return nn.forward_normalized(z)


@dataclass(frozen=True, eq=False)
class ResidualDynamicsModel:
    """Physical Euler model plus a masked, speed-weighted MLP residual."""

    phys: PhysicalParams
    nn: MlpParams
    mask: np.ndarray = field(default_factory=lambda: np.array(FORKLIFT_MASK, dtype=float))
    v_th: float = 0.20
    h: float = 0.0667

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=float)
        if mask.shape != (NX,) or not np.all((mask == 0) | (mask == 1)):
            raise ConfigurationError("mask must be a 0/1 vector of length 7")
        object.__setattr__(self, "mask", mask)
        if not self.v_th > 0:
            raise ConfigurationError("v_th must be positive")
        if not self.h > 0:
            raise ConfigurationError("h must be positive")
        if self.nn.in_dim != NX + NU:
            raise ConfigurationError(f"residual MLP must take {NX + NU} inputs")
        if self.nn.out_dim != int(mask.sum()):
            raise ConfigurationError(
                f"residual MLP emits {self.nn.out_dim} values but mask selects {int(mask.sum())}"
            )

    @property
    def masked_idx(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def out_scale(self) -> np.ndarray:
        """Per-output denormalization: state scales of the masked dimensions."""
        return self.nn.in_scale[:NX][self.masked_idx]

    def residual(self, x, u) -> np.ndarray:
        """Expanded physical-unit residual ``w_res * M * f_nn``, shape like ``x``."""
        x = np.asarray(x, dtype=float)
        out = mlp_forward(self.nn, x, u) * self.out_scale
        w = residual_weight(x, self.v_th)
        full = np.zeros(x.shape)
        full[..., self.masked_idx] = np.asarray(w)[..., None] * out
        return full

    def step_raw(self, x, u) -> np.ndarray:
        """One step before trig normalization."""
        return euler_step(x, u, self.phys, self.h) + self.residual(x, u)

    def step(self, x, u) -> np.ndarray:
        return normalize_trig(self.step_raw(x, u))

    def with_nn(self, nn: MlpParams) -> "ResidualDynamicsModel":
        return ResidualDynamicsModel(self.phys, nn, self.mask, self.v_th, self.h)

    def with_phys(self, phys: PhysicalParams) -> "ResidualDynamicsModel":
        return ResidualDynamicsModel(phys, self.nn, self.mask, self.v_th, self.h)

    @classmethod
    def physical_only(cls, phys, x_scale=None, u_scale=None, **kw) -> "ResidualDynamicsModel":
        x_scale = np.ones(NX) if x_scale is None else np.asarray(x_scale, dtype=float)
        u_scale = np.ones(NU) if u_scale is None else np.asarray(u_scale, dtype=float)
        mask = np.asarray(kw.pop("mask", FORKLIFT_MASK), dtype=float)
        nn = MlpParams.zeros(np.concatenate([x_scale, u_scale]), out_dim=int(mask.sum()))
        return cls(phys, nn, mask, **kw)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "phys": {"k_a": self.phys.k_a, "k_V": self.phys.k_V,
                     "k_delta": self.phys.k_delta, "k_r": self.phys.k_r},
            "mlp": {
                "weights": [w.tolist() for w in self.nn.weights],
                "biases": [b.tolist() for b in self.nn.biases],
            },
            "x_scale": self.nn.in_scale[:NX].tolist(),
            "u_scale": self.nn.in_scale[NX:].tolist(),
            "mask": [int(m) for m in self.mask],
            "v_th": self.v_th,
            "h": self.h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualDynamicsModel":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported model schema_version {version!r}")
        try:
            nn = MlpParams(
                weights=tuple(np.array(w, dtype=float) for w in d["mlp"]["weights"]),
                biases=tuple(np.array(b, dtype=float) for b in d["mlp"]["biases"]),
                in_scale=np.concatenate([d["x_scale"], d["u_scale"]]),
            )
            return cls(PhysicalParams(**d["phys"]), nn, np.array(d["mask"], dtype=float),
                       float(d["v_th"]), float(d["h"]))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed model file: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ResidualDynamicsModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def residual_step(m: ResidualDynamicsModel, x, u) -> np.ndarray:
    return m.step(x, u)


def rollout(step, x0, inputs) -> np.ndarray:
    """Open-loop rollout; returns states ``x_0 .. x_T`` for ``T`` inputs."""
    xs = [np.asarray(x0, dtype=float)]
    for u in inputs:
        xs.append(step(xs[-1], u))
    return np.array(xs)


def psi_of(x) -> np.ndarray:
    x = np.asarray(x)
    return np.arctan2(x[..., IS], x[..., IC])


def speed_of(x) -> np.ndarray:
    x = np.asarray(x)
    return np.hypot(x[..., IVX], x[..., IVY])
