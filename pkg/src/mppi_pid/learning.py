"""System identification: least squares for the physical parameters, a
hand-written backprop/Adam trainer for the residual network, and recursive
(open-loop) prediction R².
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import transitions
from .dynamics import (
    DEG2RAD, IC, IS, NX, MlpParams, PhysicalParams, ResidualDynamicsModel, euler_step, normalize_trig,
    residual_weight, STATE_NAMES,
)


class IdentificationError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, msg: str = "loss became NaN"):
        super().__init__(f"training diverged at epoch {epoch}: {msg}")
        self.epoch = epoch


# -- least squares -----------------------------------------------------------

def _lstsq_block(A, b, name: str, rank_tol: float):
    if A.shape[0] < A.shape[1] or np.linalg.matrix_rank(A, tol=rank_tol * max(1.0, np.abs(A).max())) < A.shape[1]:
        raise IdentificationError(f"{name} block is not identifiable (rank-deficient regressor)")
    return np.linalg.lstsq(A, b, rcond=None)[0]


def fit_physical_params(X, U, Xn, h: float, rank_tol: float = 1e-10) -> PhysicalParams:
    """Least-squares fit of ``(k_a, k_V)`` and ``(k_delta, k_r)`` from one-step pairs.

    The speed block uses both velocity rows after moving the rotational
    coupling ``r * [-vY, vX]`` to the left-hand side, so it is linear in
    ``(k_a, k_V)`` and exact under Euler integration. The yaw block regresses
    the finite-difference yaw acceleration on ``[V * delta, -r]``.
    """
    X, U, Xn = (np.asarray(a, dtype=float) for a in (X, U, Xn))
    if X.shape[0] < 4:
        raise IdentificationError("need at least 4 transitions")
    s, c, vx, vy, r = X[:, IS], X[:, IC], X[:, 4], X[:, 5], X[:, 6]
    a, d = U[:, 0], U[:, 1] * DEG2RAD
    A_v = np.concatenate([np.column_stack([a * c, -vx]), np.column_stack([a * s, -vy])])
    b_v = np.concatenate([(Xn[:, 4] - vx) / h + r * vy, (Xn[:, 5] - vy) / h - r * vx])
    k_a, k_V = _lstsq_block(A_v, b_v, "speed (k_a, k_V)", rank_tol)
    A_r = np.column_stack([np.hypot(vx, vy) * d, -r])
    b_r = (Xn[:, 6] - r) / h
    k_d, k_r = _lstsq_block(A_r, b_r, "yaw (k_delta, k_r)", rank_tol)
    try:
        return PhysicalParams(float(k_a), float(k_V), float(k_d), float(k_r))
    except ValueError as exc:
        raise IdentificationError(f"fitted parameters are not physical: {exc}") from exc


# -- network training --------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1024
    grad_clip: float = 1.0
    next_state_noise_std: float = 1e-4
    early_stop_patience: int = 10
    max_epochs: int = 300
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.grad_clip > 0 and self.next_state_noise_std >= 0):
            raise ValueError("learning_rate and grad_clip must be > 0, noise std >= 0")
        if self.batch_size < 1 or self.early_stop_patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, early_stop_patience and max_epochs must be >= 1")
        if not self.beta1 ** 2 < self.beta2 < 1:
            raise ValueError("need beta1^2 < beta2 < 1")


@dataclass(frozen=True)
class OneStepForm:
    """``pred = normalize(base + gate * scatter(out_scale * NN))``.

    ``base`` and ``gate`` do not depend on the network weights, so they are
    precomputed once per dataset.
    """

    kind: str  # "residual" or "delta"
    out_idx: np.ndarray
    out_scale: np.ndarray
    phys: PhysicalParams | None = None
    h: float = 0.0667
    v_th: float = 0.20

    def base_gate(self, X, U):
        if self.kind == "residual":
            return euler_step(X, U, self.phys, self.h), residual_weight(X, self.v_th)
        return np.array(X, dtype=float), np.ones(X.shape[0])


def residual_form(model: ResidualDynamicsModel) -> OneStepForm:
    return OneStepForm("residual", model.masked_idx, model.out_scale, model.phys, model.h, model.v_th)


def delta_form(x_scale) -> OneStepForm:
    return OneStepForm("delta", np.arange(NX), np.asarray(x_scale, dtype=float))


def _forward(nn: MlpParams, z):
    W0, W1, W2 = nn.weights
    b0, b1, b2 = nn.biases
    a1 = z @ W0.T + b0
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ W1.T + b1
    h2 = np.maximum(a2, 0.0)
    return (a1, h1, a2, h2), h2 @ W2.T + b2


def loss_and_grad(form: OneStepForm, nn: MlpParams, base, gate, Z, T, x_scale, need_grad: bool = True):
    """Mean squared normalized one-step error over all 7 state dimensions.

    ``Z`` holds normalized network inputs, ``T`` physical-unit targets.
    Returns ``(loss, flat_gradient)`` in the ordering of ``MlpParams.flat``.
    """
    cache, o = _forward(nn, Z)
    raw = base.copy()
    raw[:, form.out_idx] += gate[:, None] * (o * form.out_scale)
    rho = np.sqrt(raw[:, IS] ** 2 + raw[:, IC] ** 2)
    pred = raw.copy()
    pred[:, IS] /= rho
    pred[:, IC] /= rho
    diff = (pred - T) / x_scale
    n = diff.size
    loss = float(np.sum(diff * diff) / n)
    if not need_grad:
        return loss, None
    g = 2.0 * diff / x_scale / n
    # back through the (s, c) normalization: d(y/|y|) = (I - n n^T) / |y|
    ns, nc = pred[:, IS], pred[:, IC]
    proj = ns * g[:, IS] + nc * g[:, IC]
    g[:, IS] = (g[:, IS] - ns * proj) / rho
    g[:, IC] = (g[:, IC] - nc * proj) / rho
    g_o = g[:, form.out_idx] * gate[:, None] * form.out_scale
    a1, h1, a2, h2 = cache
    W0, W1, W2 = nn.weights
    gW2, gb2 = g_o.T @ h2, g_o.sum(0)
    g_a2 = (g_o @ W2) * (a2 > 0)
    gW1, gb1 = g_a2.T @ h1, g_a2.sum(0)
    g_a1 = (g_a2 @ W1) * (a1 > 0)
    gW0, gb0 = g_a1.T @ Z, g_a1.sum(0)
    flat = np.concatenate([a.ravel() for a in (gW0, gb0, gW1, gb1, gW2, gb2)])
    return loss, flat


def clip_by_norm(g, bound: float):
    norm = float(np.linalg.norm(g))
    if norm > bound:
        return g * (bound / norm), norm
    return g, norm


def adam_step_bound(t: int, cfg: TrainConfig) -> float:
    """Upper bound on ``|update_i|`` for Adam step ``t`` (1-based), any gradients.

    From ``|m_t| / sqrt(v_t) <= (1-b1)/sqrt(1-b2) / sqrt(1 - b1^2/b2)`` (Cauchy-Schwarz)
    and the bias-correction factor ``sqrt(1-b2^t) / (1-b1^t)``.
    """
    b1, b2 = cfg.beta1, cfg.beta2
    raw = (1 - b1) / math.sqrt(1 - b2) / math.sqrt(1 - b1 * b1 / b2)
    return cfg.learning_rate * raw * math.sqrt(1 - b2 ** t) / (1 - b1 ** t)


class Adam:
    def __init__(self, n: int, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def update(self, grad) -> np.ndarray:
        """Clip ``grad`` to ``grad_clip`` and return the parameter increment."""
        cfg = self.cfg
        g, _ = clip_by_norm(grad, cfg.grad_clip)
        self.t += 1
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * g
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * g * g
        m_hat = self.m / (1 - cfg.beta1 ** self.t)
        v_hat = self.v / (1 - cfg.beta2 ** self.t)
        step = -cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        if np.max(np.abs(step)) > adam_step_bound(self.t, cfg) * (1 + 1e-9):
            raise RuntimeError("Adam step exceeded its theoretical bound")
        return step


@dataclass
class TrainResult:
    nn: MlpParams
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    best_val: float = math.inf
    baseline_val: float = math.nan  # validation loss of the zero network

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, tr, va in self.history:
                w.writerow([e, repr(tr), repr(va)])


def _prepare(form, nn, segments):
    X, U, Xn = transitions(segments)
    base, gate = form.base_gate(X, U)
    Z = np.concatenate([X, U], axis=1) / nn.in_scale
    return base, gate, Z, Xn


def train_network(form: OneStepForm, nn0: MlpParams, train, val, cfg: TrainConfig, x_scale) -> TrainResult:
    """Minibatch Adam on the normalized one-step loss with early stopping.

    Returns the snapshot with the lowest validation loss.
    """
    x_scale = np.asarray(x_scale, dtype=float)
    rng = np.random.default_rng(cfg.rng_seed)
    tr = _prepare(form, nn0, train)
    va = _prepare(form, nn0, val)
    zero = MlpParams.zeros(nn0.in_scale, nn0.out_dim, nn0.hidden[0])
    res = TrainResult(nn0, baseline_val=loss_and_grad(form, zero, *va, x_scale, need_grad=False)[0])
    theta = nn0.flat()
    opt = Adam(theta.size, cfg)
    n = tr[0].shape[0]
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for i0 in range(0, n, cfg.batch_size):
            idx = order[i0:i0 + cfg.batch_size]
            base, gate, Z, T = (a[idx] for a in tr)
            T = T + rng.standard_normal(T.shape) * (cfg.next_state_noise_std * x_scale)
            loss, g = loss_and_grad(form, nn0.with_flat(theta), base, gate, Z, T, x_scale)
            if not (math.isfinite(loss) and np.all(np.isfinite(g))):
                raise DivergenceError(epoch)
            theta = theta + opt.update(g)
            total += loss * len(idx)
        nn = nn0.with_flat(theta)
        val_loss = loss_and_grad(form, nn, *va, x_scale, need_grad=False)[0]
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, "validation loss is not finite")
        res.history.append((epoch, total / n, val_loss))
        if val_loss < res.best_val:
            res.best_val, res.best_epoch, res.nn = val_loss, epoch, nn
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    return res


def compute_scales(segments):
    """Per-dimension standard deviations of states and inputs (1.0 where constant)."""
    X = np.concatenate([s.x for s in segments])
    U = np.concatenate([s.u for s in segments])
    xs, us = X.std(axis=0), U.std(axis=0)
    return np.where(xs > 0, xs, 1.0), np.where(us > 0, us, 1.0)


def train_residual(model: ResidualDynamicsModel, train, val, cfg: TrainConfig = TrainConfig()):
    """Train a freshly initialized residual network for ``model``'s physics and scales.

    Returns ``(trained_model, TrainResult)``.
    """
    nn0 = MlpParams.init_uniform(model.nn.in_scale, model.nn.out_dim, model.nn.hidden[0], rng=cfg.rng_seed)
    res = train_network(residual_form(model), nn0, train, val, cfg, model.nn.in_scale[:NX])
    return model.with_nn(res.nn), res


@dataclass(frozen=True, eq=False)
class DeltaNetworkModel:
    """Purely learned model ``x+ = normalize(x + sigma_x * NN(x, u))``."""

    nn: MlpParams
    h: float = 0.0667

    @property
    def x_scale(self):
        return self.nn.in_scale[:NX]

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.concatenate([x, np.asarray(u, dtype=float)], axis=-1) / self.nn.in_scale
        return normalize_trig(x + self.x_scale * self.nn.forward_normalized(z))

    def to_dict(self) -> dict:
        return {"kind": "delta_network", "h": self.h, "in_scale": self.nn.in_scale.tolist(),
                "weights": [w.tolist() for w in self.nn.weights],
                "biases": [b.tolist() for b in self.nn.biases]}


def train_delta_network(x_scale, u_scale, train, val, cfg: TrainConfig = TrainConfig(), hidden: int = 50,
                        h: float = 0.0667):
    in_scale = np.concatenate([x_scale, u_scale])
    nn0 = MlpParams.init_uniform(in_scale, NX, hidden, rng=cfg.rng_seed)
    res = train_network(delta_form(x_scale), nn0, train, val, cfg, x_scale)
    return DeltaNetworkModel(res.nn, h), res


# -- recursive prediction ----------------------------------------------------

@dataclass(frozen=True)
class R2Report:
    per_dim: tuple  # nan where the ground truth has zero variance
    average: float

    def as_dict(self) -> dict:
        d = {name: (None if math.isnan(v) else v) for name, v in zip(STATE_NAMES, self.per_dim)}
        d["average"] = self.average
        return d


def recursive_predictions(step, segments):
    """Open-loop rollouts from each segment's first state with recorded inputs.

    Returns pooled ``(predicted, true)`` arrays over steps ``1 .. n-1``.
    """
    preds, truth = [], []
    by_len: dict[int, list] = {}
    for s in segments:
        if len(s) < 2:
            raise ValueError("segments need at least 2 samples")
        by_len.setdefault(len(s), []).append(s)
    for n, group in sorted(by_len.items()):
        x = np.stack([s.x[0] for s in group])
        U = np.stack([s.u for s in group])
        out = np.empty((len(group), n - 1, NX))
        for k in range(n - 1):
            x = step(x, U[:, k])
            out[:, k] = x
        preds.append(out.reshape(-1, NX))
        truth.append(np.stack([s.x[1:] for s in group]).reshape(-1, NX))
    return np.concatenate(preds), np.concatenate(truth)


def r2_scores(pred, true) -> R2Report:
    sse = np.sum((pred - true) ** 2, axis=0)
    sst = np.sum((true - true.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), np.nan)
    valid = r2[~np.isnan(r2)]
    return R2Report(tuple(float(v) for v in r2), float(valid.mean()) if valid.size else math.nan)


def recursive_r2(model, segments) -> R2Report:
    """Pooled per-dimension R² of open-loop predictions (``model.step`` or a callable)."""
    step = model.step if hasattr(model, "step") else model
    return r2_scores(*recursive_predictions(step, segments))
