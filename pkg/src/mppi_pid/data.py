"""Synthetic driving logs and the preprocessing pipeline that turns raw logs
into fixed-length, uniformly sampled training segments.

Raw logs hold ``t, X, Y, psi, vX, vY, r, a, delta`` at roughly 15 Hz with
occasional gaps. Preprocessing splits at gaps, resamples, filters, converts
the yaw to ``(s, c)`` and cuts 5 s segments that are then split 70:15:15.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .control import InputConstraints, sequential_clip
from .dynamics import DEG2RAD, NU, NX, PhysicalParams, normalize_trig, phys_derivative

RAW_HEADER = ("t", "X", "Y", "psi", "vX", "vY", "r", "a", "delta")
SEGMENT_HEADER = ("t", "X", "Y", "s", "c", "vX", "vY", "r", "a", "delta")
GAP_THRESHOLD = 0.1


@dataclass(frozen=True, eq=False)
class RawLog:
    """Time-stamped records; ``values`` columns follow ``RAW_HEADER[1:]``."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (t.shape[0], len(RAW_HEADER) - 1):
            raise ValueError(f"values must have shape ({t.shape[0]}, {len(RAW_HEADER) - 1})")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.t.shape[0]

    def to_csv(self, path) -> None:
        write_csv(path, RAW_HEADER, np.column_stack([self.t, self.values]))

    @classmethod
    def from_csv(cls, path) -> "RawLog":
        a = read_csv(path, RAW_HEADER)
        return cls(a[:, 0], a[:, 1:])


@dataclass(frozen=True, eq=False)
class Segment:
    """Uniformly sampled ``(t, x, u)`` series with ``x`` in the 7-dim layout."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.x.shape[0] < 2 or self.x.shape != (self.t.shape[0], NX) or self.u.shape != (self.t.shape[0], NU):
            raise ValueError("segment needs >= 2 samples with matching state and input arrays")

    def __len__(self):
        return self.t.shape[0]

    def to_csv(self, path) -> None:
        write_csv(path, SEGMENT_HEADER, np.column_stack([self.t, self.x, self.u]))

    @classmethod
    def from_csv(cls, path) -> "Segment":
        a = read_csv(path, SEGMENT_HEADER)
        return cls(a[:, 0], a[:, 1:1 + NX], a[:, 1 + NX:])


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows([repr(float(v)) for v in row] for row in rows)


def read_csv(path, header) -> np.ndarray:
    with open(path, newline="") as f:
        r = csv.reader(f)
        got = tuple(next(r))
        if got != tuple(header):
            raise ValueError(f"{path}: header {got} != {tuple(header)}")
        rows = [[float(v) for v in row] for row in r]
    return np.array(rows, dtype=float).reshape(-1, len(header))


# -- synthetic plant ---------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthPlant:
    """Physical model plus a fixed analytic residual on ``(vX, vY, r)``.

    The residual adds quadratic drag ``-c_drag * V * v`` and replaces the
    linear steering response by a saturating one,
    ``k_delta * V * (delta_sat * tanh(delta / delta_sat) - delta)``.
    """

    phys: PhysicalParams = PhysicalParams(k_a=0.0025, k_V=1.0, k_delta=2.5, k_r=1.5)
    c_drag: float = 2.0
    delta_sat_deg: float = 40.0
    noise_std: tuple = (5e-4, 5e-4, 1e-3)

    def residual_rate(self, x, u) -> np.ndarray:
        """Extra time derivative of ``(vX, vY, r)``; batched along axis 0."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        vx, vy = x[..., 4], x[..., 5]
        V = np.hypot(vx, vy)
        d = u[..., 1] * DEG2RAD
        if math.isinf(self.delta_sat_deg):
            sat = np.zeros_like(V)
        else:
            ds = self.delta_sat_deg * DEG2RAD
            sat = self.phys.k_delta * V * (ds * np.tanh(d / ds) - d)
        return np.stack([-self.c_drag * V * vx, -self.c_drag * V * vy, sat], axis=-1)

    def step(self, x, u, dt, rng=None) -> np.ndarray:
        """Euler step of length ``dt`` with residual and optional process noise."""
        x = np.asarray(x, dtype=float)
        dt = np.asarray(dt, dtype=float)
        if not np.all(dt > 0):
            raise ValueError("dt must be positive")
        dt = dt[..., None] if dt.ndim else dt
        xn = x + dt * phys_derivative(x, u, self.phys)
        xn[..., 4:7] += dt * self.residual_rate(x, u)
        if rng is not None and any(self.noise_std):
            xn[..., 4:7] += rng.standard_normal(xn[..., 4:7].shape) * np.asarray(self.noise_std)
        return normalize_trig(xn)

    def without_residual(self) -> "GroundTruthPlant":
        return GroundTruthPlant(self.phys, 0.0, math.inf, self.noise_std)

    def noiseless(self) -> "GroundTruthPlant":
        return GroundTruthPlant(self.phys, self.c_drag, self.delta_sat_deg, (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class LogConfig:
    n_logs: int = 16
    duration: float = 295.5
    h: float = 0.0667
    jitter: float = 0.02
    gaps_per_log: float = 1.0
    gap_range: tuple = (0.15, 0.5)
    a_mean: float = 40.0
    a_std: float = 25.0
    a_tau: float = 3.0
    delta_std: float = 30.0
    delta_tau: float = 2.0
    constraints: InputConstraints = field(default_factory=InputConstraints)

    def __post_init__(self):
        if not self.duration > 5.0:
            raise ValueError("duration must exceed 5 s per log")
        if self.n_logs < 1:
            raise ValueError("n_logs must be >= 1")
        if not (self.h > 0 and 0 <= self.jitter < 0.5):
            raise ValueError("h must be > 0 and jitter in [0, 0.5)")


def _ou(rng, n, dt, tau, mean, std, shape):
    """Ornstein-Uhlenbeck paths sampled at the (per-path) steps ``dt``."""
    out = np.empty((n,) + shape)
    v = mean + std * rng.standard_normal(shape)
    for k in range(n):
        out[k] = v
        phi = np.exp(-dt[k] / tau)
        v = mean + phi * (v - mean) + std * np.sqrt(1 - phi * phi) * rng.standard_normal(shape)
    return out


def generate_logs(plant: GroundTruthPlant, cfg: LogConfig = LogConfig(), seed: int = 0) -> list[RawLog]:
    """Simulate all logs in lockstep under smooth random excitation."""
    rng = np.random.default_rng(seed)
    L = cfg.n_logs
    n = int(round(cfg.duration / cfg.h))
    dt = cfg.h * (1 + cfg.jitter * rng.uniform(-1, 1, size=(n, L)))
    a_ref = _ou(rng, n, dt, cfg.a_tau, cfg.a_mean, cfg.a_std, (L,))
    d_ref = _ou(rng, n, dt, cfg.delta_tau, 0.0, cfg.delta_std, (L,))
    psi0 = rng.uniform(-math.pi, math.pi, size=L)
    x = np.zeros((L, NX))
    x[:, 2], x[:, 3] = np.sin(psi0), np.cos(psi0)
    u_prev = np.tile([0.0, 0.0], (L, 1))
    t = np.zeros(L)
    rec = np.empty((n, L, len(RAW_HEADER)))
    unwrap = psi0.copy()
    for k in range(n):
        u = sequential_clip(np.stack([a_ref[k], d_ref[k]], axis=1), u_prev, cfg.constraints)
        psi = np.arctan2(x[:, 2], x[:, 3])
        unwrap = unwrap + (np.mod(psi - unwrap + math.pi, 2 * math.pi) - math.pi)
        rec[k, :, 0] = t
        rec[k, :, 1:3] = x[:, 0:2]
        rec[k, :, 3] = unwrap
        rec[k, :, 4:7] = x[:, 4:7]
        rec[k, :, 7:9] = u
        x = plant.step(x, u, dt[k], rng)
        t = t + dt[k]
        u_prev = u
    logs = []
    for j in range(L):
        keep = np.ones(n, dtype=bool)
        n_gaps = rng.poisson(cfg.gaps_per_log)
        for _ in range(n_gaps):
            start = rng.uniform(0.1, 0.9) * rec[-1, j, 0]
            length = rng.uniform(*cfg.gap_range)
            keep &= ~((rec[:, j, 0] > start) & (rec[:, j, 0] < start + length))
        r = rec[keep, j]
        logs.append(RawLog(r[:, 0], r[:, 1:]))
    return logs


# -- preprocessing -----------------------------------------------------------

@dataclass(frozen=True)
class PreprocessConfig:
    h: float = 0.0667
    gap: float = GAP_THRESHOLD
    segment_seconds: float = 5.0
    median_window: int = 3
    pose_window: int = 9
    velocity_window: int = 7
    input_window: int = 5
    split: tuple = (0.70, 0.15, 0.15)
    seed: int = 0

    @property
    def segment_len(self) -> int:
        return int(round(self.segment_seconds / self.h))

    @property
    def max_window(self) -> int:
        return max(self.median_window, self.pose_window, self.velocity_window, self.input_window)


@dataclass
class Splits:
    train: list
    val: list
    test: list
    dropped_intervals: int = 0

    def save(self, root) -> None:
        root = Path(root)
        for name in ("train", "val", "test"):
            d = root / name
            d.mkdir(parents=True, exist_ok=True)
            for i, seg in enumerate(getattr(self, name)):
                seg.to_csv(d / f"seg_{i:05d}.csv")

    @classmethod
    def load(cls, root) -> "Splits":
        root = Path(root)
        parts = {}
        for name in ("train", "val", "test"):
            d = root / name
            if not d.is_dir():
                raise FileNotFoundError(f"missing split directory {d}")
            parts[name] = [Segment.from_csv(p) for p in sorted(d.glob("seg_*.csv"))]
        return cls(**parts)


def split_at_gaps(t, gap: float = GAP_THRESHOLD) -> list[slice]:
    """Slices of continuous intervals; a new interval starts after any ``dt > gap``."""
    cuts = np.flatnonzero(np.diff(t) > gap) + 1
    edges = np.concatenate([[0], cuts, [len(t)]])
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def resample(t, values, h: float):
    """Linear interpolation onto ``t0 + h * k``; ``values`` is ``(n, d)``."""
    n = int(math.floor((t[-1] - t[0]) / h + 1e-9)) + 1
    tn = t[0] + h * np.arange(n)
    return tn, np.column_stack([np.interp(tn, t, values[:, j]) for j in range(values.shape[1])])


def _windows(x, w):
    half = w // 2
    pad = np.concatenate([np.full(half, np.nan), x, np.full(half, np.nan)])
    return sliding_window_view(pad, w)


def median_filter(x, w: int = 3) -> np.ndarray:
    """Centered running median; windows are truncated at the edges."""
    x = np.asarray(x, dtype=float)
    if w <= 1:
        return x.copy()
    return np.nanmedian(_windows(x, w), axis=1)


def moving_average(x, w: int) -> np.ndarray:
    """Centered running mean with truncated edge windows.

    Computed as ``x_i + mean(x_j - x_i)`` so constant stretches stay exact.
    """
    x = np.asarray(x, dtype=float)
    if w <= 1:
        return x.copy()
    win = _windows(x, w)
    return x + np.nanmean(win - x[:, None], axis=1)


def smooth(x, median_w: int, mean_w: int) -> np.ndarray:
    return moving_average(median_filter(x, median_w), mean_w)


def split_counts(n: int, fractions=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """Validation and test sizes are rounded, the remainder goes to training."""
    n_val = int(math.floor(fractions[1] * n + 0.5))
    n_test = int(math.floor(fractions[2] * n + 0.5))
    return n - n_val - n_test, n_val, n_test


def preprocess(logs, cfg: PreprocessConfig = PreprocessConfig()) -> Splits:
    if not logs:
        raise ValueError("no logs to preprocess")
    L = cfg.segment_len
    segments, dropped = [], 0
    windows = [cfg.pose_window] * 3 + [cfg.velocity_window] * 3 + [cfg.input_window] * 2
    for log in logs:
        vals = log.values.copy()
        for sl in split_at_gaps(log.t, cfg.gap):
            t, v = log.t[sl], vals[sl].copy()
            if len(t) < 2:
                dropped += 1
                continue
            v[:, 2] = np.unwrap(v[:, 2])
            tn, vn = resample(t, v, cfg.h)
            if len(tn) < cfg.max_window:
                dropped += 1
                continue
            vf = np.column_stack([smooth(vn[:, j], cfg.median_window, w) for j, w in enumerate(windows)])
            x = np.column_stack([vf[:, 0:2], np.sin(vf[:, 2]), np.cos(vf[:, 2]), vf[:, 3:6]])
            u = vf[:, 6:8]
            for k in range(len(tn) // L):
                s = slice(k * L, (k + 1) * L)
                segments.append(Segment(tn[s], x[s], u[s]))
    order = np.random.default_rng(cfg.seed).permutation(len(segments))
    n_train, n_val, _ = split_counts(len(segments), cfg.split)
    pick = [segments[i] for i in order]
    return Splits(pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:], dropped)


def transitions(segments) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked one-step pairs ``(x_k, u_k, x_{k+1})`` from all segments."""
    if not segments:
        raise ValueError("no segments")
    X = np.concatenate([s.x[:-1] for s in segments])
    U = np.concatenate([s.u[:-1] for s in segments])
    Xn = np.concatenate([s.x[1:] for s in segments])
    return X, U, Xn


def total_samples(logs) -> int:
    return int(sum(len(l) for l in logs))
