"""Reference path: single cubic Hermite segment, nearest-point queries, PID errors."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import IC, IS, IVX, IVY, IX, IY


class PathError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReferencePath:
    points: np.ndarray    # (M, 2)
    tangents: np.ndarray  # (M, 2) unit
    normals: np.ndarray   # (M, 2) unit, tangent rotated +90 deg
    psi_star: np.ndarray  # (M,)

    def __post_init__(self):
        if len(self.points) < 2:
            raise PathError("path needs at least two points")
        if np.any(np.all(np.diff(self.points, axis=0) == 0, axis=1)):
            raise PathError("consecutive path points must be distinct")
        # cached pruning blocks for the compiled nearest-point search
        object.__setattr__(self, "_blocks", _make_blocks(self.points))

    @property
    def M(self) -> int:
        return len(self.points)

    @property
    def goal(self) -> np.ndarray:
        return self.points[-1]

    @property
    def blocks(self):
        return self._blocks

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "x", "y", "tx", "ty", "psi_star"])
            for k in range(self.M):
                w.writerow([k, *(repr(float(v)) for v in (*self.points[k], *self.tangents[k], self.psi_star[k]))])


@dataclass(frozen=True)
class PathQuery:
    k: int
    point: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    psi_star: float
    dist: float


def _make_blocks(points: np.ndarray, size: int = 32):
    """Bounding circles of consecutive point blocks, used to prune the scan."""
    starts = np.arange(0, len(points), size)
    centers, radii = [], []
    for s0 in starts:
        blk = points[s0:s0 + size]
        ctr = blk.mean(axis=0)
        centers.append(ctr)
        radii.append(np.sqrt(((blk - ctr) ** 2).sum(axis=1)).max())
    radii = np.asarray(radii)
    # pad so rounding in the lower bound can never skip a true minimizer
    radii = radii * (1 + 1e-9) + 1e-12
    return starts.astype(np.intp), np.asarray(centers), radii, size


def rotate90(v: np.ndarray) -> np.ndarray:
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def build_hermite_path(start, goal, M: int = 800) -> ReferencePath:
    """Sample a cubic Hermite segment between two poses ``(x, y, psi)``.

    Endpoint tangents follow the start/goal headings and have magnitude equal
    to the straight-line distance between the endpoints.
    """
    if M < 2:
        raise PathError("M must be >= 2")
    p0 = np.array(start[:2], dtype=float)
    p1 = np.array(goal[:2], dtype=float)
    chord = float(np.hypot(*(p1 - p0)))
    if chord == 0:
        raise PathError("start and goal positions coincide")
    m0 = chord * np.array([math.cos(start[2]), math.sin(start[2])])
    m1 = chord * np.array([math.cos(goal[2]), math.sin(goal[2])])

    t = np.linspace(0.0, 1.0, M)[:, None]
    t2, t3 = t * t, t * t * t
    pts = (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * p1 + (t3 - t2) * m1
    pts[0], pts[-1] = p0, p1
    d = (6 * t2 - 6 * t) * p0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * p1 + (3 * t2 - 2 * t) * m1
    dn = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(dn == 0):
        raise PathError("Hermite derivative vanishes; choose different endpoint headings")
    tau = d / dn
    return ReferencePath(pts, tau, rotate90(tau), np.arctan2(tau[:, 1], tau[:, 0]))


def nearest_index(path: ReferencePath, pos) -> int:
    """Exhaustive argmin over the sampled points, smallest index on ties."""
    diff = path.points - np.asarray(pos, dtype=float)[:2]
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
    return int(np.argmin(d2))


def nearest_point(path: ReferencePath, pos) -> PathQuery:
    k = nearest_index(path, pos)
    p = path.points[k]
    return PathQuery(k, p, path.tangents[k], path.normals[k], float(path.psi_star[k]),
                     float(np.hypot(*(np.asarray(pos[:2]) - p))))


def wrap_angle(a):
    """Wrap to ``(-pi, pi]``."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return w if w.ndim else float(w)


def pid_errors(path: ReferencePath, x, V_ref: float, query: PathQuery | None = None):
    """Signed ``(e_speed, e_lat, e_ang)`` for state ``x``.

    ``e_lat`` is positive to the left of the direction of travel.
    """
    q = nearest_point(path, x[[IX, IY]]) if query is None else query
    speed = math.hypot(x[IVX], x[IVY])
    e_speed = V_ref - speed
    e_lat = float(q.normal @ (np.array([x[IX], x[IY]]) - q.point))
    e_ang = wrap_angle(math.atan2(x[IS], x[IC]) - q.psi_star)
    return e_speed, e_lat, e_ang
