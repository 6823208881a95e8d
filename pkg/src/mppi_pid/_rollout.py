"""Backend selection and batched rollout evaluation.

The compiled kernel is used when importable; set ``MPPI_PID_PURE=1`` to force
the numpy fallback. Samples are processed in fixed-size chunks so a run with
``workers > 1`` produces exactly the same costs as a serial run.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _fallback

try:
    if os.environ.get("MPPI_PID_PURE") == "1":
        raise ImportError("pure backend requested")
    from . import _kernels
except ImportError:
    _kernels = None

BACKENDS = {"python": _fallback.RolloutKernel}
if _kernels is not None:
    BACKENDS["compiled"] = _kernels.RolloutKernel
DEFAULT_BACKEND = "compiled" if _kernels is not None else "python"

CHUNK = 256


def kernel_args(model, path, cw, constraints) -> dict:
    nn = model.nn
    has_nn = any(np.any(a != 0) for a in (*nn.weights, *nn.biases))
    starts, centers, radii, size = path.blocks
    return dict(
        W0=nn.weights[0], b0=nn.biases[0], W1=nn.weights[1], b1=nn.biases[1],
        W2=nn.weights[2], b2=nn.biases[2], in_scale=nn.in_scale,
        out_idx=model.masked_idx.astype(np.intp), out_scale=model.out_scale,
        phys=model.phys.as_array(), h=float(model.h), v_th=float(model.v_th), has_nn=bool(has_nn),
        pts=path.points, tan=path.tangents, nrm=path.normals, psi=path.psi_star,
        blk_start=starts, blk_ctr=centers, blk_rad=radii, blk_size=int(size),
        cw=cw.as_array(), goal=np.asarray(path.goal, dtype=float), cons=constraints.as_array(),
    )


class RolloutEvaluator:
    """Evaluates rollout costs for a fixed (model, path, cost, constraints) tuple."""

    def __init__(self, model, path, cw, constraints, backend: str | None = None, workers: int = 1):
        backend = backend or DEFAULT_BACKEND
        if backend not in BACKENDS:
            raise ValueError(f"backend {backend!r} unavailable; have {sorted(BACKENDS)}")
        self.backend = backend
        self.kernel = BACKENDS[backend](**kernel_args(model, path, cw, constraints))
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _run(self, fn, n):
        J = np.empty(n)
        chunks = [(i0, min(i0 + CHUNK, n)) for i0 in range(0, n, CHUNK)]
        if self._pool is None:
            for i0, i1 in chunks:
                fn(J, i0, i1)
        else:
            list(self._pool.map(lambda c: fn(J, *c), chunks))
        return J

    def mppi_costs(self, x0, u_prev, U, vref) -> np.ndarray:
        U = np.ascontiguousarray(U, dtype=float)
        vref = np.ascontiguousarray(vref, dtype=float)
        return self._run(lambda J, i0, i1: self.kernel.mppi_costs(x0, u_prev, U, vref, J, i0, i1), U.shape[0])

    def pid_costs(self, x0, u_prev, thetas, pid_state, u_bias, signs, vref) -> np.ndarray:
        thetas = np.ascontiguousarray(thetas, dtype=float)
        vref = np.ascontiguousarray(vref, dtype=float)
        integ, eprev, has_prev = pid_state.integral, pid_state.prev_error, pid_state.prev_error is not None
        eprev = np.zeros(3) if eprev is None else eprev
        return self._run(
            lambda J, i0, i1: self.kernel.pid_costs(x0, u_prev, thetas, integ, eprev, has_prev,
                                                    u_bias, signs, vref, J, i0, i1),
            thetas.shape[0],
        )
