# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernel (one sample at a time, GIL released).

Mirrors ``_fallback.RolloutKernel``. Samples are independent, so any split
of ``[i0, i1)`` across threads gives bit-identical costs.
"""
import numpy as np

from libc.math cimport sqrt, atan2, fmod, M_PI

cdef extern from "_mlp.h":
    void mlp_forward3(const double* z, int n_in, const double* W0T, const double* b0, int H1,
                      const double* W1T, const double* b1, int H2, const double* W2T,
                      const double* b2, int NO, double* h1, double* h2, double* out, int wide) noexcept nogil
    int MLP_WIDE
    int MLP_NARROW

cdef double DEG2RAD = M_PI / 180.0
cdef enum:
    MAXH = 256


def _padded(a, width):
    """Copy of 2-D ``a`` with columns zero padded to ``width`` (no padding if 0)."""
    a = np.asarray(a, dtype=np.float64)
    out = np.zeros((a.shape[0], max(width, a.shape[1])))
    out[:, :a.shape[1]] = a
    return out


cdef class RolloutKernel:
    cdef double[:, ::1] W0T, W1T, W2T
    cdef double[::1] b0, b1, b2, in_scale, out_scale
    cdef Py_ssize_t[::1] out_idx
    cdef double k_a, k_V, k_d, k_r, h, v_th
    cdef bint has_nn, wide
    cdef double[:, ::1] pts, tan, nrm, blk_ctr
    cdef double[::1] psi, blk_rad
    cdef Py_ssize_t[::1] blk_start
    cdef Py_ssize_t blk_size, M, nblk, H1, H2, NO
    cdef double[::1] cw, goal
    cdef double[:, ::1] cons
    cdef double* pW0
    cdef double* pW1
    cdef double* pW2

    def __init__(self, W0, b0, W1, b1, W2, b2, in_scale, out_idx, out_scale, phys, h, v_th,
                 has_nn, pts, tan, nrm, psi, blk_start, blk_ctr, blk_rad, blk_size,
                 cw, goal, cons):
        # transposed so each layer is a sequence of contiguous axpy updates;
        # small networks are zero padded to the fixed-width C path
        W0 = np.asarray(W0, dtype=np.float64)
        W1 = np.asarray(W1, dtype=np.float64)
        W2 = np.asarray(W2, dtype=np.float64)
        self.H1, self.H2, self.NO = W0.shape[0], W1.shape[0], W2.shape[0]
        if max(self.H1, self.H2, self.NO) > MAXH:
            raise ValueError(f"compiled kernel supports layer widths up to {MAXH}")
        self.wide = self.H1 <= MLP_WIDE and self.H2 <= MLP_WIDE and self.NO <= MLP_NARROW
        w_hid = MLP_WIDE if self.wide else 0
        w_out = MLP_NARROW if self.wide else 0
        self.W0T = _padded(W0.T, w_hid)
        self.W1T = _padded(W1.T, w_hid)
        self.W2T = _padded(W2.T, w_out)
        self.b0 = _padded(np.asarray(b0, dtype=np.float64)[None], w_hid)[0]
        self.b1 = _padded(np.asarray(b1, dtype=np.float64)[None], w_hid)[0]
        self.b2 = _padded(np.asarray(b2, dtype=np.float64)[None], w_out)[0]
        self.in_scale = np.ascontiguousarray(in_scale, dtype=np.float64)
        self.out_idx = np.ascontiguousarray(out_idx, dtype=np.intp)
        self.out_scale = np.ascontiguousarray(out_scale, dtype=np.float64)
        self.k_a, self.k_V, self.k_d, self.k_r = [float(v) for v in phys]
        self.h = h
        self.v_th = v_th
        self.has_nn = has_nn
        self.pW0 = &self.W0T[0, 0]
        self.pW1 = &self.W1T[0, 0]
        self.pW2 = &self.W2T[0, 0]
        self.pts = np.ascontiguousarray(pts, dtype=np.float64)
        self.tan = np.ascontiguousarray(tan, dtype=np.float64)
        self.nrm = np.ascontiguousarray(nrm, dtype=np.float64)
        self.psi = np.ascontiguousarray(psi, dtype=np.float64)
        self.blk_start = np.ascontiguousarray(blk_start, dtype=np.intp)
        self.blk_ctr = np.ascontiguousarray(blk_ctr, dtype=np.float64)
        self.blk_rad = np.ascontiguousarray(blk_rad, dtype=np.float64)
        self.blk_size = blk_size
        self.M = self.pts.shape[0]
        self.nblk = self.blk_start.shape[0]
        self.cw = np.ascontiguousarray(cw, dtype=np.float64)
        self.goal = np.ascontiguousarray(goal, dtype=np.float64)
        self.cons = np.ascontiguousarray(cons, dtype=np.float64)

    cdef Py_ssize_t nearest(self, double X, double Y, Py_ssize_t hint) noexcept nogil:
        # exact argmin (smallest index on ties); a block is skipped only when
        # its padded bounding circle is farther than the best point so far
        cdef double dx = X - self.pts[hint, 0]
        cdef double dy = Y - self.pts[hint, 1]
        cdef double best = dx * dx + dy * dy
        cdef double sb = sqrt(best)
        cdef Py_ssize_t bk = hint, b, k, k1
        cdef double d2, thr
        for b in range(self.nblk):
            dx = X - self.blk_ctr[b, 0]
            dy = Y - self.blk_ctr[b, 1]
            thr = self.blk_rad[b] + sb
            if dx * dx + dy * dy > thr * thr * (1.0 + 1e-12):
                continue
            k1 = self.blk_start[b] + self.blk_size
            if k1 > self.M:
                k1 = self.M
            for k in range(self.blk_start[b], k1):
                dx = X - self.pts[k, 0]
                dy = Y - self.pts[k, 1]
                d2 = dx * dx + dy * dy
                if d2 < best or (d2 == best and k < bk):
                    best = d2
                    bk = k
            sb = sqrt(best)
        return bk

    cdef inline void project(self, double* u, double* up) noexcept nogil:
        cdef int j
        cdef double v
        for j in range(2):
            v = u[j]
            if v < up[j] + self.cons[2, j]:
                v = up[j] + self.cons[2, j]
            if v > up[j] + self.cons[3, j]:
                v = up[j] + self.cons[3, j]
            if v < self.cons[0, j]:
                v = self.cons[0, j]
            if v > self.cons[1, j]:
                v = self.cons[1, j]
            u[j] = v

    cdef double stage(self, double* x, double* u, double* up, Py_ssize_t k, double vref) noexcept nogil:
        cdef double speed = sqrt(x[4] * x[4] + x[5] * x[5])
        cdef double dx = x[0] - self.pts[k, 0]
        cdef double dy = x[1] - self.pts[k, 1]
        cdef double align = 1.0 - (x[3] * self.tan[k, 0] + x[2] * self.tan[k, 1])
        cdef double du0 = u[0] - up[0]
        cdef double du1 = u[1] - up[1]
        cdef double gx = x[0] - self.goal[0]
        cdef double gy = x[1] - self.goal[1]
        cdef double lgoal = 0.0
        if align < 0:
            align = 0.0
        if sqrt(gx * gx + gy * gy) <= self.cw[5] and speed >= self.cw[6]:
            lgoal = (speed - self.cw[6]) * (speed - self.cw[6])
        return (self.cw[0] * (speed - vref) * (speed - vref) + self.cw[1] * (dx * dx + dy * dy)
                + self.cw[2] * align + self.cw[3] * (du0 * du0 + du1 * du1) + self.cw[4] * lgoal)

    cdef void step(self, double* x, double* u) noexcept nogil:
        cdef double s = x[2], c = x[3], vx = x[4], vy = x[5], r = x[6]
        cdef double dl = u[1] * DEG2RAD
        cdef double v2 = vx * vx + vy * vy
        cdef double speed = sqrt(v2)
        cdef double h = self.h
        cdef double w, norm
        cdef Py_ssize_t j
        cdef double z[9]
        cdef double h1[MAXH]
        cdef double h2[MAXH]
        cdef double out[MAXH]
        if self.has_nn:
            for j in range(7):
                z[j] = x[j] / self.in_scale[j]
            z[7] = u[0] / self.in_scale[7]
            z[8] = u[1] / self.in_scale[8]
            mlp_forward3(z, 9, self.pW0, &self.b0[0], <int>self.H1, self.pW1, &self.b1[0], <int>self.H2,
                         self.pW2, &self.b2[0], <int>self.NO, h1, h2, out, self.wide)
        x[0] = x[0] + h * vx
        x[1] = x[1] + h * vy
        x[2] = s + h * (c * r)
        x[3] = c + h * (-s * r)
        x[4] = vx + h * (self.k_a * u[0] * c - self.k_V * vx - r * vy)
        x[5] = vy + h * (self.k_a * u[0] * s - self.k_V * vy + r * vx)
        x[6] = r + h * (self.k_d * speed * dl - self.k_r * r)
        if self.has_nn:
            w = v2 / (v2 + self.v_th * self.v_th)
            for j in range(self.NO):
                x[self.out_idx[j]] += w * (out[j] * self.out_scale[j])
        norm = sqrt(x[2] * x[2] + x[3] * x[3])
        x[2] /= norm
        x[3] /= norm

    def mppi_costs(self, x0, u_prev, U, vref, J, Py_ssize_t i0, Py_ssize_t i1):
        cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
        cdef double[::1] upv = np.ascontiguousarray(u_prev, dtype=np.float64)
        cdef double[:, :, ::1] Uv = U
        cdef double[::1] vr = vref
        cdef double[::1] Jv = J
        cdef Py_ssize_t N = Uv.shape[1]
        cdef Py_ssize_t i, t, j, k, hint0
        cdef double x[7]
        cdef double u[2]
        cdef double up[2]
        cdef double acc
        hint0 = self.nearest(x0v[0], x0v[1], 0)
        with nogil:
            for i in range(i0, i1):
                for j in range(7):
                    x[j] = x0v[j]
                up[0] = upv[0]
                up[1] = upv[1]
                k = hint0
                acc = 0.0
                for t in range(N):
                    u[0] = Uv[i, t, 0]
                    u[1] = Uv[i, t, 1]
                    self.project(u, up)
                    k = self.nearest(x[0], x[1], k)
                    acc += self.stage(x, u, up, k, vr[t])
                    self.step(x, u)
                    up[0] = u[0]
                    up[1] = u[1]
                Jv[i] = acc

    def pid_costs(self, x0, u_prev, thetas, integ0, eprev0, bint has_prev, u_bias, signs,
                  vref, J, Py_ssize_t i0, Py_ssize_t i1):
        cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
        cdef double[::1] upv = np.ascontiguousarray(u_prev, dtype=np.float64)
        cdef double[:, ::1] th = thetas
        cdef double[::1] ig0 = np.ascontiguousarray(integ0, dtype=np.float64)
        cdef double[::1] ep0 = np.ascontiguousarray(eprev0, dtype=np.float64)
        cdef double[::1] ub = np.ascontiguousarray(u_bias, dtype=np.float64)
        cdef double[::1] sg = np.ascontiguousarray(signs, dtype=np.float64)
        cdef double[::1] vr = vref
        cdef double[::1] Jv = J
        cdef Py_ssize_t N = vr.shape[0]
        cdef Py_ssize_t i, t, j, k, hint0
        cdef double x[7]
        cdef double u[2]
        cdef double up[2]
        cdef double e[3]
        cdef double ig[3]
        cdef double ep[3]
        cdef double d[3]
        cdef double acc, speed, ang, h = self.h
        cdef bint started
        hint0 = self.nearest(x0v[0], x0v[1], 0)
        with nogil:
            for i in range(i0, i1):
                for j in range(7):
                    x[j] = x0v[j]
                for j in range(3):
                    ig[j] = ig0[j]
                    ep[j] = ep0[j]
                up[0] = upv[0]
                up[1] = upv[1]
                started = has_prev
                k = hint0
                acc = 0.0
                for t in range(N):
                    k = self.nearest(x[0], x[1], k)
                    speed = sqrt(x[4] * x[4] + x[5] * x[5])
                    e[0] = vr[t] - speed
                    e[1] = (self.nrm[k, 0] * (x[0] - self.pts[k, 0])
                            + self.nrm[k, 1] * (x[1] - self.pts[k, 1]))
                    ang = fmod(atan2(x[2], x[3]) - self.psi[k] + M_PI, 2.0 * M_PI)
                    if ang < 0:
                        ang += 2.0 * M_PI
                    ang -= M_PI
                    if ang == -M_PI:
                        ang = M_PI
                    e[2] = ang
                    for j in range(3):
                        e[j] *= sg[j]
                        ig[j] = ig[j] + e[j] * h
                        if started:
                            d[j] = (e[j] - ep[j]) / h
                        else:
                            d[j] = 0.0
                        ep[j] = e[j]
                    started = True
                    u[0] = ub[0] + th[i, 0] * e[0] + th[i, 1] * ig[0] + th[i, 2] * d[0]
                    u[1] = (ub[1] + th[i, 3] * e[1] + th[i, 4] * ig[1] + th[i, 5] * d[1]
                            + th[i, 6] * e[2] + th[i, 7] * ig[2] + th[i, 8] * d[2])
                    self.project(u, up)
                    acc += self.stage(x, u, up, k, vr[t])
                    self.step(x, u)
                    up[0] = u[0]
                    up[1] = u[1]
                Jv[i] = acc
