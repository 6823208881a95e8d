"""Pure-numpy rollout kernel, vectorized over samples.

Same interface and semantics as the compiled ``_kernels`` module; selected
automatically when the extension is not built.
"""
import math

import numpy as np

TWO_PI = 2.0 * math.pi
DEG2RAD = math.pi / 180.0


class RolloutKernel:
    def __init__(self, W0, b0, W1, b1, W2, b2, in_scale, out_idx, out_scale, phys, h, v_th,
                 has_nn, pts, tan, nrm, psi, blk_start, blk_ctr, blk_rad, blk_size,
                 cw, goal, cons):
        self.W = (np.asarray(W0), np.asarray(W1), np.asarray(W2))
        self.b = (np.asarray(b0), np.asarray(b1), np.asarray(b2))
        self.in_scale = np.asarray(in_scale)
        self.out_idx = np.asarray(out_idx)
        self.out_scale = np.asarray(out_scale)
        self.k_a, self.k_V, self.k_d, self.k_r = (float(v) for v in phys)
        self.h = float(h)
        self.v_th = float(v_th)
        self.has_nn = bool(has_nn)
        self.pts = np.asarray(pts)
        self.tan = np.asarray(tan)
        self.nrm = np.asarray(nrm)
        self.psi = np.asarray(psi)
        self.cw = np.asarray(cw)
        self.goal = np.asarray(goal)
        self.cons = np.asarray(cons)  # rows: u_min, u_max, du_min, du_max

    # -- pieces -----------------------------------------------------------
    def _nearest(self, X, Y):
        dx = X[:, None] - self.pts[None, :, 0]
        dy = Y[:, None] - self.pts[None, :, 1]
        return np.argmin(dx * dx + dy * dy, axis=1)

    def _project(self, u, up):
        c = self.cons
        v = np.minimum(np.maximum(u, up + c[2]), up + c[3])
        return np.minimum(np.maximum(v, c[0]), c[1])

    def _stage(self, x, u, up, k, vref):
        w_V, w_path, w_align, w_du, w_goal, eps_pos, eps_vel = self.cw
        speed = np.sqrt(x[:, 4] ** 2 + x[:, 5] ** 2)
        px = self.pts[k]
        dx, dy = x[:, 0] - px[:, 0], x[:, 1] - px[:, 1]
        t = self.tan[k]
        align = np.maximum(0.0, 1.0 - (x[:, 3] * t[:, 0] + x[:, 2] * t[:, 1]))
        du = u - up
        gx, gy = x[:, 0] - self.goal[0], x[:, 1] - self.goal[1]
        in_goal = (np.sqrt(gx * gx + gy * gy) <= eps_pos) & (speed >= eps_vel)
        lgoal = np.where(in_goal, (speed - eps_vel) ** 2, 0.0)
        return (w_V * (speed - vref) ** 2 + w_path * (dx * dx + dy * dy) + w_align * align
                + w_du * (du[:, 0] ** 2 + du[:, 1] ** 2) + w_goal * lgoal)

    def _step(self, x, u):
        s, c, vx, vy, r = x[:, 2], x[:, 3], x[:, 4], x[:, 5], x[:, 6]
        a, dl = u[:, 0], u[:, 1] * DEG2RAD
        v2 = vx * vx + vy * vy
        speed = np.sqrt(v2)
        h = self.h
        xn = np.empty_like(x)
        xn[:, 0] = x[:, 0] + h * vx
        xn[:, 1] = x[:, 1] + h * vy
        xn[:, 2] = s + h * (c * r)
        xn[:, 3] = c + h * (-s * r)
        xn[:, 4] = vx + h * (self.k_a * a * c - self.k_V * vx - r * vy)
        xn[:, 5] = vy + h * (self.k_a * a * s - self.k_V * vy + r * vx)
        xn[:, 6] = r + h * (self.k_d * speed * dl - self.k_r * r)
        if self.has_nn:
            z = np.concatenate([x, u], axis=1) / self.in_scale
            hid = np.maximum(z @ self.W[0].T + self.b[0], 0.0)
            hid = np.maximum(hid @ self.W[1].T + self.b[1], 0.0)
            out = (hid @ self.W[2].T + self.b[2]) * self.out_scale
            w = v2 / (v2 + self.v_th * self.v_th)
            xn[:, self.out_idx] += w[:, None] * out
        norm = np.sqrt(xn[:, 2] ** 2 + xn[:, 3] ** 2)
        xn[:, 2] /= norm
        xn[:, 3] /= norm
        return xn

    # -- public -----------------------------------------------------------
    def mppi_costs(self, x0, u_prev, U, vref, J, i0, i1):
        """Costs of perturbed input sequences ``U[i0:i1]`` (projected inside)."""
        n = i1 - i0
        N = U.shape[1]
        x = np.repeat(np.asarray(x0, dtype=float)[None, :], n, axis=0)
        up = np.repeat(np.asarray(u_prev, dtype=float)[None, :], n, axis=0)
        acc = np.zeros(n)
        for t in range(N):
            u = self._project(U[i0:i1, t, :], up)
            k = self._nearest(x[:, 0], x[:, 1])
            acc += self._stage(x, u, up, k, vref[t])
            x = self._step(x, u)
            up = u
        J[i0:i1] = acc

    def pid_costs(self, x0, u_prev, thetas, integ0, eprev0, has_prev, u_bias, signs, vref, J, i0, i1):
        """Costs of PID rollouts with gain samples ``thetas[i0:i1]``."""
        n = i1 - i0
        N = vref.shape[0]
        h = self.h
        th = np.asarray(thetas)[i0:i1]
        x = np.repeat(np.asarray(x0, dtype=float)[None, :], n, axis=0)
        up = np.repeat(np.asarray(u_prev, dtype=float)[None, :], n, axis=0)
        integ = np.repeat(np.asarray(integ0, dtype=float)[None, :], n, axis=0)
        eprev = np.repeat(np.asarray(eprev0, dtype=float)[None, :], n, axis=0)
        started = bool(has_prev)
        acc = np.zeros(n)
        for t in range(N):
            k = self._nearest(x[:, 0], x[:, 1])
            speed = np.sqrt(x[:, 4] ** 2 + x[:, 5] ** 2)
            p = self.pts[k]
            e = np.empty((n, 3))
            e[:, 0] = vref[t] - speed
            e[:, 1] = self.nrm[k, 0] * (x[:, 0] - p[:, 0]) + self.nrm[k, 1] * (x[:, 1] - p[:, 1])
            ang = np.mod(np.arctan2(x[:, 2], x[:, 3]) - self.psi[k] + math.pi, TWO_PI) - math.pi
            e[:, 2] = np.where(ang == -math.pi, math.pi, ang)
            e *= signs
            integ = integ + e * h
            d = (e - eprev) / h if started else np.zeros_like(e)
            eprev = e
            started = True
            raw = np.empty((n, 2))
            raw[:, 0] = u_bias[0] + th[:, 0] * e[:, 0] + th[:, 1] * integ[:, 0] + th[:, 2] * d[:, 0]
            raw[:, 1] = (u_bias[1] + th[:, 3] * e[:, 1] + th[:, 4] * integ[:, 1] + th[:, 5] * d[:, 1]
                         + th[:, 6] * e[:, 2] + th[:, 7] * integ[:, 2] + th[:, 8] * d[:, 2])
            u = self._project(raw, up)
            acc += self._stage(x, u, up, k, vref[t])
            x = self._step(x, u)
            up = u
        J[i0:i1] = acc
