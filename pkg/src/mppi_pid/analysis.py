"""Diagnostics for the sampling optimizers: effective sample size, numerical
checks of the KL-projection and gradient readings of the weighted-mean
update, and the input-continuity statistics of sampled perturbations.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import InputConstraints, error_basis, sequential_clip


class ValidationError(RuntimeError):
    pass


class MeasurementInvalidError(ValidationError):
    pass


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class Report:
    """Base for validator results; ``passed`` plus inputs echoed in ``config``."""

    name: str
    passed: bool
    config: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return to_jsonable(asdict(self))


# -- effective sample size ----------------------------------------------------

def ess_sample(weights) -> float:
    """``(sum w)^2 / sum w^2``; weights must be nonnegative and not all zero."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    s2 = math.fsum(w * w)
    if s2 == 0:
        raise ValueError("all weights are zero")
    return math.fsum(w) ** 2 / s2


def quad_form(g, Sigma) -> float:
    g = np.atleast_1d(np.asarray(g, dtype=float))
    S = np.asarray(Sigma, dtype=float)
    S = np.diag(S) if S.ndim == 1 else S
    return float(g @ S @ g)


def ess_predicted(g, Sigma, lam: float, I: int) -> float:
    """Idealized ESS ``I * exp(-g^T Sigma g / lam^2)`` for linearized costs."""
    return I * math.exp(-quad_form(g, Sigma) / lam ** 2)


def ess_from_moments(g, Sigma, lam: float, I: int) -> float:
    """``I * E[w]^2 / E[w^2]`` with the log-normal moments of ``w = exp(-g^T eps / lam)``."""
    s2 = quad_form(g, Sigma) / lam ** 2
    log_mean_sq, log_second = s2, 2 * s2  # log E[w]^2 and log E[w^2]
    return I * math.exp(log_mean_sq - log_second)


@dataclass
class EssReport:
    ess_sample: float
    ess_predicted: float
    I: int
    lam: float
    n_z: int
    quad: float

    @property
    def ratio_sample(self) -> float:
        return self.ess_sample / self.I

    @property
    def ratio_predicted(self) -> float:
        return self.ess_predicted / self.I


def linear_cost_ess(g, Sigma, lam: float, I: int, rng, chunk: int = 200_000) -> EssReport:
    """Monte-Carlo ESS for ``J = g^T eps`` with ``eps ~ N(0, Sigma)``.

    Draws full ``n_z``-dimensional perturbations in chunks; ``g^T eps`` is
    evaluated as ``(L^T g)^T xi`` with ``Sigma = L L^T``.
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    S = np.asarray(Sigma, dtype=float)
    S = np.diag(S) if S.ndim == 1 else S
    v = np.linalg.cholesky(S).T @ g
    J = np.empty(I)
    for i0 in range(0, I, chunk):
        i1 = min(I, i0 + chunk)
        J[i0:i1] = rng.standard_normal((i1 - i0, g.size)) @ v
    w = np.exp(-(J - J.min()) / lam)
    return EssReport(ess_sample(w), ess_predicted(g, S, lam, I), I, lam, g.size, quad_form(g, S))


def random_ess_config(rng, n_z: int, coef: float):
    """Near-isotropic ``(g, diag Sigma, lam)`` with ``g^T Sigma g / lam^2 ~= coef * n_z``."""
    lam = rng.uniform(0.5, 2.0)
    sigma = rng.uniform(0.5, 2.0)
    gbar = math.sqrt(coef) * lam / sigma
    g = gbar * rng.choice([-1.0, 1.0], size=n_z) * rng.uniform(0.8, 1.2, size=n_z)
    var = sigma ** 2 * rng.uniform(0.8, 1.2, size=n_z)
    return g, var, lam


def validate_ess_scaling(n_configs: int = 10, dims=(1, 9, 30, 120), I: int = 1_000_000, seed: int = 0,
                         rel_tol: float = 0.05, min_ratio: float = 1e-3, coef_range=(0.003, 0.01)) -> Report:
    """Empirical vs predicted ESS ratio over random configs and dimensions.

    Each config fixes a per-dimension exponent coefficient so the predicted
    ratio ``exp(-coef * n_z)`` decays exponentially in ``n_z``.
    """
    rng = np.random.default_rng(seed)
    rows, ok = [], True
    for c in range(n_configs):
        coef = rng.uniform(*coef_range)
        ratios = []
        for n_z in dims:
            g, var, lam = random_ess_config(rng, n_z, coef)
            rep = linear_cost_ess(g, var, lam, I, rng)
            rel = abs(rep.ratio_sample - rep.ratio_predicted) / rep.ratio_predicted
            checked = rep.ratio_predicted > min_ratio
            good = (rel < rel_tol) or not checked
            ok &= good
            ratios.append(rep.ratio_sample)
            rows.append({"config": c, "n_z": n_z, "lam": lam, "quad": rep.quad, "ratio_sample": rep.ratio_sample,
                         "ratio_predicted": rep.ratio_predicted, "rel_dev": rel, "checked": checked, "ok": good})
        decays = all(a > b for a, b in zip(ratios, ratios[1:]))
        ok &= decays
        rows.append({"config": c, "monotone_decay": decays})
    return Report("ess", bool(ok), {"n_configs": n_configs, "dims": list(dims), "I": I, "seed": seed,
                                    "rel_tol": rel_tol, "min_ratio": min_ratio, "coef_range": list(coef_range)},
                  {"rows": rows})


# -- weighted-mean update as KL projection -----------------------------------

def _grid_moments(J, Sigma, lam, n, half_width, pts):
    """Mass, mean and the evaluation grid of ``q ~ exp(-J/lam) N(0, Sigma)``."""
    sd = np.sqrt(np.diag(Sigma))
    axes = [np.linspace(-half_width * s, half_width * s, pts) for s in sd]
    grids = np.meshgrid(*axes, indexing="ij")
    E = np.stack([g.ravel() for g in grids], axis=1)
    P = np.linalg.inv(Sigma)
    Jv = np.asarray(J(E), dtype=float)
    logq = -Jv / lam - 0.5 * np.einsum("ij,jk,ik->i", E, P, E)
    q = np.exp(logq - logq.max())
    cell = np.prod([a[1] - a[0] for a in axes])
    mass = q.sum() * cell
    return mass, (q[:, None] * E).sum(0) * cell / mass, E, q * cell / mass, logq.max()


def kl_objective(m, E, qw, Sigma) -> float:
    """``D_KL(q || N(m, Sigma))`` up to an ``m``-independent constant."""
    P = np.linalg.inv(Sigma)
    d = E - m
    return 0.5 * float(np.sum(qw * np.einsum("ij,jk,ik->i", d, P, d)))


def tilted_mean_grid(J, Sigma, lam: float, half_width: float = 8.0, pts0: int = 101, rtol: float = 1e-6,
                     max_pts: int = 6401, mass_tol: float = 1e-6):
    """Mean of the cost-tilted density by grid integration with resolution doubling.

    Raises ``ValidationError`` if more than ``mass_tol`` of the mass lies
    outside the box (checked against a box 1.5 times wider).
    """
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    n = Sigma.shape[0]
    if n not in (1, 2):
        raise ValueError("grid integration supports n in {1, 2}")
    pts, prev = pts0, None
    while True:
        mass, m, E, qw, lmax = _grid_moments(J, Sigma, lam, n, half_width, pts)
        if prev is not None:
            scale = max(np.linalg.norm(m), 1e-300)
            if np.linalg.norm(m - prev) / scale < rtol or np.linalg.norm(m - prev) < 1e-15:
                break
        if 2 * pts - 1 > max_pts:
            raise ValidationError("grid integration did not converge")
        prev, pts = m, 2 * pts - 1
    big_mass, _, _, _, big_lmax = _grid_moments(J, Sigma, lam, n, 1.5 * half_width, int(1.5 * (pts - 1)) + 1)
    outside = 1.0 - mass * math.exp(lmax - big_lmax) / big_mass
    if outside > mass_tol:
        raise ValidationError(f"integration box too small: {outside:.2e} of the mass lies outside")
    return m, E, qw, {"points_per_dim": pts, "mass_outside": outside}


def mc_update(J, Sigma, lam: float, I: int, rng, z=None):
    """Monte-Carlo weighted-mean update with ``eps ~ N(0, Sigma)``; ``J`` takes a batch of eps."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    eps = rng.standard_normal((I, Sigma.shape[0])) @ np.linalg.cholesky(Sigma).T
    Jv = np.asarray(J(eps), dtype=float)
    w = np.exp(-(Jv - Jv.min()) / lam)
    wn = w / w.sum()
    m = wn @ eps
    se = np.sqrt(wn ** 2 @ (eps - m) ** 2)
    return m, se, ess_sample(w)


def validate_kl_projection(J, Sigma, lam: float, I_mc: int = 1_000_000, seed: int = 0, n_perturb: int = 100,
                           rel_tol: float = 0.01, perturb_scale: float = 0.1) -> Report:
    """Grid mean ``m*`` of the tilted density vs the Monte-Carlo update; ``m*`` minimizes the KL objective."""
    rng = np.random.default_rng(seed)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    m_star, E, qw, info = tilted_mean_grid(J, Sigma, lam)
    m_mc, se, ess = mc_update(J, Sigma, lam, I_mc, rng)
    rel = float(np.linalg.norm(m_mc - m_star) / max(np.linalg.norm(m_star), 1e-300))
    kl0 = kl_objective(m_star, E, qw, Sigma)
    sd = np.sqrt(np.diag(Sigma))
    deltas = rng.standard_normal((n_perturb, Sigma.shape[0])) * sd * perturb_scale
    kls = np.array([kl_objective(m_star + d, E, qw, Sigma) for d in deltas])
    passed = rel < rel_tol and bool(np.all(kls > kl0))
    return Report("kl_projection", passed,
                  {"Sigma": Sigma, "lam": lam, "I_mc": I_mc, "seed": seed, "n_perturb": n_perturb,
                   "rel_tol": rel_tol},
                  {"m_star": m_star, "m_mc": m_mc, "mc_standard_error": se, "rel_dev": rel, "ess": ess,
                   "kl_at_m_star": kl0, "min_kl_perturbed": float(kls.min()), **info})


# -- weighted-mean update as a gradient step ----------------------------------

def validate_gradient_interpretation(J, grad, z, Sigma0, lam: float = 0.05, alphas=(0.1, 0.05, 0.01),
                                     I_mc: int = 1_000_000, seed: int = 0, rel_tol: float = 0.02,
                                     n_se: float = 3.0) -> Report:
    """MC update vs ``-Sigma grad J(z) / lam`` for ``Sigma = alpha^2 Sigma0``.

    The same standard-normal draws are reused for every ``alpha``. Passes if the
    error at the smallest ``alpha`` is below ``rel_tol`` and the error sequence
    is non-increasing up to ``n_se`` standard errors.
    """
    z = np.asarray(z, dtype=float)
    S0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    L0 = np.linalg.cholesky(S0)
    xi = np.random.default_rng(seed).standard_normal((I_mc, z.size))
    g = np.asarray(grad(z), dtype=float)
    rows = []
    for a in alphas:
        eps = a * (xi @ L0.T)
        Jv = np.asarray(J(z + eps), dtype=float)
        w = np.exp(-(Jv - Jv.min()) / lam)
        wn = w / w.sum()
        m = wn @ eps
        pred = -(a * a) * (S0 @ g) / lam
        se = float(np.linalg.norm(np.sqrt(wn ** 2 @ (eps - m) ** 2)) / np.linalg.norm(pred))
        rows.append({"alpha": a, "m_hat": m, "predicted": pred,
                     "rel_err": float(np.linalg.norm(m - pred) / np.linalg.norm(pred)), "rel_se": se})
    errs = [r["rel_err"] for r in rows]
    monotone = all(e1 <= e0 + n_se * r1["rel_se"] for e0, e1, r1 in zip(errs, errs[1:], rows[1:]))
    passed = errs[-1] < rel_tol and monotone
    return Report("gradient", bool(passed),
                  {"z": z, "Sigma0": S0, "lam": lam, "alphas": list(alphas), "I_mc": I_mc, "seed": seed,
                   "rel_tol": rel_tol}, {"rows": rows, "monotone": monotone})


# -- input continuity ---------------------------------------------------------

def pid_basis_trajectory(errors, h: float, integral0=None, prev_error=None) -> np.ndarray:
    """Error-basis matrices ``E_t`` (T, 2, 9) along an error trajectory (T, 3).

    Uses the same integral/derivative recursion as the PID step.
    """
    errors = np.asarray(errors, dtype=float)
    integ = np.zeros(3) if integral0 is None else np.asarray(integral0, dtype=float)
    prev = prev_error
    out = np.empty((len(errors), 2, 9))
    for t, e in enumerate(errors):
        integ = integ + e * h
        d = np.zeros(3) if prev is None else (e - prev) / h
        out[t] = error_basis(e, integ, d)
        prev = e
    return out


@dataclass
class ContinuityReport:
    cov_empirical: np.ndarray  # (T, T, 2, 2)
    cov_predicted: np.ndarray
    cov_standard_error: np.ndarray
    increment_empirical: np.ndarray  # (T-1,)
    increment_predicted: np.ndarray
    increment_standard_error: np.ndarray


def _check_unclipped(u, u_prev, c: InputConstraints | None):
    if c is None:
        return
    up = np.broadcast_to(np.asarray(u_prev, dtype=float), u[:, 0].shape)
    for t in range(u.shape[1]):
        if not np.array_equal(sequential_clip(u[:, t], up, c), u[:, t]):
            raise MeasurementInvalidError(f"projection active at t={t}; widen the constraints")
        up = u[:, t]


def _cov_stats(du, pred_cov, pred_inc):
    n, T = du.shape[:2]
    c = du - du.mean(0)
    cov = np.einsum("ntj,nsk->tsjk", c, c) / (n - 1)
    prod_sq = np.einsum("ntj,nsk->tsjk", c ** 2, c ** 2) / n
    se = np.sqrt(np.maximum(prod_sq - cov ** 2, 0.0) / n)
    inc = np.sum(np.diff(du, axis=1) ** 2, axis=2)
    return ContinuityReport(cov, pred_cov, se, inc.mean(0), pred_inc, inc.std(0, ddof=1) / math.sqrt(n))


def continuity_stats_pid(E, sigma_theta, n_trials: int, rng, theta=None, u_bias=(0.0, 0.0),
                         constraints: InputConstraints | None = None, u_prev=None) -> ContinuityReport:
    """Pre-projection input perturbations ``E_t eps`` along frozen ``E`` (T, 2, 9)."""
    E = np.asarray(E, dtype=float)
    St = np.diag(np.asarray(sigma_theta, dtype=float) ** 2)
    eps = rng.standard_normal((n_trials, E.shape[2])) * np.asarray(sigma_theta, dtype=float)
    du = np.einsum("tjk,nk->ntj", E, eps)
    if constraints is not None:
        th = np.zeros(E.shape[2]) if theta is None else np.asarray(theta, dtype=float)
        u = np.asarray(u_bias, dtype=float) + np.einsum("tjk,k->tj", E, th)[None] + du
        _check_unclipped(u, u[:, 0] if u_prev is None else u_prev, constraints)
    pred = np.einsum("tjk,kl,sml->tsjm", E, St, E)
    dE = np.diff(E, axis=0)
    pred_inc = np.einsum("tjk,kl,tjl->t", dE, St, dE)
    return _cov_stats(du, pred, pred_inc)


def continuity_stats_mppi(T: int, sigma_u, n_trials: int, rng, nominal=None,
                          constraints: InputConstraints | None = None, u_prev=None) -> ContinuityReport:
    """Independent per-step input perturbations ``eps_t ~ N(0, diag sigma_u^2)``."""
    su = np.asarray(sigma_u, dtype=float)
    du = rng.standard_normal((n_trials, T, su.size)) * su
    if constraints is not None:
        u = (np.zeros((T, su.size)) if nominal is None else np.asarray(nominal, dtype=float))[None] + du
        _check_unclipped(u, u[:, 0] if u_prev is None else u_prev, constraints)
    pred = np.zeros((T, T, su.size, su.size))
    for t in range(T):
        pred[t, t] = np.diag(su ** 2)
    return _cov_stats(du, pred, np.full(T - 1, 2.0 * float(np.sum(su ** 2))))


def random_error_trajectory(rng, T: int, scale=(0.05, 0.1, 0.2)) -> np.ndarray:
    """Smooth random walk of the three tracking errors."""
    steps = rng.standard_normal((T, 3)) * np.asarray(scale)
    return np.cumsum(steps, axis=0)


def validate_continuity(T: int = 8, n_trials: int = 100_000, seed: int = 0, h: float = 0.0667,
                        sigma_theta=None, sigma_u=(8.0, 6.0), n_se: float = 4.0, inc_tol: float = 0.03) -> Report:
    """Cross-time covariance and increment identities for both perturbation schemes."""
    from .control import TABLE3_SIGMA_THETA

    sigma_theta = TABLE3_SIGMA_THETA if sigma_theta is None else sigma_theta
    rng = np.random.default_rng(seed)
    E = pid_basis_trajectory(random_error_trajectory(rng, T), h)
    pid = continuity_stats_pid(E, sigma_theta, n_trials, rng)
    z = np.abs(pid.cov_empirical - pid.cov_predicted) / np.maximum(pid.cov_standard_error, 1e-300)
    # entries that are structurally zero (e.g. speed/steering cross terms) have zero error and zero SE
    zero = (pid.cov_predicted == 0) & (pid.cov_empirical == 0)
    cov_ok = bool(np.all(zero | (z <= n_se)))
    inc_rel = np.abs(pid.increment_empirical - pid.increment_predicted) / pid.increment_predicted
    inc_ok = bool(np.all(inc_rel < inc_tol))
    mp = continuity_stats_mppi(T, sigma_u, n_trials, rng)
    off = ~np.eye(T, dtype=bool)
    sd = np.sqrt(np.einsum("ttjj->tj", mp.cov_empirical))
    corr = mp.cov_empirical / (sd[:, None, :, None] * sd[None, :, None, :])
    off_ok = bool(np.all(np.abs(corr[off]) <= n_se / math.sqrt(n_trials)))
    mp_rel = np.abs(mp.increment_empirical - mp.increment_predicted) / mp.increment_predicted
    mp_ok = bool(np.all(mp_rel < inc_tol))
    return Report("continuity", cov_ok and inc_ok and off_ok and mp_ok,
                  {"T": T, "n_trials": n_trials, "seed": seed, "h": h, "sigma_theta": list(sigma_theta),
                   "sigma_u": list(sigma_u), "n_se": n_se, "inc_tol": inc_tol},
                  {"pid_cov_max_z": float(np.max(np.where(zero, 0.0, z))), "pid_cov_ok": cov_ok,
                   "pid_increment_rel_dev": inc_rel, "pid_increment_ok": inc_ok,
                   "mppi_max_offdiag_corr": float(np.max(np.abs(corr[off]))), "mppi_offdiag_ok": off_ok,
                   "mppi_increment_predicted": float(mp.increment_predicted[0]),
                   "mppi_increment_rel_dev": mp_rel, "mppi_increment_ok": mp_ok})


# -- default validator problems -----------------------------------------------

KL_SIGMA = ((1.0, 0.3), (0.3, 0.5))
KL_LAMBDA = 1.0
KL_A = np.array([[1.0, 0.0], [0.0, 0.5]])
KL_CENTER = np.array([1.0, -0.5])


def quadratic_cost(eps):
    d = np.atleast_2d(eps) - KL_CENTER
    return 0.5 * np.einsum("ij,jk,ik->i", d, KL_A, d)


def quadratic_tilted_mean(Sigma=KL_SIGMA, lam=KL_LAMBDA, A=KL_A, center=KL_CENTER) -> np.ndarray:
    """Closed-form mean of ``exp(-0.5 (e-c)^T A (e-c) / lam) N(e; 0, Sigma)``."""
    P = np.linalg.inv(np.asarray(Sigma)) + np.asarray(A) / lam
    return np.linalg.solve(P, np.asarray(A) @ np.asarray(center) / lam)


def squared_norm(z):
    z = np.atleast_2d(z)
    return np.sum(z * z, axis=1)


def squared_norm_grad(z):
    return 2.0 * np.asarray(z, dtype=float)


def run_validators(only=None, seed: int = 0, I_mc: int = 1_000_000, ess_I: int = 1_000_000,
                   n_trials: int = 100_000) -> list[Report]:
    """Default validator suite; ``only`` restricts to a subset of names."""
    names = ("kl", "gradient", "ess", "continuity")
    chosen = names if not only else tuple(only)
    bad = set(chosen) - set(names)
    if bad:
        raise ValueError(f"unknown validators {sorted(bad)}; choose from {names}")
    out = []
    if "kl" in chosen:
        out.append(validate_kl_projection(quadratic_cost, np.array(KL_SIGMA), KL_LAMBDA, I_mc=I_mc, seed=seed))
    if "gradient" in chosen:
        out.append(validate_gradient_interpretation(squared_norm, squared_norm_grad, (1.0, 0.0), np.eye(2),
                                                    I_mc=I_mc, seed=seed))
    if "ess" in chosen:
        out.append(validate_ess_scaling(I=ess_I, seed=seed))
    if "continuity" in chosen:
        out.append(validate_continuity(n_trials=n_trials, seed=seed))
    return out
