"""Target distributions: log-densities and exact gradients.

Four families drive the studies: a general Gaussian, a symmetric two-component
Gaussian mixture, Bayesian logistic regression under a flat prior, and the
stochastic volatility posterior in its transformed parameterization.  Each is
wrapped in a TargetModel carrying log pi (up to an additive constant) and,
where needed by MALA, grad log pi.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky_banded, solveh_banded
from scipy.special import digamma, expit, polygamma
from scipy.stats import invwishart

__all__ = [
    "TargetModel",
    "GaussMixtureSpec",
    "LogisticData",
    "SvModelSpec",
    "gaussian_target",
    "mixture_target",
    "mixture_cov_draw",
    "logistic_target",
    "logistic_mle_cov",
    "load_logistic_csv",
    "bundled_dataset",
    "bundled_dataset_names",
    "sv_target",
    "sv_simulate",
    "sv_map_cov",
]


@dataclass(frozen=True)
class TargetModel:
    """Log-density (up to a constant) and optional gradient of a target law."""

    dim: int
    log_density: Callable[[np.ndarray], float]
    grad_log_density: Optional[Callable[[np.ndarray], np.ndarray]] = None


# ---------------------------------------------------------------------------
# Gaussian


def gaussian_target(mean, cov) -> TargetModel:
    """N(mean, cov) with exact gradient -Sigma^{-1}(x - mean)."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise ValueError("cov shape does not match mean")
    factor = cho_factor(cov, lower=True)

    def log_density(x: np.ndarray) -> float:
        v = np.asarray(x, dtype=float) - mean
        return -0.5 * float(v @ cho_solve(factor, v))

    def grad_log_density(x: np.ndarray) -> np.ndarray:
        v = np.asarray(x, dtype=float) - mean
        return -cho_solve(factor, v)

    return TargetModel(dim=d, log_density=log_density, grad_log_density=grad_log_density)


# ---------------------------------------------------------------------------
# Two-component Gaussian mixture


@dataclass(frozen=True)
class GaussMixtureSpec:
    """(1/2) N(m, cov) + (1/2) N(-m, cov) with m = (half_separation, 0, ..., 0)."""

    dim: int
    half_separation: float
    cov: np.ndarray

    def __post_init__(self) -> None:
        if self.half_separation <= 0:
            raise ValueError("half_separation must be positive")
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (self.dim, self.dim):
            raise ValueError("cov shape does not match dim")
        object.__setattr__(self, "cov", cov)

    @property
    def mode_offset(self) -> np.ndarray:
        m = np.zeros(self.dim)
        m[0] = self.half_separation
        return m


def mixture_target(spec: GaussMixtureSpec) -> TargetModel:
    """Mixture log-density via log-sum-exp; gradient weights the two components
    by their posterior responsibilities."""
    m = spec.mode_offset
    factor = cho_factor(spec.cov, lower=True)

    def _comp(x: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
        vp = x - m
        vm = x + m
        sp = cho_solve(factor, vp)
        sm = cho_solve(factor, vm)
        return -0.5 * float(vp @ sp), -0.5 * float(vm @ sm), sp, sm

    def log_density(x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        lp, lm, _, _ = _comp(x)
        return float(np.logaddexp(lp, lm)) - np.log(2.0)

    def grad_log_density(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lp, lm, sp, sm = _comp(x)
        tot = np.logaddexp(lp, lm)
        wp = np.exp(lp - tot)
        wm = np.exp(lm - tot)
        return -(wp * sp + wm * sm)

    return TargetModel(dim=spec.dim, log_density=log_density, grad_log_density=grad_log_density)


def mixture_cov_draw(d: int, seed: int) -> np.ndarray:
    """Inverse-Wishart(identity scale, d+2 dof) draw rescaled to largest eigenvalue 25."""
    if d < 2:
        raise ValueError("d must be >= 2")
    rng = np.random.default_rng(seed)
    cov = invwishart(df=d + 2, scale=np.eye(d)).rvs(random_state=rng)
    cov = 0.5 * (cov + cov.T)
    cov *= 25.0 / np.linalg.eigvalsh(cov)[-1]
    return cov


# ---------------------------------------------------------------------------
# Bayesian logistic regression, flat prior


@dataclass(frozen=True)
class LogisticData:
    """Design matrix with leading intercept column and binary response."""

    X: np.ndarray
    y: np.ndarray
    name: str = "logistic"

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be (N, d) with y of length N")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("y must be binary 0/1")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first column of X must be the intercept (all ones)")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, t)


def logistic_target(data: LogisticData) -> TargetModel:
    """log pi(gamma) = y^T X gamma - sum_i softplus(x_i^T gamma), flat prior."""
    X, y = data.X, data.y

    def log_density(gamma: np.ndarray) -> float:
        t = X @ np.asarray(gamma, dtype=float)
        return float(y @ t - _softplus(t).sum())

    def grad_log_density(gamma: np.ndarray) -> np.ndarray:
        t = X @ np.asarray(gamma, dtype=float)
        return X.T @ (y - expit(t))

    return TargetModel(dim=data.dim, log_density=log_density, grad_log_density=grad_log_density)


def logistic_mle_cov(data: LogisticData) -> tuple[np.ndarray, np.ndarray]:
    """MLE by Newton-Raphson with step halving; covariance = (X^T W X)^{-1} at the mode."""
    X, y = data.X, data.y
    gamma = np.zeros(data.dim)
    target = logistic_target(data)
    ll = target.log_density(gamma)
    for _ in range(100):
        t = X @ gamma
        p = expit(t)
        g = X.T @ (y - p)
        if np.abs(g).max() < 1e-9 * len(y):
            W = p * (1.0 - p)
            info = X.T @ (W[:, None] * X)
            cov = np.linalg.inv(info)
            return gamma, 0.5 * (cov + cov.T)
        W = p * (1.0 - p)
        info = X.T @ (W[:, None] * X)
        step = np.linalg.solve(info, g)
        scale = 1.0
        for _ in range(50):
            cand = gamma + scale * step
            ll_new = target.log_density(cand)
            if ll_new > ll - 1e-12:
                gamma, ll = cand, ll_new
                break
            scale *= 0.5
        else:
            break
    raise RuntimeError(f"logistic MLE did not converge in 100 iterations on {data.name!r}")


def load_logistic_csv(path) -> LogisticData:
    """Read a dataset CSV (header row, response column named 'y'), prepending an intercept."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if "y" not in header:
        raise ValueError(f"{path}: no response column named 'y'")
    yi = header.index("y")
    body = np.asarray(rows[1:], dtype=float)
    y = body[:, yi]
    feats = np.delete(body, yi, axis=1)
    X = np.column_stack([np.ones(len(y)), feats])
    import os

    name = os.path.splitext(os.path.basename(str(path)))[0]
    return LogisticData(X=X, y=y, name=name)


_BUNDLED = ("ripley", "pima", "heart", "australian", "german")


def bundled_dataset_names() -> tuple[str, ...]:
    return _BUNDLED


def bundled_dataset(name: str) -> LogisticData:
    """One of the five bundled benchmark datasets (see README for provenance)."""
    if name not in _BUNDLED:
        raise ValueError(f"unknown dataset {name!r}; have {_BUNDLED}")
    ref = resources.files("pecv").joinpath(f"data/{name}.csv")
    with resources.as_file(ref) as path:
        return load_logistic_csv(path)


# ---------------------------------------------------------------------------
# Stochastic volatility posterior, transformed parameterization
#
# Observations r_t = exp(h_t/2) eps_t; latents h_t = m + phi (h_{t-1} - m) + s eta_t
# with stationary h_1 ~ N(m, s^2/(1-phi^2)).  Sampled state is
# u = (m, phitilde, s2tilde, h_1..h_N), phi = 2 expit(phitilde) - 1,
# s^2 = exp(s2tilde), so d = N + 3.  Priors: m ~ N(0, 10); phitilde and
# s2tilde get Gaussians matching the first two moments of the transformed
# Beta(20, 0.2) prior on (phi+1)/2 and Gamma(1/2, rate 1/2) prior on s^2:
#     E[logit B]  = psi(20) - psi(0.2),      Var = psi'(20) + psi'(0.2)
#     E[log s^2]  = psi(1/2) - log(1/2),     Var = psi'(1/2)

_PHI_PRIOR_MEAN = float(digamma(20.0) - digamma(0.2))
_PHI_PRIOR_VAR = float(polygamma(1, 20.0) + polygamma(1, 0.2))
_S2_PRIOR_MEAN = float(digamma(0.5) - np.log(0.5))
_S2_PRIOR_VAR = float(polygamma(1, 0.5))
_M_PRIOR_VAR = 10.0


@dataclass(frozen=True)
class SvModelSpec:
    """Stochastic volatility data and prior constants; dim = N + 3."""

    r: np.ndarray
    transformed: bool = True
    phi_prior_mean: float = _PHI_PRIOR_MEAN
    phi_prior_var: float = _PHI_PRIOR_VAR
    s2_prior_mean: float = _S2_PRIOR_MEAN
    s2_prior_var: float = _S2_PRIOR_VAR
    m_prior_var: float = _M_PRIOR_VAR

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 1 or r.size < 2 or not np.all(np.isfinite(r)):
            raise ValueError("r must be a finite vector of length >= 2")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        if not self.transformed:
            raise NotImplementedError("only the transformed parameterization is supported")

    @property
    def N(self) -> int:
        return self.r.shape[0]

    @property
    def dim(self) -> int:
        return self.N + 3


def _sv_unpack(u: np.ndarray) -> tuple[float, float, float, np.ndarray]:
    return float(u[0]), float(u[1]), float(u[2]), u[3:]


def sv_target(spec: SvModelSpec) -> TargetModel:
    """Joint transformed posterior over (m, phitilde, s2tilde, h_1..h_N)."""
    r2 = spec.r**2

    def log_density(u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float)
        m, phit, st, h = _sv_unpack(u)
        phi = 2.0 * expit(phit) - 1.0
        one_m_phi2 = 4.0 * expit(phit) * expit(-phit)  # 1 - phi^2, stable
        v = np.exp(st)
        if one_m_phi2 <= 0.0 or not np.isfinite(v) or v <= 0.0:
            return -np.inf
        with np.errstate(over="ignore"):
            obs = -0.5 * np.sum(h + r2 * np.exp(-h))
        hm = h - m
        e = hm[1:] - phi * hm[:-1]
        v0 = v / one_m_phi2
        ar = (
            -0.5 * np.log(v0)
            - 0.5 * hm[0] ** 2 / v0
            - 0.5 * (spec.N - 1) * st
            - 0.5 * np.sum(e**2) / v
        )
        pri = (
            -0.5 * m**2 / spec.m_prior_var
            - 0.5 * (phit - spec.phi_prior_mean) ** 2 / spec.phi_prior_var
            - 0.5 * (st - spec.s2_prior_mean) ** 2 / spec.s2_prior_var
        )
        out = obs + ar + pri
        return float(out) if np.isfinite(out) else -np.inf

    def grad_log_density(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        m, phit, st, h = _sv_unpack(u)
        sig = expit(phit)
        phi = 2.0 * sig - 1.0
        one_m_phi2 = 4.0 * sig * expit(-phit)
        v = np.exp(st)
        hm = h - m
        e = hm[1:] - phi * hm[:-1]
        v0 = v / one_m_phi2

        g = np.empty_like(u)
        with np.errstate(over="ignore"):
            gh = -0.5 + 0.5 * r2 * np.exp(-h)
        gh[0] += -hm[0] / v0
        gh[:-1] += phi * e / v
        gh[1:] += -e / v
        g[3:] = gh

        g[0] = hm[0] / v0 + (1.0 - phi) * np.sum(e) / v - m / spec.m_prior_var

        dphi = (
            -phi / one_m_phi2
            + hm[0] ** 2 * phi / (v0 * one_m_phi2)
            + np.sum(e * hm[:-1]) / v
        )
        # d phi / d phitilde = (1 - phi^2)/2
        g[1] = dphi * 0.5 * one_m_phi2 - (phit - spec.phi_prior_mean) / spec.phi_prior_var

        dv = (
            -0.5 / v
            + 0.5 * hm[0] ** 2 * one_m_phi2 / v**2
            - 0.5 * (spec.N - 1) / v
            + 0.5 * np.sum(e**2) / v**2
        )
        g[2] = dv * v - (st - spec.s2_prior_mean) / spec.s2_prior_var
        return g

    return TargetModel(dim=spec.dim, log_density=log_density, grad_log_density=grad_log_density)


def sv_simulate(N: int, phi: float, m: float, s: float, seed: int, return_h: bool = False):
    """Simulate N observations from the SV model, h_0 drawn from the stationary law."""
    if not (abs(phi) < 1.0 and s > 0.0):
        raise ValueError("need |phi| < 1 and s > 0")
    rng = np.random.default_rng(seed)
    h = np.empty(N)
    prev = m + s / np.sqrt(1.0 - phi**2) * rng.standard_normal()
    for t in range(N):
        prev = m + phi * (prev - m) + s * rng.standard_normal()
        h[t] = prev
    r = np.exp(0.5 * h) * rng.standard_normal(N)
    return (r, h) if return_h else r


def _sv_qml_neg(theta: np.ndarray, z: np.ndarray, spec: SvModelSpec) -> float:
    """Negative log of (Gaussian quasi-likelihood of z = log r^2) x (hyperpriors).

    Kalman filter on z_t = h_t + eta_t with eta matched to the log chi^2_1
    moments; the latent path is integrated out, so the result is a proper
    3-dimensional objective with an interior minimum.
    """
    m, phit, st = float(theta[0]), float(theta[1]), float(theta[2])
    sig = expit(phit)
    phi = 2.0 * sig - 1.0
    one_m_phi2 = 4.0 * sig * expit(-phit)
    v = np.exp(st)
    if one_m_phi2 <= 0.0 or not np.isfinite(v) or v <= 0.0:
        return np.inf
    c0 = float(digamma(0.5)) + np.log(2.0)
    R = float(polygamma(1, 0.5))
    a = m
    P = v / one_m_phi2
    ll = 0.0
    for zt in z:
        F = P + R
        innov = zt - a - c0
        ll -= 0.5 * (np.log(2.0 * np.pi * F) + innov**2 / F)
        K = P / F
        af = a + K * innov
        Pf = (1.0 - K) * P
        a = m + phi * (af - m)
        P = phi**2 * Pf + v
    pri = (
        -0.5 * m**2 / spec.m_prior_var
        - 0.5 * (phit - spec.phi_prior_mean) ** 2 / spec.phi_prior_var
        - 0.5 * (st - spec.s2_prior_mean) ** 2 / spec.s2_prior_var
    )
    out = -(ll + pri)
    return float(out) if np.isfinite(out) else np.inf


def _sv_h_precision(theta: np.ndarray, h: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, float]:
    """Tridiagonal negated path Hessian of the log posterior: (diagonal, off)."""
    phi = 2.0 * expit(theta[1]) - 1.0
    s2 = np.exp(theta[2])
    diag = 0.5 * r**2 * np.exp(-h) + 1.0 / s2
    diag[1:-1] += phi**2 / s2
    return diag, -phi / s2


def _sv_h_mode(target: TargetModel, theta: np.ndarray, r: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """Conditional path mode given hyperparameters, by damped Newton ascent.

    The conditional log density is strictly concave in the path (the
    observation terms are concave and the autoregression is a negative
    quadratic), so Newton with halving converges globally.
    """
    h = h0.copy()
    f = target.log_density(np.concatenate([theta, h]))
    if not np.isfinite(f):
        raise RuntimeError("SV path Newton started at a non-finite density")
    for _ in range(100):
        g = target.grad_log_density(np.concatenate([theta, h]))[3:]
        if np.max(np.abs(g)) < 1e-11:
            break
        diag, off = _sv_h_precision(theta, h, r)
        ab = np.zeros((2, h.size))
        ab[0, 1:] = off
        ab[1] = diag
        step = solveh_banded(ab, g)
        t = 1.0
        moved = False
        while t >= 2.0**-30:
            fn = target.log_density(np.concatenate([theta, h + t * step]))
            if np.isfinite(fn) and fn >= f:
                h = h + t * step
                f = fn
                moved = True
                break
            t *= 0.5
        if not moved:
            break
    sup = float(np.max(np.abs(target.grad_log_density(np.concatenate([theta, h]))[3:])))
    if sup > 1e-5:
        raise RuntimeError(f"SV conditional path mode did not converge (|grad| = {sup:.2e})")
    return h


def sv_map_cov(spec: SvModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Laplace-marginal mode of the transformed posterior and a matched covariance.

    The joint density has no interior maximum: along paths that stay
    AR-consistent the likelihood grows linearly in -s2tilde while the
    Gaussian prior decays only quadratically, so any joint optimizer
    eventually drains into the s2 -> 0 spike.  Integrating the path out
    removes the spike.  The hyperparameters maximize the Laplace
    approximation of their marginal posterior,

        log pi(theta, h*(theta)) - 1/2 log det Q(theta),

    whose determinant term exactly cancels the linear spike gain; h*(theta)
    is the conditional path mode and Q the tridiagonal negated path Hessian
    there.  A Kalman-filter quasi-likelihood fit of log r_t^2 provides the
    starting point.  The path part of the returned mode is h* at the fitted
    hyperparameters.

    The covariance is the Laplace joint at that point: with H the curvature
    of the marginal objective above (FD Hessian, positive definite at its
    interior optimum) and C, Q the cross and path blocks of the negated
    joint Hessian, the returned precision is

        J = [[H + C Q^-1 C^T, C], [C^T, Q]]

    so the implied Gaussian has hyperparameter marginal N(theta_hat, H^-1)
    and the conditional path law of the local quadratic model; J is positive
    definite whenever H and Q are.
    """
    from scipy.optimize import minimize

    target = sv_target(spec)
    r = spec.r
    z = np.log(r**2 + 1e-12)
    c0 = float(digamma(0.5)) + np.log(2.0)
    hyper_bounds = [(None, None), (-15.0, 15.0), (-12.0, 8.0)]

    theta0 = np.array([float(np.mean(z)) - c0, 3.7, spec.s2_prior_mean])
    res_t = minimize(
        _sv_qml_neg,
        theta0,
        args=(z, spec),
        method="L-BFGS-B",
        bounds=hyper_bounds,
        options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-9},
    )
    theta_init = res_t.x if np.all(np.isfinite(res_t.x)) else theta0

    warm = {"h": z - c0}

    def marginal_neg(theta: np.ndarray) -> float:
        try:
            h = _sv_h_mode(target, theta, r, warm["h"])
        except RuntimeError:
            return np.inf
        warm["h"] = h
        lp = target.log_density(np.concatenate([theta, h]))
        diag, off = _sv_h_precision(theta, h, r)
        ab = np.zeros((2, h.size))
        ab[0, 1:] = off
        ab[1] = diag
        try:
            cb = cholesky_banded(ab)
        except np.linalg.LinAlgError:
            return np.inf
        logdet = 2.0 * float(np.sum(np.log(cb[-1])))
        val = -lp + 0.5 * logdet
        return val if np.isfinite(val) else np.inf

    res_m = minimize(
        marginal_neg,
        theta_init,
        method="L-BFGS-B",
        bounds=hyper_bounds,
        options={"maxiter": 300, "ftol": 1e-11, "gtol": 1e-6, "eps": 1e-6},
    )
    theta = res_m.x
    if not np.all(np.isfinite(theta)) or not np.isfinite(res_m.fun):
        raise RuntimeError("SV hyperparameter fit produced non-finite values")
    for k, (lo, hi) in enumerate(hyper_bounds):
        if lo is not None and theta[k] < lo + 1e-3:
            raise RuntimeError(f"SV hyperparameter fit stuck at lower bound (component {k})")
        if hi is not None and theta[k] > hi - 1e-3:
            raise RuntimeError(f"SV hyperparameter fit stuck at upper bound (component {k})")

    hstar = _sv_h_mode(target, theta, r, warm["h"])
    mode = np.concatenate([theta, hstar])
    d = spec.dim

    diag, off = _sv_h_precision(theta, hstar, r)
    Q = np.diag(diag)
    Q[np.arange(d - 4), np.arange(1, d - 3)] = off
    Q[np.arange(1, d - 3), np.arange(d - 4)] = off
    if np.min(np.linalg.eigvalsh(Q)) <= 0.0:
        raise RuntimeError("SV conditional path Hessian is not negative definite at the mode")

    AC = np.empty((3, d))
    for k in range(3):
        eps = 1e-5 * (1.0 + abs(theta[k]))
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += eps
        tm[k] -= eps
        gp = target.grad_log_density(np.concatenate([tp, hstar]))
        gm = target.grad_log_density(np.concatenate([tm, hstar]))
        AC[k] = (gm - gp) / (2.0 * eps)
    C = AC[:, 3:]

    H = np.empty((3, 3))
    he = 1e-4 * (1.0 + np.abs(theta))
    for i in range(3):
        for j in range(i, 3):
            ei = np.zeros(3)
            ej = np.zeros(3)
            ei[i] = he[i]
            ej[j] = he[j]
            H[i, j] = H[j, i] = (
                marginal_neg(theta + ei + ej)
                - marginal_neg(theta + ei - ej)
                - marginal_neg(theta - ei + ej)
                + marginal_neg(theta - ei - ej)
            ) / (4.0 * he[i] * he[j])
    if not np.all(np.isfinite(H)) or np.min(np.linalg.eigvalsh(H)) <= 0.0:
        raise RuntimeError("SV hyperparameter curvature is not positive definite at the mode")

    J = np.empty((d, d))
    Qi_Ct = np.linalg.solve(Q, C.T)
    J[:3, :3] = H + C @ Qi_Ct
    J[:3, 3:] = C
    J[3:, :3] = C.T
    J[3:, 3:] = Q
    cov = np.linalg.inv(J)
    return mode, 0.5 * (cov + cov.T)
