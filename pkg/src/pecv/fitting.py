"""Refit the six G0 parameters on a reference standard-Gaussian chain.

The loss is the empirical Poisson residual

    L = (1/n) sum_i (G0(x_i) - PG0(x_i) - x_i^(1))^2,

where PG0(x) = G0(x)(1 - a(x)) + a_g(x) is fully analytic because the chain
targets the standard Gaussian (there the true-gradient MALA drift coincides
with the approximation drift r x, so no gradients need to be stored).  The
acceptance expectation a(x) does not depend on the G0 parameters and is
computed once per chain; each optimizer step then costs four tilted-tail
batches.

BFGS runs in a reparameterized space (log transforms keep b2 >= 0 and
c1 > 0) with central-difference gradients.  Non-finite excursions of the
line search are mapped to +inf; if the optimizer still returns a non-finite
minimum, the fit restarts from a perturbed initialization up to five times.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .control_variates import (
    G0Params,
    _drift_factors,
    _g0_core,
    _pair_expectation,
)
from .gaussian import build_approx
from .ncchisq import SeriesConvergenceError, tilted_tail_batch
from .samplers import AdaptSpec, ProposalSpec, default_step2, run_chain
from .targets import gaussian_target

_FD_STEP = 1e-5
_MAX_RESTARTS = 5
# caps on the exp() reparameterization keep a wild line-search step from
# overflowing the series noncentrality
_LOG_CAP = 30.0


@dataclass(frozen=True)
class FitResult:
    params: G0Params
    loss: float
    init_loss: float
    algorithm: str
    d: int
    n: int
    step2: float
    seed: int
    restarts: int
    n_iterations: int

    def to_dict(self) -> dict:
        p = self.params
        return {
            "algorithm": self.algorithm,
            "d": self.d,
            "c2": self.step2,
            "seed": self.seed,
            "loss": self.loss,
            "params": {
                "b0": p.b0,
                "b1": p.b1,
                "b2": p.b2,
                "c0": p.c0,
                "c1": p.c1,
                "c2": p.c2,
            },
        }


def save_fit(result: FitResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
        fh.write("\n")


def load_fitted_params(path) -> G0Params:
    """Read a file written by save_fit back into a G0Params."""
    with open(path) as fh:
        doc = json.load(fh)
    return G0Params(algorithm=doc["algorithm"], **doc["params"])


def _to_vec(params: G0Params) -> np.ndarray:
    b2 = max(params.b2, 1e-12)  # log-reparam cannot represent the boundary
    return np.array(
        [params.b0, params.b1, np.log(b2), params.c0, np.log(params.c1), params.c2]
    )


def _from_vec(u: np.ndarray, algorithm: str) -> G0Params:
    return G0Params(
        b0=float(u[0]),
        b1=float(u[1]),
        b2=float(np.exp(min(u[2], _LOG_CAP))),
        c0=float(u[3]),
        c1=float(np.exp(min(u[4], _LOG_CAP))),
        c2=float(u[5]),
        algorithm=algorithm,
    )


def _random_init(rng: np.random.Generator) -> np.ndarray:
    return np.array(
        [
            rng.normal(scale=1.0),
            rng.normal(scale=0.3),
            np.log(0.1) + rng.normal(scale=0.5),
            rng.normal(scale=1.0),
            np.log(0.1) + rng.normal(scale=0.5),
            rng.normal(scale=0.3),
        ]
    )


def reference_chain(
    algorithm: str,
    d: int,
    n: int,
    step2: Optional[float] = None,
    seed: int = 0,
    burn_in: Optional[int] = None,
):
    """Standard-Gaussian chain used for fitting: (states, step2 actually used)."""
    approx = build_approx(np.zeros(d), np.eye(d))
    target = gaussian_target(np.zeros(d), np.eye(d))
    adapt = None
    if step2 is None:
        step2 = default_step2(algorithm, d)
        if algorithm == "mala":
            adapt = AdaptSpec(band=(0.55, 0.60))
    if burn_in is None:
        burn_in = 2000 if adapt is not None else 1000
    spec = ProposalSpec(kind=algorithm, step2=step2, adapt=adapt)
    trace = run_chain(target, approx, spec, n=n, burn_in=burn_in, seed=seed)
    return trace.states, trace.step2


def poisson_residual_loss(
    states: np.ndarray, step2: float, algorithm: str, params: G0Params
) -> float:
    """L = mean((G0 - PG0 - x^(1))^2) on a standard-Gaussian chain."""
    fn = _loss_on_chain(states, step2, algorithm)
    return fn(params)


def _loss_on_chain(states: np.ndarray, step2: float, algorithm: str):
    d = states.shape[1]
    x1 = states[:, 0]
    qx = np.sum(states**2, axis=1)
    r, tau2 = _drift_factors(algorithm, step2)
    vsq = r * r * qx
    v1 = r * x1
    a = tilted_tail_batch(d, vsq / step2, qx / step2, 0.5 * step2 * tau2)

    # a central-difference gradient perturbs one parameter at a time, so the
    # other family's pair inputs recur bitwise; caching them cuts each
    # gradient from 24 series sweeps to 8 without changing any value
    @lru_cache(maxsize=32)
    def pair(u: float, gamma: float, extra: float) -> np.ndarray:
        return _pair_expectation(d, vsq, v1, u, gamma, extra, step2, tau2, qx)

    def loss(params: G0Params) -> float:
        gx = _g0_core(params, x1, qx)
        u_b = step2 * params.b1
        u_c = 2.0 * step2 * params.c1 * params.c2
        extra_c = params.c1 * params.c2**2
        ag = params.b0 * pair(u_b, params.b2, 0.0)
        ag = ag + params.c0 * pair(u_c, params.c1, extra_c)
        # G0 - PG0 = G0 a - a_g
        resid = gx * a - ag - x1
        return float(np.mean(resid**2))

    return loss


def fit_g0(
    algorithm: str,
    d: int = 2,
    n: int = 100_000,
    step2: Optional[float] = None,
    seed: int = 0,
    init: Optional[G0Params] = None,
    burn_in: Optional[int] = None,
    max_iter: int = 200,
    gtol: float = 1e-8,
) -> FitResult:
    """Minimize the Poisson residual over the six G0 parameters.

    The chain is drawn fresh from N(0, I_d) with the matching algorithm
    (step2=None picks the usual default, with burn-in adaptation for MALA).
    init=None starts from small random values.  The returned loss never
    exceeds the loss at init.
    """
    states, step2 = reference_chain(algorithm, d, n, step2, seed, burn_in)
    raw_loss = _loss_on_chain(states, step2, algorithm)
    rng = np.random.default_rng(seed + 1)

    def safe(u: np.ndarray) -> float:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val = raw_loss(_from_vec(u, algorithm))
        except SeriesConvergenceError:
            return np.inf
        return val if np.isfinite(val) else np.inf

    def grad(u: np.ndarray) -> np.ndarray:
        g = np.empty(6)
        for k in range(6):
            h = _FD_STEP * (1.0 + abs(u[k]))
            up, dn = u.copy(), u.copy()
            up[k] += h
            dn[k] -= h
            g[k] = (safe(up) - safe(dn)) / (2.0 * h)
        return g

    u_init = _random_init(rng) if init is None else _to_vec(init)
    init_loss = safe(u_init)
    if not np.isfinite(init_loss):
        raise ValueError("loss is not finite at the initial parameters")

    best_u, best_loss, n_iter = None, np.inf, 0
    restarts = 0
    u0 = u_init
    while True:
        res = minimize(
            safe, u0, jac=grad, method="BFGS", options={"maxiter": max_iter, "gtol": gtol}
        )
        if np.isfinite(res.fun):
            best_u, best_loss, n_iter = res.x, float(res.fun), int(res.nit)
            break
        restarts += 1
        if restarts > _MAX_RESTARTS:
            raise RuntimeError(
                f"fit_g0({algorithm!r}, d={d}) diverged in {_MAX_RESTARTS} restarts"
            )
        u0 = u_init + rng.normal(scale=0.25, size=6)

    # descent guarantee relative to the supplied initialization
    if best_loss > init_loss:
        best_u, best_loss = u_init, float(init_loss)

    params = _from_vec(best_u, algorithm)
    if params.b1 < 0:
        # (b0, b1) -> (-b0, -b1) leaves the function unchanged
        params = G0Params(
            b0=-params.b0,
            b1=-params.b1,
            b2=params.b2,
            c0=params.c0,
            c1=params.c1,
            c2=params.c2,
            algorithm=algorithm,
        )
    return FitResult(
        params=params,
        loss=best_loss,
        init_loss=float(init_loss),
        algorithm=algorithm,
        d=d,
        n=n,
        step2=float(step2),
        seed=seed,
        restarts=restarts,
        n_iterations=n_iter,
    )
