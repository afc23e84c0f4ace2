"""Independent reference implementations used only by the test suite.

Everything here recomputes quantities the package derives analytically, by a
different route: brute-force mpmath series for the noncentral chi-squared
laws, Monte Carlo and 1-D quadrature for the proposal expectations, and a
dense grid solve of the 1-D Poisson equation.  Nothing imports from these in
package code.
"""

from __future__ import annotations

import mpmath as mp
import numpy as np
from scipy.integrate import quad

from pecv.control_variates import G0Params, _drift_factors, g0_eval

# ---------------------------------------------------------------------------
# mpmath series references


def mp_ncchisq_cdf(dof: int, lam: float, x: float, dps: int = 40) -> float:
    """Poisson mixture of central chi-squared CDFs, summed term by term."""
    if x <= 0.0:
        return 0.0
    with mp.workdps(dps):
        nu = mp.mpf(lam) / 2
        half = mp.mpf(x) / 2
        total = mp.mpf(0)
        w = mp.e ** (-nu)
        j = 0
        while True:
            total += w * mp.gammainc(mp.mpf(dof) / 2 + j, 0, half, regularized=True)
            j += 1
            w = w * nu / j
            if j > nu and w < mp.mpf(10) ** (-dps):
                break
        return float(total)


def mp_tilted_tail(dof: int, lam: float, thr: float, rate: float, dps: int = 40) -> float:
    """E[min{1, exp(-rate (f - thr))}] for f ~ ncx2(dof, lam), term by term.

    Splits at thr: the CDF part below, and per mixture component the tilted
    upper tail (2 rate + 1)^-(dof/2+j) Q(dof/2+j, (2 rate+1) thr/2) e^{rate thr}.
    """
    if rate == 0.0:
        return 1.0
    with mp.workdps(dps):
        nu = mp.mpf(lam) / 2
        r = mp.mpf(rate)
        x = max(mp.mpf(thr), mp.mpf(0))
        scale = 2 * r + 1
        total = mp.mpf(0)
        w = mp.e ** (-nu)
        j = 0
        while True:
            aj = mp.mpf(dof) / 2 + j
            lower = mp.gammainc(aj, 0, x / 2, regularized=True)
            upper = mp.gammainc(aj, scale * x / 2, mp.inf, regularized=True)
            total += w * (lower + scale ** (-aj) * upper * mp.e ** (r * mp.mpf(thr)))
            j += 1
            w = w * nu / j
            if j > nu and w < mp.mpf(10) ** (-dps):
                break
        return float(total)


# ---------------------------------------------------------------------------
# Monte Carlo proposal expectations

_CHUNK = 100_000


def mc_acceptance_expectations(
    x: np.ndarray,
    step2: float,
    algorithm: str,
    params: G0Params | None = None,
    n_draws: int = 1_000_000,
    seed: int = 0,
) -> dict:
    """Estimate a(x) = E_q[alpha] and a_g(x) = E_q[alpha G0(y)] by simulation.

    Proposals are y = r x + sqrt(step2) xi in the standardized frame, with the
    acceptance surrogate alpha = min{1, exp(-(tau2/2)(|y|^2 - |x|^2))}.
    Returns means with their Monte Carlo standard errors.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    r, tau2 = _drift_factors(algorithm, step2)
    center = r * x
    qx = float(np.dot(x, x))
    rng = np.random.default_rng(seed)

    s_a = s_a2 = s_g = s_g2 = 0.0
    done = 0
    while done < n_draws:
        m = min(_CHUNK, n_draws - done)
        y = center + np.sqrt(step2) * rng.standard_normal((m, d))
        alpha = np.minimum(1.0, np.exp(-0.5 * tau2 * (np.sum(y**2, axis=1) - qx)))
        s_a += alpha.sum()
        s_a2 += (alpha**2).sum()
        if params is not None:
            ag = alpha * g0_eval(params, y)
            s_g += ag.sum()
            s_g2 += (ag**2).sum()
        done += m

    out = {"a": s_a / n_draws}
    out["a_se"] = np.sqrt(max(s_a2 / n_draws - out["a"] ** 2, 0.0) / n_draws)
    if params is not None:
        out["ag"] = s_g / n_draws
        out["ag_se"] = np.sqrt(max(s_g2 / n_draws - out["ag"] ** 2, 0.0) / n_draws)
    return out


# ---------------------------------------------------------------------------
# 1-D quadrature references


def quad_acceptance_1d(
    x: float, step2: float, algorithm: str, params: G0Params | None = None
) -> tuple[float, float | None]:
    """(a(x), a_g(x)) for d=1 by adaptive quadrature over the proposal."""
    r, tau2 = _drift_factors(algorithm, step2)
    sd = np.sqrt(step2)

    def dens(y):
        return np.exp(-0.5 * (y - r * x) ** 2 / step2) / (sd * np.sqrt(2.0 * np.pi))

    def alpha(y):
        return min(1.0, np.exp(-0.5 * tau2 * (y * y - x * x)))

    lo, hi = r * x - 10.0 * sd, r * x + 10.0 * sd
    a = quad(lambda y: dens(y) * alpha(y), lo, hi, limit=200)[0]
    if params is None:
        return a, None
    ag = quad(
        lambda y: dens(y) * alpha(y) * float(g0_eval(params, np.array([y]))),
        lo,
        hi,
        limit=200,
    )[0]
    return a, ag


# ---------------------------------------------------------------------------
# dense 1-D Poisson equation solve


def grid_poisson_solution(
    algorithm: str, step2: float, n_nodes: int = 400, span: float = 5.0
) -> tuple[np.ndarray, np.ndarray]:
    """Solve G(x) - PG(x) = x on a grid for the 1-D standard Gaussian target.

    The transition kernel is the Metropolis kernel itself: a density part
    q(x, y) alpha(x, y) handled with trapezoid weights on [-span, span], and
    the rejection atom at x carrying the leftover mass.  Writing
    PG = K G + (1 - a) G turns the equation into (diag(a) - K) G = x, whose
    null space is the constants; the node nearest 0 is pinned to G = 0.
    Returns (nodes, G).
    """
    r, tau2 = _drift_factors(algorithm, step2)
    xs = np.linspace(-span, span, n_nodes)
    dy = xs[1] - xs[0]
    wts = np.full(n_nodes, dy)
    wts[0] = wts[-1] = 0.5 * dy

    yy = xs[None, :]
    xx = xs[:, None]
    dens = np.exp(-0.5 * (yy - r * xx) ** 2 / step2) / np.sqrt(2.0 * np.pi * step2)
    alpha = np.minimum(1.0, np.exp(-0.5 * tau2 * (yy**2 - xx**2)))
    K = dens * alpha * wts[None, :]

    a = K.sum(axis=1)  # quadrature-consistent acceptance mass
    A = np.diag(a) - K
    rhs = xs.copy()
    pin = int(np.argmin(np.abs(xs)))
    A[pin, :] = 0.0
    A[pin, pin] = 1.0
    rhs[pin] = 0.0
    return xs, np.linalg.solve(A, rhs)
