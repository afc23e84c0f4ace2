"""Approximate Poisson-equation control variates for MH output.

The control functional is built from the six-parameter family

    G0(x) = b0 (e^{b1 x_1} - e^{-b1 x_1}) e^{-b2 ||x||^2}
          + c0 (e^{-c1 (x_1 - c2)^2} - e^{-c1 (x_1 + c2)^2}) e^{-c1 sum_{k>1} x_k^2}

evaluated in the standardized frame of the Gaussian approximation (coordinate
of interest first).  G0 is a sum of four exponential-family terms
w e^{beta.x - gamma ||x - delta||^2}, for which the proposal expectations of
min{1, rtilde} and of min{1, rtilde} G0(y) reduce to noncentral chi-squared
tail expectations:

    a(x)   = E[min{1, e^{-(c^2 tau^2/2)(f - ||x||^2/c^2)}}],
             f ~ ncx2(d, ||v||^2/c^2),
    a_g(x) = sum_k w_k A_k E[min{1, e^{-(tau^2 s_k^2/2)(f_k - ||x||^2/s_k^2)}}],
             f_k ~ ncx2(d, ||m_k||^2/s_k^2),

with v the proposal drift (r x in the approximation frame; for MALA's static
term the true-gradient drift k(x) = x + (c^2/2) L^T P grad log pi), and

    s_k^2 = c^2/(1 + 2 c^2 g_k),
    m_k   = (v + c^2 beta_k + 2 c^2 g_k delta_k) / (1 + 2 c^2 g_k),
    A_k   = (1 + 2 c^2 g_k)^{-d/2}
            exp{-||v||^2/(2c^2) - g_k ||delta_k||^2 + ||m_k||^2/(2 s_k^2)}.

(g_k = 0 is allowed: the factors collapse to the Gaussian MGF.)  The single-
proposal estimate of PG(x_i) - G(x_i) is alpha_i (G(y_i) - G(x_i)).  Its
proposal-level noise is cancelled by subtracting the correlated static term
h = min{1, rtilde}(G(y) - G(x)) and adding back the analytic expectation
E_q[h] = a_g(x) - G(x) a(x); when pi equals the Gaussian approximation the
two stochastic terms cancel exactly and PG-hat is deterministic given x.
The regression coefficient

    theta_n = [mu_n(F (G + PG)) - mu_n(F) mu_n(G + PG)]
              / [(1/n) sum_{i=1}^{n-1} (G(x_i) - PG(x_{i-1}))^2]

then yields the estimator mu_n(F) - theta_n mu_n(G - PG).

The estimator works per coordinate without ever materializing standardized
vectors: with q_x = (x-mu)^T Sigma^{-1} (x-mu) shared across coordinates, the
standardized first component for coordinate j is (x_j - mu_j)/sqrt(Sigma_jj),
the MALA drift norm is ||k||^2 = q_x + c^2 (x-mu).grad + (c^4/4) grad.Sigma
grad, and its first component ((x_j - mu_j) + (c^2/2)(Sigma grad)_j)/
sqrt(Sigma_jj); G0 depends on x only through (x_1, ||x||^2).  Exponential-
family terms sharing gamma also share all incomplete-gamma matrices, so each
coordinate costs two stacked tilted-tail batches plus one shared a(x) batch.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from pecv.gaussian import GaussianApprox, standardize
from pecv.ncchisq import tilted_tail_batch
from pecv.samplers import ChainTrace

__all__ = [
    "G0Params",
    "ExpFamilyTerm",
    "CVReport",
    "ThetaDiag",
    "default_params",
    "g0_eval",
    "g0_as_terms",
    "analytic_a",
    "analytic_ag",
    "analytic_ag_terms",
    "pg_hat",
    "theta_hat",
    "theta_hat_detail",
    "estimate",
    "cv_reports_to_json",
    "cv_reports_to_csv",
]

_ALGOS = ("rwm", "mala")


@dataclass(frozen=True)
class G0Params:
    """Parameters of the six-parameter control functional, tied to an algorithm."""

    b0: float
    b1: float
    b2: float
    c0: float
    c1: float
    c2: float
    algorithm: str

    def __post_init__(self) -> None:
        if self.algorithm not in _ALGOS:
            raise ValueError(f"algorithm must be one of {_ALGOS}")
        vals = (self.b0, self.b1, self.b2, self.c0, self.c1, self.c2)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("G0 parameters must be finite")
        if self.b2 < 0.0:
            raise ValueError("b2 must be >= 0")
        if not self.c1 > 0.0:
            raise ValueError("c1 must be > 0")

    def as_vector(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2, self.c0, self.c1, self.c2])


# reference fits on the d=2 standard Gaussian, one row per algorithm
_DEFAULTS = {
    "rwm": dict(b0=8.7078, b1=0.2916, b2=0.0001, c0=-3.5619, c1=0.1131, c2=3.9162),
    "mala": dict(b0=7.6639, b1=0.0613, b2=0.0096, c0=-14.8086, c1=0.3431, c2=-0.0647),
}


def default_params(algorithm: str) -> G0Params:
    if algorithm not in _DEFAULTS:
        raise ValueError(f"algorithm must be one of {_ALGOS}")
    return G0Params(algorithm=algorithm, **_DEFAULTS[algorithm])


@dataclass(frozen=True)
class ExpFamilyTerm:
    """One term w exp(beta.x - gamma ||x - delta||^2); gamma = 0 sits on the
    allowed boundary (pure Gaussian-MGF case)."""

    w: float
    beta: np.ndarray
    gamma: float
    delta: np.ndarray

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if beta.shape != delta.shape or beta.ndim != 1:
            raise ValueError("beta and delta must be vectors of equal length")
        if not self.gamma >= 0.0:
            raise ValueError("gamma must be >= 0")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        dv = x - self.delta
        return self.w * float(np.exp(self.beta @ x - self.gamma * (dv @ dv)))


def _g0_core(params: G0Params, x1, sqnorm):
    """G0 from the sufficient pair (x_1, ||x||^2), in the cancellation-free form
    2 b0 sinh(b1 x1) e^{-b2 q} + 2 c0 sinh(2 c1 c2 x1) e^{-c1 (q + c2^2)}."""
    x1 = np.asarray(x1, dtype=float)
    q = np.asarray(sqnorm, dtype=float)
    out = 2.0 * params.b0 * np.sinh(params.b1 * x1) * np.exp(-params.b2 * q)
    out = out + 2.0 * params.c0 * np.sinh(2.0 * params.c1 * params.c2 * x1) * np.exp(
        -params.c1 * (q + params.c2**2)
    )
    return out


def g0_eval(params: G0Params, x):
    """G0 at standardized x (coordinate of interest first); x is (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    x1 = x[..., 0]
    q = np.sum(x * x, axis=-1)
    out = _g0_core(params, x1, q)
    return float(out) if np.isscalar(out) or out.ndim == 0 else out


def g0_as_terms(params: G0Params, d: int) -> list[ExpFamilyTerm]:
    """The four exponential-family terms whose sum is G0 in dimension d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    e1 = np.zeros(d)
    e1[0] = 1.0
    z = np.zeros(d)
    return [
        ExpFamilyTerm(w=params.b0, beta=params.b1 * e1, gamma=params.b2, delta=z),
        ExpFamilyTerm(w=-params.b0, beta=-params.b1 * e1, gamma=params.b2, delta=z),
        ExpFamilyTerm(w=params.c0, beta=z, gamma=params.c1, delta=params.c2 * e1),
        ExpFamilyTerm(w=-params.c0, beta=z, gamma=params.c1, delta=-params.c2 * e1),
    ]


def _drift_factors(kind: str, step2: float) -> tuple[float, float]:
    """(r, tau^2) of the standardized-frame proposal and Hastings exponent."""
    if kind == "rwm":
        return 1.0, 1.0
    return 1.0 - 0.5 * step2, 0.25 * step2


def analytic_a(x, step2: float, algorithm: str, drift_override=None) -> float:
    """E_q[min{1, rtilde(x, y)}] for y ~ N(v, c^2 I) in the standardized frame.

    v defaults to r x; drift_override supplies the true-gradient MALA drift
    k(x) of the static-term expectation.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    r, tau2 = _drift_factors(algorithm, step2)
    v = r * x if drift_override is None else np.asarray(drift_override, dtype=float)
    xsq = float(x @ x)
    vsq = float(v @ v)
    out = tilted_tail_batch(
        d, np.array([vsq / step2]), np.array([xsq / step2]), 0.5 * step2 * tau2
    )
    return float(out[0])


def analytic_ag_terms(x, terms: Sequence[ExpFamilyTerm], step2: float, algorithm: str,
                      drift_override=None) -> float:
    """E_q[min{1, rtilde(x, y)} sum_k g_k(y)] for a general term list."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    r, tau2 = _drift_factors(algorithm, step2)
    v = r * x if drift_override is None else np.asarray(drift_override, dtype=float)
    xsq = float(x @ x)
    vsq = float(v @ v)
    total = 0.0
    for t in terms:
        den = 1.0 + 2.0 * step2 * t.gamma
        s2 = step2 / den
        m = (v + step2 * t.beta + 2.0 * step2 * t.gamma * t.delta) / den
        msq = float(m @ m)
        log_amp = (
            -0.5 * d * np.log(den)
            - 0.5 * vsq / step2
            - t.gamma * float(t.delta @ t.delta)
            + 0.5 * msq / s2
        )
        e = tilted_tail_batch(d, np.array([msq / s2]), np.array([xsq / s2]), 0.5 * tau2 * s2)
        total += t.w * float(np.exp(log_amp)) * float(e[0])
    return total


def analytic_ag(x, params: G0Params, step2: float, algorithm: str, drift_override=None) -> float:
    """E_q[min{1, rtilde} G0(y)] via the four tied terms."""
    x = np.asarray(x, dtype=float)
    terms = g0_as_terms(params, x.shape[0])
    return analytic_ag_terms(x, terms, step2, algorithm, drift_override)


def _standardized_drift(trace: ChainTrace, approx: GaussianApprox, coord: int, i: int) -> np.ndarray:
    """k(xtilde_i) = xtilde_i + (c^2/2) L^T P grad log pi(x_i) for one row."""
    idx = np.arange(approx.dim)
    idx[0], idx[coord - 1] = idx[coord - 1], idx[0]
    L = approx.factor(coord)
    xt = standardize(approx, coord, trace.states[i])
    g = trace.grad_at_state[i][idx]
    return xt + 0.5 * trace.step2 * (L.T @ g)


def pg_hat(trace: ChainTrace, i: int, approx: GaussianApprox, coord: int, params: G0Params) -> float:
    """PG-hat(x_i) = G(x_i) + alpha_i (G(y_i) - G(x_i)) - h_i + E_q[h(x_i, .)] for one row.

    Reference scalar path (explicit standardization); estimate() computes the
    same numbers through the batched shortcut identities.
    """
    if params.algorithm != trace.kind:
        raise ValueError(f"params are for {params.algorithm!r}, trace is {trace.kind!r}")
    step2 = trace.step2
    kind = trace.kind
    xt = standardize(approx, coord, trace.states[i])
    yt = standardize(approx, coord, trace.proposals[i])
    gx = g0_eval(params, xt)
    gy = g0_eval(params, yt)
    _, tau2 = _drift_factors(kind, step2)
    log_rt = -0.5 * tau2 * float(yt @ yt - xt @ xt)
    h = np.exp(min(0.0, log_rt)) * (gy - gx)
    drift = _standardized_drift(trace, approx, coord, i) if kind == "mala" else None
    eq_h = analytic_ag(xt, params, step2, kind, drift_override=drift) - gx * analytic_a(
        xt, step2, kind, drift_override=drift
    )
    return gx + float(trace.accept_prob[i]) * (gy - gx) - h + eq_h


@dataclass(frozen=True)
class ThetaDiag:
    theta: float
    numerator: float
    denominator: float
    degenerate: bool


def theta_hat_detail(F, G, PG) -> ThetaDiag:
    """Regression coefficient of Eq.-style lag-1 pairing with a degeneracy guard.

    Denominator (1/n) sum_{i=1}^{n-1} (G_i - PG_{i-1})^2; if it falls below
    1e-14 times the numerator scale the coefficient is 0 and the estimator
    falls back to the plain ergodic mean.
    """
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    PG = np.asarray(PG, dtype=float)
    n = F.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    S = G + PG
    num = float(F @ S) / n - float(F.mean() * S.mean())
    lag = G[1:] - PG[:-1]
    den = float(lag @ lag) / n
    if not np.isfinite(den) or den <= 1e-14 * abs(num):
        return ThetaDiag(theta=0.0, numerator=num, denominator=den, degenerate=True)
    return ThetaDiag(theta=num / den, numerator=num, denominator=den, degenerate=False)


def theta_hat(F, G, PG) -> float:
    return theta_hat_detail(F, G, PG).theta


@dataclass(frozen=True)
class CVReport:
    """Plain and variance-reduced estimates of E[x_coord] from one trace."""

    coord: int
    n: int
    plain_mean: float
    cv_mean: float
    theta: float
    theta_numerator: float
    theta_denominator: float
    theta_degenerate: bool
    cv_correlation: float
    cv_series: Optional[np.ndarray] = field(default=None, repr=False)
    g_series: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "coord": self.coord,
            "n": self.n,
            "plain_mean": self.plain_mean,
            "cv_mean": self.cv_mean,
            "theta": self.theta,
            "theta_numerator": self.theta_numerator,
            "theta_denominator": self.theta_denominator,
            "theta_degenerate": self.theta_degenerate,
            "cv_correlation": self.cv_correlation,
        }


_CSV_FIELDS = (
    "coord",
    "n",
    "plain_mean",
    "cv_mean",
    "theta",
    "theta_numerator",
    "theta_denominator",
    "theta_degenerate",
    "cv_correlation",
)


def cv_reports_to_json(reports: Sequence[CVReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def cv_reports_to_csv(reports: Sequence[CVReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.to_dict())
    return buf.getvalue()


def _pair_expectation(d, vsq, v1, u, gamma, extra, step2, tau2, qx):
    """w-weighted (+,-) exponential-family pair sharing gamma.

    u is the first-component shift c^2 beta_1 + 2 c^2 gamma delta_1 of the +
    member (the - member negates it); extra is the gamma ||delta||^2 offset.
    Returns exp(logA+) E+ - exp(logA-) E- as an (n,) array.
    """
    den = 1.0 + 2.0 * step2 * gamma
    s2 = step2 / den
    msq = np.stack([vsq + 2.0 * u * v1 + u * u, vsq - 2.0 * u * v1 + u * u]) / den**2
    log_amp = -0.5 * d * np.log(den) - 0.5 * vsq / step2 - extra + 0.5 * msq / s2
    e = tilted_tail_batch(d, msq / s2, qx / s2, 0.5 * tau2 * s2)
    with np.errstate(divide="ignore"):
        pair = np.exp(log_amp + np.log(e))
    return pair[0] - pair[1]


def estimate(
    trace: ChainTrace,
    approx: GaussianApprox,
    params: G0Params,
    coords: Optional[Sequence[int]] = None,
    theta_override: Optional[float] = None,
    keep_series: bool = False,
) -> list[CVReport]:
    """Algorithm-1 post-processing: one CVReport per requested coordinate.

    coords are 1-based; default all.  theta_override pins the regression
    coefficient (0.0 reproduces the plain ergodic mean bit-for-bit).
    """
    d = trace.dim
    if approx.dim != d:
        raise ValueError(f"approx dim {approx.dim} != trace dim {d}")
    if params.algorithm != trace.kind:
        raise ValueError(f"params are for {params.algorithm!r}, trace is {trace.kind!r}")
    if coords is None:
        coords = range(1, d + 1)
    coords = [int(j) for j in coords]
    for j in coords:
        if not 1 <= j <= d:
            raise ValueError(f"coord {j} out of range 1..{d}")

    step2 = trace.step2
    kind = trace.kind
    r, tau2 = _drift_factors(kind, step2)
    mean, cov = approx.mean, approx.cov
    L = approx.factor(1)

    dx = trace.states - mean
    dy = trace.proposals - mean
    qx = np.sum(solve_triangular(L, dx.T, lower=True) ** 2, axis=0)
    qy = np.sum(solve_triangular(L, dy.T, lower=True) ** 2, axis=0)
    min1r = np.exp(np.minimum(0.0, -0.5 * tau2 * (qy - qx)))
    alpha = trace.accept_prob

    if kind == "mala":
        g = trace.grad_at_state
        sg = g @ cov
        vsq = qx + step2 * np.sum(dx * g, axis=1) + 0.25 * step2**2 * np.sum(g * sg, axis=1)
    else:
        sg = None
        vsq = r * r * qx

    # acceptance expectation at the static-term drift, shared by all coordinates
    a_h = tilted_tail_batch(d, vsq / step2, qx / step2, 0.5 * step2 * tau2)

    sd = np.sqrt(np.diag(cov))
    u_b = step2 * params.b1
    u_c = 2.0 * step2 * params.c1 * params.c2
    extra_c = params.c1 * params.c2**2

    reports = []
    for j in coords:
        x1 = dx[:, j - 1] / sd[j - 1]
        y1 = dy[:, j - 1] / sd[j - 1]
        gx = _g0_core(params, x1, qx)
        gy = _g0_core(params, y1, qy)
        if kind == "mala":
            v1 = (dx[:, j - 1] + 0.5 * step2 * sg[:, j - 1]) / sd[j - 1]
        else:
            v1 = r * x1
        ag = params.b0 * _pair_expectation(d, vsq, v1, u_b, params.b2, 0.0, step2, tau2, qx)
        ag += params.c0 * _pair_expectation(d, vsq, v1, u_c, params.c1, extra_c, step2, tau2, qx)
        eq_h = ag - gx * a_h
        cv = (alpha - min1r) * (gy - gx) + eq_h
        pg = gx + cv

        F = trace.states[:, j - 1]
        if theta_override is not None:
            diag = ThetaDiag(float(theta_override), np.nan, np.nan, False)
        else:
            diag = theta_hat_detail(F, gx, pg)
        plain = float(F.mean())
        # theta = 0 must reproduce the plain mean bit-for-bit
        cv_mean = plain if diag.theta == 0.0 else plain + diag.theta * float(cv.mean())
        corr = float(np.corrcoef(-cv, F)[0, 1]) if np.ptp(cv) > 0 else np.nan
        reports.append(
            CVReport(
                coord=j,
                n=trace.n,
                plain_mean=plain,
                cv_mean=cv_mean,
                theta=diag.theta,
                theta_numerator=diag.numerator,
                theta_denominator=diag.denominator,
                theta_degenerate=diag.degenerate,
                cv_correlation=corr,
                cv_series=(-cv).copy() if keep_series else None,
                g_series=gx.copy() if keep_series else None,
            )
        )
    return reports
