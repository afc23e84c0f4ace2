"""Random-walk Metropolis and MALA with trace recording.

Proposals use the approximation's covariance: RWM draws y ~ N(x, c^2 Sigma),
MALA draws y ~ N(x + (c^2/2) Sigma grad log pi(x), c^2 Sigma) with the *true*
target gradient.  The Cholesky factor of Sigma comes from the Gaussian
approximation, so proposal noise is x + c L z.  The step size c^2 can adapt
multiplicatively during burn-in toward an acceptance band and is frozen
afterwards, which keeps the recorded chain a genuine MH chain.

The trace stores, for every post-burn-in iteration i, the state x_i, the
proposal y_i drawn from it, alpha(x_i, y_i), the accept flag (x_{i+1} = y_i
iff accepted), and for MALA the gradients at both points.  That tuple is
exactly what the control-variate estimator consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from pecv.gaussian import GaussianApprox
from pecv.targets import TargetModel

__all__ = [
    "AdaptSpec",
    "ProposalSpec",
    "ChainTrace",
    "run_chain",
    "adapt_step",
    "save_trace",
    "load_trace",
    "save_trace_csv",
    "default_step2",
]

_KINDS = ("rwm", "mala")


def default_step2(kind: str, dim: int) -> float:
    """Canonical starting step size: 2.38^2/d for RWM, 1.4/d^(1/3) for MALA.

    The MALA value is only an adaptation starting point; runs are expected to
    adapt into their acceptance band during burn-in.
    """
    if kind == "rwm":
        return 2.38**2 / dim
    return 1.4 / dim ** (1.0 / 3.0)


@dataclass(frozen=True)
class AdaptSpec:
    """Burn-in step adaptation toward an acceptance band.

    After every window of burn-in iterations the step is scaled by
    exp(gain (acc - mid(band))).  A window whose acceptance lands inside the
    band freezes the step for the rest of the run; each time the error
    acc - mid changes sign the gain is halved, so the search contracts even
    when the acceptance curve is steep enough that no window ever lands
    exactly inside the band.
    """

    band: tuple[float, float]
    window: int = 200
    kappa: float = 1.0

    def __post_init__(self) -> None:
        lo, hi = self.band
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"band must satisfy 0 < lo <= hi < 1, got {self.band}")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class ProposalSpec:
    kind: str
    step2: float
    adapt: Optional[AdaptSpec] = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if not self.step2 > 0.0:
            raise ValueError("step2 must be positive")


@dataclass(frozen=True)
class ChainTrace:
    """Post-burn-in record of an MH run; arrays are read-only."""

    kind: str
    states: np.ndarray
    proposals: np.ndarray
    accept_prob: np.ndarray
    accepted: np.ndarray
    step2: float
    acceptance_rate: float
    nonfinite_proposals: int
    seed: int
    grad_at_state: Optional[np.ndarray] = None
    grad_at_proposal: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def adapt_step(step2: float, acc_rate: float, band: tuple[float, float], kappa: float = 1.0) -> float:
    """Multiplicative step update toward the middle of the acceptance band."""
    mid = 0.5 * (band[0] + band[1])
    return step2 * float(np.exp(kappa * (acc_rate - mid)))


class _BandSearch:
    """Window-to-window step controller used during burn-in."""

    def __init__(self, spec: AdaptSpec, step2: float) -> None:
        self.spec = spec
        self.step2 = step2
        self.gain = spec.kappa
        self.frozen = False
        self._last_sign = 0
        self._streak = 0

    def update(self, acc_rate: float) -> float:
        if self.frozen:
            return self.step2
        lo, hi = self.spec.band
        if lo <= acc_rate <= hi:
            # one window can land in band by luck; ask for two in a row
            self._streak += 1
            if self._streak >= 2:
                self.frozen = True
            return self.step2
        self._streak = 0
        sign = 1 if acc_rate > 0.5 * (lo + hi) else -1
        if self._last_sign and sign != self._last_sign:
            self.gain *= 0.5
        self._last_sign = sign
        self.step2 = adapt_step(self.step2, acc_rate, self.spec.band, self.gain)
        return self.step2


def run_chain(
    target: TargetModel,
    approx: GaussianApprox,
    spec: ProposalSpec,
    n: int,
    burn_in: int = 0,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
) -> ChainTrace:
    """Run burn_in + n MH iterations, recording the last n.

    Deterministic under seed (all randomness from one PCG64 Generator, fixed
    draw order).  A proposal with non-finite log-density (or, for MALA,
    non-finite gradient) is rejected with alpha = 0 and counted in
    nonfinite_proposals.
    """
    d = target.dim
    if approx.dim != d:
        raise ValueError(f"approx dim {approx.dim} != target dim {d}")
    if n < 1 or burn_in < 0:
        raise ValueError("need n >= 1 and burn_in >= 0")
    mala = spec.kind == "mala"
    if mala and target.grad_log_density is None:
        raise ValueError("MALA requires a target gradient")

    rng = np.random.default_rng(seed)
    total = burn_in + n
    Z = rng.standard_normal((total, d))
    L = approx.factor(1)
    Lz = Z @ L.T
    U = rng.random(total)
    cov = approx.cov

    x = approx.mean.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    lpx = target.log_density(x)
    if not np.isfinite(lpx):
        raise ValueError("initial state has non-finite log-density")
    gx = target.grad_log_density(x) if mala else None

    states = np.empty((n, d))
    proposals = np.empty((n, d))
    accept_prob = np.empty(n)
    accepted = np.empty(n, dtype=bool)
    gxs = np.empty((n, d)) if mala else None
    gys = np.empty((n, d)) if mala else None

    c2 = float(spec.step2)
    search = _BandSearch(spec.adapt, c2) if spec.adapt is not None else None
    nonfinite = 0
    win_acc = 0
    for k in range(total):
        s = np.sqrt(c2)
        if mala:
            y = x + (0.5 * c2) * (cov @ gx) + s * Lz[k]
            lpy = target.log_density(y)
            gy = target.grad_log_density(y)
            ok = np.isfinite(lpy) and np.all(np.isfinite(gy))
            if ok:
                back = solve_triangular(L, x - y - (0.5 * c2) * (cov @ gy), lower=True) / s
                log_r = lpy - lpx - 0.5 * float(back @ back) + 0.5 * float(Z[k] @ Z[k])
            else:
                log_r = -np.inf
        else:
            y = x + s * Lz[k]
            lpy = target.log_density(y)
            ok = np.isfinite(lpy)
            log_r = lpy - lpx if ok else -np.inf
        if not ok:
            nonfinite += 1
            alpha = 0.0
        else:
            alpha = float(np.exp(min(0.0, log_r)))
        acc = bool(U[k] < alpha)

        if k >= burn_in:
            i = k - burn_in
            states[i] = x
            proposals[i] = y
            accept_prob[i] = alpha
            accepted[i] = acc
            if mala:
                gxs[i] = gx
                gys[i] = gy
        if acc:
            x, lpx = y, lpy
            if mala:
                gx = gy
        if search is not None and k < burn_in:
            win_acc += acc
            if (k + 1) % spec.adapt.window == 0:
                c2 = search.update(win_acc / spec.adapt.window)
                win_acc = 0

    for arr in (states, proposals, accept_prob, accepted, gxs, gys):
        if arr is not None:
            arr.setflags(write=False)
    return ChainTrace(
        kind=spec.kind,
        states=states,
        proposals=proposals,
        accept_prob=accept_prob,
        accepted=accepted,
        step2=c2,
        acceptance_rate=float(accepted.mean()),
        nonfinite_proposals=nonfinite,
        seed=seed,
        grad_at_state=gxs,
        grad_at_proposal=gys,
    )


_META_KEYS = ("kind", "step2", "acceptance_rate", "nonfinite_proposals", "seed")


def save_trace(trace: ChainTrace, path, approx: Optional[GaussianApprox] = None) -> None:
    """Lossless binary dump (npz); optionally embeds the Gaussian approximation."""
    payload = {
        "kind": np.array(trace.kind),
        "states": trace.states,
        "proposals": trace.proposals,
        "accept_prob": trace.accept_prob,
        "accepted": trace.accepted,
        "step2": np.array(trace.step2),
        "acceptance_rate": np.array(trace.acceptance_rate),
        "nonfinite_proposals": np.array(trace.nonfinite_proposals),
        "seed": np.array(trace.seed),
    }
    if trace.grad_at_state is not None:
        payload["grad_at_state"] = trace.grad_at_state
        payload["grad_at_proposal"] = trace.grad_at_proposal
    if approx is not None:
        payload["approx_mean"] = approx.mean
        payload["approx_cov"] = approx.cov
    np.savez(path, **payload)


def load_trace(path) -> tuple[ChainTrace, Optional[GaussianApprox]]:
    """Inverse of :func:`save_trace`; returns (trace, approx or None)."""
    from pecv.gaussian import build_approx

    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    trace = ChainTrace(
        kind=str(data["kind"]),
        states=data["states"],
        proposals=data["proposals"],
        accept_prob=data["accept_prob"],
        accepted=data["accepted"],
        step2=float(data["step2"]),
        acceptance_rate=float(data["acceptance_rate"]),
        nonfinite_proposals=int(data["nonfinite_proposals"]),
        seed=int(data["seed"]),
        grad_at_state=data.get("grad_at_state"),
        grad_at_proposal=data.get("grad_at_proposal"),
    )
    approx = None
    if "approx_mean" in data:
        approx = build_approx(data["approx_mean"], data["approx_cov"])
    return trace, approx


def save_trace_csv(trace: ChainTrace, path) -> None:
    """Text dump, one row per iteration.

    Columns: x_1..x_d, y_1..y_d, accept_prob, accepted, then for MALA
    gx_1..gx_d, gy_1..gy_d.
    """
    d = trace.dim
    cols = [trace.states, trace.proposals, trace.accept_prob[:, None], trace.accepted[:, None].astype(float)]
    names = [f"x_{j}" for j in range(1, d + 1)] + [f"y_{j}" for j in range(1, d + 1)]
    names += ["accept_prob", "accepted"]
    if trace.grad_at_state is not None:
        cols += [trace.grad_at_state, trace.grad_at_proposal]
        names += [f"gx_{j}" for j in range(1, d + 1)] + [f"gy_{j}" for j in range(1, d + 1)]
    np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")
