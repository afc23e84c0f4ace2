"""Replicate studies: variance-reduction factors and running-estimate series.

A spec names a target family, an algorithm, and the replication protocol.
run_experiment draws T independent chains (seeds base+i), post-processes each
with the control-variate estimator, and reports var(plain)/var(corrected) per
coordinate with variances computed by the 1/(T-1) estimator.  Per-replicate
estimates stay in the report so every ratio can be audited from the persisted
numbers alone.

Replicates run sequentially and are reduced by replicate index, so a report
is a deterministic function of its spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .control_variates import G0Params, default_params, estimate
from .gaussian import GaussianApprox, build_approx
from .samplers import AdaptSpec, ProposalSpec, default_step2, run_chain
from .targets import (
    GaussMixtureSpec,
    SvModelSpec,
    TargetModel,
    bundled_dataset,
    gaussian_target,
    logistic_mle_cov,
    logistic_target,
    mixture_cov_draw,
    mixture_target,
    sv_map_cov,
    sv_simulate,
    sv_target,
)

_TARGETS = ("gaussian", "mixture", "logistic", "sv")
_ALGORITHMS = ("rwm", "mala")
_MALA_BAND = (0.55, 0.60)
# generative values behind the synthetic volatility series
_SV_TRUE = {"phi": 0.98, "m": -0.85, "s": 0.15}


@dataclass(frozen=True)
class ExperimentSpec:
    """One study: target family, algorithm, and replication protocol."""

    target: str
    algorithm: str
    n: int
    burn_in: int
    replicates: int
    seed: int = 0
    coords: Optional[tuple[int, ...]] = None
    dim: int = 2
    mixture_h: float = 2.0
    mixture_seed: int = 0
    dataset: str = "ripley"
    sv_length: int = 50
    sv_seed: int = 0
    step2: Optional[float] = None
    params: Optional[G0Params] = None

    def __post_init__(self) -> None:
        if self.target not in _TARGETS:
            raise ValueError(f"unknown target {self.target!r}")
        if self.algorithm not in _ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")
        if self.n < 2 or self.burn_in < 0:
            raise ValueError("need n >= 2 and burn_in >= 0")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.mixture_h <= 0:
            raise ValueError("mixture_h must be positive")
        if self.sv_length < 1:
            raise ValueError("sv_length must be positive")
        if self.coords is not None:
            object.__setattr__(self, "coords", tuple(int(j) for j in self.coords))
        if self.step2 is not None and self.step2 <= 0:
            raise ValueError("step2 must be positive")

    @property
    def label(self) -> str:
        if self.target == "gaussian":
            return f"gaussian{{d={self.dim}}}"
        if self.target == "mixture":
            return f"mixture{{d={self.dim},h={self.mixture_h:g},seed={self.mixture_seed}}}"
        if self.target == "logistic":
            return f"logistic{{{self.dataset}}}"
        return f"sv{{N={self.sv_length},seed={self.sv_seed}}}"

    def describe(self) -> dict:
        doc = {
            "target": self.target,
            "algorithm": self.algorithm,
            "n": self.n,
            "burn_in": self.burn_in,
            "replicates": self.replicates,
            "seed": self.seed,
        }
        if self.coords is not None:
            doc["coords"] = list(self.coords)
        if self.target in ("gaussian", "mixture"):
            doc["dim"] = self.dim
        if self.target == "mixture":
            doc["mixture_h"] = self.mixture_h
            doc["mixture_seed"] = self.mixture_seed
        if self.target == "logistic":
            doc["dataset"] = self.dataset
        if self.target == "sv":
            doc["sv_length"] = self.sv_length
            doc["sv_seed"] = self.sv_seed
        if self.step2 is not None:
            doc["step2"] = self.step2
        return doc


def experiment_spec_from_dict(cfg: dict) -> ExperimentSpec:
    """Build a spec from a plain config mapping (unknown keys rejected)."""
    cfg = dict(cfg)
    params = cfg.pop("params", None)
    if params is not None and not isinstance(params, G0Params):
        algorithm = cfg.get("algorithm")
        params = G0Params(algorithm=algorithm, **params)
    coords = cfg.pop("coords", None)
    if coords == "all":
        coords = None
    allowed = {
        "target",
        "algorithm",
        "n",
        "burn_in",
        "replicates",
        "seed",
        "dim",
        "mixture_h",
        "mixture_seed",
        "dataset",
        "sv_length",
        "sv_seed",
        "step2",
    }
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentSpec(params=params, coords=coords, **cfg)


def build_problem(spec: ExperimentSpec) -> tuple[TargetModel, GaussianApprox]:
    """Target model plus the Gaussian approximation feeding proposals and CVs."""
    if spec.target == "gaussian":
        d = spec.dim
        return gaussian_target(np.zeros(d), np.eye(d)), build_approx(np.zeros(d), np.eye(d))
    if spec.target == "mixture":
        d = spec.dim
        cov = mixture_cov_draw(d, spec.mixture_seed)
        mix = GaussMixtureSpec(dim=d, half_separation=spec.mixture_h / 2.0, cov=cov)
        # exact mixture moments: mean 0, cov Sigma + (h/2)^2 e1 e1^T
        tilde = cov.copy()
        tilde[0, 0] += (spec.mixture_h / 2.0) ** 2
        return mixture_target(mix), build_approx(np.zeros(d), tilde)
    if spec.target == "logistic":
        data = bundled_dataset(spec.dataset)
        mean, cov = logistic_mle_cov(data)
        return logistic_target(data), build_approx(mean, cov)
    r = sv_simulate(spec.sv_length, _SV_TRUE["phi"], _SV_TRUE["m"], _SV_TRUE["s"], seed=spec.sv_seed)
    model = SvModelSpec(r)
    mean, cov = sv_map_cov(model)
    return sv_target(model), build_approx(mean, cov)


def _proposal_spec(spec: ExperimentSpec, dim: int) -> ProposalSpec:
    step2 = spec.step2 if spec.step2 is not None else default_step2(spec.algorithm, dim)
    adapt = None
    if spec.algorithm == "mala" and spec.step2 is None:
        adapt = AdaptSpec(band=_MALA_BAND)
    return ProposalSpec(kind=spec.algorithm, step2=step2, adapt=adapt)


@dataclass(frozen=True)
class VrfReport:
    """Per-coordinate variance-reduction factors plus the replicate estimates
    they were computed from."""

    spec: dict
    label: str
    coords: tuple[int, ...]
    plain: np.ndarray  # (T, k) per-replicate ergodic means
    cv: np.ndarray  # (T, k) per-replicate corrected means
    theta: np.ndarray  # (T, k)
    step2: np.ndarray  # (T,) step sizes actually used (post-adaptation)
    var_plain: np.ndarray = field(init=False)
    var_cv: np.ndarray = field(init=False)
    vrf: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        # the 1/(T-1) estimator, exactly
        object.__setattr__(self, "var_plain", self.plain.var(axis=0, ddof=1))
        object.__setattr__(self, "var_cv", self.cv.var(axis=0, ddof=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            object.__setattr__(self, "vrf", self.var_plain / self.var_cv)

    @property
    def replicates(self) -> int:
        return self.plain.shape[0]

    @property
    def min_vrf(self) -> float:
        return float(np.min(self.vrf))

    @property
    def max_vrf(self) -> float:
        return float(np.max(self.vrf))

    def coord_vrf(self, coord: int) -> float:
        return float(self.vrf[self.coords.index(coord)])

    def to_json(self) -> str:
        doc = {
            "spec": self.spec,
            "label": self.label,
            "coords": list(self.coords),
            "replicates": self.replicates,
            "step2": self.step2.tolist(),
            "plain": self.plain.tolist(),
            "cv": self.cv.tolist(),
            "theta": self.theta.tolist(),
            "var_plain": self.var_plain.tolist(),
            "var_cv": self.var_cv.tolist(),
            "vrf": self.vrf.tolist(),
            "min_vrf": self.min_vrf,
            "max_vrf": self.max_vrf,
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "VrfReport":
        doc = json.loads(text)
        return VrfReport(
            spec=doc["spec"],
            label=doc["label"],
            coords=tuple(doc["coords"]),
            plain=np.asarray(doc["plain"]),
            cv=np.asarray(doc["cv"]),
            theta=np.asarray(doc["theta"]),
            step2=np.asarray(doc["step2"]),
        )

    def render_text(self) -> str:
        head = (
            f"{self.label}  {self.spec['algorithm']}  n={self.spec['n']}  "
            f"burn_in={self.spec['burn_in']}  T={self.replicates}  seed={self.spec['seed']}"
        )
        lines = [head, ""]
        lines.append(f"{'coord':>5}  {'var_plain':>12}  {'var_cv':>12}  {'vrf':>10}")
        for i, j in enumerate(self.coords):
            lines.append(
                f"{j:>5}  {self.var_plain[i]:>12.4e}  {self.var_cv[i]:>12.4e}  {self.vrf[i]:>10.2f}"
            )
        lines.append("")
        lines.append(f"min vrf {self.min_vrf:.2f}   max vrf {self.max_vrf:.2f}")
        return "\n".join(lines) + "\n"


def run_experiment(spec: ExperimentSpec, progress=None) -> VrfReport:
    """T replicate chains, both estimators each, reduced to a VrfReport."""
    target, approx = build_problem(spec)
    d = approx.dim
    coords = spec.coords if spec.coords is not None else tuple(range(1, d + 1))
    params = spec.params if spec.params is not None else default_params(spec.algorithm)
    pspec = _proposal_spec(spec, d)

    T = spec.replicates
    plain = np.empty((T, len(coords)))
    cv = np.empty((T, len(coords)))
    theta = np.empty((T, len(coords)))
    step2 = np.empty(T)
    for i in range(T):
        try:
            trace = run_chain(
                target, approx, pspec, n=spec.n, burn_in=spec.burn_in, seed=spec.seed + i
            )
            reports = estimate(trace, approx, params, coords=coords)
        except Exception as exc:
            raise RuntimeError(f"replicate {i} (seed {spec.seed + i}) failed") from exc
        step2[i] = trace.step2
        for k, rep in enumerate(reports):
            plain[i, k] = rep.plain_mean
            cv[i, k] = rep.cv_mean
            theta[i, k] = rep.theta
        if progress is not None:
            progress(i + 1, T)
    return VrfReport(
        spec=spec.describe(),
        label=spec.label,
        coords=tuple(coords),
        plain=plain,
        cv=cv,
        theta=theta,
        step2=step2,
    )


def running_estimates(spec: ExperimentSpec, which: str, coord: int) -> np.ndarray:
    """Running ergodic or corrected estimates of E[x_coord] on one chain.

    The corrected sequence recomputes the regression coefficient from each
    prefix, so entry k is exactly the estimator a run of length k would have
    reported; entry 1 therefore equals F(x_0) (the coefficient is degenerate
    at prefix length 1) and the final entry matches the full-trace report.
    """
    if which not in ("ergodic", "cv"):
        raise ValueError(f"unknown series {which!r}")
    target, approx = build_problem(spec)
    pspec = _proposal_spec(spec, approx.dim)
    trace = run_chain(target, approx, pspec, n=spec.n, burn_in=spec.burn_in, seed=spec.seed)
    F = trace.states[:, coord - 1]
    k = np.arange(1, spec.n + 1, dtype=float)
    if which == "ergodic":
        return np.cumsum(F) / k

    params = spec.params if spec.params is not None else default_params(spec.algorithm)
    rep = estimate(trace, approx, params, coords=[coord], keep_series=True)[0]
    U = rep.cv_series  # G - PG
    G = rep.g_series
    PG = G - U
    S = G + PG
    num = np.cumsum(F * S) / k - (np.cumsum(F) / k) * (np.cumsum(S) / k)
    # prefix of length k pairs G_1..G_{k-1} with PG_0..PG_{k-2}
    lag2 = np.concatenate([[0.0], np.cumsum((G[1:] - PG[:-1]) ** 2)])
    den = lag2 / k
    degenerate = ~np.isfinite(den) | (den <= 1e-14 * np.abs(num))
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(degenerate, 0.0, num / den)
    est = np.cumsum(F) / k - theta * (np.cumsum(U) / k)
    if not np.isclose(est[-1], rep.cv_mean, rtol=1e-9, atol=1e-12):
        raise AssertionError("running series disagrees with the full-trace estimator")
    est[-1] = rep.cv_mean  # pin the last entry to the report scalar exactly
    return est


def emit_trace_series(spec: ExperimentSpec, which: str, coord: int, path) -> None:
    """Two-column CSV (iteration, estimate) of running_estimates."""
    est = running_estimates(spec, which, coord)
    with open(path, "w") as fh:
        fh.write("iteration,estimate\n")
        for i, v in enumerate(est, start=1):
            fh.write(f"{i},{v:.17g}\n")
