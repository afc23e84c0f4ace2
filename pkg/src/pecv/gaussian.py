"""Gaussian approximation of the target and per-coordinate standardization.

The estimator works in a frame where the approximating Gaussian N(mu, Sigma)
becomes standard normal and the coordinate of interest sits in front.  For
coordinate j (1-based) let P_j be the permutation that swaps entries 1 and j
and L(j) the lower Cholesky factor of P_j Sigma P_j^T.  Then

    xtilde = L(j)^{-1} P_j (x - mu)

maps N(mu, Sigma) to N(0, I_d) with original coordinate j in position 1, and
x = P_j L(j) xtilde + mu undoes it.  The swap is self-inverse, which keeps
both directions a single gather.  All d factors are precomputed at
construction; they are reused across every sample of a chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["GaussianApprox", "build_approx", "standardize", "destandardize"]

_SYM_TOL = 1e-8
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class GaussianApprox:
    """Immutable N(mu, Sigma) approximation with all swap-permuted Cholesky factors.

    chol_by_coord[j-1] is the lower factor of P_j Sigma P_j^T.  cov is the
    matrix actually factorized (input plus any jitter needed to make it
    numerically SPD).
    """

    mean: np.ndarray
    cov: np.ndarray
    chol_by_coord: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def factor(self, coord: int) -> np.ndarray:
        """Lower Cholesky factor of the coord-permuted covariance (coord is 1-based)."""
        _check_coord(self.dim, coord)
        return self.chol_by_coord[coord - 1]


def _check_coord(dim: int, coord: int) -> None:
    if not 1 <= int(coord) <= dim:
        raise ValueError(f"coord must be in 1..{dim}, got {coord}")


def _swap_indices(dim: int, coord: int) -> np.ndarray:
    idx = np.arange(dim)
    idx[0], idx[coord - 1] = idx[coord - 1], idx[0]
    return idx


def build_approx(mean, cov) -> GaussianApprox:
    """Validate (mu, Sigma) and precompute the d permuted Cholesky factors.

    Sigma must be symmetric to 1e-8 (relative to its largest entry); it is
    symmetrized exactly before factorization.  A non-SPD matrix gets a jitter
    ladder on the diagonal, 1e-10 .. 1e-4 times the mean diagonal, before
    failing with a diagnostic.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1).copy()
    cov = np.array(cov, dtype=float)
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise ValueError(f"cov shape {cov.shape} does not match mean length {d}")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise ValueError("mean and cov must be finite")
    scale = max(1.0, float(np.abs(cov).max()))
    asym = float(np.abs(cov - cov.T).max())
    if asym > _SYM_TOL * scale:
        raise ValueError(f"cov is not symmetric: max|S - S^T| = {asym:.3g}")
    cov = 0.5 * (cov + cov.T)
    base = float(np.mean(np.diag(cov)))
    if base <= 0.0:
        raise ValueError("cov has nonpositive mean diagonal")

    perms = [_swap_indices(d, j) for j in range(1, d + 1)]
    last_err: Exception | None = None
    for jit in _JITTERS:
        trial = cov + (jit * base) * np.eye(d)
        try:
            factors = np.stack(
                [np.linalg.cholesky(trial[np.ix_(p, p)]) for p in perms]
            )
        except np.linalg.LinAlgError as err:
            last_err = err
            continue
        mean.setflags(write=False)
        trial.setflags(write=False)
        factors.setflags(write=False)
        return GaussianApprox(mean=mean, cov=trial, chol_by_coord=factors)
    raise np.linalg.LinAlgError(
        f"covariance not SPD even with jitter {_JITTERS[-1]:g} * mean diagonal "
        f"({base:.3g}): {last_err}"
    )


def standardize(approx: GaussianApprox, coord: int, x) -> np.ndarray:
    """Map x (shape (d,) or (n, d)) to the coord-standardized frame.

    Computes L(coord)^{-1} P_coord (x - mu) by triangular solve; if
    x ~ N(mu, Sigma), the result is standard normal with the original
    coordinate `coord` in position 1.
    """
    from scipy.linalg import solve_triangular

    _check_coord(approx.dim, coord)
    idx = _swap_indices(approx.dim, coord)
    x = np.asarray(x, dtype=float)
    v = (x - approx.mean)[..., idx]
    L = approx.chol_by_coord[coord - 1]
    if v.ndim == 1:
        return solve_triangular(L, v, lower=True)
    return solve_triangular(L, v.T, lower=True).T


def destandardize(approx: GaussianApprox, coord: int, z) -> np.ndarray:
    """Inverse of :func:`standardize`: x = P_coord L(coord) z + mu."""
    _check_coord(approx.dim, coord)
    idx = _swap_indices(approx.dim, coord)
    z = np.asarray(z, dtype=float)
    L = approx.chol_by_coord[coord - 1]
    v = z @ L.T
    return v[..., idx] + approx.mean
