"""Regenerate the bundled logistic regression benchmark CSVs.

The five datasets mirror the shapes of the classic benchmarks (ripley 250x2,
pima 532x7, heart 270x13, australian 690x14, german 1000x24 features plus a
binary response) but the rows are synthetic: correlated Gaussian features and
a Bernoulli response from a fixed coefficient vector, all seeded, so the files
are reproducible bit-for-bit.  Run from the repository root:

    python3 tools/make_datasets.py
"""

from __future__ import annotations

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from pecv.targets import LogisticData, logistic_mle_cov  # noqa: E402

SHAPES = {
    "ripley": (250, 2, 11),
    "pima": (532, 7, 12),
    "heart": (270, 13, 13),
    "australian": (690, 14, 14),
    "german": (1000, 24, 15),
}


def make_one(name: str, n: int, p: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    k = max(2, p // 3)
    loadings = rng.normal(size=(p, k)) / np.sqrt(k)
    feats = rng.normal(size=(n, k)) @ loadings.T + 0.8 * rng.normal(size=(n, p))
    feats = (feats - feats.mean(axis=0)) / feats.std(axis=0)
    coef = rng.normal(size=p) * 1.6 / np.sqrt(p)
    intercept = rng.normal() * 0.3
    lin = intercept + feats @ coef
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-lin))).astype(float)

    # guard against separation or extreme imbalance before freezing the file
    assert 0.2 < y.mean() < 0.8, (name, y.mean())
    data = LogisticData(X=np.column_stack([np.ones(n), feats]), y=y, name=name)
    mode, _ = logistic_mle_cov(data)
    assert np.abs(mode).max() < 10.0, (name, mode)
    return np.column_stack([y, feats])


def main() -> None:
    out_dir = pathlib.Path(__file__).resolve().parents[1] / "src" / "pecv" / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (n, p, seed) in SHAPES.items():
        body = make_one(name, n, p, seed)
        header = "y," + ",".join(f"x{j}" for j in range(1, p + 1))
        path = out_dir / f"{name}.csv"
        np.savetxt(path, body, delimiter=",", header=header, comments="", fmt="%.10g")
        print(f"{name}: {n} rows, {p} features -> {path}")


if __name__ == "__main__":
    main()
