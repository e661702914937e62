#!/usr/bin/env python3
"""Builds the 9-variable principal-axis-factoring reference fixture.

Run from this directory:  python3 make_paf_reference.py

Writes paf_reference.json next to the script. The fixture is an
independent cross-check for the Rust implementation: everything here is
plain numpy (LAPACK eigendecomposition, SMC start values, iterated
reduced-matrix eigenextraction) with no shared code.

The benchmark correlation matrix comes from a three-cluster loading
pattern with mild cross-loadings plus a diagonal that tops communality up
to exactly 1, so it is a valid correlation matrix with a clean three
factor structure.
"""

import json
import numpy as np

np.set_printoptions(precision=6, suppress=True)

L_TRUE = np.array(
    [
        [0.80, 0.15, 0.10],
        [0.75, 0.20, 0.05],
        [0.70, 0.10, 0.15],
        [0.20, 0.80, 0.10],
        [0.10, 0.70, 0.20],
        [0.15, 0.65, 0.05],
        [0.10, 0.15, 0.75],
        [0.05, 0.20, 0.70],
        [0.20, 0.10, 0.60],
    ]
)


def build_correlation():
    r = L_TRUE @ L_TRUE.T
    np.fill_diagonal(r, 1.0)
    # Symmetric, unit diagonal, strictly positive definite.
    assert np.allclose(r, r.T)
    assert np.linalg.eigvalsh(r).min() > 0.05
    return r


def smc(corr):
    inv = np.linalg.inv(corr)
    return 1.0 - 1.0 / np.diag(inv)


def paf(corr, m, tol=1e-6, max_iter=1000):
    h2 = smc(corr)
    loadings = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        reduced = corr.copy()
        np.fill_diagonal(reduced, h2)
        values, vectors = np.linalg.eigh(reduced)
        values = values[::-1][:m]
        vectors = vectors[:, ::-1][:, :m]
        values = np.clip(values, 0.0, None)
        loadings = vectors * np.sqrt(values)
        new_h2 = np.minimum((loadings**2).sum(axis=1), 1.0)
        delta = np.abs(new_h2 - h2).max()
        h2 = new_h2
        if delta < tol:
            break
    # Canonical sign: largest-magnitude entry of each column positive.
    for j in range(loadings.shape[1]):
        col = loadings[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            loadings[:, j] = -col
    return loadings, h2, iterations


def main():
    corr = build_correlation()
    eigenvalues = np.sort(np.linalg.eigvalsh(corr))[::-1]
    m = int((eigenvalues > 1.0).sum())
    assert m == 3, f"expected a three-factor benchmark, got m={m}"
    loadings, communalities, iterations = paf(corr, m)

    fixture = {
        "labels": [f"x{i + 1}" for i in range(corr.shape[0])],
        "correlation": [[float(v) for v in row] for row in corr],
        "unreduced_eigenvalues": [float(v) for v in eigenvalues],
        "retained": m,
        "loadings": [[float(v) for v in row] for row in loadings],
        "communalities": [float(v) for v in communalities],
        "iterations": iterations,
        "tolerance": 1e-6,
    }
    with open("paf_reference.json", "w") as fh:
        json.dump(fixture, fh, indent=1)
    print(f"retained {m} factors after {iterations} iterations")
    print("communalities:", np.round(communalities, 4))
    print("loadings:\n", np.round(loadings, 4))


if __name__ == "__main__":
    main()
