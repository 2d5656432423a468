"""Gaussian expectations and empirical distances from Birkhoff samples to N(0, Sigma)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from ..errors import DomainError
from ..parallel import DEFAULT_CHUNK, N_BATCHES, chunk_rng, reduce_batches

EIG_FLOOR = 1e-10
STREAM_GAUSS = 30


def _sqrtm(sigma) -> np.ndarray:
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
        raise DomainError("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    if vals.min() < EIG_FLOOR:
        raise DomainError(f"covariance is not positive definite (smallest eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float


def gaussian_expectation(sigma, h, method: str = "auto", order: int = 48, samples: int = 10**6,
                         seed: int = 0, threads: int | None = None) -> Estimate:
    """``E h(Z)`` for ``Z ~ N(0, sigma)``.

    ``quadrature`` (default for d <= 2): tensor Gauss-Hermite after the
    symmetric square-root change of variables; the error estimate is the
    change from order ``order // 2``.  ``mc``: seeded-chunk Monte Carlo with a
    batch-means standard error.
    """
    root = _sqrtm(sigma)
    d = root.shape[0]
    if method == "auto":
        method = "quadrature" if d <= 2 else "mc"
    if method == "quadrature":
        if d > 2:
            raise DomainError("tensor quadrature is limited to d <= 2")
        hi = _hermite(h, root, order)
        lo = _hermite(h, root, max(order // 2, 2))
        return Estimate(hi, abs(hi - lo))
    if method != "mc":
        raise DomainError(f"unknown method {method!r}")

    def chunk(c, s, e):
        z = chunk_rng(seed, STREAM_GAUSS, c).standard_normal((e - s, d))
        return np.asarray(h(z @ root.T), dtype=float)[:, None]

    acc = reduce_batches(chunk, samples, 1, DEFAULT_CHUNK, threads)
    return Estimate(float(acc.mean[0]), float(acc.std_error[0]))


def _hermite(h, root, order) -> float:
    x, w = np.polynomial.hermite.hermgauss(order)
    d = root.shape[0]
    grids = np.meshgrid(*([x] * d), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1) * math.sqrt(2.0)
    wt = np.ones(z.shape[0])
    for g in np.meshgrid(*([w] * d), indexing="ij"):
        wt = wt * g.ravel()
    vals = np.asarray(h(z @ root.T), dtype=float)
    return float(np.sum(wt * vals) / math.pi ** (d / 2))


def _batch_se(values: np.ndarray, n_batches: int = N_BATCHES) -> float:
    n = len(values)
    b = min(n_batches, n)
    if b < 2:
        return float("nan")
    idx = np.arange(n) * b // n
    means = np.bincount(idx, weights=values, minlength=b) / np.bincount(idx, minlength=b)
    return float(means.std(ddof=1) / math.sqrt(b))


@dataclass(frozen=True)
class DistanceResult:
    value: float
    std_error: float
    sample_mean: float
    gaussian: float


def smooth_distance(W, sigma, h, **gauss_kw) -> DistanceResult:
    """``|mean h(W) - E h(Z)|`` with the combined standard error."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    vals = np.asarray(h(W), dtype=float)
    g = gaussian_expectation(sigma, h, **gauss_kw)
    m = float(vals.mean())
    se = math.hypot(_batch_se(vals), g.std_error)
    return DistanceResult(abs(m - g.value), se, m, g.value)


def directions(d: int, count: int = 64) -> np.ndarray:
    """``count`` deterministic, quasi-uniform unit vectors (half sphere for d = 2)."""
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        th = np.pi * np.arange(count) / count
        return np.column_stack((np.cos(th), np.sin(th)))
    pts = qmc.Sobol(d, scramble=True, seed=12345).random(count)
    v = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _w1_to_normal(x: np.ndarray, sd: float) -> float:
    x = np.sort(x)
    n = len(x)
    q = sd * ndtri((np.arange(n) + 0.5) / n)
    return float(np.mean(np.abs(x - q)))


def kantorovich_distance(W, sigma, mode: str = "exact_1d", projection=None, n_directions: int = 64) -> float:
    """Empirical 1-Wasserstein distance between ``W`` samples and ``N(0, sigma)``.

    ``exact_1d`` compares sorted samples with equal-count Gaussian quantiles
    (``d = 1``, or along ``projection``).  ``sliced`` averages ``exact_1d``
    over quasi-uniform directions; for ``d >= 2`` this is a lower-bound
    surrogate of the Kantorovich distance, not the distance itself.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = W.shape[1]
    _sqrtm(sigma)
    if mode == "exact_1d":
        if projection is None:
            if d > 1:
                raise DomainError("exact_1d in d > 1 needs a projection direction")
            u = np.ones(1)
        else:
            u = np.asarray(projection, dtype=float)
            u = u / np.linalg.norm(u)
        return _w1_to_normal(W @ u, math.sqrt(float(u @ sigma @ u)))
    if mode == "sliced":
        dirs = directions(d, n_directions)
        return float(np.mean([_w1_to_normal(W @ u, math.sqrt(float(u @ sigma @ u))) for u in dirs]))
    raise DomainError(f"unknown mode {mode!r}")
