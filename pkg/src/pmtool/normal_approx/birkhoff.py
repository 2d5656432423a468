"""Normalised Birkhoff sums, gap sums and the limiting covariance matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..density import DensitySampler
from ..errors import DomainError
from ..maps import as_parameter, step
from ..parallel import DEFAULT_CHUNK, chunk_rng, chunked_map
from ..rates import RhoRate
from ..transfer import fine_invariant_density, ulam_matrix
from .observables import ObservableSpec

STREAM_BIRKHOFF = 10
STREAM_COVARIANCE = 11
RETAIN_LIMIT = 1 << 20


def invariant_sampler(alpha: float) -> DensitySampler:
    """Inverse-CDF sampler from the accurate invariant density."""
    return DensitySampler(fine_invariant_density(alpha))


@dataclass(frozen=True)
class BirkhoffSample:
    N: int
    W: np.ndarray
    start: float


@dataclass(frozen=True, eq=False)
class BirkhoffBatch:
    """``W[N]`` is an ``(M, d)`` array of normalised sums, one row per orbit.

    All ``N`` share the same orbits (the sum for a smaller ``N`` is a prefix).
    """

    alpha: float
    N_values: tuple
    W: dict
    starts: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return len(self.starts)

    def samples(self, N: int) -> list[BirkhoffSample]:
        return [BirkhoffSample(N, w, float(s)) for w, s in zip(self.W[N], self.starts)]


def sample_birkhoff(p, f: ObservableSpec, N_values, M: int, seed: int, sampler=None,
                    chunk_size: int = DEFAULT_CHUNK, threads: int | None = None) -> BirkhoffBatch:
    """``W(N) = N**-0.5 * sum_{k<N} f(T**k x)`` for ``M`` draws ``x`` from ``sampler``.

    ``sampler`` defaults to the invariant density of the map.
    """
    p = as_parameter(p)
    Ns = sorted({int(n) for n in np.atleast_1d(N_values)})
    if not Ns or Ns[0] < 1:
        raise DomainError("N values must be positive")
    sampler = invariant_sampler(p.alpha) if sampler is None else sampler
    d = f.d

    def chunk(c, s, e):
        rng = chunk_rng(seed, STREAM_BIRKHOFF, c)
        x = sampler.sample(rng, e - s)
        start = x.copy()
        S = np.zeros((e - s, d))
        out = {}
        k = 0
        for N in Ns:
            while k < N:
                S += f(x)
                x = step(p.alpha, x)
                k += 1
            out[N] = S / math.sqrt(N)
        return start, out

    parts = chunked_map(chunk, M, chunk_size, threads)
    starts = np.concatenate([pt[0] for pt in parts])
    W = {N: np.concatenate([pt[1][N] for pt in parts]) for N in Ns}
    return BirkhoffBatch(p.alpha, tuple(Ns), W, starts, seed)


class BirkhoffOrbit:
    """One orbit with its observable stream, supporting gap sums ``W^n``.

    Streams up to ``2**20`` steps are kept in memory; longer orbits recompute
    the window by re-iterating from the stored start point.
    """

    def __init__(self, p, f: ObservableSpec, start: float, N: int):
        self.p = as_parameter(p)
        self.f = f
        self.start = float(start)
        self.N = int(N)
        self.retained = self.N <= RETAIN_LIMIT
        x = np.array([self.start])
        total = np.zeros(f.d)
        stream = np.empty((self.N, f.d)) if self.retained else None
        for k in range(self.N):
            fv = f(x)[0]
            total += fv
            if stream is not None:
                stream[k] = fv
            x = step(self.p.alpha, x)
        self.stream = stream
        self.W = total / math.sqrt(self.N)

    def _window(self, lo: int, hi: int) -> np.ndarray:
        if self.stream is not None:
            return self.stream[lo:hi + 1].sum(axis=0)
        x = np.array([self.start])
        acc = np.zeros(self.f.d)
        for k in range(hi + 1):
            if k >= lo:
                acc += self.f(x)[0]
            x = step(self.p.alpha, x)
        return acc

    def gap_sum(self, n: int, K: int) -> np.ndarray:
        """``W^n = W - N**-0.5 * sum_{|k - n| <= K, 0 <= k < N} f(T**k x)``."""
        if not 0 <= n < self.N or not 0 <= K < self.N:
            raise IndexError(f"need 0 <= n < N and 0 <= K < N (N = {self.N})")
        lo, hi = max(0, n - K), min(self.N - 1, n + K)
        return self.W - self._window(lo, hi) / math.sqrt(self.N)


def gap_window(N: int, n: int, K: int) -> range:
    """The index set ``[n]_K`` clipped to ``[0, N - 1]``."""
    return range(max(0, n - K), min(N - 1, n + K) + 1)


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma: np.ndarray
    truncation: int
    term_norms: tuple
    std_error: np.ndarray | None = None
    tail_bound: float = 0.0
    min_eigenvalue: float = field(default=float("nan"))
    flagged: bool = False
    method: str = "monte-carlo"

    @property
    def lag_terms(self):
        return self.term_norms


def _finish(C: np.ndarray, n_max: int, se, tail, method) -> CovarianceEstimate:
    # C[n] = mu(f (x) f^n); Sigma = C[0] + sum_{n>=1} (C[n] + C[n]^T)
    sigma = C[0] + C[1:].sum(axis=0) + C[1:].sum(axis=0).T
    sigma = 0.5 * (sigma + sigma.T)
    norms = tuple(float(np.abs(c).max()) for c in C)
    eig = float(np.linalg.eigvalsh(sigma).min())
    noise = 0.0 if se is None else 3.0 * float(np.max(se))
    flagged = eig <= max(noise, 1e-10 * max(1.0, float(np.abs(sigma).max())))
    return CovarianceEstimate(sigma, n_max, norms, se, tail, eig, flagged, method)


def covariance_series(p, f: ObservableSpec, n_max: int, samples: int, seed: int, orbit_factor: int = 2,
                      beta: float | None = None, chunk_size: int = 1 << 12,
                      threads: int | None = None) -> CovarianceEstimate:
    """Monte Carlo lag covariances ``mu(f (x) f^n)``, ``n <= n_max``, and their series.

    Each draw contributes one orbit of length ``orbit_factor * n_max``; every
    lag uses all admissible time pairs of that orbit (stationarity), computed
    with FFT cross-correlations.  The estimate is symmetrised exactly.  The
    reported ``tail_bound`` is ``2 ||f||_inf**2 sum_{n > n_max} rho(n)``
    (the constant of the decay bound is unknown, so this is indicative).
    """
    p = as_parameter(p)
    d = f.d
    L = max(orbit_factor, 1) * n_max + 1
    sampler = invariant_sampler(p.alpha)
    nfft = 1 << int(math.ceil(math.log2(2 * L)))
    counts = L - np.arange(n_max + 1)

    def chunk(c, s, e):
        rng = chunk_rng(seed, STREAM_COVARIANCE, c)
        x = sampler.sample(rng, e - s)
        vals = np.empty((L, e - s, d))
        for k in range(L):
            vals[k] = f(x)
            x = step(p.alpha, x)
        spec = np.fft.rfft(vals, n=nfft, axis=0)
        per = np.empty((e - s, n_max + 1, d, d))
        for a in range(d):
            for b in range(d):
                corr = np.fft.irfft(np.conj(spec[:, :, a]) * spec[:, :, b], n=nfft, axis=0)[: n_max + 1]
                per[:, :, a, b] = (corr / counts[:, None]).T
        sig = per[:, 0] + per[:, 1:].sum(axis=1) + np.swapaxes(per[:, 1:].sum(axis=1), 1, 2)
        return per.sum(axis=0), (sig**2).sum(axis=0), e - s

    parts = chunked_map(chunk, samples, chunk_size, threads)
    total = sum(pt[0] for pt in parts)
    sq = sum(pt[1] for pt in parts)
    n = sum(pt[2] for pt in parts)
    C = total / n
    sig_mean = C[0] + C[1:].sum(axis=0) + C[1:].sum(axis=0).T
    se_sigma = np.sqrt(np.maximum(sq / n - sig_mean**2, 0.0) / n)
    tail = 0.0
    if beta is not None and beta < 0.5:
        tail = 2.0 * f.sup_norm**2 * RhoRate(beta).tail(n_max)
    return _finish(C, n_max, se_sigma, tail, "monte-carlo")


def covariance_operator(p, f: ObservableSpec, n_max: int = 4096, bins: int = 1 << 14) -> CovarianceEstimate:
    """Deterministic lag covariances through the graded Ulam operator.

    ``mu(f_a f_b o T**n) = int f_b L**n (f_a h) dm``; the pushed vectors are
    bin values on the graded grid of the accurate invariant density.
    """
    p = as_parameter(p)
    h = fine_invariant_density(p, bins)
    op = ulam_matrix(p, h.bins, h.edges)
    w = h.widths
    from ..density import bin_averages

    avg = np.column_stack([bin_averages(c, h.edges) for c in f.components])
    d = f.d
    C = np.empty((n_max + 1, d, d))
    u = avg * h.values[:, None]
    for n in range(n_max + 1):
        C[n] = (u * w[:, None]).T @ avg
        u = op.matrix @ u
    return _finish(C, n_max, None, 0.0, "operator")
