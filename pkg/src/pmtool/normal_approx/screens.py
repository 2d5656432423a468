"""Covariance condition for the Kantorovich-rate method and a coboundary screen."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError
from ..maps import as_parameter, step
from ..parallel import DEFAULT_CHUNK, chunk_rng, reduce_batches
from ..rates import loglog_fit, rho
from .birkhoff import invariant_sampler
from .distances import directions
from .observables import ObservableSpec

STREAM_B2 = 40
STREAM_SCREEN = 41


@dataclass(frozen=True)
class Probe:
    """Test function ``F(S_i, f^i, f^j, f^k)`` with certified ``||F||_inf`` and ``||grad F||_inf``.

    ``fn`` receives four ``(n, d)`` arrays.
    """

    name: str
    fn: Callable
    sup: float
    grad_sup: float


def tanh_probe(slot: int, component: int = 0) -> Probe:
    """``tanh`` of one coordinate of one argument (slot 0 is ``S_i``)."""
    return Probe(f"tanh[{slot},{component}]", lambda *args: np.tanh(args[slot][:, component]), 1.0, 1.0)


def bump_probe(center=0.0) -> Probe:
    """Gaussian bump of the concatenated arguments."""
    def fn(*args):
        z = np.concatenate(args, axis=1) - center
        return np.exp(-0.5 * np.sum(z * z, axis=1))

    return Probe("bump", fn, 1.0, math.exp(-0.5))


@dataclass(frozen=True)
class B2Index:
    i: int
    j: int
    k: int
    p: int
    q: int
    l: int
    a: int
    b: int
    c: int
    alpha: int = 0
    beta: int = 0
    gamma: int = 0

    def __post_init__(self):
        if not 1 <= self.a + self.b + self.c <= 3 or min(self.a, self.b, self.c) < 0:
            raise DomainError("exponents need a, b, c >= 0 and 1 <= a + b + c <= 3")
        if not 0 <= self.i <= self.j <= self.k or min(self.p, self.q, self.l) < 0 or self.q > self.l:
            raise DomainError("need 0 <= i <= j <= k, p >= 0 and 0 <= q <= l")


@dataclass(frozen=True)
class B2Report:
    C: float
    worst_ratio_index: int
    rows: tuple  # (probe name, index, cov, std_error, scale)
    beta: float


def check_B2(p, f: ObservableSpec, probes: Sequence[Probe], indices: Sequence[B2Index], samples: int, seed: int,
             beta: float | None = None, chunk_size: int = DEFAULT_CHUNK, threads: int | None = None) -> B2Report:
    """Fit the smallest ``C`` with ``|Cov| <= C (||F|| + ||grad F||) rho(p)`` within two standard errors."""
    p = as_parameter(p)
    beta = p.alpha if beta is None else beta
    indices = list(indices)
    probes = list(probes)
    horizon = max(ix.k + ix.p + ix.l for ix in indices)
    sampler = invariant_sampler(p.alpha)
    d = f.d
    combos = [(pr, ix) for pr in probes for ix in indices]

    def chunk(c, s, e):
        rng = chunk_rng(seed, STREAM_B2, c)
        x = sampler.sample(rng, e - s)
        vals = np.empty((horizon + 1, e - s, d))
        for t in range(horizon + 1):
            vals[t] = f(x)
            x = step(p.alpha, x)
        prefix = np.concatenate((np.zeros((1, e - s, d)), np.cumsum(vals, axis=0)))
        out = np.empty((e - s, 3 * len(combos)))
        for n, (pr, ix) in enumerate(combos):
            Fv = pr.fn(prefix[ix.i], vals[ix.i], vals[ix.j], vals[ix.k])
            G = (vals[ix.k + ix.p][:, ix.alpha] ** ix.a * vals[ix.k + ix.p + ix.q][:, ix.beta] ** ix.b
                 * vals[ix.k + ix.p + ix.l][:, ix.gamma] ** ix.c)
            out[:, 3 * n] = Fv * G
            out[:, 3 * n + 1] = Fv
            out[:, 3 * n + 2] = G
        return out

    acc = reduce_batches(chunk, samples, 3 * len(combos), chunk_size, threads)
    mean = acc.mean
    bm = acc.batch_means()
    rows = []
    C, worst = 0.0, 0
    for n, (pr, ix) in enumerate(combos):
        cov = float(mean[3 * n] - mean[3 * n + 1] * mean[3 * n + 2])
        cb = bm[:, 3 * n] - bm[:, 3 * n + 1] * bm[:, 3 * n + 2]
        se = float(cb.std(ddof=1) / math.sqrt(len(cb)))
        scale = (pr.sup + pr.grad_sup) * rho(ix.p, beta)
        rows.append((pr.name, ix, cov, se, scale))
        r = max(abs(cov) - 2 * se, 0.0) / scale
        if r > C:
            C, worst = r, n
    return B2Report(C, worst, tuple(rows), beta)


@dataclass(frozen=True)
class ScreenReport:
    directions: np.ndarray
    N_grid: tuple
    variances: np.ndarray  # (len(directions), len(N_grid)) of Var(v . S_N)
    slopes: np.ndarray
    flagged: np.ndarray  # boolean per direction
    threshold: float

    @property
    def flagged_directions(self) -> np.ndarray:
        return self.directions[self.flagged]


def coboundary_screen(p, f: ObservableSpec, N_grid: Sequence[int] = tuple(2**k for k in range(7, 14)),
                      samples: int = 20000, seed: int = 0, n_directions: int = 64, threshold: float = 0.5,
                      chunk_size: int = 1 << 13, threads: int | None = None) -> ScreenReport:
    """Flag directions ``v`` where ``Var(v . S_N)`` grows clearly slower than ``N``.

    The slope of ``log Var(v . S_N)`` against ``log N`` is about 1 for a
    non-degenerate direction and about 0 for a coboundary, whose sums
    telescope.  Directions with slope below ``threshold`` are flagged.  A
    heuristic screen, not a proof.
    """
    p = as_parameter(p)
    Ns = sorted(int(n) for n in N_grid)
    if len(Ns) < 2:
        raise DomainError("need at least two N values")
    d = f.d
    sampler = invariant_sampler(p.alpha)
    dirs = directions(d, n_directions)
    width = len(Ns) * (d + d * d)

    def chunk(c, s, e):
        rng = chunk_rng(seed, STREAM_SCREEN, c)
        x = sampler.sample(rng, e - s)
        S = np.zeros((e - s, d))
        cols = []
        k = 0
        for N in Ns:
            while k < N:
                S += f(x)
                x = step(p.alpha, x)
                k += 1
            cols.append(S.copy())
            cols.append((S[:, :, None] * S[:, None, :]).reshape(e - s, d * d))
        return np.concatenate(cols, axis=1)

    acc = reduce_batches(chunk, samples, width, chunk_size, threads)
    mean = acc.mean
    variances = np.empty((len(dirs), len(Ns)))
    off = 0
    for j in range(len(Ns)):
        m1 = mean[off:off + d]
        m2 = mean[off + d:off + d + d * d].reshape(d, d)
        cov = m2 - np.outer(m1, m1)
        variances[:, j] = np.einsum("ia,ab,ib->i", dirs, cov, dirs)
        off += d + d * d
    slopes = np.array([loglog_fit(Ns, np.maximum(v, 1e-300)).exponent for v in variances])
    return ScreenReport(dirs, tuple(Ns), variances, slopes, slopes < threshold, threshold)
