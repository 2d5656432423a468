"""Monte Carlo estimators for multi-time functional correlations.

For ``F`` on ``[0, 1]**(k+1)``, times ``0 = n_0 <= ... <= n_k`` and gap indices
``l_1 < ... < l_p < k``, the coordinates split into ``p + 1`` blocks
(``0..l_1``, ``l_1+1..l_2``, ..., ``l_p+1..k``).  ``H(x_0, ..., x_p)`` feeds
``T~_{n_j}(x_i)`` to coordinate ``j`` of block ``i``.  The estimators compare
the diagonal integral ``int H(x, ..., x) dmu`` with the product integral over
independent draws.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .maps import AdmissibleSequence, orbit_at_times
from .parallel import DEFAULT_CHUNK, chunk_rng, reduce_batches
from .rates import RateFit, fit_decay, rho

__all__ = [
    "FunctionalSpec", "CorrelationEstimate", "rho", "fit_decay", "RateFit",
    "lhs_functional_correlation", "multicorrelation", "pair_correlation_sweep",
    "bound_conformance", "write_results",
]

CSV_HEADER = ["experiment_id", "n_gap", "estimate", "std_error", "samples", "seed"]


@dataclass(frozen=True)
class FunctionalSpec:
    """``F(x_0, ..., x_k)`` with its time grid, gap positions and norms.

    ``F`` is called with ``k + 1`` arrays of equal length and must return an
    array of that length.  ``lip_consts[i]`` bounds the Lipschitz constant in
    coordinate ``i`` for ``i <= l_p``.
    """

    k: int
    gap_indices: tuple
    times: tuple
    F: Callable
    sup_norm: float
    lip_consts: tuple

    def __post_init__(self):
        gaps = tuple(int(g) for g in self.gap_indices)
        times = tuple(int(t) for t in self.times)
        object.__setattr__(self, "gap_indices", gaps)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "lip_consts", tuple(float(c) for c in self.lip_consts))
        if self.k < 1:
            raise DomainError("F needs at least two arguments (k >= 1)")
        if not gaps or any(b <= a for a, b in zip(gaps, gaps[1:])) or gaps[0] < 0 or gaps[-1] >= self.k:
            raise DomainError("gap indices must be strictly increasing in [0, k)")
        if len(times) != self.k + 1 or times[0] != 0 or any(b < a for a, b in zip(times, times[1:])):
            raise DomainError("times must be k + 1 nondecreasing integers starting at 0")
        if len(self.lip_consts) < gaps[-1] + 1:
            raise DomainError("need a Lipschitz constant for every coordinate up to l_p")

    @property
    def p(self) -> int:
        return len(self.gap_indices)

    def blocks(self) -> list[range]:
        cuts = [-1, *self.gap_indices, self.k]
        return [range(cuts[i] + 1, cuts[i + 1] + 1) for i in range(len(cuts) - 1)]

    def gaps(self) -> list[int]:
        return [self.times[l + 1] - self.times[l] for l in self.gap_indices]

    def scale(self, beta: float) -> float:
        """``(||F||_inf + max Lip) * sum_i rho(gap_i)``."""
        return (self.sup_norm + max(self.lip_consts)) * float(sum(rho(g, beta) for g in self.gaps()))


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    std_error: float
    samples: int
    seed: int
    diagonal: float = float("nan")
    product: float = float("nan")


def _coords_for_block(seq, x, times, block):
    ts = [times[j] for j in block]
    return list(orbit_at_times(seq, x, ts))


def lhs_functional_correlation(seq: AdmissibleSequence, spec: FunctionalSpec, mu, mus: Sequence,
                               samples: int, seed: int, chunk_size: int = DEFAULT_CHUNK,
                               threads: int | None = None) -> CorrelationEstimate:
    """Diagonal minus product integral of ``H`` by Monte Carlo.

    Per draw: ``x ~ mu`` gives ``H(x, ..., x)`` from one orbit up to ``n_k``;
    independent ``x_0 ~ mu, x_i ~ mus[i-1]`` give ``H(x_0, ..., x_p)`` with one
    orbit segment per block.  The difference is batched, which yields the
    combined standard error directly.
    """
    if len(mus) != spec.p:
        raise DomainError(f"need {spec.p} block samplers, got {len(mus)}")
    seq.require(spec.times[-1])
    blocks = spec.blocks()
    samplers = [mu, *mus]

    def chunk(c, s, e):
        rng = chunk_rng(seed, 0, c)
        n = e - s
        x = mu.sample(rng, n)
        diag = spec.F(*orbit_at_times(seq, x, spec.times))
        coords = []
        for block, sampler in zip(blocks, samplers):
            coords.extend(_coords_for_block(seq, sampler.sample(rng, n), spec.times, block))
        prod = spec.F(*coords)
        return np.column_stack((diag - prod, diag, prod))

    acc = reduce_batches(chunk, samples, 3, chunk_size, threads)
    mean, se = acc.mean, acc.std_error
    return CorrelationEstimate(float(mean[0]), float(se[0]), samples, seed, float(mean[1]), float(mean[2]))


def multicorrelation(seq: AdmissibleSequence, fs: Sequence[Callable], times: Sequence[int], l: int, mu,
                     samples: int, seed: int, chunk_size: int = DEFAULT_CHUNK,
                     threads: int | None = None) -> CorrelationEstimate:
    """``int HG dmu - int H dmu int G dmu`` for products of one-dimensional observables.

    ``H = prod_{i <= l} f_i o T~_{n_i}`` and ``G = prod_{i > l} f_i o T~_{n_i}``.
    Each draw pairs ``x ~ mu`` (for ``HG`` and ``H``) with an independent
    ``y ~ mu`` (for ``G``), so ``H(x) G(x) - H(x) G(y)`` is unbiased.
    """
    times = [int(t) for t in times]
    k = len(fs) - 1
    if len(times) != k + 1 or times[0] != 0 or not 0 <= l < k:
        raise DomainError("need len(times) == len(fs), times[0] == 0 and 0 <= l < k")
    seq.require(times[-1])

    def chunk(c, s, e):
        rng = chunk_rng(seed, 1, c)
        n = e - s
        ox = orbit_at_times(seq, mu.sample(rng, n), times)
        oy = orbit_at_times(seq, mu.sample(rng, n), times[l + 1:])
        H = np.prod([fs[i](ox[i]) for i in range(l + 1)], axis=0)
        Gx = np.prod([fs[i](ox[i]) for i in range(l + 1, k + 1)], axis=0)
        Gy = np.prod([fs[i](oy[i - l - 1]) for i in range(l + 1, k + 1)], axis=0)
        return np.column_stack((H * Gx - H * Gy, H * Gx, H, Gy))

    acc = reduce_batches(chunk, samples, 4, chunk_size, threads)
    mean, se = acc.mean, acc.std_error
    return CorrelationEstimate(float(mean[0]), float(se[0]), samples, seed, float(mean[1]),
                               float(mean[2] * mean[3]))


def product_spec(fs: Sequence[Callable], times: Sequence[int], l: int, sups: Sequence[float],
                 lips: Sequence[float]) -> FunctionalSpec:
    """The functional form of a product observable, for cross-checking :func:`multicorrelation`."""
    k = len(fs) - 1

    def F(*xs):
        return np.prod([f(x) for f, x in zip(fs, xs)], axis=0)

    sup = float(np.prod(sups))
    lip = [sup / max(s, 1e-300) * c for s, c in zip(sups[: l + 1], lips[: l + 1])]
    return FunctionalSpec(k, (l,), tuple(times), F, sup, tuple(lip))


def pair_correlation_sweep(seq: AdmissibleSequence, f: Callable, g: Callable, gaps: Sequence[int], mu,
                           samples: int, seed: int, chunk_size: int = DEFAULT_CHUNK,
                           threads: int | None = None) -> list[CorrelationEstimate]:
    """Functional-route estimates of ``int f (g o T~_n) dmu - int f dmu int g o T~_n dmu`` for every gap.

    This is the ``p = 1`` case with ``F(x_0, x_1) = f(x_0) g(x_1)``.  One pair
    of orbits per draw serves all gaps.
    """
    gaps = sorted(int(n) for n in gaps)
    seq.require(gaps[-1])
    times = [0, *gaps]

    def chunk(c, s, e):
        rng = chunk_rng(seed, 2, c)
        n = e - s
        ox = orbit_at_times(seq, mu.sample(rng, n), times)
        x0 = mu.sample(rng, n)
        oy = orbit_at_times(seq, mu.sample(rng, n), gaps)
        fx, fx0 = f(ox[0]), f(x0)
        cols = [fx * g(ox[i + 1]) - fx0 * g(oy[i]) for i in range(len(gaps))]
        return np.column_stack(cols)

    acc = reduce_batches(chunk, samples, len(gaps), chunk_size, threads)
    mean, se = acc.mean, acc.std_error
    return [CorrelationEstimate(float(m), float(s_), samples, seed) for m, s_ in zip(mean, se)]


@dataclass(frozen=True)
class Conformance:
    C_fit: float
    ratios: tuple

    def holds(self) -> bool:
        return all(r <= self.C_fit * (1 + 1e-12) for r in self.ratios)


def bound_conformance(estimates: Sequence[CorrelationEstimate], scales: Sequence[float]) -> Conformance:
    """Smallest single constant with ``|estimate| <= C_fit * scale`` at every point."""
    ratios = tuple(abs(e.value) / s for e, s in zip(estimates, scales))
    return Conformance(max(ratios), ratios)


def write_results(path, experiment_id: str, gaps: Sequence[int], estimates: Sequence[CorrelationEstimate]):
    """Append rows to the correlation results CSV, writing the header for a new file."""
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        for n, est in zip(gaps, estimates):
            w.writerow([experiment_id, int(n), repr(est.value), repr(est.std_error), est.samples, est.seed])
