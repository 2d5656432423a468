"""Branch partitions of the composed map, conditional densities and their pushforwards.

Cells are numbered ``theta = 1 .. 2**n`` from left to right.  Cell ``theta``
follows branch ``b_k = ((theta - 1) >> (n - k)) & 1`` of the ``k``-th map
(0 = left, 1 = right).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .density import GridDensity
from .errors import DomainError, ResolutionExhausted
from .maps import LEFT, RIGHT, AdmissibleSequence, branch_inverse
from .rates import RateFit, loglog_fit

MAX_LEVEL = 20


@dataclass(frozen=True, eq=False)
class BranchPartition:
    n: int
    endpoints: np.ndarray
    seq: AdmissibleSequence

    @property
    def cells(self) -> int:
        return len(self.endpoints) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.endpoints)

    def cell(self, theta: int) -> tuple[float, float]:
        self._check_theta(theta)
        return float(self.endpoints[theta - 1]), float(self.endpoints[theta])

    def itinerary(self, theta: int) -> list[int]:
        self._check_theta(theta)
        return [((theta - 1) >> (self.n - k)) & 1 for k in range(1, self.n + 1)]

    def _check_theta(self, theta):
        if not 1 <= theta <= self.cells:
            raise IndexError(f"theta must lie in 1..{self.cells}, got {theta}")

    def to_csv(self, path) -> None:
        e = self.endpoints
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "left", "right", "length"])
            for t in range(self.cells):
                w.writerow([t + 1, repr(float(e[t])), repr(float(e[t + 1])), repr(float(e[t + 1] - e[t]))])


def _branch_formula(alpha: float, bit, x):
    # right-branch images may dip below 0 by rounding; keep the unused left value finite
    left = x * (1.0 + 2.0**alpha * np.abs(x) ** alpha)
    return np.where(bit == 0, left, 2.0 * x - 1.0)


def build_partition(seq: AdmissibleSequence, n: int, verify: bool = True) -> BranchPartition:
    """Endpoints of the ``2**n`` cells on which ``T_n o ... o T_1`` is a bijection.

    Built by pulling ``{0, 1}`` back through both branch inverses of
    ``T_n``, then ``T_{n-1}``, down to ``T_1``.  With ``verify`` every cell is
    pushed forward along its itinerary and must land on ``(0, 1)`` within 1e-8.
    """
    if not 0 <= n <= MAX_LEVEL:
        raise DomainError(f"partition level must lie in 0..{MAX_LEVEL}, got {n}")
    seq.require(n)
    e = np.array([0.0, 1.0])
    for k in range(n, 0, -1):
        a = seq.alpha(k)
        left = branch_inverse(a, LEFT, e)
        right = branch_inverse(a, RIGHT, e)
        e = np.concatenate((left, right[1:]))
        if np.any(np.diff(e) <= 0.0):
            raise ResolutionExhausted(f"adjacent endpoints collide in double precision at level {n - k + 1}")
    e.setflags(write=False)
    part = BranchPartition(n, e, seq)
    if verify and n > 0:
        _verify_cells(part)
    return part


def _verify_cells(part: BranchPartition) -> None:
    theta0 = np.arange(part.cells)
    lo = part.endpoints[:-1].copy()
    hi = part.endpoints[1:].copy()
    for k in range(1, part.n + 1):
        bit = (theta0 >> (part.n - k)) & 1
        a = part.seq.alpha(k)
        lo = _branch_formula(a, bit, lo)
        hi = _branch_formula(a, bit, hi)
    err = max(np.abs(lo).max(), np.abs(hi - 1.0).max())
    if err > 1e-8:
        raise ResolutionExhausted(f"cells do not map onto (0, 1): endpoint error {err:.3g}")


def leftmost_length(seq: AdmissibleSequence, n: int) -> float:
    """Length of the leftmost cell: left inverses of ``T_n, ..., T_1`` applied to 1."""
    seq.require(n)
    x = 1.0
    for k in range(n, 0, -1):
        x = branch_inverse(seq.alpha(k), LEFT, x)
    return float(x)


def leftmost_length_law(seq: AdmissibleSequence, n_values) -> RateFit:
    """Log-log fit of the leftmost cell length against ``n``.

    Only one chain of inverses is needed per ``n``, so ``n`` is not capped.
    """
    ns = sorted(int(n) for n in n_values)
    if ns[0] < 1:
        raise DomainError("n must be positive")
    lengths = [leftmost_length(seq, n) for n in ns]
    return loglog_fit(ns, lengths)


@dataclass(frozen=True, eq=False)
class ConditionalDensity:
    """``h`` restricted to cell ``theta`` and renormalised by ``weight = mu(I_theta)``."""

    theta: int
    partition: BranchPartition
    base: GridDensity
    density: GridDensity
    weight: float
    pushed: GridDensity | None = None


def conditional_density(h: GridDensity, part: BranchPartition, theta: int) -> ConditionalDensity:
    """Exact restriction on the grid refined by the cell endpoints."""
    l, r = part.cell(theta)
    weight = float(h.cdf(r) - h.cdf(l))
    if weight <= 0.0:
        raise DomainError(f"cell {theta} has zero mass under h")
    edges = np.union1d(h.edges, [l, r])
    mid = 0.5 * (edges[:-1] + edges[1:])
    vals = np.where((mid > l) & (mid < r), h(mid), 0.0) / weight
    return ConditionalDensity(theta, part, h, GridDensity(vals, edges), weight)


def _itinerary_preimage(part: BranchPartition, theta: int, x: np.ndarray):
    """Points of cell ``theta`` mapped to ``x``, with ``(T_n o ... o T_1)'`` there."""
    bits = part.itinerary(theta)
    y = np.asarray(x, dtype=float)
    deriv = np.ones_like(y)
    for k in range(part.n, 0, -1):
        a = part.seq.alpha(k)
        if bits[k - 1] == 0:
            y = branch_inverse(a, LEFT, y)
            deriv = deriv * (1.0 + 2.0**a * (1.0 + a) * y**a)
        else:
            y = branch_inverse(a, RIGHT, y)
            deriv = deriv * 2.0
    return y, deriv


def densform(part: BranchPartition, theta: int, h, weight: float, x):
    """Pointwise pushed density ``h(y) / (weight * (T_n o ... o T_1)'(y))``."""
    y, deriv = _itinerary_preimage(part, theta, x)
    return np.asarray(h(y), dtype=float) / (weight * deriv)


def pushforward_conditional(seq: AdmissibleSequence, part: BranchPartition, cd: ConditionalDensity,
                            bins: int | None = None) -> GridDensity:
    """Bin averages of the pushforward of ``h_theta`` under the composed map.

    The composed map is increasing on the cell, so the pushed mass of an
    output bin is the ``h``-measure of its preimage; mass is exactly one.
    """
    if cd.partition is not part or part.seq is not seq:
        raise DomainError("conditional density was not built from this partition and sequence")
    m = cd.base.bins if bins is None else int(bins)
    edges = np.linspace(0.0, 1.0, m + 1)
    y, _ = _itinerary_preimage(part, cd.theta, edges)
    l, r = part.cell(cd.theta)
    y = np.clip(y, l, r)
    y[0], y[-1] = l, r
    mass = np.diff(cd.base.cdf(y)) / cd.weight
    return GridDensity(np.maximum(mass * m, 0.0))
