"""Piecewise-constant densities on [0, 1] and samplers drawing from them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError
from .maps import AdmissibleSequence, advance

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


class GridDensity:
    """Nonnegative density, constant on each bin ``(e[i], e[i+1]]``.

    ``edges`` defaults to the uniform grid ``i / m``.  ``mass`` is the
    integral, which on a uniform grid equals the mean of ``values``.
    """

    def __init__(self, values, edges=None):
        v = np.asarray(values, dtype=float).copy()
        if v.ndim != 1 or len(v) < 2:
            raise DomainError("a grid density needs at least two bins")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("density values must be finite and nonnegative")
        if edges is None:
            e = np.linspace(0.0, 1.0, len(v) + 1)
            self.uniform = True
        else:
            e = np.asarray(edges, dtype=float).copy()
            if len(e) != len(v) + 1 or e[0] != 0.0 or e[-1] != 1.0 or np.any(np.diff(e) <= 0):
                raise DomainError("edges must increase strictly from 0 to 1, one more than values")
            self.uniform = bool(np.allclose(np.diff(e), 1.0 / len(v), rtol=0, atol=1e-15))
        v.setflags(write=False)
        e.setflags(write=False)
        self.values = v
        self.edges = e

    @classmethod
    def from_function(cls, f, bins: int, edges=None):
        """Bin averages of ``f`` by 6-point Gauss-Legendre on each bin."""
        e = np.linspace(0.0, 1.0, bins + 1) if edges is None else np.asarray(edges, float)
        return cls(np.maximum(bin_averages(f, e), 0.0), None if edges is None else e)

    @property
    def bins(self) -> int:
        return len(self.values)

    @cached_property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @cached_property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @cached_property
    def cumulative(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.values * self.widths)))

    @property
    def mass(self) -> float:
        return float(self.cumulative[-1])

    def normalize(self) -> "GridDensity":
        m = self.mass
        if m <= 0:
            raise DomainError("cannot normalise a density of zero mass")
        return GridDensity(self.values / m, None if self.uniform else self.edges)

    def bin_index(self, x) -> np.ndarray:
        # bin i covers (e[i], e[i+1]]; x = 0 goes to the first bin
        i = np.searchsorted(self.edges, np.asarray(x, dtype=float), side="left") - 1
        return np.clip(i, 0, self.bins - 1)

    def evaluate(self, x):
        out = self.values[self.bin_index(x)]
        return float(out) if np.ndim(x) == 0 else out

    __call__ = evaluate

    def cdf(self, x):
        """Integral of the density over ``[0, x]`` (not normalised)."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        i = self.bin_index(x)
        out = self.cumulative[i] + self.values[i] * (x - self.edges[i])
        return float(out) if np.ndim(x) == 0 else out

    def integrate(self, g) -> np.ndarray:
        """``int g h dx`` with per-bin Gauss-Legendre; ``g`` may return (n, d) arrays."""
        e = self.edges
        half = 0.5 * np.diff(e)
        total = 0.0
        for node, wt in zip(_GL_NODES, _GL_WEIGHTS):
            x = 0.5 * (e[:-1] + e[1:]) + half * node
            gx = np.asarray(g(x), dtype=float)
            coef = wt * half * self.values
            total = total + (np.tensordot(coef, gx, axes=(0, 0)))
        return total

    def l1_distance(self, other: "GridDensity") -> float:
        if self.bins == other.bins and np.array_equal(self.edges, other.edges):
            return float(np.sum(np.abs(self.values - other.values) * self.widths))
        e = np.union1d(self.edges, other.edges)
        mid = 0.5 * (e[:-1] + e[1:])
        return float(np.sum(np.abs(self(mid) - other(mid)) * np.diff(e)))

    def with_values(self, values) -> "GridDensity":
        return GridDensity(values, None if self.uniform else self.edges)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_mid", "value"])
            for x, v in zip(self.midpoints, self.values):
                w.writerow([repr(float(x)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        mids = np.array([float(r["x_mid"]) for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
        m = len(mids)
        if np.allclose(mids, (np.arange(m) + 0.5) / m, rtol=0, atol=1e-12):
            return cls(vals)
        # rebuild graded edges from the midpoints, starting at 0
        edges = np.zeros(m + 1)
        for i, x in enumerate(mids):
            edges[i + 1] = 2.0 * x - edges[i]
        edges[-1] = 1.0
        return cls(vals, edges)

    def __repr__(self):
        return f"GridDensity(bins={self.bins}, mass={self.mass:.6g})"


def bin_averages(f, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    acc = np.zeros(len(mid))
    for node, wt in zip(_GL_NODES, _GL_WEIGHTS):
        acc += 0.5 * wt * np.broadcast_to(np.asarray(f(mid + half * node), dtype=float), mid.shape)
    return acc


@dataclass(frozen=True)
class DensitySampler:
    """Exact inverse-CDF sampling from a :class:`GridDensity`."""

    density: GridDensity

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = self.density
        u = rng.random(n) * d.mass
        cum = d.cumulative
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, d.bins - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = d.edges[i] + (u - cum[i]) / d.values[i]
        return np.clip(x, d.edges[i], d.edges[i + 1])

    approximate = False


@dataclass(frozen=True)
class OrbitSampler:
    """Approximate sampler: uniform draws pushed ``burn_in`` steps forward.

    Converges to the invariant law only polynomially fast near the neutral
    fixed point; flagged as approximate.
    """

    seq: AdmissibleSequence
    burn_in: int = 1000

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return advance(self.seq, rng.random(n), 0, self.burn_in)

    approximate = True
