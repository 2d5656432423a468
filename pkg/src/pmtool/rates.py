"""The polynomial decay rate rho(n), its tail sums, and log-log rate fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, gammaincc

from .errors import DivergentSeries, DomainError, InsufficientData


def rho(n, beta: float):
    """``n**(1 - 1/beta) * log(n)**(1/beta)`` for ``n >= 2``; 1 for ``n`` in {0, 1}.

    The logarithm is natural.  Note that rho is not monotone for small ``n``
    because of the log factor.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta!r}")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise DomainError("rho is defined for n >= 0")
    safe = np.maximum(n_arr, 2.0)
    val = safe ** (1.0 - 1.0 / beta) * np.log(safe) ** (1.0 / beta)
    out = np.where(n_arr >= 2, val, 1.0)
    return float(out) if np.ndim(n) == 0 else out


def _log_power_tail(x: float, r: float, q: float) -> float:
    # int_x^inf t^-r (ln t)^q dt = Gamma(q+1, (r-1) ln x) / (r-1)^(q+1)
    if r <= 1.0:
        return math.inf
    s = (r - 1.0) * math.log(x)
    return float(gammaincc(q + 1.0, s) * gamma(q + 1.0) / (r - 1.0) ** (q + 1.0))


class RhoRate:
    """tau = rho(., beta) with exact partial sums and integral tail corrections."""

    def __init__(self, beta: float):
        rho(2, beta)
        self.beta = float(beta)

    def __call__(self, n):
        return rho(n, self.beta)

    def _sum(self, start: int, cap: int, weight: int) -> float:
        # sum_{i=start}^{inf} i^weight rho(i): exact up to cap, midpoint-integral tail beyond.
        r = 1.0 / self.beta - 1.0 - weight
        q = 1.0 / self.beta
        if r <= 1.0:
            raise DivergentSeries(
                f"sum of i^{weight} rho(i) diverges for beta = {self.beta} (needs beta < {1 / (2 + weight):.4g})"
            )
        total = 0.0
        if cap >= start:
            i = np.arange(start, cap + 1, dtype=float)
            total = float(np.sum(i**weight * rho(i, self.beta)))
        tail_from = max(cap, start - 1) + 0.5
        return total + _log_power_tail(max(tail_from, 2.0), r + 0.0, q)

    def tail(self, K: int, cap: int = 10**6) -> float:
        """``sum_{i > K} rho(i)``."""
        return self._sum(K + 1, cap, 0)

    def weighted_sum(self, cap: int = 10**6) -> float:
        """``sum_{i >= 0} (i + 1) rho(i)``."""
        head = 1.0 + 2.0  # i = 0 and i = 1 terms, rho = 1
        return head + self._sum(2, cap, 1) + self._sum(2, cap, 0)


@dataclass(frozen=True)
class FiniteRate:
    """A rate with finite support, ``tau(i) = values[i]`` and zero beyond."""

    values: tuple

    def __call__(self, n):
        n_arr = np.asarray(n, dtype=int)
        vals = np.asarray(self.values + (0.0,), dtype=float)
        out = vals[np.clip(n_arr, 0, len(self.values))]
        return float(out) if np.ndim(n) == 0 else out

    def tail(self, K: int, cap: int | None = None) -> float:
        return float(sum(self.values[K + 1:]))

    def weighted_sum(self, cap: int | None = None) -> float:
        return float(sum((i + 1) * v for i, v in enumerate(self.values)))


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log value = intercept + exponent * log n``."""

    exponent: float
    intercept: float
    r_squared: float
    points: tuple
    residual: float = 0.0
    dropped: tuple = field(default=())

    def predict(self, n):
        return np.exp(self.intercept) * np.asarray(n, dtype=float) ** self.exponent


def loglog_fit(n, values) -> RateFit:
    """OLS on ``(log n, log value)``; all values must be positive."""
    n = np.asarray(n, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(n) < 2:
        raise InsufficientData("need at least two points for a log-log fit")
    if np.any(v <= 0) or np.any(n <= 0):
        raise DomainError("log-log fit needs positive n and values")
    x, y = np.log(n), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(
        exponent=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        points=tuple(zip(n.tolist(), v.tolist())),
        residual=float(np.sqrt(ss_res / len(n))),
    )


def fit_decay(points, min_points: int = 4) -> RateFit:
    """Fit a power law to ``(n, value)`` or ``(n, value, std_error)`` triples.

    Absolute values are fitted.  Points with ``|value| <= 3 * std_error`` or
    a zero value are dropped; the reasons are kept on the result, and listed
    in the :class:`InsufficientData` error when fewer than ``min_points``
    remain.
    """
    kept, dropped = [], []
    for pt in points:
        n, value = float(pt[0]), abs(float(pt[1]))
        se = float(pt[2]) if len(pt) > 2 else 0.0
        if n <= 0:
            dropped.append(f"n={n:g}: nonpositive n")
        elif value == 0.0:
            dropped.append(f"n={n:g}: zero value")
        elif value <= 3.0 * se:
            dropped.append(f"n={n:g}: |value|={value:.3g} within 3 std errors ({se:.3g})")
        else:
            kept.append((n, value))
    if len(kept) < min_points:
        raise InsufficientData(
            f"{len(kept)} usable point(s), need {min_points}", reasons=dropped
        )
    fit = loglog_fit([p[0] for p in kept], [p[1] for p in kept])
    return RateFit(fit.exponent, fit.intercept, fit.r_squared, fit.points, fit.residual, tuple(dropped))
