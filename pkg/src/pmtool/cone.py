"""Membership certificates for the density cone and the Lipschitz-to-cone embedding.

A density ``f`` on (0, 1] is in the cone for parameter ``beta`` when

* ``f`` is decreasing,
* ``x**(beta + 1) * f(x)`` is increasing,
* ``f(x) <= a * x**(-beta) * m(f)`` with ``a = 2**beta * (2 + beta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import GridDensity
from .errors import ConeMembershipError, DomainError

SLACK = 1e-12
_LIP_GRID = 1 << 16


def cone_constant_a(beta: float) -> float:
    """``2**beta * (2 + beta)``; total on [0, 1] so the limits can be evaluated."""
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta!r}")
    return 2.0**beta * (2.0 + beta)


@dataclass(frozen=True)
class ConeReport:
    beta: float
    resolution: int
    decreasing_ok: bool
    weighted_increasing_ok: bool
    pointwise_bound_ok: bool
    max_violation: float
    exempt_bins: int = 1
    reason: str | None = None

    @property
    def passed(self) -> bool:
        return self.decreasing_ok and self.weighted_increasing_ok and self.pointwise_bound_ok

    def __bool__(self):
        return self.passed


def cone_check(f, beta: float, resolution: int | None = None, exempt_bins: int = 1) -> ConeReport:
    """Check the three cone conditions at grid midpoints.

    Parameters
    ----------
    f : GridDensity or callable
        Grid densities are checked on their own bins (``resolution`` is then
        informational).  Callables are evaluated at the midpoints of a
        uniform grid of ``resolution`` bins (default 4096) and no bin is
        exempted from the pointwise bound.
    beta : float
        Cone parameter in (0, 1).
    exempt_bins : int
        Leading bins of a grid density excluded from the pointwise bound,
        which a bin average cannot satisfy near the ``x**-beta`` blow-up.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta!r}")
    if isinstance(f, GridDensity):
        x, vals, mass = f.midpoints, f.values, f.mass
        res = f.bins
        exempt = exempt_bins
    else:
        res = 4096 if resolution is None else int(resolution)
        if res < 16:
            raise DomainError("resolution must be at least 16")
        x = (np.arange(res) + 0.5) / res
        vals = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
        mass = float(vals.mean())
        exempt = 0
    if res < 2:
        raise DomainError("need at least two bins")
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
        return ConeReport(beta, res, False, False, False, float("inf"), exempt,
                          reason="density is not strictly positive")

    dec = np.diff(vals)
    weighted = x ** (beta + 1.0) * vals
    inc = -np.diff(weighted)
    bound = cone_constant_a(beta) * x ** (-beta) * mass
    excess = (vals - bound)[exempt:]
    worst = max(dec.max(), inc.max(), excess.max() if excess.size else -np.inf)
    return ConeReport(
        beta=float(beta),
        resolution=res,
        decreasing_ok=bool(dec.max() <= SLACK),
        weighted_increasing_ok=bool(inc.max() <= SLACK),
        pointwise_bound_ok=bool(excess.size == 0 or excess.max() <= SLACK),
        max_violation=float(worst),
        exempt_bins=exempt,
    )


def lipschitz_bounds(f, grid: int = _LIP_GRID) -> tuple[float, float]:
    """Sup norm and Lipschitz constant of ``f`` estimated on ``grid + 1`` nodes."""
    x = np.linspace(0.0, 1.0, grid + 1)
    v = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    return float(np.abs(v).max()), float(np.abs(np.diff(v)).max() * grid)


@dataclass(frozen=True)
class ConeEmbedding:
    """``F = (f + lam * x + nu) * h + delta`` with the cone-embedding constants."""

    lam: float
    nu: float
    delta: float
    A: float
    B: float
    beta: float
    F: GridDensity | None
    degenerate: bool = False

    @property
    def l1_norm(self) -> float:
        return 0.0 if self.F is None else self.F.mass

    @property
    def l1_constant(self) -> float:
        """Recorded ratio ``||F||_1 / (A B)``."""
        return float("nan") if self.degenerate else self.l1_norm / (self.A * self.B)


def embedding_constants(A: float, B: float, beta: float) -> tuple[float, float, float]:
    a = cone_constant_a(beta)
    delta = 2.0 * A * B * max(a / (beta + 1.0), 4.0 * a / (a - 1.0))
    return -A, 6.0 * A, delta


def lip_cone_embed(f, h, beta: float, A: float, B: float | None = None,
                   resolution: int = 4096, check_h: bool = True) -> ConeEmbedding:
    """Shift and scale a Lipschitz ``f`` so that ``(f + lam x + nu) h + delta`` is a cone density.

    ``f`` must satisfy ``sup|f| <= A`` and ``Lip(f) <= A`` (checked on a
    2**16 grid); ``h`` must be a cone density with mass at most ``B``
    (default: its mass).  With ``A == 0`` or ``B == 0`` the zero embedding is
    returned with ``degenerate=True``.
    """
    if A < 0 or (B is not None and B < 0):
        raise DomainError("budgets A and B must be nonnegative")
    if not isinstance(h, GridDensity):
        h = GridDensity.from_function(h, resolution)
    if B is None:
        B = h.mass
    if check_h:
        rep = cone_check(h, beta)
        if not rep.passed:
            raise ConeMembershipError(f"h is not a cone density (max violation {rep.max_violation:.3g})")
    if h.mass > B * (1.0 + 1e-12):
        raise DomainError(f"m(h) = {h.mass:.6g} exceeds budget B = {B}")
    if A == 0 or B == 0:
        zero = None if h is None else h.with_values(np.zeros(h.bins))
        return ConeEmbedding(0.0, 0.0, 0.0, float(A), float(B), float(beta), zero, degenerate=True)
    sup, lip = lipschitz_bounds(f)
    tol = 1e-9 * (1.0 + A)
    if sup > A + tol or lip > A + tol:
        raise DomainError(f"f exceeds the budget A = {A}: sup = {sup:.6g}, Lip = {lip:.6g}")
    lam, nu, delta = embedding_constants(A, B, beta)
    x = h.midpoints
    g = np.asarray(f(x), dtype=float) + lam * x + nu
    F = h.with_values(g * h.values + delta)
    return ConeEmbedding(lam, nu, delta, float(A), float(B), float(beta), F)
