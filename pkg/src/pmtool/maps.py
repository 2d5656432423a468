"""Pomeau-Manneville maps and their time-dependent compositions.

For ``0 < alpha < 1`` the map is

    T(x) = x (1 + 2**alpha x**alpha)   on [0, 1/2)
    T(x) = 2x - 1                      on [1/2, 1]

with a neutral fixed point at the origin.  The point 1/2 belongs to the right
branch.  Every function here accepts scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AdmissibilityError, DomainError, SequenceExhausted

LEFT = "left"
RIGHT = "right"

_NEWTON_MAX_ITER = 60
_INVERSE_TOL = 1e-14


@dataclass(frozen=True)
class MapParameter:
    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not 0.0 < a < 1.0:
            raise DomainError(f"map parameter must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)


def as_parameter(p) -> MapParameter:
    return p if isinstance(p, MapParameter) else MapParameter(p)


def _check_unit(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def _scalar_or_array(value, like):
    return float(value) if np.ndim(like) == 0 else value


def step(alpha: float, x: np.ndarray) -> np.ndarray:
    """Unchecked vectorised evaluation used in the Monte Carlo inner loops."""
    c = 2.0**alpha
    out = np.where(x < 0.5, x * (1.0 + c * x**alpha), 2.0 * x - 1.0)
    return np.clip(out, 0.0, 1.0, out=out)


def apply(p, x):
    """Evaluate the map at ``x``; raises :class:`DomainError` outside [0, 1]."""
    p = as_parameter(p)
    arr = _check_unit(x)
    return _scalar_or_array(step(p.alpha, arr), x)


def derivative(p, x):
    """Derivative of the map; at ``x = 1/2`` the right-branch value 2 is returned."""
    p = as_parameter(p)
    arr = _check_unit(x)
    a = p.alpha
    out = np.where(arr < 0.5, 1.0 + 2.0**a * (1.0 + a) * arr**a, 2.0)
    return _scalar_or_array(out, x)


def _left_inverse(alpha: float, y: np.ndarray) -> np.ndarray:
    # Safeguarded Newton on the increasing convex left branch, bracketed in [0, 1/2].
    c = 2.0**alpha
    y = np.asarray(y, dtype=float)
    lo = np.zeros_like(y)
    hi = np.full_like(y, 0.5)
    x = 0.5 * y
    converged = False
    for _ in range(_NEWTON_MAX_ITER):
        xa = x**alpha
        resid = x * (1.0 + c * xa) - y
        lo = np.where(resid < 0.0, x, lo)
        hi = np.where(resid > 0.0, x, hi)
        slope = 1.0 + c * (1.0 + alpha) * xa
        x_new = x - resid / slope
        outside = (x_new < lo) | (x_new > hi)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        dx = np.abs(x_new - x)
        x = x_new
        if np.all(dx <= 4.0 * np.finfo(float).eps * x):
            converged = True
            break
    if not converged:
        # Bisection fallback on whatever bracket remains.
        while np.any(hi - lo > _INVERSE_TOL):
            mid = 0.5 * (lo + hi)
            below = mid * (1.0 + c * mid**alpha) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        x = 0.5 * (lo + hi)
    return x


def branch_inverse(p, branch: str, y):
    """Preimage of ``y`` under one branch of the map.

    The right branch inverts in closed form, ``(y + 1) / 2``.  The left branch
    has no closed form and is solved by safeguarded Newton (initial guess
    ``y / 2``, bisection fallback) until the relative step is a few ulp, which
    also keeps full relative accuracy for tiny ``y``.
    """
    p = as_parameter(p)
    arr = _check_unit(y, "y")
    if branch == RIGHT:
        out = 0.5 * (arr + 1.0)
    elif branch == LEFT:
        out = _left_inverse(p.alpha, arr)
    else:
        raise DomainError(f"branch must be 'left' or 'right', got {branch!r}")
    return _scalar_or_array(out, y)


@dataclass(frozen=True)
class AdmissibleSequence:
    """Parameters ``alpha_1, alpha_2, ...`` all capped by ``beta_star``.

    Either a finite tuple ``alphas`` or a ``rule`` mapping the 1-based time
    index to a parameter.  Rules are checked for admissibility on access.
    """

    beta_star: float
    alphas: tuple | None = None
    rule: Callable[[int], float] | None = field(default=None, compare=False)
    length: int | None = None

    def __post_init__(self):
        b = float(self.beta_star)
        if not 0.0 < b < 1.0:
            raise DomainError(f"beta_star must lie in (0, 1), got {self.beta_star!r}")
        object.__setattr__(self, "beta_star", b)
        if (self.alphas is None) == (self.rule is None):
            raise ValueError("give exactly one of alphas or rule")
        if self.alphas is not None:
            alphas = tuple(MapParameter(a).alpha for a in self.alphas)
            for i, a in enumerate(alphas, start=1):
                if a > b:
                    raise AdmissibilityError(
                        f"alpha_{i} = {a} exceeds beta_star = {b} (need alpha_n <= beta_star for all n)"
                    )
            object.__setattr__(self, "alphas", alphas)
            object.__setattr__(self, "length", len(alphas))

    @classmethod
    def constant(cls, alpha: float, beta_star: float | None = None, length: int | None = None):
        alpha = MapParameter(alpha).alpha
        return cls(beta_star=alpha if beta_star is None else beta_star,
                   rule=_Constant(alpha), length=length)

    @classmethod
    def from_list(cls, alphas: Iterable[float], beta_star: float):
        return cls(beta_star=beta_star, alphas=tuple(alphas))

    @classmethod
    def from_rule(cls, rule: Callable[[int], float], beta_star: float, length: int | None = None):
        return cls(beta_star=beta_star, rule=rule, length=length)

    def alpha(self, n: int) -> float:
        """Parameter of the ``n``-th map (1-based)."""
        if n < 1:
            raise IndexError("map indices start at 1")
        if self.length is not None and n > self.length:
            raise SequenceExhausted(f"sequence holds {self.length} maps, map {n} requested")
        if self.alphas is not None:
            return self.alphas[n - 1]
        a = MapParameter(self.rule(n)).alpha
        if a > self.beta_star:
            raise AdmissibilityError(f"alpha_{n} = {a} exceeds beta_star = {self.beta_star}")
        return a

    def parameter(self, n: int) -> MapParameter:
        return MapParameter(self.alpha(n))

    def require(self, n: int, start: int = 1) -> None:
        """Raise :class:`SequenceExhausted` unless maps ``start .. start+n-1`` exist."""
        last = start + n - 1
        if self.length is not None and last > self.length:
            raise SequenceExhausted(f"sequence holds {self.length} maps, needs {last}")

    @property
    def is_constant(self) -> bool:
        return isinstance(self.rule, _Constant)


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, n):
        return self.value


@dataclass(frozen=True)
class Orbit:
    start: float
    points: np.ndarray

    @property
    def length(self) -> int:
        return len(self.points)


def iterate(seq: AdmissibleSequence, x: float, n: int) -> Orbit:
    """Orbit ``x, T_1 x, T_2 T_1 x, ...`` of length ``n + 1``."""
    _check_unit(x)
    seq.require(n)
    pts = np.empty(n + 1)
    pts[0] = x
    cur = np.asarray(float(x))
    for k in range(1, n + 1):
        cur = step(seq.alpha(k), cur)
        pts[k] = cur
    return Orbit(start=float(x), points=pts)


def advance(seq: AdmissibleSequence, x: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Apply ``T_{start+1}, ..., T_{stop}`` to the array ``x``."""
    for k in range(start + 1, stop + 1):
        x = step(seq.alpha(k), x)
    return x


def orbit_at_times(seq: AdmissibleSequence, x0: np.ndarray, times: Sequence[int]) -> np.ndarray:
    """Rows ``T~_{t}(x0)`` for each ``t`` in the nondecreasing list ``times``."""
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be nondecreasing")
    x = np.asarray(x0, dtype=float)
    out = np.empty((len(times),) + x.shape)
    t = 0
    for i, target in enumerate(times):
        x = advance(seq, x, t, target)
        t = target
        out[i] = x
    return out
