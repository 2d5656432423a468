"""Vector observables on [0, 1] with certified norms and invariant-mean centering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import DomainError
from ..maps import step
from ..transfer import invariant_expectation

CERT_GRID = 1 << 16


def _certify(components, grid: int = CERT_GRID) -> tuple[float, float]:
    """Max sup norm and max Lipschitz constant over components on ``grid + 1`` nodes."""
    x = np.linspace(0.0, 1.0, grid + 1)
    sup = lip = 0.0
    for c in components:
        v = np.broadcast_to(np.asarray(c(x), dtype=float), x.shape)
        sup = max(sup, float(np.abs(v).max()))
        lip = max(lip, float(np.abs(np.diff(v)).max() * grid))
    return sup, lip


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    """``f = (f_1, ..., f_d)``; ``sup_norm`` and ``lip_const`` use the max over components."""

    components: tuple
    sup_norm: float
    lip_const: float
    centered: bool = False
    alpha: float | None = None
    means: tuple = ()
    name: str = "custom"

    @classmethod
    def from_components(cls, components: Sequence[Callable], name: str = "custom") -> "ObservableSpec":
        comps = tuple(components)
        if not comps:
            raise DomainError("an observable needs at least one component")
        sup, lip = _certify(comps)
        return cls(comps, sup, lip, name=name)

    @property
    def d(self) -> int:
        return len(self.components)

    def __call__(self, x) -> np.ndarray:
        """Values at ``x`` as an array of shape ``x.shape + (d,)``."""
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(np.asarray(c(x), dtype=float), x.shape) for c in self.components], axis=-1)

    def center(self, alpha: float) -> "ObservableSpec":
        """Subtract the invariant means under the map with parameter ``alpha``."""
        means = tuple(float(invariant_expectation(alpha, c)) for c in self.components)
        comps = tuple(_Shifted(c, m) for c, m in zip(self.components, means))
        sup, lip = _certify(comps)
        return ObservableSpec(comps, sup, lip, True, float(alpha), means, self.name)

    def project(self, v) -> "ObservableSpec":
        """The scalar observable ``v . f``."""
        v = np.asarray(v, dtype=float)
        comp = _Projected(self.components, tuple(v.tolist()))
        sup, lip = _certify((comp,))
        return ObservableSpec((comp,), sup, lip, self.centered, self.alpha,
                              (float(np.dot(v, self.means)),) if self.means else (), self.name)


@dataclass(frozen=True)
class _Shifted:
    fn: Callable
    shift: float

    def __call__(self, x):
        return np.asarray(self.fn(x), dtype=float) - self.shift


@dataclass(frozen=True)
class _Projected:
    fns: tuple
    v: tuple

    def __call__(self, x):
        return sum(w * np.asarray(f(x), dtype=float) for f, w in zip(self.fns, self.v))


@dataclass(frozen=True)
class Polynomial:
    coefficients: tuple  # lowest degree first

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coefficients)


def coordinate(x):
    return np.asarray(x, dtype=float)


def cos2pi(x):
    return np.cos(2.0 * np.pi * np.asarray(x, dtype=float))


def parabola(x):
    x = np.asarray(x, dtype=float)
    return x * (1.0 - x)


@dataclass(frozen=True)
class Coboundary:
    """``g - g o T_alpha``; its Birkhoff sums telescope and stay bounded."""

    g: Callable
    alpha: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.g(x), dtype=float) - np.asarray(self.g(step(self.alpha, x)), dtype=float)


PRESETS = ("coordinate", "cos", "pair", "coboundary", "coordinate+coboundary")


def preset(name: str, alpha: float, center: bool = True) -> ObservableSpec:
    """Named observables used by the experiments.

    ``coordinate``: x.  ``cos``: cos(2 pi x).  ``pair``: (x, cos(2 pi x)).
    ``coboundary``: g - g o T with g(x) = x (1 - x).
    ``coordinate+coboundary``: (x, g - g o T).
    """
    cob = Coboundary(parabola, float(alpha))
    table = {
        "coordinate": (coordinate,),
        "cos": (cos2pi,),
        "pair": (coordinate, cos2pi),
        "coboundary": (cob,),
        "coordinate+coboundary": (coordinate, cob),
    }
    if name not in table:
        raise DomainError(f"unknown observable preset {name!r}; choose from {', '.join(PRESETS)}")
    spec = ObservableSpec.from_components(table[name], name=name)
    return spec.center(alpha) if center else spec


def from_coefficients(rows: Sequence[Sequence[float]], alpha: float, center: bool = True) -> ObservableSpec:
    """Polynomial components, one coefficient list (lowest degree first) per component."""
    spec = ObservableSpec.from_components([Polynomial(tuple(map(float, r))) for r in rows], name="polynomial")
    return spec.center(alpha) if center else spec
