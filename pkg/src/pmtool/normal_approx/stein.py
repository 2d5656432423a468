"""Quantities entering the smooth-metric normal approximation bound.

The bound is

    C_* ((K + 1) / sqrt(N) + sum_{i > K} tau(i)) + sqrt(N) tau~(K)

with ``C_* = 12 d**3 max(C2, sqrt(C4)) (||D2 h|| + ||f|| ||D3 h||) sum_i (i + 1) tau(i)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import DomainError
from ..maps import as_parameter, step
from ..parallel import DEFAULT_CHUNK, BatchAccumulator, chunk_rng, chunked_map
from ..rates import FiniteRate, RhoRate, rho
from .birkhoff import invariant_sampler
from .observables import ObservableSpec

STREAM_A1 = 20
STREAM_A2 = 21


@dataclass(frozen=True)
class HNorms:
    """Sup norms of the gradient, Hessian and third derivative of a test function."""

    grad: float
    d2: float
    d3: float


# 1D maxima of |h'|, |h''|, |h'''| for h(w) = exp(-w**2 / 2)
_BUMP_D3 = float(np.max(np.abs((3 * (t := np.linspace(0, 3, 300001)) - t**3) * np.exp(-t**2 / 2))))


@dataclass(frozen=True)
class GaussianBump:
    """``h(w) = exp(-|w - c|**2 / (2 s**2))``.

    Radial symmetry makes every directional derivative norm equal to the
    one-dimensional one: ``e**-0.5 / s``, ``1 / s**2`` and ``1.3801 / s**3``.
    """

    center: tuple
    scale: float = 1.0

    @property
    def d(self) -> int:
        return len(self.center)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        z = (w - np.asarray(self.center)) / self.scale
        return np.exp(-0.5 * np.sum(z * z, axis=-1))

    def gradient(self, w):
        w = np.asarray(w, dtype=float)
        z = (w - np.asarray(self.center)) / self.scale
        return -(z / self.scale) * np.exp(-0.5 * np.sum(z * z, axis=-1))[..., None]

    @property
    def sup(self) -> float:
        return 1.0

    @property
    def norms(self) -> HNorms:
        s = self.scale
        return HNorms(math.exp(-0.5) / s, 1.0 / s**2, _BUMP_D3 / s**3)

    @property
    def lipschitz(self) -> float:
        return math.exp(-0.5) / self.scale


@dataclass(frozen=True)
class LinearTest:
    """``h(w) = a . w``; its gradient is constant."""

    a: tuple

    def __call__(self, w):
        return np.asarray(w, dtype=float) @ np.asarray(self.a)

    def gradient(self, w):
        w = np.asarray(w, dtype=float)
        return np.broadcast_to(np.asarray(self.a, dtype=float), w.shape)


def make_rate(tau) -> RhoRate | FiniteRate:
    """A rate object from a beta value, a rate object, or a finite list of values."""
    if isinstance(tau, (RhoRate, FiniteRate)):
        return tau
    if isinstance(tau, (int, float)):
        return RhoRate(float(tau))
    return FiniteRate(tuple(float(v) for v in tau))


def stein_constant(d: int, C2: float, C4: float, h_norms: HNorms, f_sup: float, tau,
                   tail_cap: int = 10**6) -> float:
    """``12 d**3 max(C2, sqrt(C4)) (||D2 h|| + ||f|| ||D3 h||) sum_{i>=0} (i + 1) tau(i)``.

    For ``tau = rho`` the sum runs exactly to ``tail_cap`` and adds a
    closed-form integral tail; it diverges (:class:`DivergentSeries`) for
    ``beta >= 1/3``.
    """
    if d < 1:
        raise DomainError("dimension must be positive")
    rate = make_rate(tau)
    s = rate.weighted_sum(tail_cap)
    # dimension factor applied last so that C_* scales exactly as d**3
    return d**3 * (12.0 * max(C2, math.sqrt(C4)) * (h_norms.d2 + f_sup * h_norms.d3) * s)


def stein_bound(C_star: float, N: int, K: int, tau, tilde_tau_K: float, tail_cap: int = 10**6) -> float:
    """``C_* ((K + 1) / sqrt(N) + sum_{i > K} tau(i)) + sqrt(N) tau~(K)``."""
    if not 0 <= K < N:
        raise DomainError("need 0 <= K < N")
    rate = make_rate(tau)
    rootN = math.sqrt(N)
    return C_star * (K + 1) / rootN + C_star * rate.tail(K, tail_cap) + rootN * tilde_tau_K


def default_K(N: int, beta: float) -> int:
    """``floor(N**beta)``, capped at ``N - 1``."""
    return min(int(math.floor(N**beta)), N - 1)


@dataclass(frozen=True)
class SteinBudget:
    d: int
    beta: float
    C2: float
    C4: float
    grad_h: float
    d2_h: float
    d3_h: float
    f_sup: float
    N: int
    K: int
    tilde_tau: float
    tail_cap: int
    C_star: float
    bound: float

    @classmethod
    def build(cls, d, beta, C2, C4, h_norms: HNorms, f_sup, N, K=None, tilde_tau=0.0, tail_cap=10**6):
        K = default_K(N, beta) if K is None else int(K)
        cs = stein_constant(d, C2, C4, h_norms, f_sup, beta, tail_cap)
        b = stein_bound(cs, N, K, beta, tilde_tau, tail_cap)
        return cls(int(d), float(beta), float(C2), float(C4), h_norms.grad, h_norms.d2, h_norms.d3,
                   float(f_sup), int(N), K, float(tilde_tau), int(tail_cap), cs, b)

    def recompute(self) -> tuple[float, float]:
        norms = HNorms(self.grad_h, self.d2_h, self.d3_h)
        cs = stein_constant(self.d, self.C2, self.C4, norms, self.f_sup, self.beta, self.tail_cap)
        return cs, stein_bound(cs, self.N, self.K, self.beta, self.tilde_tau, self.tail_cap)

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "SteinBudget":
        kv = {}
        for line in text.splitlines():
            if line.strip() and not line.lstrip().startswith("#"):
                k, v = (s.strip() for s in line.split("=", 1))
                kv[k] = v
        ints = {"d", "N", "K", "tail_cap"}
        return cls(**{k: int(kv[k]) if k in ints else float(kv[k]) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class A1Report:
    C2: float
    C4: float
    beta: float
    pair_points: tuple  # (k, a, b, estimate, std_error)
    quad_points: tuple  # (l, m, n, combo, |moment|, |cov|, se_moment, se_cov)
    samples: int


def check_A1(p, f: ObservableSpec, lags: Sequence[int], samples: int, seed: int, beta: float | None = None,
             chunk_size: int = 1 << 11, threads: int | None = None) -> A1Report:
    """Fit the smallest ``C2``, ``C4`` for the pair and four-point correlation inequalities.

    Pair terms ``mu(f_a f_b^k)`` over ``k`` in ``lags``; four-point moments
    and block covariances over all ``l <= m <= n`` drawn from ``lags`` and all
    index combinations.  Each constant is the largest ratio of
    ``max(|estimate| - 2 se, 0)`` to its rate, i.e. the inequalities hold
    within two standard errors.
    """
    p = as_parameter(p)
    beta = p.alpha if beta is None else beta
    lags = sorted({int(k) for k in lags})
    d = f.d
    triples = [t for t in itertools.combinations_with_replacement(lags, 3)]
    combos = list(itertools.product(range(d), repeat=4))
    pairs = list(itertools.product(range(d), repeat=2))
    sampler = invariant_sampler(p.alpha)
    horizon = lags[-1]

    # columns: pair terms, then per (triple, combo): 4-pt moment, left pair, right pair
    n_pair = len(lags) * len(pairs)
    n_quad = len(triples) * len(combos)
    width = n_pair + 3 * n_quad

    def chunk(c, s, e):
        rng = chunk_rng(seed, STREAM_A1, c)
        x = sampler.sample(rng, e - s)
        vals = {}
        for k in range(horizon + 1):
            if k in lags:
                vals[k] = f(x)
            x = step(p.alpha, x)
        base = vals[0]
        out = np.empty((e - s, width))
        col = 0
        for k in lags:
            for a, b in pairs:
                out[:, col] = base[:, a] * vals[k][:, b]
                col += 1
        for (l, m, n) in triples:
            for (a, b, cc, dd) in combos:
                left = base[:, a] * vals[l][:, b]
                right = vals[m][:, cc] * vals[n][:, dd]
                out[:, col] = left * right
                out[:, col + 1] = left
                out[:, col + 2] = right
                col += 3
        return out

    if lags[0] != 0:
        raise DomainError("lags must include 0")
    acc = BatchAccumulator(samples, width)
    for part in chunked_map(lambda c, s, e: (s, chunk(c, s, e)), samples, chunk_size, threads):
        acc.add(*part)
    mean = acc.mean
    bm = acc.batch_means()
    B = len(bm)
    se = bm.std(axis=0, ddof=1) / math.sqrt(B)

    C2 = 0.0
    pair_points = []
    col = 0
    for k in lags:
        for a, b in pairs:
            est, err = float(mean[col]), float(se[col])
            pair_points.append((k, a, b, est, err))
            C2 = max(C2, max(abs(est) - 2 * err, 0.0) / rho(k, beta))
            col += 1
    C4 = 0.0
    quad_points = []
    for (l, m, n) in triples:
        for combo in combos:
            mom = float(mean[col])
            cov_b = bm[:, col] - bm[:, col + 1] * bm[:, col + 2]
            cov = mom - float(mean[col + 1] * mean[col + 2])
            se_mom = float(se[col])
            se_cov = float(cov_b.std(ddof=1) / math.sqrt(B))
            quad_points.append((l, m, n, combo, abs(mom), abs(cov), se_mom, se_cov))
            C4 = max(C4, max(abs(mom) - 2 * se_mom, 0.0) / min(rho(l, beta), rho(n - m, beta)))
            C4 = max(C4, max(abs(cov) - 2 * se_cov, 0.0) / rho(m - l, beta))
            col += 3
    return A1Report(C2, C4, beta, tuple(pair_points), tuple(quad_points), samples)


@dataclass(frozen=True)
class A2Report:
    tilde_tau: float
    K: int
    N: int
    probes: tuple  # (n, t, v, estimate, std_error)
    ratio_to_rho: float


def default_probes(N: int, sigma_diag: Sequence[float]) -> tuple:
    """n in {0, N/4, N/2, 3N/4, N-1}, t in {0, 1/2, 1}, v in {0, +-sigma_a e_a}."""
    ns = sorted({0, N // 4, N // 2, (3 * N) // 4, N - 1})
    d = len(sigma_diag)
    vs = [tuple([0.0] * d)]
    for a, s in enumerate(sigma_diag):
        for sign in (1.0, -1.0):
            v = [0.0] * d
            v[a] = sign * math.sqrt(s)
            vs.append(tuple(v))
    return tuple((n, t, v) for n in ns for t in (0.0, 0.5, 1.0) for v in vs)


def check_A2_tilde_tau(p, f: ObservableSpec, h, N: int, K: int, probes=None, samples: int = 10**5,
                       seed: int = 0, beta: float | None = None, sigma_diag=None,
                       chunk_size: int = DEFAULT_CHUNK, threads: int | None = None) -> A2Report:
    """Empirical ``tau~(K)``: max over probes of ``|mu(f^n . grad h(v + t W^n))|``.

    The sup over all ``(n, t, v)`` is not computable; the probe grid gives a
    lower bound.  ``ratio_to_rho`` is ``tau~(K) / rho(K)``.
    """
    p = as_parameter(p)
    beta = p.alpha if beta is None else beta
    if not 0 <= K < N:
        raise DomainError("need 0 <= K < N")
    d = f.d
    if probes is None:
        probes = default_probes(N, [1.0] * d if sigma_diag is None else sigma_diag)
    probe_ns = sorted({int(pr[0]) for pr in probes})
    if probe_ns[0] < 0 or probe_ns[-1] >= N:
        raise DomainError("probe times must lie in [0, N)")
    sampler = invariant_sampler(p.alpha)
    rootN = math.sqrt(N)

    def chunk(c, s, e):
        rng = chunk_rng(seed, STREAM_A2, c)
        x = sampler.sample(rng, e - s)
        S = np.zeros((e - s, d))
        win = {n: np.zeros((e - s, d)) for n in probe_ns}
        fn = {}
        for k in range(N):
            fv = f(x)
            S += fv
            for n in probe_ns:
                if abs(k - n) <= K:
                    win[n] += fv
                if k == n:
                    fn[n] = fv
            x = step(p.alpha, x)
        W = S / rootN
        out = np.empty((e - s, len(probes)))
        for j, (n, t, v) in enumerate(probes):
            Wn = W - win[n] / rootN
            g = h.gradient(np.asarray(v)[None, :] + t * Wn)
            out[:, j] = np.sum(fn[n] * g, axis=1)
        return out

    acc = BatchAccumulator(samples, len(probes))
    for part in chunked_map(lambda c, s, e: (s, chunk(c, s, e)), samples, chunk_size, threads):
        acc.add(*part)
    mean, se = acc.mean, acc.std_error
    rows = tuple((int(n), float(t), tuple(v), float(m), float(s_)) for (n, t, v), m, s_ in zip(probes, mean, se))
    tt = float(np.max(np.abs(mean)))
    return A2Report(tt, K, N, rows, tt / rho(K, beta))
