import math

import numpy as np
import pytest

from pmtool.errors import DomainError
from pmtool.maps import step
from pmtool.normal_approx import (B2Index, BirkhoffOrbit, GaussianBump, HNorms, LinearTest, ObservableSpec,
                                  SteinBudget, check_A1, check_A2_tilde_tau, check_B2, coboundary_screen,
                                  covariance_operator, covariance_series, default_K, from_coefficients,
                                  gap_window, gaussian_expectation, invariant_sampler, kantorovich_distance,
                                  preset, sample_birkhoff, smooth_distance, stein_bound, stein_constant,
                                  tanh_probe)
from pmtool.normal_approx.distances import directions
from pmtool.rates import FiniteRate, fit_decay

ALPHA = 0.25


@pytest.fixture(scope="module")
def pair():
    return preset("pair", ALPHA)


@pytest.fixture(scope="module")
def coord():
    return preset("coordinate", ALPHA)


@pytest.fixture(scope="module")
def sigma_pair(pair):
    return covariance_operator(ALPHA, pair).sigma


# observables ------------------------------------------------------------------------------------


def test_centering_within_mc_error(pair):
    x = invariant_sampler(ALPHA).sample(np.random.default_rng(0), 400_000)
    v = pair(x)
    se = v.std(axis=0) / math.sqrt(len(x))
    assert np.all(np.abs(v.mean(axis=0)) <= 3 * se)
    assert pair.centered and len(pair.means) == 2


def test_certified_norms(coord, pair):
    assert coord.lip_const == pytest.approx(1.0, abs=1e-9)
    assert coord.sup_norm == pytest.approx(max(coord.means[0], 1 - coord.means[0]), abs=1e-9)
    assert pair.lip_const == pytest.approx(2 * math.pi, rel=1e-6)
    assert pair(np.array([0.1, 0.2])).shape == (2, 2)


def test_presets_and_coefficients():
    with pytest.raises(DomainError):
        preset("nope", ALPHA)
    f = from_coefficients([[0, 1], [1, 0, -1]], ALPHA, center=False)
    np.testing.assert_allclose(f(np.array([0.5])), [[0.5, 0.75]])
    proj = f.project([2.0, -1.0])
    assert proj.d == 1 and proj(np.array([0.5]))[0, 0] == pytest.approx(0.25)


def test_coboundary_telescopes():
    f = preset("coboundary", ALPHA, center=False)
    x = np.random.default_rng(1).uniform(size=100)
    S, y = np.zeros(100), x.copy()
    for _ in range(50):
        S += f(y)[:, 0]
        y = step(ALPHA, y)
    np.testing.assert_allclose(S, x * (1 - x) - y * (1 - y), atol=1e-12)


# Birkhoff sums and covariance --------------------------------------------------------------------


def test_zero_observable_and_bounds(pair):
    zero = ObservableSpec.from_components([np.zeros_like])
    b = sample_birkhoff(ALPHA, zero, [1, 16], 1000, 0)
    assert np.all(b.W[16] == 0)
    b = sample_birkhoff(ALPHA, pair, [1, 64], 20_000, 1)
    w1 = b.W[1]
    assert np.all(np.abs(w1.mean(axis=0)) <= 3 * w1.std(axis=0) / math.sqrt(len(w1)))
    assert np.all(np.abs(b.W[64]) <= math.sqrt(64) * pair.sup_norm)


def test_batch_shares_orbits_with_single_orbit(pair):
    b = sample_birkhoff(ALPHA, pair, [8, 32], 5, 3)
    for i, x in enumerate(b.starts):
        np.testing.assert_allclose(BirkhoffOrbit(ALPHA, pair, x, 32).W, b.W[32][i], rtol=1e-12)
        np.testing.assert_allclose(BirkhoffOrbit(ALPHA, pair, x, 8).W, b.W[8][i], rtol=1e-12)


def test_gap_sums(pair):
    orb = BirkhoffOrbit(ALPHA, pair, 0.37, 40)
    np.testing.assert_allclose(orb.gap_sum(10, 0), orb.W - orb.stream[10] / math.sqrt(40))
    np.testing.assert_allclose(orb.gap_sum(10, 39), 0.0, atol=1e-14)
    assert len(gap_window(40, 20, 5)) == 11
    assert len(gap_window(40, 2, 5)) == 8
    with pytest.raises(IndexError):
        orb.gap_sum(40, 1)


def test_covariance_one_dimensional(coord):
    est = covariance_operator(ALPHA, coord, n_max=512)
    C = np.array(est.term_norms)
    assert est.sigma.shape == (1, 1)
    assert est.sigma[0, 0] == pytest.approx(C[0] + 2 * C[1:].sum(), rel=1e-10)


def test_duplicate_component_is_degenerate():
    dup = ObservableSpec.from_components([lambda x: x, lambda x: x]).center(ALPHA)
    est = covariance_operator(ALPHA, dup, n_max=256)
    assert est.flagged
    assert np.array_equal(est.sigma, est.sigma.T)


def test_monte_carlo_and_operator_routes_agree(pair, sigma_pair):
    mc = covariance_series(ALPHA, pair, 128, 8000, 4, beta=ALPHA, threads=4)
    assert np.array_equal(mc.sigma, mc.sigma.T)
    assert np.all(np.abs(mc.sigma - sigma_pair) <= 4 * mc.std_error + 0.01)
    fit = fit_decay([(n, v) for n, v in enumerate(mc.term_norms[1:65], start=1)], min_points=4)
    assert fit.exponent < 0


def test_variance_of_sums_matches_sigma(pair, sigma_pair):
    b = sample_birkhoff(ALPHA, pair, [4096], 20_000, 5, threads=8)
    var = b.W[4096].var(axis=0)
    np.testing.assert_allclose(var, np.diag(sigma_pair), rtol=0.10)


# Stein budget arithmetic -------------------------------------------------------------------------


def test_stein_constant_single_term_and_scaling():
    norms = HNorms(0.0, 1.0, 1.0)
    assert stein_constant(1, 1.0, 1.0, norms, 1.0, [1.0]) == 24.0
    base = stein_constant(1, 2.0, 3.0, norms, 0.5, ALPHA)
    assert stein_constant(2, 2.0, 3.0, norms, 0.5, ALPHA) == 8 * base


def test_stein_bound_examples():
    tau = FiniteRate(tuple([1.0] * 11))
    assert stein_bound(24.0, 10**4, 10, tau, 0.0) == 2.64
    N = 400
    tail = tau.tail(N - 1)
    assert stein_bound(24.0, N, N - 1, tau, 0.0) == pytest.approx(24.0 * (math.sqrt(N) + tail), rel=1e-15)
    with pytest.raises(DomainError):
        stein_bound(1.0, 10, 10, tau, 0.0)
    assert default_K(10**4, 0.25) == 10


def test_budget_recompute_and_text_round_trip():
    b = SteinBudget.build(2, ALPHA, 1.3, 0.7, GaussianBump((0.0, 0.0)).norms, 1.05, 4096, tilde_tau=1e-4)
    assert b.recompute() == (b.C_star, b.bound)
    back = SteinBudget.from_text(b.to_text())
    assert back == b


def test_gaussian_bump_norms():
    h = GaussianBump((0.3,), 0.7)
    w = np.linspace(-6, 6, 200001)[:, None]
    g = np.gradient(h(w), w[:, 0])
    assert np.abs(g).max() == pytest.approx(h.norms.grad, rel=1e-6)
    d2 = np.gradient(g, w[:, 0])
    d3 = np.gradient(d2, w[:, 0])
    assert np.abs(d2).max() == pytest.approx(h.norms.d2, rel=1e-4)
    assert np.abs(d3).max() == pytest.approx(h.norms.d3, rel=1e-3)
    np.testing.assert_allclose(h.gradient(w[::1000])[:, 0], g[::1000], atol=1e-6)


def test_check_A1(coord):
    with pytest.raises(DomainError):
        check_A1(ALPHA, coord, [1, 2], 1000, 0)
    lags = [0, 1, 2, 4, 8]
    a = check_A1(ALPHA, coord, lags, 20_000, 1)
    b = check_A1(ALPHA, coord, lags, 40_000, 2)
    assert math.isfinite(a.C2) and a.C2 > 0
    assert abs(a.C2 - b.C2) / b.C2 < 0.25
    # at l = 0 the four-point moments are dominated by sup norms alone
    assert all(q[4] <= coord.sup_norm**4 for q in a.quad_points if q[0] == 0)
    assert math.isfinite(a.C4)


def test_check_A2_trivial_cases(coord):
    zero = ObservableSpec.from_components([np.zeros_like])
    assert check_A2_tilde_tau(ALPHA, zero, GaussianBump((0.0,)), 32, 2, samples=2000).tilde_tau == 0.0
    rep = check_A2_tilde_tau(ALPHA, coord, LinearTest((1.0,)), 64, 4, samples=50_000, seed=3)
    assert all(abs(m) <= 3 * se for *_, m, se in rep.probes)


def test_check_A2_decays_in_K(coord):
    h = GaussianBump((0.0,))
    reps = [check_A2_tilde_tau(ALPHA, coord, h, 128, K, samples=100_000, seed=7, sigma_diag=[0.4], threads=8)
            for K in (4, 16)]
    se = max(abs(p[4]) for r in reps for p in r.probes)
    assert reps[0].tilde_tau - reps[1].tilde_tau > 3 * math.sqrt(2) * se
    assert all(r.ratio_to_rho < 1.0 for r in reps)


# distances ---------------------------------------------------------------------------------------


def test_gaussian_expectation_moments():
    sigma = np.array([[0.4, -0.3], [-0.3, 1.0]])
    assert gaussian_expectation(sigma, lambda w: np.ones(len(w))).value == pytest.approx(1.0, abs=1e-14)
    assert gaussian_expectation(sigma, lambda w: w[:, 0]).value == pytest.approx(0.0, abs=1e-14)
    for a in range(2):
        for b in range(2):
            v = gaussian_expectation(sigma, lambda w: w[:, a] * w[:, b]).value
            assert v == pytest.approx(sigma[a, b], abs=1e-13)


def test_quadrature_matches_monte_carlo():
    sigma = np.array([[0.4, -0.3], [-0.3, 1.0]])
    battery = [lambda w: w[:, 0] ** 4, lambda w: w[:, 0] ** 2 * w[:, 1] ** 2, GaussianBump((0.2, -0.1)),
               GaussianBump((0.0, 0.5), 0.5)]
    for h in battery:
        q = gaussian_expectation(sigma, h, method="quadrature")
        mc = gaussian_expectation(sigma, h, method="mc", samples=200_000, seed=2)
        assert abs(q.value - mc.value) <= 3 * mc.std_error + q.std_error


def test_smooth_distance_null():
    sigma = np.array([[0.4, -0.3], [-0.3, 1.0]])
    W = np.random.default_rng(8).multivariate_normal([0, 0], sigma, 200_000)
    r = smooth_distance(W, sigma, GaussianBump((0.0, 0.0)))
    assert r.value <= 3 * r.std_error
    sym = np.random.default_rng(9).standard_normal(10_000)
    sym = np.concatenate((sym, -sym))[:, None]
    assert smooth_distance(sym, [[1.0]], lambda w: np.tanh(w[:, 0])).value <= 1e-12


def test_kantorovich_examples():
    from scipy.special import ndtri

    n = 1000
    q = ndtri((np.arange(n) + 0.5) / n)
    assert kantorovich_distance(q, 1.0) == pytest.approx(0.0, abs=1e-14)
    z = np.random.default_rng(11).standard_normal(100_000)
    assert kantorovich_distance(z, 1.0) <= 0.01
    Z2 = np.random.default_rng(12).multivariate_normal([0, 0], [[1, 0.5], [0.5, 2]], 100_000)
    assert kantorovich_distance(Z2, [[1, 0.5], [0.5, 2]], mode="sliced") <= 0.015
    with pytest.raises(DomainError):
        kantorovich_distance(Z2, [[1, 0.5], [0.5, 2]])
    with pytest.raises(DomainError):
        kantorovich_distance(z, [[0.0]])


def test_directions_are_unit_vectors():
    for d in (1, 2, 3, 5):
        v = directions(d, 64)
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)


# screens -----------------------------------------------------------------------------------------


def test_B2_index_preconditions():
    with pytest.raises(DomainError):
        B2Index(0, 0, 0, 1, 0, 0, 0, 0, 0)
    with pytest.raises(DomainError):
        B2Index(2, 1, 3, 1, 0, 0, 1, 0, 0)


def test_B2_covariance_decays():
    f = preset("coordinate", 0.5)
    idx = [B2Index(0, 0, 0, p, 0, 0, 1, 0, 0) for p in (0, 2, 4, 8, 16)]
    rep = check_B2(0.5, f, [tanh_probe(3)], idx, 400_000, 3, threads=8, chunk_size=16384)
    assert math.isfinite(rep.C)
    pts = [(ix.p, cov, se) for _, ix, cov, se, _ in rep.rows if ix.p > 0]
    assert fit_decay(pts, min_points=3).exponent <= -0.8


def test_coboundary_screen():
    kw = dict(N_grid=[64, 128, 256, 512, 1024], samples=4000, seed=1, threads=8)
    assert coboundary_screen(ALPHA, preset("coboundary", ALPHA), **kw).flagged.all()
    assert not coboundary_screen(ALPHA, preset("coordinate", ALPHA), **kw).flagged.any()
    rep = coboundary_screen(ALPHA, preset("coordinate+coboundary", ALPHA), **kw)
    np.testing.assert_allclose(rep.flagged_directions, [[0.0, 1.0]], atol=1e-12)
