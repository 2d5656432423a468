import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmtool.density import GridDensity, bin_averages
from pmtool.errors import DomainError
from pmtool.maps import AdmissibleSequence, iterate
from pmtool.partition import (build_partition, conditional_density, densform, leftmost_length,
                              leftmost_length_law, pushforward_conditional)
from pmtool.transfer import invariant_density, ulam_matrix

X_STAR = 0.28492014549902663296  # mpmath root of x(1 + sqrt(2x)) = 1/2


def test_small_partitions():
    seq = AdmissibleSequence.constant(0.5)
    np.testing.assert_array_equal(build_partition(AdmissibleSequence.constant(0.3), 1).endpoints, [0, 0.5, 1])
    part = build_partition(seq, 2)
    np.testing.assert_allclose(part.endpoints, [0, X_STAR, 0.5, 0.75, 1], rtol=0, atol=1e-15)
    assert part.lengths.sum() == pytest.approx(1.0, abs=1e-15)
    assert part.itinerary(1) == [0, 0] and part.itinerary(3) == [1, 0]


def test_level_cap_and_theta_range():
    seq = AdmissibleSequence.constant(0.5)
    with pytest.raises(DomainError):
        build_partition(seq, 21)
    with pytest.raises(IndexError):
        build_partition(seq, 2).cell(5)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 0.7), min_size=1, max_size=12))
def test_partition_invariants(alphas):
    part = build_partition(AdmissibleSequence.from_list(alphas, 0.7), len(alphas))
    e = part.endpoints
    assert e[0] == 0.0 and e[-1] == 1.0 and np.all(np.diff(e) > 0)
    assert abs(part.lengths.sum() - 1.0) <= 1e-9
    assert np.all(part.lengths <= part.lengths[0])


def test_cell_bijectivity():
    rng = np.random.default_rng(5)
    seq = AdmissibleSequence.from_rule(lambda n: [0.2, 0.5, 0.35][n % 3], 0.5)
    for n in (3, 7, 12):
        part = build_partition(seq, n)
        for theta in rng.integers(1, part.cells + 1, 8):
            l, r = part.cell(int(theta))
            pts = np.linspace(l, r, 7)[1:-1]
            images = np.array([iterate(seq, x, n).points[-1] for x in pts])
            assert np.all(np.diff(images) > 0) and np.all((images > 0) & (images < 1))
            for end in (l, r):
                y = iterate(seq, end, n).points[-1]
                assert min(y, 1.0 - y) <= 1e-8


def test_leftmost_law():
    seq = AdmissibleSequence.constant(0.5)
    ns = [4, 8, 16, 32, 64]
    L = [leftmost_length(seq, n) for n in ns]
    assert np.all(np.diff(L) < 0)
    assert L[0] == pytest.approx(build_partition(seq, 4).lengths[0], rel=1e-14)
    assert -2.3 <= leftmost_length_law(seq, ns).exponent <= -1.7
    fit = leftmost_length_law(AdmissibleSequence.constant(0.8), ns)
    assert fit.exponent == pytest.approx(-1.25, abs=0.15)


def test_conditional_density_examples():
    part = build_partition(AdmissibleSequence.constant(0.5), 1)
    h = GridDensity(np.ones(64))
    c1 = conditional_density(h, part, 1)
    c2 = conditional_density(h, part, 2)
    assert c1.weight == pytest.approx(0.5)
    np.testing.assert_allclose(c1.density(np.array([0.1, 0.4, 0.6])), [2, 2, 0])
    np.testing.assert_allclose(c2.density(np.array([0.1, 0.6, 0.9])), [0, 2, 2])


def test_reassembly():
    seq = AdmissibleSequence.constant(0.4)
    part = build_partition(seq, 3)
    h = invariant_density(0.4, 1024)
    x = np.random.default_rng(2).uniform(0, 1, 200)
    x = x[~np.isin(x, part.endpoints)]
    total = sum(cd.weight * cd.density(x) for cd in (conditional_density(h, part, t) for t in range(1, 9)))
    np.testing.assert_allclose(total, h(x), rtol=1e-12)
    assert all(conditional_density(h, part, t).density.mass == pytest.approx(1.0, abs=1e-12)
               for t in range(1, 9))


def test_pushforward_examples():
    seq = AdmissibleSequence.constant(0.5)
    part = build_partition(seq, 1)
    h = GridDensity(np.ones(4096))
    right = pushforward_conditional(seq, part, conditional_density(h, part, 2))
    np.testing.assert_allclose(right.values, 1.0, atol=1e-12)
    left = pushforward_conditional(seq, part, conditional_density(h, part, 1))
    assert left.mass == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(left.values) <= 1e-12)
    closed = bin_averages(lambda x: densform(part, 1, np.ones_like, 0.5, x), left.edges)
    assert left.l1_distance(GridDensity(closed)) <= 5.0 / 4096


def test_pushforward_matches_ulam_image():
    seq = AdmissibleSequence.constant(0.5)
    part = build_partition(seq, 1)
    h = invariant_density(0.5, 4096)
    op = ulam_matrix(0.5, 4096)
    for theta in (1, 2):
        cd = conditional_density(h, part, theta)
        pushed = pushforward_conditional(seq, part, cd)
        lo, hi = part.cell(theta)
        x = h.midpoints
        restricted = GridDensity(np.where((x > lo) & (x < hi), h.values, 0.0) / cd.weight)
        assert pushed.l1_distance(op.apply(restricted)) <= 5e-3


@pytest.mark.parametrize("n", [2, 4, 6])
def test_pushforward_two_routes_and_monotone(n):
    seq = AdmissibleSequence.from_rule(lambda k: 0.3 if k % 2 else 0.5, 0.5)
    part = build_partition(seq, n)
    h = invariant_density(0.5, 4096)
    for theta in (1, 2, part.cells):
        cd = conditional_density(h, part, theta)
        pushed = pushforward_conditional(seq, part, cd)
        closed = bin_averages(lambda x: densform(part, theta, h, cd.weight, x), pushed.edges)
        assert pushed.mass == pytest.approx(1.0, abs=1e-12)
        assert pushed.l1_distance(GridDensity(closed)) <= 5.0 / pushed.bins
        assert np.all(np.diff(pushed.values) <= 1e-9 * pushed.values.max())
