"""Exit criteria, each run at its stated size and tolerance.

Run alone with ``pytest -m acceptance -s``; the terminal summary prints one
PASS/FAIL line per criterion.
"""
import csv
import hashlib
import json
import math
import time

import numpy as np
import pytest

from pmtool.cone import cone_check, embedding_constants, lip_cone_embed
from pmtool.correlation import lhs_functional_correlation, multicorrelation, product_spec
from pmtool.density import GridDensity
from pmtool.harness import ExperimentConfig, run
from pmtool.maps import AdmissibleSequence
from pmtool.normal_approx import HNorms, invariant_sampler, stein_bound, stein_constant
from pmtool.rates import FiniteRate, RhoRate
from pmtool.transfer import duality_residual, invariant_density, ulam_matrix

pytestmark = pytest.mark.acceptance
criterion = pytest.mark.criterion

CORRELATION_GAPS = (2, 4, 8, 16, 32, 64, 128)


def _run(tmp, name, threads=None, **kw):
    cfg = ExperimentConfig(output_path=str(tmp / name), **kw)
    t0 = time.perf_counter()
    manifest = run(cfg, threads=threads)
    return manifest, time.perf_counter() - t0


def _rows(path):
    return list(csv.DictReader(open(path)))


def _random_cubic(rng):
    c = rng.normal(size=4)
    return lambda x: np.polynomial.polynomial.polyval(x, c)


def _random_lipschitz(rng):
    # piecewise linear, sup and Lipschitz constant at most 1
    k = rng.integers(2, 16)
    knots = np.linspace(0, 1, k + 1)
    vals = np.concatenate(([0.0], np.cumsum(rng.uniform(-1, 1, k) * np.diff(knots))))
    vals -= vals.mean()
    vals *= min(1.0, 0.999 / max(np.abs(vals).max(), 1e-300))
    return lambda x: np.interp(x, knots, vals)


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    return (*_run(tmp, "corr", kind="correlation-decay", beta=0.5, samples=10**7, gaps=CORRELATION_GAPS,
                 chunk_size=1 << 16), tmp / "corr")


# 1 -------------------------------------------------------------------------------------------------


@criterion(1, "transfer duality on random cubic pairs")
def test_transfer_duality(report):
    t0 = time.perf_counter()
    worst = 0.0
    for alpha in (0.2, 0.5, 0.8):
        rng = np.random.default_rng(int(alpha * 1000))
        for _ in range(20):
            worst = max(worst, duality_residual(alpha, _random_cubic(rng), _random_cubic(rng)))
    elapsed = time.perf_counter() - t0
    report("max_residual", worst)
    report("seconds", elapsed)
    assert worst <= 1e-8
    assert elapsed < 10


# 2 -------------------------------------------------------------------------------------------------


@criterion(2, "invariant density lies in the cone and is a fixed point")
@pytest.mark.parametrize("beta", [0.25, 0.5])
def test_invariant_density_in_cone(beta, report):
    t0 = time.perf_counter()
    h = invariant_density(beta, 4096)
    resid = h.l1_distance(ulam_matrix(beta, 4096).apply(h))
    rep = cone_check(h, beta, exempt_bins=1)
    elapsed = time.perf_counter() - t0
    report("fixed_point_residual", resid)
    assert rep.passed
    assert resid <= 1e-6
    assert elapsed < 120


# 3 -------------------------------------------------------------------------------------------------


@criterion(3, "Lipschitz functions embed in the cone")
def test_embedding_delta_value(report):
    delta = embedding_constants(1.0, 1.0, 0.5)[2]
    report("delta", delta)
    assert delta == pytest.approx(11.1571176158, abs=1e-9)


@criterion(3, "Lipschitz functions embed in the cone")
def test_random_lipschitz_embeddings():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    h = GridDensity(np.ones(4096))
    failures = [i for i in range(100) if not cone_check(lip_cone_embed(_random_lipschitz(rng), h, 0.5, A=1.0, B=1.0).F,
                                                          0.5)]
    assert failures == []
    assert time.perf_counter() - t0 < 30


# 4 -------------------------------------------------------------------------------------------------


@criterion(4, "partition lengths: total mass, dominance, leftmost law")
def test_partition_laws(tmp_path, report):
    m, elapsed = _run(tmp_path, "part", kind="partition-law", beta=0.5, n_values=(4, 8, 16, 20, 32, 64))
    checks = m.summary["checks"]
    assert set(checks) == {"4", "8", "16", "20"}
    for c in checks.values():
        assert c["sum_lengths_error"] <= 1e-9 and c["dominance"]
    report("exponent", m.summary["exponent"])
    assert -2.3 <= m.summary["exponent"] <= -1.7
    assert elapsed < 60


# 5 -------------------------------------------------------------------------------------------------


@criterion(5, "pair correlations decay; multicorrelation matches the functional route")
def test_correlation_decay(sweep, report):
    m, elapsed, _ = sweep
    report("exponent", m.summary["exponent"])
    report("seconds", elapsed)
    assert m.summary["exponent"] <= -0.8
    assert elapsed < 600


@criterion(5, "pair correlations decay; multicorrelation matches the functional route")
def test_multicorrelation_agrees_with_functional_route(report):
    seq = AdmissibleSequence.constant(0.5)
    mu = invariant_sampler(0.5)
    ident = lambda x: x
    fs, times = [ident] * 4, [0, 2, 10, 12]
    spec = product_spec(fs, times, 1, [1.0] * 4, [1.0] * 4)
    a = multicorrelation(seq, fs, times, 1, mu, 10**6, 101)
    b = lhs_functional_correlation(seq, spec, mu, [mu], 10**6, 102)
    report("multicorrelation", a.value)
    report("functional", b.value)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.std_error, b.std_error)


# 6 -------------------------------------------------------------------------------------------------


@criterion(6, "one fitted constant bounds every correlation estimate")
def test_bound_conformance(sweep, report):
    _, _, out = sweep
    summary = json.loads((out / "manifest.json").read_text())["summary"]
    report("C_fit", summary["C_fit"])
    assert summary["conformance_holds"]
    assert 0 < summary["C_fit"] < math.inf


# 7 -------------------------------------------------------------------------------------------------


@criterion(7, "smooth distance to the Gaussian decreases in N")
def test_clt_smooth_rate(tmp_path, report):
    m, elapsed = _run(tmp_path, "smooth", kind="clt-smooth", beta=0.25, observable="pair", N_grid=(256, 1024, 4096),
                      samples=10**6, chunk_size=1 << 15)
    rows = [r for r in _rows(tmp_path / "smooth" / "clt_smooth.csv") if r["metric"] == "smooth_distance"]
    vals = [float(r["value"]) for r in rows]
    ses = [float(r["std_error"]) for r in rows]
    report("distances", vals)
    report("std_errors", ses)
    report("exponent", m.summary.get("exponent"))
    report("seconds", elapsed)
    for i in range(len(vals) - 1):
        assert vals[i + 1] <= vals[i] + 2 * math.hypot(ses[i], ses[i + 1])
    assert m.summary["exponent"] <= -0.1
    assert elapsed < 1800


# 8 -------------------------------------------------------------------------------------------------


@criterion(8, "Kantorovich distance decreases in N; Gaussian control is tight")
def test_kantorovich_rate(tmp_path, report):
    m, elapsed = _run(tmp_path, "kr", kind="clt-kantorovich", beta=0.25, observable="coordinate",
                      N_grid=(256, 4096), samples=10**5)
    rows = {r["metric"] + r["N"]: float(r["value"]) for r in _rows(tmp_path / "kr" / "clt_kantorovich.csv")}
    d_small, d_large = rows["kantorovich_exact_1d256"], rows["kantorovich_exact_1d4096"]
    report("distances", (d_small, d_large))
    report("exponent", m.summary["exponent"])
    report("control", m.summary["control"])
    assert d_large < d_small
    assert m.summary["control"] <= 0.01
    assert elapsed < 600


# 9 -------------------------------------------------------------------------------------------------


@criterion(9, "Stein budget arithmetic")
def test_stein_arithmetic():
    norms = HNorms(0.0, 1.0, 1.0)
    assert stein_constant(1, 1.0, 1.0, norms, 1.0, [1.0]) == 24.0
    for d in (1, 2, 3, 5):
        assert stein_constant(d, 2.0, 3.0, norms, 0.5, 0.25) == d**3 * stein_constant(1, 2.0, 3.0, norms, 0.5, 0.25)
    assert stein_bound(24.0, 10**4, 10, FiniteRate(tuple([1.0] * 11)), 0.0) == 2.64
    r = RhoRate(0.25)
    a, b = r.weighted_sum(10**6), r.weighted_sum(2 * 10**6)
    assert abs(a - b) / a < 1e-6


# 10 ------------------------------------------------------------------------------------------------


@criterion(10, "coboundary screen separates a coboundary from the coordinate")
def test_coboundary_screen(tmp_path, report):
    m, elapsed = _run(tmp_path, "screen", kind="coboundary-screen", beta=0.25, observable="coordinate+coboundary",
                      N_grid=tuple(2**k for k in range(7, 14)), samples=20_000, chunk_size=1 << 13)
    flagged = m.summary["flagged"]
    report("flagged_directions", flagged)
    report("seconds", elapsed)
    # direction 0 is the coordinate axis, direction 32 the coboundary axis
    assert 32 in flagged
    assert 0 not in flagged
    assert elapsed <= 120


# 11 ------------------------------------------------------------------------------------------------

DETERMINISM_RUNS = {
    "invariant-density": dict(beta=0.5, bins=4096),
    "cone-check": dict(beta=0.25, bins=4096),
    "partition-law": dict(beta=0.5, n_values=(4, 8, 16, 20, 32, 64)),
    "correlation-decay": dict(beta=0.5, samples=200_000, gaps=CORRELATION_GAPS, chunk_size=1 << 14),
    "clt-smooth": dict(beta=0.25, observable="pair", N_grid=(256, 1024, 4096), samples=20_000, chunk_size=4096),
    "clt-kantorovich": dict(beta=0.25, N_grid=(256, 4096), samples=20_000, chunk_size=4096),
    "stein-budget": dict(beta=0.25, observable="pair", N_grid=(1024, 4096), samples=20_000),
    "coboundary-screen": dict(beta=0.25, observable="coordinate+coboundary", N_grid=(128, 512, 2048),
                              samples=8192, chunk_size=2048),
}


@criterion(11, "outputs are bit-identical across thread counts")
@pytest.mark.parametrize("kind", sorted(DETERMINISM_RUNS))
def test_bit_identical_across_threads(kind, tmp_path):
    digests = [run(ExperimentConfig(kind=kind, output_path=str(tmp_path / f"t{t}"), seed=7, **DETERMINISM_RUNS[kind]),
                   threads=t).outputs for t in (1, 4, 8)]
    assert digests[0] and digests[0] == digests[1] == digests[2]


@criterion(11, "outputs are bit-identical across thread counts")
def test_duality_residuals_repeat(monkeypatch):
    def table():
        rng = np.random.default_rng(0)
        res = [duality_residual(a, _random_cubic(rng), _random_cubic(rng)) for a in (0.2, 0.5, 0.8) for _ in range(5)]
        return hashlib.sha256(np.array(res).tobytes()).hexdigest()

    seen = set()
    for t in ("1", "4", "8"):
        monkeypatch.setenv("PMTOOL_THREADS", t)
        seen.add(table())
    assert len(seen) == 1
