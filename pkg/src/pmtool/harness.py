"""Experiment configuration, validation, dispatch and run manifests.

A configuration is a flat ``key = value`` text file, one experiment per
file.  ``run`` writes CSV outputs atomically plus a ``manifest.json`` with
the config hash, code version, wall time, chunk seeds and sha256 digests of
every output.  Outputs depend only on the configuration and seed, never on
the thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalFailure, ValidationError
from .maps import AdmissibleSequence

KINDS = (
    "invariant-density", "cone-check", "partition-law", "correlation-decay", "clt-smooth",
    "clt-kantorovich", "stein-budget", "rio-b2", "coboundary-screen",
)
SMALL_BETA_KINDS = ("clt-smooth", "clt-kantorovich", "stein-budget")
N_GRID_KINDS = ("clt-smooth", "clt-kantorovich", "stein-budget", "coboundary-screen")


def _ints(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(float(v)) for v in str(text).replace(";", ",").split(",") if v.strip())


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


@dataclass
class ExperimentConfig:
    """One experiment.  Lists are comma-separated in the file."""

    kind: str = "invariant-density"
    beta: float = 0.25
    alpha_sequence: str = "constant"  # constant | list | alternate
    alphas: tuple = ()
    observable: str = "coordinate"  # preset name, or "poly:c0,c1,...|c0,c1,..."
    N_grid: tuple = ()
    K_rule: str = "power"  # power (floor(N**beta)) or an integer
    samples: int = 100000
    bins: int = 4096
    seed: int = 0
    threads: int = 0  # 0: PMTOOL_THREADS, else 1
    output_path: str = "out"
    n_values: tuple = (4, 8, 16, 32, 64)
    gaps: tuple = (2, 4, 8, 16, 32, 64, 128)
    tol: float = 1e-10
    density: str = "invariant"  # cone-check input: invariant | constant
    centers: tuple = (0.0, 0.0)
    lags: tuple = (0, 1, 2, 4, 8)
    chunk_size: int = 1 << 15

    def __post_init__(self):
        self.alphas = _floats(self.alphas)
        self.N_grid = _ints(self.N_grid)
        self.n_values = _ints(self.n_values)
        self.gaps = _ints(self.gaps)
        self.centers = _floats(self.centers)
        self.lags = _ints(self.lags)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        raw, unknown = {}, []
        names = {f.name for f in fields(cls)}
        for ln, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError([f"line {ln}: expected 'key = value', got {line!r}"])
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in names:
                unknown.append(f"{k}: unknown key")
            raw[k] = v
        if unknown:
            raise ValidationError(unknown)
        conv = {}
        problems = []
        for f_ in fields(cls):
            if f_.name not in raw:
                continue
            v = raw[f_.name]
            try:
                if f_.type in ("float",):
                    conv[f_.name] = float(v)
                elif f_.type in ("int",):
                    conv[f_.name] = int(float(v))
                else:
                    conv[f_.name] = v
            except ValueError:
                problems.append(f"{f_.name} = {v!r}: not a {f_.type}")
        if problems:
            raise ValidationError(problems)
        try:
            return cls(**conv)
        except ValueError as exc:
            raise ValidationError([str(exc)]) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        out = []
        for f_ in fields(self):
            v = getattr(self, f_.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append(f"{f_.name} = {v}")
        return "\n".join(out) + "\n"

    def digest_text(self) -> str:
        """Canonical text without the thread count and output location."""
        return "".join(l + "\n" for l in self.to_text().splitlines()
                       if not l.startswith(("threads ", "output_path ")))

    def config_hash(self) -> str:
        return hashlib.sha256(self.digest_text().encode()).hexdigest()

    def alpha_list(self) -> tuple:
        return self.alphas if self.alphas else (self.beta,)

    def sequence(self) -> AdmissibleSequence:
        a = self.alpha_list()
        if self.alpha_sequence == "constant":
            return AdmissibleSequence.constant(a[0], beta_star=self.beta)
        if self.alpha_sequence == "list":
            return AdmissibleSequence.from_list(a, self.beta)
        if self.alpha_sequence == "alternate":
            return AdmissibleSequence.from_rule(_Cycle(a), self.beta)
        raise ValueError(f"unknown alpha_sequence {self.alpha_sequence!r}")

    def K_for(self, N: int) -> int:
        from .normal_approx.stein import default_K

        if self.K_rule == "power":
            return default_K(N, self.beta)
        return min(int(self.K_rule), N - 1)


@dataclass(frozen=True)
class _Cycle:
    values: tuple

    def __call__(self, n):
        return self.values[(n - 1) % len(self.values)]


@dataclass(frozen=True)
class Violation:
    field: str
    value: object
    constraint: str

    def __str__(self):
        return f"{self.field} = {self.value!r}: {self.constraint}"


def validate(config: ExperimentConfig) -> list[Violation]:
    """Every violated constraint; empty iff the config is runnable."""
    from .normal_approx.observables import PRESETS

    v = []
    c = config
    if c.kind not in KINDS:
        v.append(Violation("kind", c.kind, f"must be one of {', '.join(KINDS)}"))
    if not 0.0 < c.beta < 1.0:
        v.append(Violation("beta", c.beta, "must lie in (0, 1)"))
    elif c.kind in SMALL_BETA_KINDS and not c.beta < 1.0 / 3.0:
        v.append(Violation("beta", c.beta, "must be < 1/3 for normal-approximation kinds (summable rate)"))
    if c.alpha_sequence not in ("constant", "list", "alternate"):
        v.append(Violation("alpha_sequence", c.alpha_sequence, "must be constant, list or alternate"))
    for i, a in enumerate(c.alpha_list(), start=1):
        if not 0.0 < a < 1.0:
            v.append(Violation(f"alphas[{i}]", a, "must lie in (0, 1)"))
        elif a > c.beta:
            v.append(Violation(f"alphas[{i}]", a, f"admissibility requires alpha_n <= beta* = {c.beta}"))
    if c.kind in N_GRID_KINDS:
        if not c.N_grid:
            v.append(Violation("N_grid", c.N_grid, "must not be empty"))
        elif min(c.N_grid) < 2:
            v.append(Violation("N_grid", c.N_grid, "entries must be >= 2"))
    if c.kind in ("clt-smooth", "clt-kantorovich", "rio-b2", "stein-budget", "coboundary-screen") \
            and c.alpha_sequence != "constant":
        v.append(Violation("alpha_sequence", c.alpha_sequence, "this kind needs a single map (constant)"))
    if c.K_rule != "power":
        try:
            if int(c.K_rule) < 0:
                raise ValueError
        except ValueError:
            v.append(Violation("K_rule", c.K_rule, "must be 'power' or a nonnegative integer"))
    if c.samples < 2:
        v.append(Violation("samples", c.samples, "must be >= 2"))
    if c.bins < 16:
        v.append(Violation("bins", c.bins, "must be >= 16"))
    if c.seed < 0:
        v.append(Violation("seed", c.seed, "must be nonnegative"))
    if c.threads < 0:
        v.append(Violation("threads", c.threads, "must be >= 1, or 0 for the environment default"))
    if c.chunk_size < 1:
        v.append(Violation("chunk_size", c.chunk_size, "must be >= 1"))
    if c.tol <= 0:
        v.append(Violation("tol", c.tol, "must be positive"))
    if c.kind == "partition-law" and (not c.n_values or min(c.n_values) < 1):
        v.append(Violation("n_values", c.n_values, "must be a nonempty list of positive integers"))
    if c.kind == "correlation-decay" and (not c.gaps or min(c.gaps) < 0):
        v.append(Violation("gaps", c.gaps, "must be a nonempty list of nonnegative integers"))
    if c.kind == "stein-budget" and (not c.lags or 0 not in c.lags):
        v.append(Violation("lags", c.lags, "must include 0"))
    if c.density not in ("invariant", "constant"):
        v.append(Violation("density", c.density, "must be invariant or constant"))
    if c.observable.startswith("poly:"):
        try:
            rows = [_floats(r) for r in c.observable[5:].split("|")]
            if not rows or not all(rows):
                raise ValueError
        except ValueError:
            v.append(Violation("observable", c.observable, "poly: needs coefficient lists separated by '|'"))
    elif c.observable not in PRESETS:
        v.append(Violation("observable", c.observable, f"must be poly:... or one of {', '.join(PRESETS)}"))
    out = Path(c.output_path)
    probe = out if out.exists() else next((p for p in out.parents if p.exists()), Path("."))
    if (out.exists() and not out.is_dir()) or not os.access(probe, os.W_OK):
        v.append(Violation("output_path", c.output_path, "must be a writable directory"))
    return v


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    code_version: str
    seed: int
    wall_time: float
    chunk_seeds: list
    outputs: dict
    summary: dict = field(default_factory=dict)
    config: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


class _Outputs:
    """Atomic CSV writer that remembers what it created, for cleanup on failure."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.written: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.dir)
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.dir / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written[name] = hashlib.sha256(text.encode()).hexdigest()

    def remove_all(self) -> None:
        for name in self.written:
            try:
                (self.dir / name).unlink()
            except FileNotFoundError:
                pass
        self.written.clear()


def _csv(header, rows) -> str:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    lines = [",".join(header)] + [",".join(fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _chunk_seeds(config: ExperimentConfig, stream: int, total: int, chunk_size: int | None = None) -> list:
    from .parallel import chunk_bounds, chunk_seed_entropy

    return [[stream, c, chunk_seed_entropy(config.seed, stream, c)]
            for c, _, _ in chunk_bounds(total, chunk_size or config.chunk_size)]


def _observable(config: ExperimentConfig, alpha: float):
    from .normal_approx.observables import from_coefficients, preset

    if config.observable.startswith("poly:"):
        return from_coefficients([_floats(r) for r in config.observable[5:].split("|")], alpha)
    return preset(config.observable, alpha)


def _na_row(N, K, M, c, d, metric, value, se):
    return [N, K, M, c.beta, d, metric, float(value), float(se), c.seed]


# --- experiment kinds ----------------------------------------------------------------------------


def _run_invariant_density(c, out, threads):
    from .cone import cone_check
    from .transfer import invariant_density, ulam_matrix

    a = c.alpha_list()[0]
    h = invariant_density(a, c.bins, c.tol)
    op = ulam_matrix(a, c.bins)
    resid = h.l1_distance(op.apply(h))
    rep = cone_check(h, c.beta)
    out.write("density.csv", _csv(["x_mid", "value"], zip(h.midpoints, h.values)))
    return {"fixed_point_residual": resid, "cone_pass": rep.passed, "mass": h.mass}, []


def _run_cone_check(c, out, threads):
    from .cone import cone_check
    from .density import GridDensity
    from .transfer import invariant_density

    if c.density == "constant":
        h = GridDensity(np.ones(c.bins))
    else:
        h = invariant_density(c.alpha_list()[0], c.bins, c.tol)
    rep = cone_check(h, c.beta)
    header = ["beta", "resolution", "decreasing_ok", "weighted_increasing_ok", "pointwise_bound_ok",
              "max_violation", "result"]
    row = [c.beta, rep.resolution, rep.decreasing_ok, rep.weighted_increasing_ok, rep.pointwise_bound_ok,
           rep.max_violation, "pass" if rep.passed else "fail"]
    out.write("cone_check.csv", _csv(header, [row]))
    return {"cone_pass": rep.passed}, []


def _run_partition_law(c, out, threads):
    from .partition import MAX_LEVEL, build_partition, leftmost_length, leftmost_length_law

    seq = c.sequence()
    rows = [["leftmost_length", n, leftmost_length(seq, n), ""] for n in sorted(c.n_values)]
    fit = leftmost_length_law(seq, c.n_values)
    rows.append(["rate_fit_exponent", "", fit.exponent, fit.r_squared])
    checks = {}
    for n in sorted(c.n_values):
        if n <= MAX_LEVEL:
            part = build_partition(seq, n)
            L = part.lengths
            checks[n] = {"sum_lengths_error": abs(float(L.sum()) - 1.0),
                         "dominance": bool(np.all(L <= L[0] * (1 + 1e-12)))}
            rows.append(["sum_lengths_error", n, checks[n]["sum_lengths_error"], ""])
            rows.append(["max_length_ratio", n, float(L.max() / L[0]), ""])
    out.write("partition_law.csv", _csv(["record", "n", "value", "r_squared"], rows))
    return {"exponent": fit.exponent, "r_squared": fit.r_squared,
            "checks": {str(k): v for k, v in checks.items()}}, []


def _run_correlation_decay(c, out, threads):
    from .correlation import CSV_HEADER, FunctionalSpec, bound_conformance, pair_correlation_sweep
    from .normal_approx.birkhoff import invariant_sampler
    from .rates import fit_decay

    seq = c.sequence()
    a = c.alpha_list()[0]
    f = _observable(c, a)
    comp = f.components[0]
    mu = invariant_sampler(a)
    gaps = sorted(c.gaps)
    est = pair_correlation_sweep(seq, comp, comp, gaps, mu, c.samples, c.seed, c.chunk_size, threads)
    scales = [FunctionalSpec(1, (0,), (0, g), None, f.sup_norm**2, (f.lip_const * f.sup_norm,)).scale(c.beta)
              for g in gaps]
    conf = bound_conformance(est, scales)
    rows = [["pair", g, e.value, e.std_error, e.samples, e.seed] for g, e in zip(gaps, est)]
    out.write("correlation.csv", _csv(CSV_HEADER, rows))
    summary = {"C_fit": conf.C_fit, "conformance_holds": conf.holds()}
    try:
        fit = fit_decay([(g, e.value, e.std_error) for g, e in zip(gaps, est)])
        summary.update(exponent=fit.exponent, dropped=list(fit.dropped))
    except NumericalFailure as exc:
        summary.update(exponent=None, fit_error=str(exc))
    return summary, _chunk_seeds(c, 2, c.samples)


def _reference_sigma(f, a):
    from .normal_approx.birkhoff import covariance_operator

    return covariance_operator(a, f).sigma


def _run_clt_smooth(c, out, threads):
    from .normal_approx import GaussianBump, sample_birkhoff, smooth_distance
    from .rates import fit_decay

    a = c.alpha_list()[0]
    f = _observable(c, a)
    sigma = _reference_sigma(f, a)
    center = tuple((list(c.centers) + [0.0] * f.d)[: f.d])
    h = GaussianBump(center)
    batch = sample_birkhoff(a, f, c.N_grid, c.samples, c.seed, chunk_size=c.chunk_size, threads=threads)
    rows, pts = [], []
    for N in batch.N_values:
        r = smooth_distance(batch.W[N], sigma, h)
        rows.append(_na_row(N, c.K_for(N), c.samples, c, f.d, "smooth_distance", r.value, r.std_error))
        pts.append((N, r.value, r.std_error))
    summary = {"sigma": sigma.tolist()}
    try:
        fit = fit_decay(pts, min_points=min(3, len(pts)))
        summary["exponent"] = fit.exponent
        rows.append(_na_row(max(c.N_grid), "", c.samples, c, f.d, "fit_exponent", fit.exponent, fit.residual))
    except NumericalFailure as exc:
        summary["fit_error"] = str(exc)
    out.write("clt_smooth.csv", _csv(_NA_HEADER, rows))
    return summary, _chunk_seeds(c, 10, c.samples)


def _run_clt_kantorovich(c, out, threads):
    from .normal_approx import kantorovich_distance, sample_birkhoff
    from .parallel import chunk_rng

    a = c.alpha_list()[0]
    f = _observable(c, a)
    sigma = _reference_sigma(f, a)
    mode = "exact_1d" if f.d == 1 else "sliced"
    batch = sample_birkhoff(a, f, c.N_grid, c.samples, c.seed, chunk_size=c.chunk_size, threads=threads)
    rows, pts = [], []
    for N in batch.N_values:
        dist = kantorovich_distance(batch.W[N], sigma, mode)
        rows.append(_na_row(N, c.K_for(N), c.samples, c, f.d, f"kantorovich_{mode}", dist, float("nan")))
        pts.append((N, dist))
    z = chunk_rng(c.seed, 99, 0).standard_normal(c.samples)
    control = kantorovich_distance(z, 1.0)
    rows.append(_na_row(0, "", c.samples, c, 1, "gaussian_control", control, float("nan")))
    summary = {"sigma": sigma.tolist(), "control": control}
    if len(pts) >= 2 and all(v > 0 for _, v in pts):
        (n0, v0), (n1, v1) = pts[0], pts[-1]
        slope = math.log(v1 / v0) / math.log(n1 / n0)
        summary["exponent"] = slope
        rows.append(_na_row(n1, "", c.samples, c, f.d, "fit_exponent", slope, float("nan")))
    out.write("clt_kantorovich.csv", _csv(_NA_HEADER, rows))
    return summary, _chunk_seeds(c, 10, c.samples)


def _run_stein_budget(c, out, threads):
    from .normal_approx import GaussianBump, SteinBudget, check_A1

    a = c.alpha_list()[0]
    f = _observable(c, a)
    rep = check_A1(a, f, c.lags, c.samples, c.seed, beta=c.beta, chunk_size=min(c.chunk_size, 2048),
                   threads=threads)
    h = GaussianBump(tuple([0.0] * f.d))
    rows, budgets = [], []
    for N in c.N_grid:
        b = SteinBudget.build(f.d, c.beta, rep.C2, rep.C4, h.norms, f.sup_norm, N, c.K_for(N))
        budgets.append(b)
        rows.append(_na_row(N, b.K, c.samples, c, f.d, "C_star", b.C_star, float("nan")))
        rows.append(_na_row(N, b.K, c.samples, c, f.d, "bound", b.bound, float("nan")))
    out.write("stein_budget.csv", _csv(_NA_HEADER, rows))
    out.write("stein_budget.txt", budgets[-1].to_text())
    return {"C2": rep.C2, "C4": rep.C4}, _chunk_seeds(c, 20, c.samples, min(c.chunk_size, 2048))


def _run_rio_b2(c, out, threads):
    from .normal_approx import B2Index, bump_probe, check_B2, tanh_probe

    a = c.alpha_list()[0]
    f = _observable(c, a)
    probes = [tanh_probe(3), bump_probe()]
    idx = [B2Index(0, 0, 0, p_, 0, 0, 1, 0, 0) for p_ in sorted(c.gaps)]
    rep = check_B2(a, f, probes, idx, c.samples, c.seed, beta=c.beta, chunk_size=c.chunk_size, threads=threads)
    rows = [_na_row(ix.p, "", c.samples, c, f.d, f"cov[{name}]", cov, se) for name, ix, cov, se, _ in rep.rows]
    rows.append(_na_row("", "", c.samples, c, f.d, "C_fit", rep.C, float("nan")))
    out.write("rio_b2.csv", _csv(_NA_HEADER, rows))
    return {"C": rep.C}, _chunk_seeds(c, 40, c.samples)


def _run_coboundary_screen(c, out, threads):
    from .normal_approx import coboundary_screen

    a = c.alpha_list()[0]
    f = _observable(c, a)
    rep = coboundary_screen(a, f, c.N_grid, c.samples, c.seed, chunk_size=c.chunk_size, threads=threads)
    rows = []
    for i, (slope, flag) in enumerate(zip(rep.slopes, rep.flagged)):
        rows.append(_na_row(max(rep.N_grid), "", c.samples, c, f.d, f"slope_dir{i:02d}", slope, float("nan")))
        rows.append(_na_row(max(rep.N_grid), "", c.samples, c, f.d, f"flagged_dir{i:02d}", float(flag),
                            float("nan")))
    out.write("coboundary_screen.csv", _csv(_NA_HEADER, rows))
    return {"flagged": [i for i, fl in enumerate(rep.flagged) if fl]}, _chunk_seeds(c, 41, c.samples)


_NA_HEADER = ["N", "K", "M", "beta", "d", "metric", "value", "std_error", "seed"]

_DISPATCH = {
    "invariant-density": _run_invariant_density,
    "cone-check": _run_cone_check,
    "partition-law": _run_partition_law,
    "correlation-decay": _run_correlation_decay,
    "clt-smooth": _run_clt_smooth,
    "clt-kantorovich": _run_clt_kantorovich,
    "stein-budget": _run_stein_budget,
    "rio-b2": _run_rio_b2,
    "coboundary-screen": _run_coboundary_screen,
}


def run(config: ExperimentConfig, threads: int | None = None) -> RunManifest:
    """Validate, dispatch, write outputs and ``manifest.json``; returns the manifest.

    On any failure every output written so far is removed.
    """
    problems = validate(config)
    if problems:
        raise ValidationError(problems)
    from .parallel import resolve_threads

    if threads is None and config.threads > 0:
        threads = config.threads
    n_threads = resolve_threads(threads)
    out = _Outputs(Path(config.output_path))
    t0 = time.perf_counter()
    try:
        summary, seeds = _DISPATCH[config.kind](config, out, n_threads)
        manifest = RunManifest(
            kind=config.kind,
            config_hash=config.config_hash(),
            code_version=__version__,
            seed=config.seed,
            wall_time=time.perf_counter() - t0,
            chunk_seeds=seeds,
            outputs=dict(out.written),
            summary=_jsonable(summary),
            config=config.digest_text(),
        )
        text = manifest.to_json()
        out.dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".manifest.", dir=out.dir)
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, out.dir / "manifest.json")
        return manifest
    except BaseException:
        out.remove_all()
        raise


def verify(manifest_path, output_path=None, threads: int | None = None) -> bool:
    """Re-run the manifest's configuration and compare output digests."""
    old = RunManifest.from_json(Path(manifest_path).read_text())
    cfg = ExperimentConfig.from_text(old.config)
    cfg.output_path = str(output_path or tempfile.mkdtemp(prefix="pmtool-verify-"))
    new = run(cfg, threads)
    return new.outputs == old.outputs


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
