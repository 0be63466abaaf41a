"""Simulation benchmarks: data generators, baseline methods, MAE harness.

Three synthetic scenarios exercise the model: a one-dimensional case where
two of four sources are uninformative (negative transfer), a two-dimensional
case with one domain-inconsistent source aligned by expansion, and a scaled
family of cases with many sources or five-dimensional inputs.  The harness
replays each scenario over seeded replications and scores methods by mean
absolute error against the noise-free target function.
"""

import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .covblock import OutputData, PredictiveDistribution
from .dame import DameConfig, DomainSpec, expand
from .exceptions import CombinationError, ConfigError, MgcpError
from .rng import derive_rng, derive_seed
from .train import TrainConfig, fit, predict_fit

__all__ = [
    "ScenarioSpec",
    "BenchResult",
    "METHODS",
    "generate",
    "generate_case1",
    "generate_case2",
    "generate_case3",
    "bgcp_combine",
    "run_benchmark",
    "write_replications_csv",
    "write_summary_csv",
]

METHODS = ("MGCP-R", "MGCP", "MGCP-RF", "BGCP-R", "GCP", "MGCP-T")
CASES = ("sim1", "sim2", "sim3-s1", "sim3-s2")

# Penalty weight used by the regularized methods on standardized responses.
DEFAULT_GAMMA = 2.25


@dataclass
class ScenarioSpec:
    """One simulation scenario; counts default per case when left None."""

    case: str
    n_e: int = 2
    n: int = None
    n_t: int = None
    n_test: int = None
    noise_std: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}; choose from {CASES}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if self.case.startswith("sim3") and self.n_e < 1:
            raise ConfigError("n_e must be at least 1")
        for name in ("n", "n_t", "n_test"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class SimulatedData:
    """Generated training and test data for one replication."""

    sources: list
    target: OutputData
    test_inputs: np.ndarray
    test_truth: np.ndarray
    # sources that baselines without domain adaptation must skip
    excluded_for_baselines: set = field(default_factory=set)
    # sources the oracle model (MGCP-T) uses; None when the case has none
    oracle_sources: tuple = None

    def data(self, keep=None):
        sources = self.sources
        if keep is not None:
            sources = [sources[i] for i in keep]
        return list(sources) + [self.target]

    def usable(self):
        return [
            i for i in range(len(self.sources)) if i not in self.excluded_for_baselines
        ]


def generate(spec):
    """Dispatch to the case generator for ``spec``."""
    if spec.case == "sim1":
        return generate_case1(spec)
    if spec.case == "sim2":
        return generate_case2(spec)
    return generate_case3(spec)


def generate_case1(spec):
    """Four 1-d sources, two informative, short-range target observations."""
    n = spec.n or 30
    n_t = spec.n_t or 10
    n_test = spec.n_test or 60
    rng = derive_rng(spec.seed, "sim1")

    fs = [
        lambda x: 0.3 * (x - 3.0) ** 3,
        lambda x: 0.3 * x**2 + 2.0 * np.sin(2.0 * x),
        lambda x: (x - 2.0) ** 2,
        lambda x: (x - 1.0) * (x - 2.0) * (x - 4.0),
    ]
    ft = lambda x: 0.2 * (x - 3.0) ** 3 + 0.15 * x**2 + np.sin(2.0 * x)

    xs = np.linspace(0.0, 5.0, n)[:, None]
    sources = [
        OutputData(xs, f(xs[:, 0]) + rng.normal(0.0, spec.noise_std, n), role=i)
        for i, f in enumerate(fs)
    ]
    xt = np.linspace(0.0, 3.0, n_t)[:, None]
    target = OutputData(
        xt, ft(xt[:, 0]) + rng.normal(0.0, spec.noise_std, n_t), role="target"
    )
    x_test = rng.uniform(0.0, 5.0, (n_test, 1))
    return SimulatedData(
        sources,
        target,
        x_test,
        ft(x_test[:, 0]),
        oracle_sources=(0, 1),
    )


def generate_case2(spec):
    """Three sources on [-2, 2]^2; the first lives on x1 only and is expanded."""
    n_t = spec.n_t or 24
    rng = derive_rng(spec.seed, "sim2")

    f1 = lambda x1: 3.0 * np.sin(x1)
    f2 = lambda x: 4.0 * np.cos(2.0 * x[:, 0]) + x[:, 1] ** 2 + x[:, 1]
    f3 = lambda x: 2.0 * np.sin(2.0 * x[:, 0]) + x[:, 1] ** 2
    ft = lambda x: 2.0 * np.sin(x[:, 0]) + x[:, 1] ** 2 + x[:, 1]

    # the first source arrives as the marginal mean on x1; expansion places
    # its induced points across x2 with target-like measurement noise
    grid1 = np.linspace(-2.0, 2.0, 8)
    induced = OutputData(grid1[:, None], f1(grid1), role=0)
    dspec = DomainSpec(
        shared_features=[0],
        target_unique_count=1,
        target_unique_bounds=[[-2.0, 2.0]],
    )
    dcfg = DameConfig(
        n_induced=8,
        n_expand=8,
        expansion_noise_std=spec.noise_std,
        seed=derive_seed(spec.seed, "sim2-expand"),
    )
    pseudo = expand(induced, dspec, dcfg)

    # remaining sources observed at those same 64 grid locations
    locs = pseudo.inputs
    sources = [pseudo]
    for i, f in ((1, f2), (2, f3)):
        sources.append(
            OutputData(
                locs, f(locs) + rng.normal(0.0, spec.noise_std, locs.shape[0]), role=i
            )
        )

    g1 = np.linspace(0.0, 2.0, 3)
    g2 = np.linspace(-2.0, 2.0, 8)
    xt = np.column_stack([m.ravel() for m in np.meshgrid(g1, g2, indexing="ij")])
    if spec.n_t and spec.n_t != xt.shape[0]:
        raise ConfigError("sim2 target size is fixed by its 3x8 grid")
    target = OutputData(
        xt, ft(xt) + rng.normal(0.0, spec.noise_std, n_t), role="target"
    )

    side = int(round(np.sqrt(spec.n_test or 100)))
    gt = np.linspace(-2.0, 2.0, side)
    x_test = np.column_stack([m.ravel() for m in np.meshgrid(gt, gt, indexing="ij")])
    return SimulatedData(
        sources,
        target,
        x_test,
        ft(x_test),
        excluded_for_baselines={0},
    )


def _case3_setting1(spec, rng):
    n = spec.n or 30
    n_t = spec.n_t or 10
    n_test = spec.n_test or 60
    ne = spec.n_e
    e = rng.uniform(0.0, 1.0, (4, ne))

    families = [
        lambda x, k: 0.3 * (x - 2.5 - e[0, k]) ** 3,
        lambda x, k: 0.3 * x**2 + 2.0 * np.sin(2.0 * x + e[1, k]),
        lambda x, k: (x - 1.5 - e[2, k]) ** 2,
        lambda x, k: (x - 1.0) * (x - 2.0) * (x - 3.5 - e[3, k]),
    ]
    ft = lambda x: (
        0.2 * (x - 2.5 - e[0, 0]) ** 3 + 0.15 * x**2 + np.sin(2.0 * x + e[1, 0])
    )

    xs = np.linspace(0.0, 5.0, n)[:, None]
    sources = []
    for fam in families:
        for k in range(ne):
            sources.append(
                OutputData(
                    xs,
                    fam(xs[:, 0], k) + rng.normal(0.0, spec.noise_std, n),
                    role=len(sources),
                )
            )
    xt = np.linspace(0.0, 3.0, n_t)[:, None]
    target = OutputData(
        xt, ft(xt[:, 0]) + rng.normal(0.0, spec.noise_std, n_t), role="target"
    )
    x_test = rng.uniform(0.0, 5.0, (n_test, 1))
    return SimulatedData(sources, target, x_test, ft(x_test[:, 0]))


def _case3_setting2(spec, rng):
    n = spec.n or 100
    n_t = spec.n_t or 50
    n_test = spec.n_test or 150
    ne = spec.n_e
    e = rng.uniform(-0.25, 0.25, (3, 2, ne))

    def fam1(x, k):
        return 3.0 * (np.sin(x[:, 0] + e[0, 0, k]) + np.sin(x[:, 1] + e[0, 1, k]))

    def fam2(x, k):
        return (
            4.0 * (np.cos(2.0 * x[:, 0] + e[1, 0, k]) + np.cos(2.0 * x[:, 1] + e[1, 1, k]))
            + x[:, 2] ** 2
            + x[:, 2]
            + 2.0 * x[:, 3]
            - x[:, 4]
        )

    def fam3(x, k):
        return (
            2.0
            * (
                np.sin(2.0 * (x[:, 0] + e[2, 0, k]))
                + np.sin(2.0 * (x[:, 0] + e[2, 1, k]))
            )
            + x[:, 2] ** 2
            - x[:, 3]
            + 2.0 * x[:, 4]
        )

    def ft(x):
        return (
            2.0 * (np.sin(x[:, 0] + e[0, 0, 0]) + np.sin(x[:, 1] + e[0, 1, 0]))
            + x[:, 2] ** 2
            + x[:, 2]
            + 2.0 * x[:, 3]
            - x[:, 4]
        )

    sources = []
    # family 1 arrives as the marginal mean over (x1, x2): induce random
    # sites there, then expand each across random draws of (x3, x4, x5)
    n_induced, n_unique = 10, 10
    for k in range(ne):
        sites = rng.standard_normal((n_induced, 2))
        induced = OutputData(sites, fam1(sites, k), role=k)
        unique_pts = rng.standard_normal((n_induced, n_unique, 3))
        dspec = DomainSpec(shared_features=[0, 1], target_unique_count=3)
        dcfg = DameConfig(
            n_induced=n_induced,
            n_expand=n_unique,
            expansion_noise_std=spec.noise_std,
            seed=derive_seed(spec.seed, "sim3s2-expand", k),
        )
        sources.append(expand(induced, dspec, dcfg, unique_points=unique_pts))

    for fam in (fam2, fam3):
        for k in range(ne):
            x = rng.standard_normal((n, 5))
            sources.append(
                OutputData(
                    x,
                    fam(x, k) + rng.normal(0.0, spec.noise_std, n),
                    role=len(sources),
                )
            )

    # target training points are draws with x1 > 0 (left half unobserved)
    kept = np.empty((0, 5))
    while kept.shape[0] < n_t:
        draws = rng.standard_normal((150, 5))
        kept = np.vstack([kept, draws[draws[:, 0] > 0.0]])
    xt = kept[:n_t]
    target = OutputData(
        xt, ft(xt) + rng.normal(0.0, spec.noise_std, n_t), role="target"
    )
    x_test = rng.standard_normal((n_test, 5))
    return SimulatedData(
        sources,
        target,
        x_test,
        ft(x_test),
        excluded_for_baselines=set(range(ne)),
    )


def generate_case3(spec):
    """Scaled scenarios: many 1-d sources, or five-dimensional inputs."""
    rng = derive_rng(spec.seed, spec.case)
    if spec.case == "sim3-s1":
        return _case3_setting1(spec, rng)
    return _case3_setting2(spec, rng)


def bgcp_combine(submodels):
    """Inverse-variance combination of per-source predictive distributions.

    mean = sum_i mu_i / V_i / sum_i 1 / V_i ; variance = q / sum_i 1 / V_i.
    """
    if not submodels:
        raise CombinationError("no sub-models to combine")
    means = np.atleast_2d(np.asarray([m for m, _ in submodels], dtype=float))
    variances = np.atleast_2d(np.asarray([v for _, v in submodels], dtype=float))
    if means.shape != variances.shape:
        raise CombinationError("sub-model means and variances disagree on shape")
    if np.any(variances <= 0.0):
        raise CombinationError("sub-model variances must be strictly positive")
    weights = 1.0 / variances
    total = weights.sum(axis=0)
    mean = (means * weights).sum(axis=0) / total
    variance = means.shape[0] / total
    return PredictiveDistribution(mean=mean, variance=variance)


def _method_config(method, template, seed):
    cfg = replace(template, seed=seed)
    if method == "MGCP-R":
        return replace(cfg, penalty_mode="l1-transfer")
    if method == "BGCP-R":
        return replace(cfg, penalty_mode="l1-transfer")
    if method == "MGCP-RF":
        return replace(cfg, penalty_mode="group-l1-rf")
    # unregularized variants share the code path with gamma pinned to zero
    return replace(cfg, gamma=0.0, penalty_mode="l1-transfer")


def _run_method(method, sim, template, seed):
    """Fit one method on one replication; returns (mae, timings, selected)."""
    if method == "BGCP-R":
        fit_s = pred_s = 0.0
        subs = []
        selected = []
        for i in sim.usable():
            cfg = _method_config(method, template, derive_seed(seed, "pair", i))
            data = sim.data(keep=[i])
            t0 = time.perf_counter()
            result = fit(data, cfg)
            fit_s += time.perf_counter() - t0
            t0 = time.perf_counter()
            pred = predict_fit(data, result, sim.test_inputs)
            pred_s += time.perf_counter() - t0
            subs.append((pred.mean, pred.variance))
            selected.extend(i for _ in result.selected_sources)
        combined = bgcp_combine(subs)
        mae = float(np.mean(np.abs(combined.mean - sim.test_truth)))
        return mae, fit_s, pred_s, tuple(sorted(set(selected))), None

    if method == "GCP":
        keep = []
    elif method == "MGCP-T":
        if sim.oracle_sources is None:
            raise ConfigError("MGCP-T is only defined for sim1")
        keep = list(sim.oracle_sources)
    elif method in ("MGCP",):
        keep = sim.usable()
    else:  # MGCP-R, MGCP-RF use every source, adapted ones included
        keep = list(range(len(sim.sources)))

    cfg = _method_config(method, template, seed)
    data = sim.data(keep=keep)
    t0 = time.perf_counter()
    result = fit(data, cfg)
    fit_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred = predict_fit(data, result, sim.test_inputs)
    pred_s = time.perf_counter() - t0
    mae = float(np.mean(np.abs(pred.mean - sim.test_truth)))
    selected = tuple(keep[i] for i in result.selected_sources)
    # fitted |transfer scale| per used source (standardized responses);
    # carried on the row for analysis, not part of the CSV schema
    alphas = {
        src: float(a)
        for src, a in zip(keep, np.abs(result.theta_hat.transfer_alphas()))
    }
    return mae, fit_s, pred_s, selected, alphas


def _run_replication(spec, methods, template, rep):
    # replication seeds are root + index so runs reproduce bitwise
    rep_spec = replace(spec, seed=spec.seed + rep)
    sim = generate(rep_spec)
    rows = []
    for method in methods:
        seed = derive_seed(rep_spec.seed, "fit", method)
        try:
            mae, fit_s, pred_s, selected, alphas = _run_method(
                method, sim, template, seed
            )
            rows.append(
                {
                    "replication": rep,
                    "method": method,
                    "mae": mae,
                    "fit_seconds": fit_s,
                    "predict_seconds": pred_s,
                    "selected_sources": ";".join(str(i) for i in selected),
                    "abs_transfer_alphas": alphas,
                }
            )
        except MgcpError as err:
            rows.append(
                {
                    "replication": rep,
                    "method": method,
                    "mae": None,
                    "fit_seconds": None,
                    "predict_seconds": None,
                    "selected_sources": f"failed: {err}",
                }
            )
    return rows


@dataclass
class BenchResult:
    """Per-replication records plus aggregate statistics."""

    spec: ScenarioSpec
    methods: tuple
    replications: int
    rows: list

    def method_rows(self, method, ok_only=True):
        rows = [r for r in self.rows if r["method"] == method]
        if ok_only:
            rows = [r for r in rows if r["mae"] is not None]
        return rows

    def maes(self, method):
        return np.array([r["mae"] for r in self.method_rows(method)])

    def summary(self):
        out = []
        for method in self.methods:
            ok = self.method_rows(method)
            failures = self.replications - len(ok)
            maes = np.array([r["mae"] for r in ok]) if ok else np.array([])
            out.append(
                {
                    "method": method,
                    "replications": self.replications,
                    "failures": failures,
                    "flagged": failures > 0.1 * self.replications,
                    "median_mae": float(np.median(maes)) if maes.size else None,
                    "mean_mae": float(np.mean(maes)) if maes.size else None,
                    "std_mae": float(np.std(maes)) if maes.size else None,
                    "mean_fit_seconds": (
                        float(np.mean([r["fit_seconds"] for r in ok])) if ok else None
                    ),
                    "mean_predict_seconds": (
                        float(np.mean([r["predict_seconds"] for r in ok]))
                        if ok
                        else None
                    ),
                }
            )
        return out


def resolve_n_jobs(requested=None, tasks=None):
    """Worker count: requested, capped by MGCP_THREADS and the CPU count."""
    cap = os.cpu_count() or 1
    env = os.environ.get("MGCP_THREADS")
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"MGCP_THREADS must be an integer, got {env!r}")
    n = cap if requested is None else min(requested, cap)
    if tasks is not None:
        n = min(n, tasks)
    return max(1, n)


def run_benchmark(spec, methods, replications, train=None, n_jobs=None):
    """Fit ``methods`` on ``replications`` independent draws of the scenario.

    Each replication regenerates data with seed ``spec.seed + r``, fits
    every method, and scores the noise-free test values.  Failures are
    recorded, excluded from statistics, and flagged in the summary when a
    method fails more than 10% of its replications.
    """
    methods = tuple(methods)
    if not methods:
        raise ConfigError("methods must be nonempty")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods: {sorted(unknown)}")
    if "MGCP-T" in methods and spec.case != "sim1":
        raise ConfigError("MGCP-T is only defined for sim1")
    if replications < 1:
        raise ConfigError("replications must be positive")

    template = train or TrainConfig(
        gamma=DEFAULT_GAMMA,
        restarts=8,
        max_iterations=1000,
        screen_draws=24,
        screen_iterations=150,
    )
    n_jobs = resolve_n_jobs(n_jobs, tasks=replications)
    if n_jobs == 1:
        batches = [
            _run_replication(spec, methods, template, r) for r in range(replications)
        ]
    else:
        batches = Parallel(n_jobs=n_jobs)(
            delayed(_run_replication)(spec, methods, template, r)
            for r in range(replications)
        )
    rows = [row for batch in batches for row in batch]
    return BenchResult(
        spec=spec, methods=methods, replications=replications, rows=rows
    )


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_replications_csv(path, result):
    """Per-replication records; floats keep full round-trip precision."""
    fields = [
        "replication",
        "method",
        "mae",
        "fit_seconds",
        "predict_seconds",
        "selected_sources",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in result.rows:
            writer.writerow([_fmt(row[f]) for f in fields])


def write_summary_csv(path, result):
    rows = result.summary()
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])
