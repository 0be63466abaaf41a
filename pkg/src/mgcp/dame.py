"""Domain adaptation by marginalization and expansion.

A source whose input features disagree with the target's is aligned in two
steps: project its inputs onto the shared features and smooth the projected
cloud with a kernel regression (marginalize), then replicate the induced
points across a grid over the target-only features, adding response noise
that mimics measurement error (expand).  The result is a pseudo source
living in the target's input space.

Column convention: the target's inputs are ordered shared-features-first
(in the order listed by the spec) followed by its unique features.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .covblock import OutputData
from .exceptions import BandwidthError, ConfigError, DataError
from .rng import derive_rng

__all__ = [
    "DomainSpec",
    "DameConfig",
    "NadarayaWatson",
    "marginalize",
    "select_bandwidth",
    "expand",
    "adapt_source",
]


@dataclass
class DomainSpec:
    """Feature bookkeeping for one source with an inconsistent domain.

    Parameters
    ----------
    shared_features : list of int
        Source columns shared with the target.  Must be nonempty: with no
        common feature there is nothing to transfer.
    source_unique : list of int, optional
        Source columns absent from the target; defaults to the complement
        of ``shared_features``.
    target_unique_count : int
        Number of target-only input dimensions.
    target_unique_bounds : ndarray (target_unique_count, 2), optional
        Per-dimension [low, high] for the expansion grid; derived from the
        observed target data when omitted.
    """

    shared_features: list
    target_unique_count: int
    source_unique: list = None
    target_unique_bounds: np.ndarray = None

    def __post_init__(self):
        self.shared_features = list(self.shared_features)
        if len(self.shared_features) == 0:
            raise ConfigError(
                "shared_features is empty: domain adaptation requires at "
                "least one input feature shared between source and target"
            )
        if len(set(self.shared_features)) != len(self.shared_features):
            raise ConfigError("shared_features contains duplicates")
        if self.source_unique is not None:
            self.source_unique = list(self.source_unique)
            if set(self.shared_features) & set(self.source_unique):
                raise ConfigError("shared and source-unique features overlap")
        if self.target_unique_count < 0:
            raise ConfigError("target_unique_count must be nonnegative")
        if self.target_unique_bounds is not None:
            self.target_unique_bounds = np.atleast_2d(
                np.asarray(self.target_unique_bounds, dtype=float)
            )
            if self.target_unique_bounds.shape != (self.target_unique_count, 2):
                raise ConfigError(
                    "target_unique_bounds must be (target_unique_count, 2)"
                )

    def resolved_source_unique(self, n_columns):
        if self.source_unique is not None:
            extra = (set(self.shared_features) | set(self.source_unique)) ^ set(
                range(n_columns)
            )
            if extra:
                raise ConfigError(
                    f"shared + source_unique must cover all {n_columns} source "
                    f"columns; mismatch on {sorted(extra)}"
                )
            return self.source_unique
        return [c for c in range(n_columns) if c not in self.shared_features]


@dataclass
class DameConfig:
    """Controls for the marginalize and expand steps."""

    n_induced: int = None
    n_expand: int = 8
    bandwidth: object = "cv"
    expansion_noise_std: object = "estimate-from-target"
    seed: int = 0

    def __post_init__(self):
        if self.n_induced is not None and self.n_induced < 1:
            raise ConfigError("n_induced must be at least 1")
        if self.n_expand < 1:
            raise ConfigError("n_expand must be at least 1")
        if isinstance(self.bandwidth, (int, float)) and self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")


class NadarayaWatson:
    """Gaussian-kernel regression, scikit-learn style.

    Weights are ``exp(-||x - x_b||^2 / (2 bandwidth^2))``; predictions are
    the weight-normalized response averages.
    """

    def __init__(self, bandwidth=1.0):
        self.bandwidth = bandwidth

    def get_params(self, deep=True):
        return {"bandwidth": self.bandwidth}

    def set_params(self, **params):
        for k, v in params.items():
            setattr(self, k, v)
        return self

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise DataError("X and y disagree on sample count")
        if X.shape[0] < 1:
            raise DataError("need at least one observation")
        self.X_ = X
        self.y_ = y
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d2 = ((X[:, None, :] - self.X_[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-0.5 * d2 / float(self.bandwidth) ** 2)
        totals = w.sum(axis=1)
        if np.any(totals <= 0.0) or not np.all(np.isfinite(totals)):
            raise BandwidthError(
                f"bandwidth {self.bandwidth:g} leaves queries with zero kernel "
                "weight; increase it"
            )
        return (w @ self.y_) / totals


def select_bandwidth(X, y, folds=5, candidates=None, seed=0):
    """Grid-search the kernel-regression bandwidth by k-fold CV.

    Candidates default to 20 log-spaced values spanning two decades below
    the data span up to twice the span.  Returns the candidate with the
    smallest mean held-out squared error.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if n < folds:
        raise ConfigError(f"need at least {folds} points for {folds}-fold CV")
    span = float(np.max(np.ptp(X, axis=0)))
    if span <= 0:
        raise BandwidthError("all inputs identical: bandwidth is undefined")
    if candidates is None:
        candidates = np.geomspace(0.02 * span, 2.0 * span, 20)
    candidates = np.sort(np.asarray(candidates, dtype=float))

    # canonical row order first, so the fold split (and hence the selected
    # bandwidth) does not depend on how the caller happened to sort the data
    canonical = np.lexsort(tuple(X.T) + (y,))
    X, y = X[canonical], y[canonical]
    order = derive_rng(seed, "bandwidth-cv").permutation(n)
    fold_ids = np.array_split(order, folds)

    best = None
    for bw in candidates:
        errors = []
        for held in fold_ids:
            mask = np.ones(n, dtype=bool)
            mask[held] = False
            if not mask.any():
                continue
            model = NadarayaWatson(bandwidth=bw).fit(X[mask], y[mask])
            try:
                pred = model.predict(X[held])
            except BandwidthError:
                errors = None
                break
            errors.append(np.mean((pred - y[held]) ** 2))
        if errors is None:
            continue
        score = float(np.mean(errors))
        if best is None or score < best[0]:
            best = (score, float(bw))
    if best is None:
        raise BandwidthError("no candidate bandwidth produced usable weights")
    return best[1]


def _induced_grid(points, n_induced, d_c, seed):
    """Evaluation sites over the projected bounding box."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    if d_c == 1:
        return np.linspace(lo[0], hi[0], n_induced)[:, None]
    sampler = qmc.LatinHypercube(d=d_c, seed=derive_rng(seed, "induced-lhs"))
    return lo + sampler.random(n_induced) * (hi - lo)


def marginalize(source, spec, config):
    """Project a source onto the shared features and smooth it.

    Drops the source-unique columns, fits a Nadaraya-Watson regression to
    the projected cloud (bandwidth fixed or cross-validated), and evaluates
    it at ``n_induced`` sites: evenly spaced for one shared feature, a
    Latin hypercube over the bounding box otherwise.
    """
    if source.n < 2:
        raise DataError("marginalization needs at least two observations")
    spec.resolved_source_unique(source.d)
    proj = source.inputs[:, spec.shared_features]

    if config.bandwidth == "cv":
        bw = select_bandwidth(proj, source.responses, seed=config.seed)
    else:
        bw = float(config.bandwidth)
    model = NadarayaWatson(bandwidth=bw).fit(proj, source.responses)

    n_induced = config.n_induced if config.n_induced is not None else 10
    sites = _induced_grid(proj, n_induced, len(spec.shared_features), config.seed)
    return OutputData(sites, model.predict(sites), role=source.role)


def _estimate_target_noise(target):
    """Noise std of the target from a single-output GP fit.

    Falls back to the kernel-regression residual std if the GP fit fails.
    """
    from .train import TrainConfig, fit

    try:
        result = fit(
            [target],
            TrainConfig(gamma=0.0, penalty_mode="none", restarts=3, seed=0),
        )
        scale = result.standardizers[-1][1]
        return float(np.exp(result.theta_hat.log_sigmas[-1])) * scale
    except Exception:
        span = float(np.max(np.ptp(target.inputs, axis=0)))
        bw = 0.2 * span if span > 0 else 1.0
        model = NadarayaWatson(bandwidth=bw).fit(target.inputs, target.responses)
        resid = target.responses - model.predict(target.inputs)
        return float(np.std(resid))


def expand(induced, spec, config, target=None, unique_points=None):
    """Replicate induced points across the target-unique dimensions.

    By default each induced point is crossed with a per-dimension grid of
    ``n_expand`` evenly spaced values inside the target-unique bounds
    (observed target ranges unless the spec fixes them), for
    ``n_induced * n_expand**d_t`` pseudo observations.  ``unique_points``
    overrides the grid with explicit coordinates, shaped (m, d_t) shared by
    all induced points or (n_induced, m, d_t) per point.

    Responses are the induced responses plus i.i.d. Gaussian noise; with
    ``expansion_noise_std="estimate-from-target"`` the deviation comes from
    a single-output GP fit to the target data.
    """
    d_t = spec.target_unique_count
    if d_t == 0:
        return induced

    if unique_points is not None:
        pts = np.asarray(unique_points, dtype=float)
        if pts.ndim == 2:
            pts = np.broadcast_to(pts, (induced.n,) + pts.shape)
        if pts.ndim != 3 or pts.shape[0] != induced.n or pts.shape[2] != d_t:
            raise ConfigError(
                "unique_points must be (m, d_t) or (n_induced, m, d_t)"
            )
    else:
        bounds = spec.target_unique_bounds
        if bounds is None:
            if target is None:
                raise ConfigError(
                    "expansion needs target data or explicit target_unique_bounds"
                )
            cols = target.inputs[:, target.d - d_t :]
            bounds = np.column_stack([cols.min(axis=0), cols.max(axis=0)])
        axes = [
            np.linspace(bounds[j, 0], bounds[j, 1], config.n_expand)
            for j in range(d_t)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.column_stack([m.ravel() for m in mesh])
        pts = np.broadcast_to(grid, (induced.n,) + grid.shape)

    noise_std = config.expansion_noise_std
    if noise_std == "estimate-from-target":
        if target is None:
            raise ConfigError(
                "expansion_noise_std='estimate-from-target' needs target data"
            )
        noise_std = _estimate_target_noise(target)
    noise_std = float(noise_std)
    if noise_std < 0:
        raise ConfigError("expansion_noise_std must be nonnegative")

    m = pts.shape[1]
    shared = np.repeat(induced.inputs, m, axis=0)
    unique = pts.reshape(induced.n * m, d_t)
    responses = np.repeat(induced.responses, m)
    if noise_std > 0:
        rng = derive_rng(config.seed, "expand-noise")
        responses = responses + rng.normal(0.0, noise_std, size=responses.shape)
    return OutputData(
        np.column_stack([shared, unique]), responses, role=induced.role
    )


def adapt_source(source, target, spec, config):
    """Full pipeline: marginalize then expand one inconsistent source.

    Resolves the induced-point count default, ``min(n_t - 1, 10)``, from
    the target size.
    """
    if config.n_induced is None:
        config = DameConfig(
            n_induced=max(1, min(target.n - 1, 10)),
            n_expand=config.n_expand,
            bandwidth=config.bandwidth,
            expansion_noise_std=config.expansion_noise_std,
            seed=config.seed,
        )
    induced = marginalize(source, spec, config)
    return expand(induced, spec, config, target=target)
