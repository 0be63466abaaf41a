"""Block covariance assembly, Schur-complement likelihood, and prediction.

The sparse model couples each source to the target but not sources to each
other, so the joint covariance has block-diagonal source structure with a
bordering target row/column.  Likelihood and prediction exploit that: only
the per-source blocks and the target-sized Schur complement are factorized,
never the dense joint matrix.  The full-covariance variant (shared latent
process across sources) has no zero blocks and takes a dense path instead.

A self-contained dense reference implementation (`log_likelihood_dense`,
`reference_cholesky`) is kept deliberately independent of the optimized
path; it exists to cross-check results and to expose the cubic cost the
block path avoids.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .exceptions import DataError, IndefiniteCovarianceError
from .kernels import Hyperparameters, auto_cov_matrix, cross_cov_matrix

__all__ = [
    "OutputData",
    "CovarianceBundle",
    "PredictiveDistribution",
    "assemble_covariance",
    "log_likelihood",
    "log_likelihood_schur",
    "log_likelihood_dense",
    "reference_cholesky",
    "predict",
    "marginalize_sources",
    "stack_responses",
]

# Relative jitter applied when the caller does not fix one, times the mean
# covariance diagonal; escalated x10 up to 3 times on factorization failure.
DEFAULT_JITTER_SCALE = 1e-8
JITTER_ESCALATIONS = 3


@dataclass
class OutputData:
    """Observations of one output.

    Parameters
    ----------
    inputs : ndarray, shape (n, d)
    responses : ndarray, shape (n,)
    role : int or "target", optional
        Source index (0-based) or target tag; informational only.
    """

    inputs: np.ndarray
    responses: np.ndarray
    role: object = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.responses = np.atleast_1d(np.asarray(self.responses, dtype=float))
        if self.inputs.ndim != 2:
            raise DataError("inputs must be a 2-d array (n, d)")
        if self.responses.shape != (self.inputs.shape[0],):
            raise DataError("responses must be a vector matching inputs rows")
        if self.inputs.shape[0] < 1:
            raise DataError("need at least one observation")
        if not np.all(np.isfinite(self.inputs)) or not np.all(
            np.isfinite(self.responses)
        ):
            raise DataError("data contain non-finite entries")

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d(self):
        return self.inputs.shape[1]


@dataclass
class PredictiveDistribution:
    """Posterior mean and variance at query points."""

    mean: np.ndarray
    variance: np.ndarray
    includes_noise: bool = False


@dataclass
class CovarianceBundle:
    """Assembled covariance blocks with their factorizations.

    ``structure`` is "block" for the sparse model (source blocks plus Schur
    complement factorized) or "full" when a shared latent process couples
    the sources (dense factorization).  ``dense_full`` holds the composed
    joint matrix only when requested; it exists for testing.
    """

    source_blocks: list
    cross_blocks: list
    target_block: np.ndarray
    source_factorizations: list
    schur: np.ndarray
    schur_factorization: np.ndarray
    jitter: float
    structure: str = "block"
    source_source_blocks: dict = None
    dense_factorization: np.ndarray = None
    dense_full: np.ndarray = None
    # forward-solved cross blocks L_i^{-1} C_it, cached for reuse
    _wsolves: list = field(default=None, repr=False)

    @property
    def q(self):
        return len(self.source_blocks)

    @property
    def block_sizes(self):
        return [b.shape[0] for b in self.source_blocks] + [self.target_block.shape[0]]

    @property
    def n_total(self):
        return sum(self.block_sizes)


def _split_data(data):
    if len(data) < 1:
        raise DataError("data must contain at least the target output")
    sources, target = list(data[:-1]), data[-1]
    dims = {o.d for o in data}
    if len(dims) != 1:
        raise DataError("all outputs must share one input dimension")
    return sources, target


def stack_responses(data):
    """Responses stacked source-major, target last."""
    return np.concatenate([o.responses for o in data])


def _build_blocks(sources, target, theta):
    """Raw covariance blocks (noise included, no jitter)."""
    q = len(sources)
    if theta.q != q:
        raise DataError(f"theta describes {theta.q} sources, data has {q}")
    if theta.d != target.d:
        raise DataError("theta and data disagree on input dimension")
    sig2 = theta.sigmas**2
    full = theta.is_full

    source_blocks, cross_blocks = [], []
    for i, src in enumerate(sources):
        cii = auto_cov_matrix(src.inputs, src.inputs, theta.source_kernels[i])
        if full:
            cii = cii + cross_cov_matrix(
                src.inputs, src.inputs, theta.shared_kernels[i], theta.shared_kernels[i]
            )
        cii[np.diag_indices_from(cii)] += sig2[i]
        source_blocks.append(cii)

        cit = cross_cov_matrix(
            src.inputs, target.inputs, theta.source_kernels[i], theta.transfer_kernels[i]
        )
        if full:
            cit = cit + cross_cov_matrix(
                src.inputs, target.inputs, theta.shared_kernels[i], theta.shared_kernels[-1]
            )
        cross_blocks.append(cit)

    ctt = np.zeros((target.n, target.n))
    for k in theta.transfer_kernels:
        ctt += auto_cov_matrix(target.inputs, target.inputs, k)
    ctt += auto_cov_matrix(target.inputs, target.inputs, theta.target_kernel)
    if full:
        ctt += cross_cov_matrix(
            target.inputs, target.inputs, theta.shared_kernels[-1], theta.shared_kernels[-1]
        )
    ctt[np.diag_indices_from(ctt)] += sig2[-1]

    source_source = {}
    if full:
        for i in range(q):
            for j in range(i + 1, q):
                source_source[(i, j)] = cross_cov_matrix(
                    sources[i].inputs,
                    sources[j].inputs,
                    theta.shared_kernels[i],
                    theta.shared_kernels[j],
                )
    return source_blocks, cross_blocks, ctt, source_source


def dense_from_blocks(source_blocks, cross_blocks, target_block, source_source=None):
    """Compose the joint covariance matrix from its blocks."""
    sizes = [b.shape[0] for b in source_blocks] + [target_block.shape[0]]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n = offsets[-1]
    C = np.zeros((n, n))
    for i, blk in enumerate(source_blocks):
        C[offsets[i] : offsets[i + 1], offsets[i] : offsets[i + 1]] = blk
    for i, blk in enumerate(cross_blocks):
        C[offsets[i] : offsets[i + 1], offsets[-2] :] = blk
        C[offsets[-2] :, offsets[i] : offsets[i + 1]] = blk.T
    C[offsets[-2] :, offsets[-2] :] = target_block
    if source_source:
        for (i, j), blk in source_source.items():
            C[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]] = blk
            C[offsets[j] : offsets[j + 1], offsets[i] : offsets[i + 1]] = blk.T
    return C


def _try_factorize(source_blocks, cross_blocks, ctt, source_source, jitter, full):
    sb = [b.copy() for b in source_blocks]
    tt = ctt.copy()
    for b in sb:
        b[np.diag_indices_from(b)] += jitter
    tt[np.diag_indices_from(tt)] += jitter

    if full:
        C = dense_from_blocks(sb, cross_blocks, tt, source_source)
        ld = cholesky(C, lower=True)
        return CovarianceBundle(
            source_blocks=sb,
            cross_blocks=list(cross_blocks),
            target_block=tt,
            source_factorizations=[],
            schur=None,
            schur_factorization=None,
            jitter=jitter,
            structure="full",
            source_source_blocks=dict(source_source),
            dense_factorization=ld,
        )

    ls, ws = [], []
    B = tt.copy()
    for cii, cit in zip(sb, cross_blocks):
        L = cholesky(cii, lower=True)
        W = solve_triangular(L, cit, lower=True)
        B -= W.T @ W
        ls.append(L)
        ws.append(W)
    LB = cholesky(B, lower=True)
    return CovarianceBundle(
        source_blocks=sb,
        cross_blocks=list(cross_blocks),
        target_block=tt,
        source_factorizations=ls,
        schur=B,
        schur_factorization=LB,
        jitter=jitter,
        _wsolves=ws,
    )


def assemble_covariance(data, theta, jitter=None, keep_dense=False):
    """Build and factorize the joint covariance of all training observations.

    Parameters
    ----------
    data : list of OutputData
        Sources first, target last (stacking order of every downstream op).
    theta : Hyperparameters
    jitter : float, optional
        Added to all diagonals.  Defaults to 1e-8 times the mean covariance
        diagonal; escalated x10 up to 3 times if factorization fails.
    keep_dense : bool
        Also store the composed joint matrix (testing only).

    Raises
    ------
    IndefiniteCovarianceError
        If the factorization still fails after all escalations.
    """
    sources, target = _split_data(data)
    source_blocks, cross_blocks, ctt, source_source = _build_blocks(
        sources, target, theta
    )

    mean_diag = np.mean(
        np.concatenate([np.diag(b) for b in source_blocks] + [np.diag(ctt)])
    )
    base = DEFAULT_JITTER_SCALE * max(mean_diag, np.finfo(float).tiny)
    jit = base if jitter is None else float(jitter)
    if jit < 0:
        raise DataError("jitter must be nonnegative")

    last_err = None
    for attempt in range(JITTER_ESCALATIONS + 1):
        try:
            bundle = _try_factorize(
                source_blocks, cross_blocks, ctt, source_source, jit, theta.is_full
            )
            if keep_dense:
                bundle.dense_full = dense_from_blocks(
                    bundle.source_blocks,
                    bundle.cross_blocks,
                    bundle.target_block,
                    bundle.source_source_blocks,
                )
            return bundle
        except np.linalg.LinAlgError as err:
            last_err = err
            jit = jit * 10 if jit > 0 else base
    raise IndefiniteCovarianceError(
        f"covariance not positive definite after {JITTER_ESCALATIONS} "
        f"jitter escalations (last jitter {jit / 10:g}): {last_err}"
    )


_LOG_2PI = np.log(2.0 * np.pi)


def log_likelihood_schur(bundle, y):
    """Gaussian log-likelihood via the partitioned-matrix decomposition.

    Evaluates
    ``-[y~' Oss^-1 y~ + (A y~ - y_t)' B^-1 (A y~ - y_t)] / 2
    - [log|Oss| + log|B|] / 2 - N log(2 pi) / 2``
    with per-block triangular solves only: O(q n^3 + n_t^3), never forming
    the dense joint inverse.
    """
    if bundle.structure != "block":
        raise DataError("Schur likelihood requires the block-structured bundle")
    y = np.asarray(y, dtype=float)
    sizes = bundle.block_sizes
    if y.shape != (sum(sizes),):
        raise DataError(f"y must have length {sum(sizes)}")

    offsets = np.concatenate([[0], np.cumsum(sizes)])
    yt = y[offsets[-2] :]

    quad_s = 0.0
    logdet = 0.0
    ay = np.zeros_like(yt)
    for i, (L, W) in enumerate(zip(bundle.source_factorizations, bundle._wsolves)):
        zi = solve_triangular(L, y[offsets[i] : offsets[i + 1]], lower=True)
        quad_s += zi @ zi
        ay += W.T @ zi
        logdet += 2.0 * np.sum(np.log(np.diag(L)))

    r = ay - yt
    zb = solve_triangular(bundle.schur_factorization, r, lower=True)
    logdet += 2.0 * np.sum(np.log(np.diag(bundle.schur_factorization)))
    n = sum(sizes)
    return -0.5 * (quad_s + zb @ zb) - 0.5 * logdet - 0.5 * n * _LOG_2PI


def log_likelihood(bundle, y):
    """Log-likelihood on either bundle structure (dispatches on it)."""
    if bundle.structure == "block":
        return log_likelihood_schur(bundle, y)
    y = np.asarray(y, dtype=float)
    L = bundle.dense_factorization
    z = solve_triangular(L, y, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (z @ z) - 0.5 * logdet - 0.5 * y.size * _LOG_2PI


def reference_cholesky(C):
    """Lower-triangular Cholesky factor by the outer-product sweep.

    Reference implementation for the dense oracle: column-by-column rank-1
    updates, no LAPACK factorization routine, so it validates the optimized
    path without sharing it.
    """
    T = np.array(C, dtype=float)
    n = T.shape[0]
    for j in range(n):
        djj = T[j, j]
        if djj <= 0 or not np.isfinite(djj):
            raise np.linalg.LinAlgError("matrix is not positive definite")
        d = np.sqrt(djj)
        T[j, j] = d
        T[j + 1 :, j] /= d
        T[j + 1 :, j + 1 :] -= np.outer(T[j + 1 :, j], T[j + 1 :, j])
    return np.tril(T)


def log_likelihood_dense(C, y):
    """Dense zero-mean Gaussian log-density; oracle for the block path."""
    y = np.asarray(y, dtype=float)
    L = reference_cholesky(C)
    z = solve_triangular(L, y, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (z @ z) - 0.5 * logdet - 0.5 * y.size * _LOG_2PI


def _query_covariances(sources, target, theta, query):
    """Cross-covariances of training points vs queries, plus the prior."""
    us = []
    for i, src in enumerate(sources):
        u = cross_cov_matrix(
            src.inputs, query, theta.source_kernels[i], theta.transfer_kernels[i]
        )
        if theta.is_full:
            u = u + cross_cov_matrix(
                src.inputs, query, theta.shared_kernels[i], theta.shared_kernels[-1]
            )
        us.append(u)

    w = np.zeros((target.n, query.shape[0]))
    for k in theta.transfer_kernels:
        w += auto_cov_matrix(target.inputs, query, k)
    w += auto_cov_matrix(target.inputs, query, theta.target_kernel)
    prior = sum(k.alpha**2 for k in theta.transfer_kernels)
    prior += theta.target_kernel.alpha**2
    if theta.is_full:
        w += cross_cov_matrix(
            target.inputs, query, theta.shared_kernels[-1], theta.shared_kernels[-1]
        )
        prior += theta.shared_kernels[-1].alpha ** 2
    return us, w, prior


def predict(bundle, data, theta, query_points, include_noise=False):
    """Posterior mean and variance of the target at ``query_points``.

    Uses the same block solves as the likelihood; the dense joint matrix is
    never formed for the block structure.  ``include_noise`` adds the target
    noise variance to the returned variances.
    """
    sources, target = _split_data(data)
    query = np.atleast_2d(np.asarray(query_points, dtype=float))
    if query.shape[1] != target.d:
        raise DataError(
            f"query dimension {query.shape[1]} does not match data dimension {target.d}"
        )
    us, w, prior = _query_covariances(sources, target, theta, query)

    if bundle.structure == "full":
        kstar = np.vstack(us + [w])
        y = stack_responses(data)
        L = bundle.dense_factorization
        alpha = cho_solve((L, True), y)
        mean = kstar.T @ alpha
        half = solve_triangular(L, kstar, lower=True)
        reduction = np.sum(half * half, axis=0)
    else:
        yt = target.responses
        ay = np.zeros_like(yt)
        quad_u = np.zeros(query.shape[0])
        au = np.zeros((target.n, query.shape[0]))
        for i, (L, W, u) in enumerate(
            zip(bundle.source_factorizations, bundle._wsolves, us)
        ):
            zi = solve_triangular(L, sources[i].responses, lower=True)
            ay += W.T @ zi
            S = solve_triangular(L, u, lower=True)
            quad_u += np.sum(S * S, axis=0)
            au += W.T @ S
        LB = bundle.schur_factorization
        beta = cho_solve((LB, True), yt - ay)

        # mean: u_i' C_ii^-1 (y_i - C_it beta) per source, plus the target part
        mean = w.T @ beta
        for i, src in enumerate(sources):
            L = bundle.source_factorizations[i]
            zi = cho_solve((L, True), src.responses - bundle.cross_blocks[i] @ beta)
            mean += us[i].T @ zi
        g = au - w
        T = solve_triangular(LB, g, lower=True)
        reduction = quad_u + np.sum(T * T, axis=0)

    variance = np.maximum(prior - reduction, 0.0)
    if include_noise:
        variance = variance + theta.sigmas[-1] ** 2
    return PredictiveDistribution(
        mean=mean, variance=variance, includes_noise=include_noise
    )


def marginalize_sources(data, theta, drop_set):
    """Remove sources (and their kernels) from the model.

    With the dropped sources' transfer scales at zero this is exact: the
    reduced model's predictive distribution matches the full one.  Dropping
    every source leaves a single-output model on the target.
    """
    sources, target = _split_data(data)
    drop = set(drop_set)
    bad = drop - set(range(len(sources)))
    if bad:
        raise DataError(f"drop_set contains invalid source indices: {sorted(bad)}")
    keep = [i for i in range(len(sources)) if i not in drop]

    new_data = [sources[i] for i in keep] + [target]
    sigma_idx = keep + [len(sources)]
    shared = None
    if theta.shared_kernels is not None:
        shared = [theta.shared_kernels[i] for i in keep] + [theta.shared_kernels[-1]]
    new_theta = Hyperparameters(
        source_kernels=[theta.source_kernels[i] for i in keep],
        transfer_kernels=[theta.transfer_kernels[i] for i in keep],
        target_kernel=theta.target_kernel,
        log_sigmas=theta.log_sigmas[sigma_idx],
        shared_kernels=shared,
    )
    return new_data, new_theta
