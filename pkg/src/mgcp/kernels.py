"""Gaussian smoothing kernels and the covariances they induce by convolution.

Each output is modelled as a white-noise process smoothed by an output-specific
Gaussian kernel.  Because the kernels are Gaussian with diagonal length-scale
matrices, convolving two of them against a shared white-noise process has a
closed form, implemented here both pointwise (``cov_cross`` and friends) and
as pairwise matrices for covariance assembly.  A slow quadrature oracle of the
defining integral is provided for testing the closed forms.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

__all__ = [
    "KernelParams",
    "Hyperparameters",
    "smoothing_kernel_eval",
    "cov_cross",
    "cov_auto_source",
    "cov_auto_target",
    "cov_quadrature_oracle",
    "cross_cov_matrix",
    "auto_cov_matrix",
]


@dataclass
class KernelParams:
    """Scale and log length-scales of one Gaussian smoothing kernel.

    Parameters
    ----------
    alpha : float
        Signed scale.  May be any finite real; regularization acts on |alpha|.
    log_lambda : ndarray, shape (d,)
        Logs of the diagonal entries of the length-scale matrix.  Stored in
        log space so positivity needs no constrained optimization.
    """

    alpha: float
    log_lambda: np.ndarray

    def __post_init__(self):
        self.log_lambda = np.atleast_1d(np.asarray(self.log_lambda, dtype=float))
        if self.log_lambda.ndim != 1:
            raise DataError("log_lambda must be a 1-d vector")
        if not np.all(np.isfinite(self.log_lambda)) or not np.isfinite(self.alpha):
            raise DataError("kernel parameters must be finite")

    @property
    def d(self):
        return self.log_lambda.shape[0]

    @property
    def lambdas(self):
        """Length-scale diagonal, strictly positive."""
        return np.exp(self.log_lambda)


def _check_dim(x, k, name="x"):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (k.d,):
        raise DataError(f"{name} has dimension {x.shape}, kernel expects ({k.d},)")
    return x


def smoothing_kernel_eval(x, k):
    """Evaluate the Gaussian smoothing kernel at ``x``.

    Returns ``alpha * pi^(-d/4) * |Lambda|^(-1/4) * exp(-x' Lambda^-1 x / 2)``.
    """
    x = _check_dim(x, k)
    lam = k.lambdas
    norm = np.pi ** (-k.d / 4.0) * np.prod(lam) ** (-0.25)
    return k.alpha * norm * np.exp(-0.5 * np.sum(x * x / lam))


def cov_cross(v, k1, k2):
    """Closed-form covariance of two outputs smoothed from one latent process.

    For kernels ``g1=(alpha1, Lambda1)`` and ``g2=(alpha2, Lambda2)`` and lag
    ``v = x - x'``::

        2^(d/2) a1 a2 |L1|^(1/4) |L2|^(1/4) |L1+L2|^(-1/2)
            * exp(-v' (L1+L2)^-1 v / 2)

    Used for source-target blocks (g1 = the source's own kernel, g2 = its
    transfer kernel) and, in the full-covariance variant, for source-source
    blocks through the shared-process kernels.
    """
    if k1.d != k2.d:
        raise DataError("kernels must share the input dimension")
    v = _check_dim(v, k1, "v")
    l1, l2 = k1.lambdas, k2.lambdas
    s = l1 + l2
    amp = (
        2.0 ** (k1.d / 2.0)
        * k1.alpha
        * k2.alpha
        * np.prod(l1) ** 0.25
        * np.prod(l2) ** 0.25
        / np.sqrt(np.prod(s))
    )
    return amp * np.exp(-0.5 * np.sum(v * v / s))


def cov_auto_source(v, k):
    """Auto-covariance of a source output: ``alpha^2 exp(-v' Lambda^-1 v / 4)``."""
    v = _check_dim(v, k, "v")
    return k.alpha**2 * np.exp(-0.25 * np.sum(v * v / k.lambdas))


def cov_auto_target(v, transfer_kernels):
    """Auto-covariance of the target output.

    The target is a sum of independent smoothed processes, one per source
    plus its own, so its auto-covariance is the sum of the per-kernel
    auto-covariances: ``sum_j alpha_j^2 exp(-v' Lambda_j^-1 v / 4)``.
    """
    if not transfer_kernels:
        raise DataError("cov_auto_target requires at least one kernel")
    return sum(cov_auto_source(v, k) for k in transfer_kernels)


# Quadrature oracle: window half-width in units of the largest per-dimension
# std dev; Gaussian mass beyond 8 std devs is < 1e-14.
_ORACLE_HALFWIDTH = 8.0
_ORACLE_POINTS = 4001


def cov_quadrature_oracle(v, k1, k2):
    """Numerically integrate ``int g1(u) g2(u - v) du`` (test oracle, d <= 2).

    Simpson quadrature on a tensor grid of ``4001`` points per axis covering
    ``[min(0, v_j), max(0, v_j)]`` extended by 8 standard deviations of the
    wider kernel.  Both the integrand and the grid factorize per axis
    (diagonal length-scale matrices), so the tensor-rule value is computed
    as a product of one-dimensional Simpson integrals.
    """
    from scipy.integrate import simpson

    if k1.d != k2.d:
        raise DataError("kernels must share the input dimension")
    if k1.d > 2:
        raise DataError("quadrature oracle supports d <= 2 only")
    v = _check_dim(v, k1, "v")
    l1, l2 = k1.lambdas, k2.lambdas

    d = k1.d
    norm = (
        k1.alpha
        * k2.alpha
        * np.pi ** (-d / 2.0)
        * np.prod(l1) ** (-0.25)
        * np.prod(l2) ** (-0.25)
    )
    value = norm
    for j in range(d):
        width = _ORACLE_HALFWIDTH * np.sqrt(max(l1[j], l2[j]))
        lo = min(0.0, v[j]) - width
        hi = max(0.0, v[j]) + width
        u = np.linspace(lo, hi, _ORACLE_POINTS)
        integrand = np.exp(-0.5 * u * u / l1[j] - 0.5 * (u - v[j]) ** 2 / l2[j])
        value *= simpson(integrand, x=u)
    return value


def _sq_diffs(x1, x2):
    """Per-dimension squared differences, shape (n1, n2, d)."""
    diff = x1[:, None, :] - x2[None, :, :]
    return diff * diff


def cross_cov_matrix(x1, x2, k1, k2, sq=None):
    """Pairwise :func:`cov_cross` values, shape ``(n1, n2)``.

    ``sq`` optionally carries precomputed squared differences from
    :func:`_sq_diffs` so repeated evaluations at fixed inputs skip them.
    """
    l1, l2 = k1.lambdas, k2.lambdas
    s = l1 + l2
    amp = (
        2.0 ** (k1.d / 2.0)
        * k1.alpha
        * k2.alpha
        * np.prod(l1) ** 0.25
        * np.prod(l2) ** 0.25
        / np.sqrt(np.prod(s))
    )
    if sq is None:
        sq = _sq_diffs(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    return amp * np.exp(-0.5 * (sq / s).sum(axis=2))


def auto_cov_matrix(x1, x2, k, sq=None):
    """Pairwise :func:`cov_auto_source` values, shape ``(n1, n2)``."""
    if sq is None:
        sq = _sq_diffs(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    return k.alpha**2 * np.exp(-0.25 * (sq / k.lambdas).sum(axis=2))


@dataclass
class Hyperparameters:
    """All kernel and noise parameters of a model with ``q`` sources.

    Parameters
    ----------
    source_kernels : list of KernelParams, length q
        Each source's own smoothing kernel.
    transfer_kernels : list of KernelParams, length q
        Kernels channelling each source's latent process into the target.
        Their ``alpha`` entries are the sparsity-penalized subset.
    target_kernel : KernelParams
        The target's own smoothing kernel.
    log_sigmas : ndarray, shape (q + 1,)
        Log noise standard deviations, sources first, target last.
    shared_kernels : list of KernelParams, length q + 1, optional
        Kernels for the shared latent process of the full-covariance
        variant (one per source, target last).  ``None`` selects the sparse
        structure with independent source processes.
    """

    source_kernels: list
    transfer_kernels: list
    target_kernel: KernelParams
    log_sigmas: np.ndarray
    shared_kernels: list = None

    def __post_init__(self):
        self.log_sigmas = np.atleast_1d(np.asarray(self.log_sigmas, dtype=float))
        q = len(self.source_kernels)
        if len(self.transfer_kernels) != q:
            raise DataError("need one transfer kernel per source")
        if self.log_sigmas.shape != (q + 1,):
            raise DataError(f"log_sigmas must have length q+1={q + 1}")
        if self.shared_kernels is not None and len(self.shared_kernels) != q + 1:
            raise DataError("shared_kernels must have length q+1 (target last)")
        dims = {k.d for k in self.all_kernels()}
        if len(dims) > 1:
            raise DataError("all kernels must share one input dimension")

    @property
    def q(self):
        return len(self.source_kernels)

    @property
    def d(self):
        return self.target_kernel.d

    @property
    def is_full(self):
        """True when the shared latent process couples the sources."""
        return self.shared_kernels is not None

    @property
    def sigmas(self):
        return np.exp(self.log_sigmas)

    def all_kernels(self):
        ks = list(self.source_kernels) + list(self.transfer_kernels)
        ks.append(self.target_kernel)
        if self.shared_kernels is not None:
            ks.extend(self.shared_kernels)
        return ks

    def transfer_alphas(self):
        """The sparsity subset: transfer scales, one per source."""
        return np.array([k.alpha for k in self.transfer_kernels])

    def shared_alphas(self):
        if self.shared_kernels is None:
            return np.zeros(self.q)
        return np.array([k.alpha for k in self.shared_kernels[: self.q]])

    # -- flat-vector bijection -------------------------------------------
    #
    # Layout: per source [a_own, loglam_own, a_transfer, loglam_transfer],
    # then [a_target, loglam_target], then log_sigmas, then (full variant)
    # per output [a_shared, loglam_shared].

    def flatten(self):
        parts = []
        for own, trans in zip(self.source_kernels, self.transfer_kernels):
            parts.extend([[own.alpha], own.log_lambda, [trans.alpha], trans.log_lambda])
        parts.extend([[self.target_kernel.alpha], self.target_kernel.log_lambda])
        parts.append(self.log_sigmas)
        if self.shared_kernels is not None:
            for k in self.shared_kernels:
                parts.extend([[k.alpha], k.log_lambda])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def unflatten(cls, vec, q, d, full=False):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (cls.n_params(q, d, full),):
            raise DataError(
                f"parameter vector has length {vec.size}, "
                f"expected {cls.n_params(q, d, full)}"
            )
        pos = 0

        def take(m):
            nonlocal pos
            out = vec[pos : pos + m]
            pos += m
            return out

        def kernel():
            return KernelParams(alpha=take(1)[0], log_lambda=take(d).copy())

        source, transfer = [], []
        for _ in range(q):
            source.append(kernel())
            transfer.append(kernel())
        target = kernel()
        log_sigmas = take(q + 1).copy()
        shared = [kernel() for _ in range(q + 1)] if full else None
        return cls(source, transfer, target, log_sigmas, shared)

    @staticmethod
    def n_params(q, d, full=False):
        n = 2 * q * (1 + d) + (1 + d) + (q + 1)
        if full:
            n += (q + 1) * (1 + d)
        return n

    def transfer_alpha_indices(self):
        """Flat-vector indices of the penalized transfer scales."""
        block = 2 * (1 + self.d)
        return np.array(
            [i * block + (1 + self.d) for i in range(self.q)], dtype=int
        )

    def shared_alpha_indices(self):
        """Flat-vector indices of the shared-process source scales (full variant)."""
        if self.shared_kernels is None:
            return np.array([], dtype=int)
        base = self.n_params(self.q, self.d, full=False)
        return base + np.arange(self.q) * (1 + self.d)

    @classmethod
    def random_init(cls, q, d, rng, full=False):
        """Draw a starting point with every raw value uniform on [0, 1].

        Scales, noise deviations, and length-scales are all drawn uniformly
        on [0, 1]; positives are floored at 1e-6 before the log transform.
        """

        def positive():
            return np.log(np.maximum(rng.uniform(0.0, 1.0, size=d), 1e-6))

        def kernel():
            return KernelParams(alpha=rng.uniform(0.0, 1.0), log_lambda=positive())

        source = [kernel() for _ in range(q)]
        transfer = [kernel() for _ in range(q)]
        target = kernel()
        log_sigmas = np.log(np.maximum(rng.uniform(0.0, 1.0, size=q + 1), 1e-6))
        shared = [kernel() for _ in range(q + 1)] if full else None
        return cls(source, transfer, target, log_sigmas, shared)
