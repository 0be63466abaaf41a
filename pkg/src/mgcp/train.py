"""Regularized maximum-likelihood training.

The objective is the Gaussian log-likelihood minus a penalty on the transfer
scales: a Huber-smoothed L1 penalty for the sparse model, or a smoothed
group-L1 over (shared, transfer) scale pairs for the full-covariance variant.
Gradients are analytic and assembled blockwise, touching only the covariance
blocks each parameter enters, which keeps the per-iteration cost at
O(q n^3 + n_t^3) for the sparse structure.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import covblock
from .covblock import DEFAULT_JITTER_SCALE, OutputData, _split_data
from .exceptions import ConfigError, DataError, OptimizationError
from .kernels import Hyperparameters, _sq_diffs
from .rng import derive_rng, derive_seed

__all__ = [
    "TrainConfig",
    "FitResult",
    "huber_l1",
    "group_l1_smooth",
    "penalized_objective",
    "objective_gradient",
    "fit",
    "predict_fit",
    "select_gamma",
    "standardize_outputs",
]

PENALTY_MODES = ("l1-transfer", "group-l1-rf", "none")


@dataclass
class TrainConfig:
    """Controls for one training run.

    ``penalty_mode`` selects both the penalty and the covariance structure:
    "l1-transfer" and "none" use the sparse structure (independent source
    processes); "group-l1-rf" uses the full structure with a shared latent
    process and penalizes each source's (shared, transfer) scale pair as a
    group.
    """

    gamma: float = 0.0
    eta: float = 1e-5
    restarts: int = 5
    max_iterations: int = 300
    convergence_tol: float = 1e-5
    seed: int = 0
    penalty_mode: str = "l1-transfer"
    cv_folds: int = 5
    gamma_grid: tuple = ()
    jitter: float = None
    selection_threshold: float = 1e-2
    standardize: bool = True
    # optional screening phase: draw extra random starts, advance each a
    # short way, and continue only the best `restarts` of them
    screen_draws: int = None
    screen_iterations: int = 150
    # record the objective at every accepted iterate (costs one extra
    # evaluation per iteration; meant for diagnostics and tests)
    track_progress: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        if not 0 < self.eta <= 1e-2:
            raise ConfigError("eta must lie in (0, 1e-2]")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.penalty_mode not in PENALTY_MODES:
            raise ConfigError(f"penalty_mode must be one of {PENALTY_MODES}")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.screen_draws is not None and self.screen_draws < self.restarts:
            raise ConfigError("screen_draws must be at least restarts")
        if self.screen_iterations < 1:
            raise ConfigError("screen_iterations must be positive")

    @property
    def full_covariance(self):
        return self.penalty_mode == "group-l1-rf"


@dataclass
class FitResult:
    """Best restart of a training run.

    ``theta_hat`` lives in the standardized-response space when
    ``standardize`` was on; ``standardizers`` holds the per-output
    (mean, scale) pairs needed to map predictions back.
    """

    theta_hat: Hyperparameters
    objective: float
    selected_sources: tuple
    per_restart_objectives: list
    diagnostics: dict
    standardizers: list
    config: TrainConfig = field(repr=False, default=None)


def huber_l1(alphas, gamma, eta):
    """Huber-smoothed L1 penalty: quadratic within ``eta`` of zero.

    ``gamma * sum_i [ a_i^2 / (2 eta)  if |a_i| <= eta  else |a_i| - eta/2 ]``
    """
    if eta <= 0:
        raise ConfigError("eta must be positive")
    a = np.abs(np.asarray(alphas, dtype=float))
    per_term = np.where(a <= eta, a * a / (2.0 * eta), a - eta / 2.0)
    return gamma * float(np.sum(per_term))


def _huber_grad(alphas, gamma, eta):
    a = np.asarray(alphas, dtype=float)
    return gamma * np.where(np.abs(a) <= eta, a / eta, np.sign(a))


def group_l1_smooth(shared_alphas, transfer_alphas, gamma, eta):
    """Smoothed group penalty ``gamma * sum_i (sqrt(a0i^2 + ait^2 + eta^2) - eta)``."""
    a0 = np.asarray(shared_alphas, dtype=float)
    at = np.asarray(transfer_alphas, dtype=float)
    return gamma * float(np.sum(np.sqrt(a0 * a0 + at * at + eta * eta) - eta))


def standardize_outputs(data):
    """Standardize each output's responses to zero mean / unit variance.

    Returns the transformed outputs and a (mean, scale) pair per output;
    a near-constant response keeps scale 1 to stay invertible.
    """
    out, scalers = [], []
    for o in data:
        mean = float(np.mean(o.responses))
        scale = float(np.std(o.responses))
        if scale < 1e-12:
            scale = 1.0
        out.append(
            OutputData((o.inputs), (o.responses - mean) / scale, role=o.role)
        )
        scalers.append((mean, scale))
    return out, scalers


# Box bounds are numerical guards only: they stop log parameters from
# drifting into overflow territory along flat likelihood directions, far
# outside any value the data could support.
_ALPHA_BOUND = 1e3
_LOG_LAMBDA_BOUND = 12.0
_LOG_SIGMA_BOUNDS = (-12.0, 6.0)


def _parameter_bounds(q, d, full):
    kernel = [(-_ALPHA_BOUND, _ALPHA_BOUND)] + [
        (-_LOG_LAMBDA_BOUND, _LOG_LAMBDA_BOUND)
    ] * d
    bounds = kernel * (2 * q + 1)
    bounds += [_LOG_SIGMA_BOUNDS] * (q + 1)
    if full:
        bounds += kernel * (q + 1)
    return bounds


class _Problem:
    """Pairwise squared differences and responses, fixed across iterations."""

    def __init__(self, data, full):
        sources, target = _split_data(data)
        self.sources = sources
        self.target = target
        self.full = full
        self.q = len(sources)
        self.d = target.d
        self.sq_ss = [_sq_diffs(s.inputs, s.inputs) for s in sources]
        self.sq_st = [_sq_diffs(s.inputs, target.inputs) for s in sources]
        self.sq_tt = _sq_diffs(target.inputs, target.inputs)
        self.sq_cross = {}
        if full:
            for i in range(self.q):
                for j in range(i + 1, self.q):
                    self.sq_cross[(i, j)] = _sq_diffs(
                        sources[i].inputs, sources[j].inputs
                    )
        self.ys = [s.responses for s in sources]
        self.yt = target.responses
        self.n_total = sum(s.n for s in sources) + target.n
        self.sizes = [s.n for s in sources] + [target.n]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])


def _cross_parts(lam1, lam2, sq, d):
    """Scale-free cross covariance matrix and its length-scale sum."""
    s = lam1 + lam2
    amp = (
        2.0 ** (d / 2.0)
        * np.prod(lam1) ** 0.25
        * np.prod(lam2) ** 0.25
        / np.sqrt(np.prod(s))
    )
    return amp * np.exp(-0.5 * (sq @ (1.0 / s))), s


def _cross_loglam_grad(R, sq, lam, s, side_sum):
    """Accumulate d(log U)/d(log lam) factors against an R = Q*C matrix.

    For the closed-form cross covariance, d log U / d log lam_k =
    1/4 - lam_k/(2 s_k) + lam_k v_k^2 / (2 s_k^2) with s = lam1 + lam2.
    ``side_sum`` is sum(R); returns the (d,) gradient block.
    """
    t = np.tensordot(R, sq, axes=([0, 1], [0, 1]))
    return side_sum * (0.25 - lam / (2.0 * s)) + (lam / (2.0 * s * s)) * t


def _evaluate(problem, theta, config, need_grad):
    """Penalized objective (and gradient) at ``theta``.

    Returns (objective, grad_or_None).  Raises numpy LinAlgError upward if
    the covariance cannot be factorized at the working jitter so the caller
    can decide between escalation and failure.
    """
    q, d = problem.q, problem.d
    lam_own = [k.lambdas for k in theta.source_kernels]
    lam_tr = [k.lambdas for k in theta.transfer_kernels]
    lam_tt = theta.target_kernel.lambdas
    a_own = np.array([k.alpha for k in theta.source_kernels])
    a_tr = theta.transfer_alphas()
    a_tt = theta.target_kernel.alpha
    sig2 = theta.sigmas**2
    full = theta.is_full
    if full:
        lam_sh = [k.lambdas for k in theta.shared_kernels]
        a_sh = np.array([k.alpha for k in theta.shared_kernels])

    # -- blocks ------------------------------------------------------------
    E = [np.exp(-0.25 * (problem.sq_ss[i] @ (1.0 / lam_own[i]))) for i in range(q)]
    U, s_st = [], []
    for i in range(q):
        u, s = _cross_parts(lam_own[i], lam_tr[i], problem.sq_st[i], d)
        U.append(u)
        s_st.append(s)
    F = [np.exp(-0.25 * (problem.sq_tt @ (1.0 / lam_tr[j]))) for j in range(q)]
    Ft = np.exp(-0.25 * (problem.sq_tt @ (1.0 / lam_tt)))

    if full:
        E0 = [np.exp(-0.25 * (problem.sq_ss[i] @ (1.0 / lam_sh[i]))) for i in range(q)]
        F0t = np.exp(-0.25 * (problem.sq_tt @ (1.0 / lam_sh[-1])))
        U0t, s0t = [], []
        for i in range(q):
            u, s = _cross_parts(lam_sh[i], lam_sh[-1], problem.sq_st[i], d)
            U0t.append(u)
            s0t.append(s)
        U0c, s0c = {}, {}
        for (i, j), sq in problem.sq_cross.items():
            u, s = _cross_parts(lam_sh[i], lam_sh[j], sq, d)
            U0c[(i, j)] = u
            s0c[(i, j)] = s

    c_ss = []
    for i in range(q):
        cii = a_own[i] ** 2 * E[i]
        if full:
            cii = cii + a_sh[i] ** 2 * E0[i]
        cii[np.diag_indices_from(cii)] += sig2[i]
        c_ss.append(cii)
    c_st = [a_own[i] * a_tr[i] * U[i] for i in range(q)]
    if full:
        for i in range(q):
            c_st[i] = c_st[i] + a_sh[i] * a_sh[-1] * U0t[i]
    c_tt = a_tt**2 * Ft
    for j in range(q):
        c_tt = c_tt + a_tr[j] ** 2 * F[j]
    if full:
        c_tt = c_tt + a_sh[-1] ** 2 * F0t
    c_tt[np.diag_indices_from(c_tt)] += sig2[-1]

    jit = config.jitter
    if jit is None:
        mean_diag = (
            sum(np.trace(b) for b in c_ss) + np.trace(c_tt)
        ) / problem.n_total
        jit = DEFAULT_JITTER_SCALE * max(mean_diag, np.finfo(float).tiny)
    for b in c_ss:
        b[np.diag_indices_from(b)] += jit
    c_tt[np.diag_indices_from(c_tt)] += jit

    # -- factorization and likelihood ---------------------------------------
    if full:
        c_cross = {k: a_sh[k[0]] * a_sh[k[1]] * U0c[k] for k in U0c}
        C = covblock.dense_from_blocks(c_ss, c_st, c_tt, c_cross)
        Ld = cholesky(C, lower=True)
        y = np.concatenate(problem.ys + [problem.yt])
        alpha = cho_solve((Ld, True), y)
        logdet = 2.0 * np.sum(np.log(np.diag(Ld)))
        loglik = -0.5 * (y @ alpha) - 0.5 * logdet - 0.5 * problem.n_total * np.log(
            2 * np.pi
        )
    else:
        Ls, Vs, ay = [], [], np.zeros(problem.target.n)
        quad_s = 0.0
        logdet = 0.0
        B = c_tt.copy()
        inv_y = []
        for i in range(q):
            L = cholesky(c_ss[i], lower=True)
            V = cho_solve((L, True), c_st[i])
            B -= c_st[i].T @ V
            ciy = cho_solve((L, True), problem.ys[i])
            quad_s += problem.ys[i] @ ciy
            ay += V.T @ problem.ys[i]
            logdet += 2.0 * np.sum(np.log(np.diag(L)))
            Ls.append(L)
            Vs.append(V)
            inv_y.append(ciy)
        LB = cholesky(B, lower=True)
        at = cho_solve((LB, True), problem.yt - ay)
        logdet += 2.0 * np.sum(np.log(np.diag(LB)))
        quad = quad_s + (problem.yt - ay) @ at
        loglik = -0.5 * quad - 0.5 * logdet - 0.5 * problem.n_total * np.log(2 * np.pi)

    # -- penalty -------------------------------------------------------------
    if config.penalty_mode == "l1-transfer":
        penalty = huber_l1(a_tr, config.gamma, config.eta)
    elif config.penalty_mode == "group-l1-rf":
        penalty = group_l1_smooth(a_sh[:q], a_tr, config.gamma, config.eta)
    else:
        penalty = 0.0
    objective = loglik - penalty

    if not need_grad:
        return objective, None

    # -- posterior blocks for the gradient -----------------------------------
    if full:
        P = cho_solve((Ld, True), np.eye(problem.n_total))
        off = problem.offsets
        a_blocks = [alpha[off[i] : off[i + 1]] for i in range(q)]
        a_t = alpha[off[-2] :]
        P_ss = [P[off[i] : off[i + 1], off[i] : off[i + 1]] for i in range(q)]
        P_st = [P[off[i] : off[i + 1], off[-2] :] for i in range(q)]
        P_tt = P[off[-2] :, off[-2] :]
    else:
        P_tt = cho_solve((LB, True), np.eye(problem.target.n))
        a_blocks = [inv_y[i] - Vs[i] @ at for i in range(q)]
        a_t = at
        P_st = [-Vs[i] @ P_tt for i in range(q)]
        P_ss = [
            cho_solve((Ls[i], True), np.eye(problem.sizes[i])) + Vs[i] @ P_tt @ Vs[i].T
            for i in range(q)
        ]

    # dL/dtheta_k = [a' dC a - sum(P o dC)] / 2 over the touched blocks; for
    # off-diagonal blocks the symmetric pair doubles both terms, cancelling
    # the 1/2.
    Q_ss = [np.outer(a_blocks[i], a_blocks[i]) - P_ss[i] for i in range(q)]
    Q_st = [np.outer(a_blocks[i], a_t) - P_st[i] for i in range(q)]
    Q_tt = np.outer(a_t, a_t) - P_tt

    grad = np.zeros(theta.flatten().shape)
    pos = 0

    def put(val):
        nonlocal pos
        grad[pos] = val
        pos += 1

    def put_vec(vec):
        nonlocal pos
        grad[pos : pos + d] = vec
        pos += d

    for i in range(q):
        QE = Q_ss[i] * E[i]
        R_st = Q_st[i] * (a_own[i] * a_tr[i] * U[i])
        su = float(np.sum(Q_st[i] * U[i]))
        sum_R = float(np.sum(R_st))
        # own scale
        put(a_own[i] * np.sum(QE) + a_tr[i] * su)
        # own log length-scales: auto term + cross term
        g_auto = (a_own[i] ** 2 / (8.0 * lam_own[i])) * np.tensordot(
            QE, problem.sq_ss[i], axes=([0, 1], [0, 1])
        )
        g_cross = _cross_loglam_grad(
            R_st, problem.sq_st[i], lam_own[i], s_st[i], sum_R
        )
        put_vec(g_auto + g_cross)
        # transfer scale: cross block + its own term in the target block
        QF = Q_tt * F[i]
        put(a_own[i] * su + a_tr[i] * np.sum(QF))
        # transfer log length-scales
        g_cross = _cross_loglam_grad(R_st, problem.sq_st[i], lam_tr[i], s_st[i], sum_R)
        g_tt = (a_tr[i] ** 2 / (8.0 * lam_tr[i])) * np.tensordot(
            QF, problem.sq_tt, axes=([0, 1], [0, 1])
        )
        put_vec(g_cross + g_tt)

    QFt = Q_tt * Ft
    put(a_tt * np.sum(QFt))
    put_vec(
        (a_tt**2 / (8.0 * lam_tt))
        * np.tensordot(QFt, problem.sq_tt, axes=([0, 1], [0, 1]))
    )
    # log noise deviations: dC/dlog sigma = 2 sigma^2 on the block diagonal
    for i in range(q):
        put(sig2[i] * (a_blocks[i] @ a_blocks[i] - np.trace(P_ss[i])))
    put(sig2[-1] * (a_t @ a_t - np.trace(P_tt)))

    if full:
        Q_cross = {
            (i, j): np.outer(a_blocks[i], a_blocks[j])
            - P[off[i] : off[i + 1], off[j] : off[j + 1]]
            for (i, j) in U0c
        }
        for i in range(q):
            QE0 = Q_ss[i] * E0[i]
            g_alpha = a_sh[i] * np.sum(QE0)
            g_lam = (a_sh[i] ** 2 / (8.0 * lam_sh[i])) * np.tensordot(
                QE0, problem.sq_ss[i], axes=([0, 1], [0, 1])
            )
            # source-source cross blocks through the shared process; blocks
            # are stored for i < j, so orient them toward source i
            for j in range(q):
                if i == j:
                    continue
                key = (min(i, j), max(i, j))
                if i < j:
                    u_ij, sq, Qij = U0c[key], problem.sq_cross[key], Q_cross[key]
                else:
                    u_ij = U0c[key].T
                    sq = np.swapaxes(problem.sq_cross[key], 0, 1)
                    Qij = Q_cross[key].T
                Rij = Qij * (a_sh[i] * a_sh[j] * u_ij)
                g_alpha += a_sh[j] * float(np.sum(Qij * u_ij))
                g_lam += _cross_loglam_grad(
                    Rij, sq, lam_sh[i], s0c[key], float(np.sum(Rij))
                )
            # source-target block through the shared process
            R0 = Q_st[i] * (a_sh[i] * a_sh[-1] * U0t[i])
            g_alpha += a_sh[-1] * float(np.sum(Q_st[i] * U0t[i]))
            g_lam += _cross_loglam_grad(
                R0, problem.sq_st[i], lam_sh[i], s0t[i], float(np.sum(R0))
            )
            put(g_alpha)
            put_vec(g_lam)
        # shared target kernel
        QF0 = Q_tt * F0t
        g_alpha = a_sh[-1] * np.sum(QF0)
        g_lam = (a_sh[-1] ** 2 / (8.0 * lam_sh[-1])) * np.tensordot(
            QF0, problem.sq_tt, axes=([0, 1], [0, 1])
        )
        for i in range(q):
            R0 = Q_st[i] * (a_sh[i] * a_sh[-1] * U0t[i])
            g_alpha += a_sh[i] * float(np.sum(Q_st[i] * U0t[i]))
            g_lam += _cross_loglam_grad(
                R0, problem.sq_st[i], lam_sh[-1], s0t[i], float(np.sum(R0))
            )
        put(g_alpha)
        put_vec(g_lam)

    # penalty gradient on the scale entries
    if config.penalty_mode == "l1-transfer":
        dpen = _huber_grad(a_tr, config.gamma, config.eta)
        grad[theta.transfer_alpha_indices()] -= dpen
    elif config.penalty_mode == "group-l1-rf":
        norms = np.sqrt(a_sh[:q] ** 2 + a_tr**2 + config.eta**2)
        grad[theta.transfer_alpha_indices()] -= config.gamma * a_tr / norms
        grad[theta.shared_alpha_indices()] -= config.gamma * a_sh[:q] / norms

    return objective, grad


def _theta_from_config(data, theta_or_vec, config):
    sources, target = _split_data(data)
    if isinstance(theta_or_vec, Hyperparameters):
        return theta_or_vec
    return Hyperparameters.unflatten(
        theta_or_vec, len(sources), target.d, full=config.full_covariance
    )


def _penalty(theta, config):
    if config.penalty_mode == "l1-transfer":
        return huber_l1(theta.transfer_alphas(), config.gamma, config.eta)
    if config.penalty_mode == "group-l1-rf":
        return group_l1_smooth(
            theta.shared_alphas(), theta.transfer_alphas(), config.gamma, config.eta
        )
    return 0.0


def penalized_objective(data, theta, config):
    """Log-likelihood minus the configured penalty at ``theta``.

    Works on the data exactly as given; response standardization is a
    concern of :func:`fit`, not of this function.
    """
    theta = _theta_from_config(data, theta, config)
    bundle = covblock.assemble_covariance(data, theta, jitter=config.jitter)
    loglik = covblock.log_likelihood(bundle, covblock.stack_responses(data))
    return loglik - _penalty(theta, config)


def objective_gradient(data, theta, config):
    """Analytic gradient of :func:`penalized_objective` in flat-vector order."""
    theta = _theta_from_config(data, theta, config)
    problem = _Problem(data, theta.is_full)
    try:
        _, grad = _evaluate(problem, theta, config, need_grad=True)
    except np.linalg.LinAlgError as err:
        raise covblock.IndefiniteCovarianceError(str(err)) from err
    return grad


def fit(data, config):
    """Multi-start quasi-Newton maximization of the penalized likelihood.

    Every restart draws all raw parameter values uniformly on [0, 1], runs
    L-BFGS-B on the smoothed objective with analytic gradients until the
    projected gradient max-norm drops below ``convergence_tol`` or
    ``max_iterations`` is hit, and the best restart wins.

    Raises
    ------
    OptimizationError
        If every restart fails to produce a finite objective.
    """
    if not isinstance(config, TrainConfig):
        raise ConfigError("config must be a TrainConfig")
    sources, target = _split_data(data)
    q, d = len(sources), target.d

    if config.standardize:
        work_data, scalers = standardize_outputs(data)
    else:
        work_data, scalers = list(data), [(0.0, 1.0)] * len(data)
    problem = _Problem(work_data, config.full_covariance)

    def neg_value_and_grad(vec):
        theta = Hyperparameters.unflatten(vec, q, d, full=config.full_covariance)
        try:
            value, grad = _evaluate(problem, theta, config, need_grad=True)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros_like(vec)
        if not np.isfinite(value):
            return np.inf, np.zeros_like(vec)
        return -value, -grad

    bounds = _parameter_bounds(q, d, config.full_covariance)

    def run_lbfgs(x0, maxiter, path=None):
        callback = None
        if path is not None:
            callback = lambda xk: path.append(-neg_value_and_grad(xk)[0])
        return minimize(
            neg_value_and_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=callback,
            options={
                "maxiter": maxiter,
                "gtol": config.convergence_tol,
                "ftol": 1e-10,
                "maxcor": 25,
            },
        )

    n_draws = config.screen_draws or config.restarts
    starts = []
    for r in range(n_draws):
        rng = derive_rng(config.seed, "restart", r)
        theta0 = Hyperparameters.random_init(q, d, rng, full=config.full_covariance)
        starts.append(theta0.flatten())

    screen_seconds = 0.0
    if n_draws > config.restarts:
        t0 = time.perf_counter()
        screened = []
        for x0 in starts:
            res = run_lbfgs(x0, config.screen_iterations)
            value = -float(res.fun)
            screened.append((value if np.isfinite(value) else -np.inf, res.x))
        # continue the most promising starts only (ties: lower index)
        order = sorted(
            range(n_draws), key=lambda i: (-screened[i][0], i)
        )[: config.restarts]
        starts = [screened[i][1] for i in sorted(order)]
        screen_seconds = time.perf_counter() - t0

    best = None
    per_restart = []
    diag = {
        "iterations": [],
        "grad_norms": [],
        "statuses": [],
        "restart_seconds": [],
        "screen_seconds": screen_seconds,
        "objective_paths": [] if config.track_progress else None,
    }
    for x0 in starts:
        path = [] if config.track_progress else None
        t0 = time.perf_counter()
        res = run_lbfgs(x0, config.max_iterations, path=path)
        if config.track_progress:
            diag["objective_paths"].append(path)
        diag["restart_seconds"].append(time.perf_counter() - t0)
        diag["iterations"].append(int(res.nit))
        diag["grad_norms"].append(float(np.max(np.abs(res.jac))))
        diag["statuses"].append(str(res.message))
        value = -float(res.fun)
        per_restart.append(value if np.isfinite(value) else -np.inf)
        if np.isfinite(value) and (best is None or value > best[0]):
            best = (value, res.x.copy())

    if best is None:
        raise OptimizationError(
            "all restarts failed to reach a finite objective", diagnostics=diag
        )

    theta_hat = Hyperparameters.unflatten(best[1], q, d, full=config.full_covariance)
    # store the objective from the public evaluation path so a fresh
    # penalized_objective call on the fitted data reproduces it exactly
    objective = penalized_objective(work_data, theta_hat, config)
    alphas = np.abs(theta_hat.transfer_alphas())
    selected = tuple(
        int(i) for i in range(q) if alphas[i] > config.selection_threshold
    )
    return FitResult(
        theta_hat=theta_hat,
        objective=float(objective),
        selected_sources=selected,
        per_restart_objectives=per_restart,
        diagnostics=diag,
        standardizers=scalers,
        config=config,
    )


def predict_fit(data, result, query_points, include_noise=False):
    """Predict with a :class:`FitResult` on the original response scale."""
    scalers = result.standardizers
    work = [
        OutputData(o.inputs, (o.responses - m) / s, role=o.role)
        for o, (m, s) in zip(data, scalers)
    ]
    bundle = covblock.assemble_covariance(
        work, result.theta_hat, jitter=result.config.jitter if result.config else None
    )
    pred = covblock.predict(
        bundle, work, result.theta_hat, query_points, include_noise=include_noise
    )
    m_t, s_t = scalers[-1]
    return covblock.PredictiveDistribution(
        mean=pred.mean * s_t + m_t,
        variance=pred.variance * s_t**2,
        includes_noise=include_noise,
    )


def select_gamma(data, config):
    """Pick the penalty weight by k-fold cross-validation on the target.

    Sources always stay fully in the training folds; only the target
    observations are split.  Returns the grid value minimizing the mean
    held-out MAE, ties broken toward the larger (sparser) value, along with
    the per-gamma table.
    """
    if not config.gamma_grid:
        raise ConfigError("gamma_grid must be nonempty")
    sources, target = _split_data(data)
    if target.n < config.cv_folds:
        raise ConfigError(
            f"cv_folds={config.cv_folds} exceeds target size {target.n}"
        )

    order = derive_rng(config.seed, "cv-folds").permutation(target.n)
    folds = np.array_split(order, config.cv_folds)

    table = []
    for gamma in sorted(set(float(g) for g in config.gamma_grid)):
        fold_maes = []
        for k, held in enumerate(folds):
            mask = np.ones(target.n, dtype=bool)
            mask[held] = False
            target_k = OutputData(
                target.inputs[mask], target.responses[mask], role=target.role
            )
            cfg_k = replace(
                config,
                gamma=gamma,
                gamma_grid=(),
                seed=derive_seed(config.seed, "cv-fit", k),
            )
            result = fit(sources + [target_k], cfg_k)
            pred = predict_fit(
                sources + [target_k], result, target.inputs[held]
            )
            fold_maes.append(
                float(np.mean(np.abs(pred.mean - target.responses[held])))
            )
        table.append({"gamma": gamma, "cv_mae": float(np.mean(fold_maes))})

    best = min(table, key=lambda row: (row["cv_mae"], -row["gamma"]))
    return best["gamma"], table
