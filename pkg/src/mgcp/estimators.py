"""Scikit-learn style estimator over the transfer-learning GP machinery.

``MGCPRegressor`` follows the usual fit/predict contract so it composes
with sklearn model selection and pipelines; source datasets ride along as
a fit parameter since they are data, not hyperparameters.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .covblock import OutputData
from .train import TrainConfig, fit as _fit, predict_fit

__all__ = ["MGCPRegressor"]


class MGCPRegressor(RegressorMixin, BaseEstimator):
    """Gaussian convolution-process regression with source selection.

    Models a target output jointly with any number of source outputs; an
    L1-type penalty on the transfer scales (weight ``gamma``) shrinks away
    uninformative sources.  With no sources this is a single-output GP.

    Parameters
    ----------
    gamma : float
        Penalty weight on the transfer scales; 0 disables regularization.
    eta : float
        Huber smoothing knot of the penalty.
    restarts : int
        Random initializations of the optimizer; the best one wins.
    max_iterations : int
        Iteration cap per restart.
    tol : float
        Gradient max-norm at which a restart stops.
    penalty : {"l1-transfer", "group-l1-rf", "none"}
        Penalty and covariance structure; "group-l1-rf" couples sources
        through a shared latent process and penalizes scale pairs jointly.
    selection_threshold : float
        Sources with fitted |transfer scale| above this (on standardized
        responses) count as selected.
    standardize : bool
        Standardize each output's responses before fitting.
    jitter : float or None
        Fixed diagonal jitter; None picks it relative to the covariance.
    include_noise : bool
        Add the noise variance to predictive variances.
    random_state : int or None
        Seed for initialization draws (None behaves as 0).

    Attributes
    ----------
    result_ : FitResult
    theta_ : Hyperparameters
        Fitted kernel and noise parameters (standardized-response space).
    selected_sources_ : tuple of int
        0-based indices of retained sources.
    """

    def __init__(
        self,
        gamma=0.0,
        eta=1e-5,
        restarts=5,
        max_iterations=300,
        tol=1e-5,
        penalty="l1-transfer",
        selection_threshold=1e-2,
        standardize=True,
        jitter=None,
        include_noise=False,
        random_state=None,
    ):
        self.gamma = gamma
        self.eta = eta
        self.restarts = restarts
        self.max_iterations = max_iterations
        self.tol = tol
        self.penalty = penalty
        self.selection_threshold = selection_threshold
        self.standardize = standardize
        self.jitter = jitter
        self.include_noise = include_noise
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            gamma=self.gamma,
            eta=self.eta,
            restarts=self.restarts,
            max_iterations=self.max_iterations,
            convergence_tol=self.tol,
            seed=0 if self.random_state is None else int(self.random_state),
            penalty_mode=self.penalty,
            jitter=self.jitter,
            selection_threshold=self.selection_threshold,
            standardize=self.standardize,
        )

    def fit(self, X, y, sources=None):
        """Fit on target data ``(X, y)`` plus optional source datasets.

        Parameters
        ----------
        X : array-like (n_t, d)
        y : array-like (n_t,)
        sources : sequence of (X_i, y_i) pairs, optional
            Source observations, already aligned to the target's input
            space (see the dame module for domain adaptation).
        """
        X, y = check_X_y(X, y, ensure_2d=True, y_numeric=True)
        data = []
        for i, (xs, ys) in enumerate(sources or []):
            xs = check_array(xs, ensure_2d=True)
            ys = np.asarray(ys, dtype=float).ravel()
            data.append(OutputData(xs, ys, role=i))
        data.append(OutputData(X, y, role="target"))

        self.result_ = _fit(data, self._config())
        self.theta_ = self.result_.theta_hat
        self.selected_sources_ = self.result_.selected_sources
        self.n_features_in_ = X.shape[1]
        self._train_data = data
        return self

    def predict(self, X, return_std=False):
        """Predictive mean (and optionally standard deviation) at ``X``."""
        check_is_fitted(self, "result_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        pred = predict_fit(
            self._train_data, self.result_, X, include_noise=self.include_noise
        )
        if return_std:
            return pred.mean, np.sqrt(pred.variance)
        return pred.mean
