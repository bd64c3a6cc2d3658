"""Scikit-learn style estimators around the bandwidth selectors."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .grid import build_grid_spec
from .kde import kde_evaluate, kde_score_samples
from .loss import LossConfig
from .optimizer import OptimizerConfig, select_bandwidth_tda
from .selectors import METHODS, select


class _KDEMixin:
    """Density queries shared by the fitted estimators."""

    def score_samples(self, X):
        """Log-density of the fitted KDE at the rows of ``X``."""
        check_is_fitted(self, "bandwidth_")
        return kde_score_samples(self.sample_, X, self.bandwidth_)

    def score(self, X, y=None):
        """Total log-likelihood of ``X`` under the fitted KDE."""
        return float(np.sum(self.score_samples(X)))

    def density_on_grid(self, resolution=100, padding=0.1):
        """KDE values at the cell centres of a grid around the training sample."""
        check_is_fitted(self, "bandwidth_")
        spec = build_grid_spec(self.sample_, resolution, padding)
        return kde_evaluate(self.sample_, spec, self.bandwidth_, mode="auto")


class TopoKDE(_KDEMixin, BaseEstimator):
    """Gaussian KDE whose bandwidth minimises a persistence-based loss.

    The loss is computed on a grid covering the sample: a soft count of the
    superlevel persistence pairs minus their total persistence.

    Parameters
    ----------
    grid : int or sequence of int, default=100
        Cells per axis of the evaluation grid.
    padding : float, default=0.1
        Grid margin per side as a fraction of the sample range.
    alpha_count, alpha_tp : float, default=1.0
        Weights of the soft count and the total persistence.
    hom_dims : sequence of int or "all", default=(0,)
        Homology dimensions in the loss.
    init : "silverman" or float, default="silverman"
    learning_rate : float, default=0.05
    epochs : int, default=300
    early_stop : bool, default=False
    kde_mode : {"auto", "direct", "fft_binned"}, default="auto"

    Attributes
    ----------
    bandwidth_ : float
    trace_ : OptimizationTrace
    grid_spec_ : GridSpec
    n_features_in_ : int
    """

    def __init__(self, grid=100, padding=0.1, alpha_count=1.0, alpha_tp=1.0, hom_dims=(0,),
                 init="silverman", learning_rate=0.05, epochs=300, early_stop=False,
                 kde_mode="auto"):
        self.grid = grid
        self.padding = padding
        self.alpha_count = alpha_count
        self.alpha_tp = alpha_tp
        self.hom_dims = hom_dims
        self.init = init
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.early_stop = early_stop
        self.kde_mode = kde_mode

    def _configs(self):
        dims = self.hom_dims if isinstance(self.hom_dims, str) else frozenset(self.hom_dims)
        loss_cfg = LossConfig(alpha_count=self.alpha_count, alpha_tp=self.alpha_tp,
                              hom_dims=dims, kde_mode=self.kde_mode)
        opt_cfg = OptimizerConfig(init=self.init, learning_rate=self.learning_rate,
                                  epochs=self.epochs, early_stop=self.early_stop)
        return loss_cfg, opt_cfg

    def fit(self, X, y=None):
        X = check_points(X, min_samples=2)
        loss_cfg, opt_cfg = self._configs()
        self.grid_spec_ = build_grid_spec(X, self.grid, self.padding)
        self.trace_ = select_bandwidth_tda(X, self.grid_spec_, loss_cfg, opt_cfg)
        self.bandwidth_ = self.trace_.final_h
        self.sample_ = X
        self.n_features_in_ = X.shape[1]
        return self


class BandwidthSelector(_KDEMixin, BaseEstimator):
    """Gaussian KDE with a classical bandwidth selector.

    Parameters
    ----------
    method : {"scott", "silverman", "nrr", "mlcv", "lscv", "bcv", "isj"}
    """

    def __init__(self, method="scott"):
        self.method = method

    def fit(self, X, y=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        X = check_points(X, min_samples=2)
        self.result_ = select(self.method, X)
        self.bandwidth_ = self.result_.h
        self.sample_ = X
        self.n_features_in_ = X.shape[1]
        return self
