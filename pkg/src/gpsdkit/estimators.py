"""scikit-learn compatible wrappers around the regression and feature modules."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_signal
from .regression import DataRecord, KernelTemplate, OptBudget, build_regressor, fit_hyperparameters, posterior

__all__ = ["KernelImpulseResponse", "GpsdFeatureMap"]


class KernelImpulseResponse(RegressorMixin, BaseEstimator):
    """Bayesian FIR estimate of an impulse response from input/output records.

    Parameters
    ----------
    kernel : KernelModel, optional
        Prior covariance of ``g(1..n)``.  Defaults to the integrated Laplacian
        kernel with every hyperparameter tuned.
    n : int
        Impulse-response length.
    free : dict, optional
        ``name -> (lower, upper)`` boxes of the hyperparameters to tune by
        marginal likelihood.  ``None`` selects the default boxes when
        ``kernel`` is ``None`` and tunes nothing otherwise.
    approx : tuple, optional
        ``(n_alpha, n_omega)`` to replace the kernel by its grid expansion.
    sigma2 : float, optional
        Noise variance; estimated jointly when ``None``.
    n_starts, max_evals, seed : int
        Optimizer budget.

    Attributes
    ----------
    impulse_response_ : ndarray of shape (n,)
    posterior_sd_ : ndarray of shape (n,)
    sigma2_ : float
    params_ : dict
        Tuned hyperparameter values.
    nll_ : float
    model_ : KernelModel or FeatureExpansion
    """

    def __init__(self, kernel=None, n=100, free=None, approx=None, sigma2=None, n_starts=5,
                 max_evals=500, seed=0):
        self.kernel = kernel
        self.n = n
        self.free = free
        self.approx = approx
        self.sigma2 = sigma2
        self.n_starts = n_starts
        self.max_evals = max_evals
        self.seed = seed

    def _template(self):
        from .harness import ESTIMATORS, estimator_template

        if self.kernel is None:
            spec = ESTIMATORS["LA" if self.approx is not None else "L"]
            tmpl = estimator_template(spec, approx=self.approx or (3, 5))
            if self.free is not None:
                tmpl = KernelTemplate(tmpl.build, dict(self.free), tmpl.fit_sigma2)
        else:
            tmpl = KernelTemplate.from_kernel(self.kernel, dict(self.free or {}), approx=self.approx)
        if self.sigma2 is not None:
            tmpl = KernelTemplate(tmpl.build, tmpl.free, fit_sigma2=False)
        return tmpl

    def fit(self, X, y):
        """Tune hyperparameters and compute the posterior mean of ``g``.

        Parameters
        ----------
        X : array-like of shape (N,) or (N, 1)
            Input signal ``u``.
        y : array-like of shape (N,)
            Output signal.
        """
        u = check_signal(X, "X")
        y = check_signal(y, "y")
        if u.size != y.size:
            raise ValueError("X and y must have the same length")
        data = DataRecord(u, y, self.sigma2)
        tmpl = self._template()
        if not tmpl.free and not tmpl.fit_sigma2:
            model, params, nll, s2 = tmpl.build({}), {}, None, float(self.sigma2)
        else:
            budget = OptBudget(n_starts=self.n_starts, max_evals=self.max_evals, seed=self.seed)
            res = fit_hyperparameters(tmpl, data, self.n, budget)
            model, params, nll, s2 = res.model, res.params, res.nll, res.sigma2
        est = posterior(model, data, self.n, sigma2=s2)
        self.impulse_response_ = est.g_hat
        self.posterior_sd_ = est.posterior_sd
        self.sigma2_ = s2
        self.params_ = params
        self.nll_ = est.nll if nll is None else nll
        self.model_ = model
        return self

    def predict(self, X):
        """Noiseless output of the estimated system for input ``X``."""
        check_is_fitted(self, "impulse_response_")
        u = check_signal(X, "X")
        return build_regressor(u, u.size, self.impulse_response_.size) @ self.impulse_response_


class GpsdFeatureMap(TransformerMixin, BaseEstimator):
    """Feature map ``t -> z(t)`` of a finite expansion of a GPSD kernel.

    Parameters
    ----------
    gpsd : ContinuousGpsd or DiscreteGpsd
    mode : {"grid", "random"}
    n_alpha, n_omega : int
        Grid sizes for ``mode="grid"``.
    num_samples : int
        Atom count for ``mode="random"``.
    seed : int
        Seed for ``mode="random"``.

    Attributes
    ----------
    expansion_ : FeatureExpansion
    n_features_out_ : int
    """

    def __init__(self, gpsd=None, mode="grid", n_alpha=3, n_omega=5, num_samples=100, seed=0):
        self.gpsd = gpsd
        self.mode = mode
        self.n_alpha = n_alpha
        self.n_omega = n_omega
        self.num_samples = num_samples
        self.seed = seed

    def fit(self, X=None, y=None):
        from .features import grid_expansion, random_expansion

        if self.gpsd is None:
            raise ValueError("gpsd must be given")
        if self.mode == "grid":
            self.expansion_ = grid_expansion(self.gpsd, self.n_alpha, self.n_omega)
        elif self.mode == "random":
            self.expansion_ = random_expansion(self.gpsd, self.num_samples, self.seed)
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self.n_features_out_ = self.expansion_.dim
        return self

    def transform(self, X):
        """Feature matrix of shape ``(len(X), 2 * n_atoms)`` at the time indices ``X``."""
        from .features import feature_matrix

        check_is_fitted(self, "expansion_")
        t = np.asarray(X, dtype=float)
        if t.ndim == 2 and t.shape[1] == 1:
            t = t[:, 0]
        return feature_matrix(self.expansion_, t)
