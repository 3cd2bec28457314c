"""scikit-learn style front end to the MNB regression fit."""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model
from .errors import DataError
from .estimation import FitOptions, fit
from .model import LongitudinalDataset, ThetaParams


def check_groups(groups, n_samples):
    """Cluster labels as an array; one cluster per row when ``groups`` is None."""
    if groups is None:
        return np.arange(n_samples)
    groups = np.asarray(groups)
    if groups.ndim != 1 or groups.shape[0] != n_samples:
        raise DataError(f"groups must be a vector of length {n_samples}")
    return groups


def check_offset(offset, n_samples):
    if offset is None:
        return np.zeros(n_samples)
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (n_samples,) or not np.all(np.isfinite(offset)):
        raise DataError(f"offset must be a finite vector of length {n_samples}")
    return offset


def check_counts(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DataError("y must hold nonnegative integer counts")
    return y.astype(np.int64)


class MNBRegressor(RegressorMixin, BaseEstimator):
    """Multivariate negative binomial regression for clustered counts.

    Parameters
    ----------
    fit_intercept : bool, default=True
        Prepend a column of ones to ``X``.
    grad_tol : float, default=1e-6
        Sup-norm tolerance on the score at the estimate.
    max_iter : int, default=500
    init : array-like, optional
        Starting values ``(beta..., phi)``; when ``fit_intercept`` is on the
        intercept comes first.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    phi_ : float
        Dispersion estimate; ``lambda_ = phi_ ** -0.5``.
    bse_ : ndarray
        Wald standard errors of ``(intercept, coef..., phi)``.
    result_ : FitResult
    """

    def __init__(self, fit_intercept=True, grad_tol=1e-6, max_iter=500, init=None):
        self.fit_intercept = fit_intercept
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.init = init

    def _design(self, X):
        if self.fit_intercept:
            return np.column_stack([np.ones(X.shape[0]), X])
        return X

    def _dataset(self, X, y, groups, offset):
        names = [f"x{k}" for k in range(X.shape[1])]
        if self.fit_intercept:
            names = ["(Intercept)"] + names
        D = self._design(X)
        return LongitudinalDataset.from_arrays(
            check_counts(y), D, check_groups(groups, X.shape[0]),
            check_offset(offset, X.shape[0]), names,
        )

    def fit(self, X, y, groups=None, offset=None):
        """Fit by maximum likelihood; rows sharing a ``groups`` label form a cluster."""
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        data = self._dataset(X, y, groups, offset)
        init = None
        if self.init is not None:
            init = ThetaParams.from_vector(np.asarray(self.init, dtype=float))
        res = fit(data, FitOptions(init=init, grad_tol=self.grad_tol, max_iter=self.max_iter))
        self.result_ = res
        beta = res.theta_hat.beta
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:].copy() if self.fit_intercept else beta.copy()
        self.phi_ = res.theta_hat.phi
        self.lambda_ = res.lambda_hat
        self.bse_ = res.se
        self.converged_ = res.converged
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, offset=None):
        """Marginal means ``exp(intercept + X coef + offset)``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        eta = self.intercept_ + X @ self.coef_ + check_offset(offset, X.shape[0])
        return np.exp(eta)

    def loglik(self, X, y, groups=None, offset=None):
        """Log-likelihood of new data at the fitted parameters."""
        check_is_fitted(self, "coef_")
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        data = self._dataset(X, y, groups, offset)
        return model.log_likelihood(self.result_.theta_hat, data)
