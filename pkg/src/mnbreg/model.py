"""Data containers and exact likelihood machinery for the MNB regression model.

For cluster ``i`` with counts ``y_i`` and means ``mu_ij = exp(x_ij'beta + offset_ij)``
the joint probability is

    f(y_i) = Gamma(phi + y_i+) phi^phi prod(mu_ij^y_ij)
             / (Gamma(phi) prod(y_ij!) (phi + mu_i+)^(phi + y_i+))

where ``+`` denotes a within-cluster sum.  The marginals are negative binomial
with variance ``mu + mu^2 / phi`` and all within-cluster correlations positive.
"""
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import DataError, DomainError, NonFiniteMean

ETA_MAX = 700.0
# Above this many events per cluster the digamma difference replaces the
# explicit harmonic-type sum in the dispersion score.
FINITE_SUM_LIMIT = 10**6


@dataclass(frozen=True)
class Cluster:
    """Counts, design rows and offsets of one subject."""

    id: str
    y: np.ndarray
    X: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        off = np.asarray(self.offset, dtype=float).ravel()
        if y.ndim != 1 or y.size < 1:
            raise DataError(f"cluster {self.id!r}: needs at least one count")
        if not np.all(np.isfinite(y.astype(float))) or np.any(y != np.round(y)):
            raise DataError(f"cluster {self.id!r}: counts must be integers")
        if np.any(y < 0):
            raise DataError(f"cluster {self.id!r}: counts must be nonnegative")
        if X.shape[0] != y.size or off.size != y.size:
            raise DataError(f"cluster {self.id!r}: X, y and offset lengths differ")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(off))):
            raise DataError(f"cluster {self.id!r}: non-finite design or offset")
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "y", _frozen(y.astype(np.int64)))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "offset", _frozen(off))

    @property
    def size(self):
        return self.y.size


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


class LongitudinalDataset:
    """An ordered collection of clusters sharing one design layout.

    Internally the clusters are stacked into flat arrays (``y``, ``X``,
    ``offset``) with ``group`` holding the 0-based cluster index of every
    measurement; all likelihood code works on the flat form.
    """

    def __init__(self, clusters, covariate_names=None):
        clusters = list(clusters)
        if not clusters:
            raise DataError("dataset needs at least one cluster")
        p = clusters[0].X.shape[1]
        if any(c.X.shape[1] != p for c in clusters):
            raise DataError("clusters disagree on the number of covariates")
        if covariate_names is None:
            covariate_names = [f"x{k}" for k in range(p)]
        covariate_names = [str(s) for s in covariate_names]
        if len(covariate_names) != p or len(set(covariate_names)) != p:
            raise DataError("covariate_names must be distinct and match p")
        ids = [c.id for c in clusters]
        if len(set(ids)) != len(ids):
            raise DataError("cluster ids must be distinct")
        self._clusters = tuple(clusters)
        self.covariate_names = tuple(covariate_names)
        sizes = np.array([c.size for c in clusters])
        self.sizes = _frozen(sizes)
        self.group = _frozen(np.repeat(np.arange(len(clusters)), sizes))
        self.starts = _frozen(np.concatenate([[0], np.cumsum(sizes)[:-1]]))
        self.y = _frozen(np.concatenate([c.y for c in clusters]))
        self.X = _frozen(np.vstack([c.X for c in clusters]))
        self.offset = _frozen(np.concatenate([c.offset for c in clusters]))
        self.y_plus = _frozen(np.bincount(self.group, weights=self.y).astype(np.int64))
        self.lgamma_y1 = float(np.sum(numerics.log_gamma(self.y + 1.0)))

    @classmethod
    def from_arrays(cls, y, X, groups, offset=None, covariate_names=None):
        """Build a dataset from long-format arrays.

        Clusters are ordered by first appearance of their label in ``groups``.
        """
        y = np.asarray(y)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        groups = np.asarray(groups)
        offset = np.zeros(y.shape[0]) if offset is None else np.asarray(offset, float)
        if not (X.shape[0] == y.shape[0] == groups.shape[0] == offset.shape[0]):
            raise DataError("y, X, groups and offset must have the same length")
        labels, first, inverse = np.unique(groups, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        clusters = []
        for k in order:
            rows = np.flatnonzero(inverse == k)
            clusters.append(Cluster(str(labels[k]), y[rows], X[rows], offset[rows]))
        return cls(clusters, covariate_names)

    @property
    def clusters(self):
        return self._clusters

    @property
    def ids(self):
        return [c.id for c in self._clusters]

    @property
    def n(self):
        return len(self._clusters)

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_obs(self):
        return self.y.size

    def subset(self, keep):
        """Dataset restricted to the clusters whose indices are in ``keep``."""
        return LongitudinalDataset([self._clusters[i] for i in keep], self.covariate_names)

    def without(self, ids):
        ids = {str(i) for i in ids}
        unknown = ids - set(self.ids)
        if unknown:
            raise DataError(f"unknown cluster ids: {sorted(unknown)}")
        return self.subset([i for i, c in enumerate(self._clusters) if c.id not in ids])

    def with_counts(self, y):
        """Same design and offsets with the counts replaced by flat ``y``."""
        y = np.asarray(y)
        if y.shape != self.y.shape:
            raise DataError("replacement counts have the wrong length")
        return LongitudinalDataset(
            [Cluster(c.id, y[s:s + c.size], c.X, c.offset)
             for c, s in zip(self._clusters, self.starts)],
            self.covariate_names,
        )

    def cluster_sum(self, values):
        return np.bincount(self.group, weights=values, minlength=self.n)

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"LongitudinalDataset(n={self.n}, n_obs={self.n_obs}, p={self.p})"


@dataclass(frozen=True)
class ThetaParams:
    """Regression coefficients and dispersion ``phi``.

    ``lambda_`` (the GLG shape) is derived as ``phi ** -0.5``.
    """

    beta: np.ndarray
    phi: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        phi = float(self.phi)
        if not np.all(np.isfinite(beta)):
            raise DomainError("beta must be finite")
        if not (np.isfinite(phi) and phi > 0):
            raise DomainError("phi must be finite and positive")
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "phi", phi)

    @property
    def lambda_(self):
        return self.phi ** -0.5

    def as_vector(self):
        """``(beta_1, ..., beta_p, phi)``."""
        return np.append(self.beta, self.phi)

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-1], vec[-1])


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray
    corr: np.ndarray = field(repr=False)


def _check_theta(theta, data):
    if theta.beta.size != data.p:
        raise DomainError(f"beta has length {theta.beta.size}, design has p={data.p}")


def _linear_means(beta, X, offset):
    eta = X @ beta + offset
    if np.any(eta > ETA_MAX) or not np.all(np.isfinite(eta)):
        raise NonFiniteMean(
            f"linear predictor reaches {np.max(eta):.4g}; exp would overflow"
        )
    return np.exp(eta), eta


def linear_predictor(theta, cluster):
    """Means ``mu_ij = exp(x_ij'beta + offset_ij)`` of one cluster."""
    if theta.beta.size != cluster.X.shape[1]:
        raise DomainError("beta length does not match cluster design")
    return _linear_means(theta.beta, cluster.X, cluster.offset)[0]


def linear_predictor_flat(theta, data):
    """Means of every measurement of ``data`` in flat (stacked) order."""
    _check_theta(theta, data)
    return _linear_means(theta.beta, data.X, data.offset)[0]


def mnb_log_pmf(y, mu, phi):
    """Log joint probability of one cluster's counts."""
    y = np.asarray(y)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape or y.ndim != 1:
        raise DomainError("y and mu must be vectors of the same length")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DomainError("counts must be nonnegative integers")
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise DomainError("means must be finite and positive")
    if not (np.isfinite(phi) and phi > 0):
        raise DomainError("phi must be positive")
    yp, mp = int(y.sum()), float(mu.sum())
    y = y.astype(float)
    return float(
        gamma_ratio_terms(phi, [yp], [mp])[0]
        - np.sum(numerics.log_gamma(y + 1.0)) + np.sum(y * np.log(mu))
    )


def cluster_loglik(theta, data):
    """Per-cluster log-likelihood contributions (length ``n``)."""
    _check_theta(theta, data)
    mu, eta = _linear_means(theta.beta, data.X, data.offset)
    return _cluster_loglik(mu, eta, theta.phi, data)


def _cluster_loglik(mu, eta, phi, data):
    mp = data.cluster_sum(mu)
    lgy = data.cluster_sum(numerics.log_gamma(data.y + 1.0))
    return gamma_ratio_terms(phi, data.y_plus, mp) - lgy + data.cluster_sum(data.y * eta)


def log_likelihood(theta, data):
    """Total log-likelihood of ``data`` at ``theta``."""
    _check_theta(theta, data)
    mu, eta = _linear_means(theta.beta, data.X, data.offset)
    mp = data.cluster_sum(mu)
    return float(
        np.sum(gamma_ratio_terms(theta.phi, data.y_plus, mp))
        - data.lgamma_y1 + np.dot(data.y, eta)
    )


def gamma_ratio_terms(phi, y_plus, mu_plus):
    """Per-cluster ``log[Gamma(phi+y)/Gamma(phi)] + phi log(phi) - (phi+y) log(phi+mu)``.

    Written as ``sum_{j<y} log1p(j/phi) - (phi + y) log1p(mu/phi)``, which has
    no cancellation for large ``phi``; totals above ``FINITE_SUM_LIMIT`` fall
    back to log-gamma differences.
    """
    y_plus = np.asarray(y_plus, dtype=np.int64)
    mu_plus = np.asarray(mu_plus, dtype=float)
    yp = y_plus.astype(float)
    if y_plus.size and y_plus.max() > FINITE_SUM_LIMIT:
        return (
            numerics.log_gamma(phi + yp) - numerics.log_gamma(phi) + phi * np.log(phi)
            - (phi + yp) * np.log(phi + mu_plus)
        )
    top = int(y_plus.max()) if y_plus.size else 0
    prefix = np.concatenate([[0.0], np.cumsum(np.log1p(np.arange(top) / phi))])
    return prefix[y_plus] - (phi + yp) * np.log1p(mu_plus / phi)


def rising_sums(phi, counts, power=1):
    """``sum_{j=0}^{k-1} (j + phi)^-power`` for each ``k`` in ``counts``.

    Evaluated as a single cumulative sum up to ``max(counts)``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    top = int(counts.max()) if counts.size else 0
    terms = (np.arange(top, dtype=float) + phi) ** -power
    prefix = np.concatenate([[0.0], np.cumsum(terms)])
    return prefix[counts]


def digamma_difference(phi, counts):
    """``psi(phi + k) - psi(phi)`` via digamma evaluations."""
    counts = np.asarray(counts, dtype=float)
    return numerics.digamma(phi + counts) - numerics.digamma(phi)


def _psi_difference(phi, counts):
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.max() <= FINITE_SUM_LIMIT:
        return rising_sums(phi, counts)
    out = digamma_difference(phi, counts)
    small = counts <= FINITE_SUM_LIMIT
    if np.any(small):
        out[small] = rising_sums(phi, counts[small])
    return out


def _trigamma_difference(phi, counts):
    # psi'(phi + k) - psi'(phi) = -sum_{s<k} (s + phi)^-2
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.max() <= FINITE_SUM_LIMIT:
        return -rising_sums(phi, counts, power=2)
    return numerics.trigamma(phi + counts) - numerics.trigamma(phi)


class _Pieces:
    """Quantities shared by the score, information and Delta matrices."""

    def __init__(self, theta, data):
        _check_theta(theta, data)
        self.data = data
        self.phi = phi = theta.phi
        self.beta = theta.beta
        self.mu, self.eta = _linear_means(theta.beta, data.X, data.offset)
        self.yp = data.y_plus.astype(float)
        self.mp = data.cluster_sum(self.mu)
        self.denom = phi + self.mp
        self.a = (phi + self.yp) / self.denom
        # rows: per-cluster sum_j x_ij mu_ij, shape (n, p)
        self.xmu = np.zeros((data.n, data.p))
        np.add.at(self.xmu, data.group, data.X * self.mu[:, None])

    def score_beta_terms(self):
        d = self.data
        resid = d.y - self.a[d.group] * self.mu
        out = np.zeros((d.n, d.p))
        np.add.at(out, d.group, d.X * resid[:, None])
        return out

    def score_phi_terms(self, psi_diff=None):
        if psi_diff is None:
            psi_diff = _psi_difference(self.phi, self.data.y_plus)
        phi = self.phi
        return psi_diff - np.log1p(self.mp / phi) + (self.mp - self.yp) / self.denom

    def hess_phiphi_terms(self):
        phi = self.phi
        return (
            _trigamma_difference(phi, self.data.y_plus) + 1.0 / phi - 1.0 / self.denom
            - (self.mp - self.yp) / self.denom**2
        )

    def hess_betaphi_terms(self):
        return -((self.mp - self.yp) / self.denom**2)[:, None] * self.xmu


def cluster_scores(theta, data):
    """Per-cluster score contributions, shape ``(p + 1, n)``."""
    pc = _Pieces(theta, data)
    return np.vstack([pc.score_beta_terms().T, pc.score_phi_terms()])


def score(theta, data):
    """Analytic gradient of the log-likelihood, ordered ``(beta, phi)``."""
    pc = _Pieces(theta, data)
    d = data
    resid = d.y - pc.a[d.group] * pc.mu
    u_beta = d.X.T @ resid
    u_phi = float(np.sum(pc.score_phi_terms()))
    return np.append(u_beta, u_phi)


def score_phi_forms(theta, data):
    """Dispersion score evaluated both ways: (finite sum, digamma difference)."""
    pc = _Pieces(theta, data)
    finite = np.sum(pc.score_phi_terms(rising_sums(pc.phi, data.y_plus)))
    dig = np.sum(pc.score_phi_terms(digamma_difference(pc.phi, data.y_plus)))
    return float(finite), float(dig)


def observed_information(theta, data):
    """Negative Hessian of the log-likelihood, ordered ``(beta, phi)``."""
    pc = _Pieces(theta, data)
    d = data
    w = pc.a[d.group] * pc.mu
    h_bb = -(d.X.T * w) @ d.X + (pc.xmu.T * ((pc.phi + pc.yp) / pc.denom**2)) @ pc.xmu
    h_bp = pc.hess_betaphi_terms().sum(axis=0)
    h_pp = float(np.sum(pc.hess_phiphi_terms()))
    p = d.p
    H = np.empty((p + 1, p + 1))
    H[:p, :p] = h_bb
    H[:p, p] = H[p, :p] = h_bp
    H[p, p] = h_pp
    info = -H
    return 0.5 * (info + info.T)


def marginal_moments(theta, cluster):
    """Mean vector, covariance and correlation of one cluster's counts."""
    mu = linear_predictor(theta, cluster)
    phi = theta.phi
    cov = np.outer(mu, mu) / phi
    cov[np.diag_indices_from(cov)] = mu + mu**2 / phi
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    corr[np.diag_indices_from(corr)] = 1.0
    return MomentSummary(mean=mu, cov=cov, corr=corr)
