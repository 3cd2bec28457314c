"""Global (case-deletion) and local (normal curvature) influence diagnostics.

All quadratic forms use the observed information ``-d2l/dtheta2`` at the
estimate, so distances and curvatures are nonnegative.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import model, numerics
from .errors import ModelMismatch, SchemeInapplicable
from .estimation import FitOptions, refit_excluding

SCHEMES = ("case_weight_subject", "case_weight_measurement", "explanatory", "dispersion")
SCHEME_ALIASES = {
    "weight": "case_weight_subject",
    "weight-obs": "case_weight_measurement",
    "explanatory": "explanatory",
    "dispersion": "dispersion",
}


@dataclass
class DeltaMatrix:
    scheme: str
    entries: np.ndarray
    meta: dict = field(default_factory=dict)
    labels: list = field(default_factory=list)

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]


@dataclass
class GlobalInfluenceReport:
    cluster_ids: list
    gd: np.ndarray
    ld: np.ndarray
    theta_deleted: list
    benchmark_gd: float = np.nan
    benchmark_ld: float = np.nan


@dataclass
class LocalInfluenceReport:
    scheme: str
    c_dmax: float
    d_max: np.ndarray
    c_i: np.ndarray
    benchmark: float
    labels: list = field(default_factory=list)

    def flagged(self):
        return [lab for lab, c in zip(self.labels, self.c_i) if c > self.benchmark]


def _benchmark(values):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size < 2:
        return np.nan
    return float(v.mean() + 2.0 * v.std(ddof=1))


def global_influence(fit_result, data, threads=1, opts=None):
    """Generalized Cook distance and likelihood displacement per cluster.

    Each cluster is removed in turn and the model refit from the full-data
    estimate.  Failed refits leave NaN entries.
    """
    theta = fit_result.theta_hat
    info = fit_result.info
    full = fit_result.params
    ll_full = model.log_likelihood(theta, data)
    opts = opts or FitOptions(grad_tol=fit_result.options.grad_tol,
                              max_iter=fit_result.options.max_iter)

    def one(cid):
        try:
            res = refit_excluding(data, [cid], theta, opts)
        except Exception:
            return None
        return res if res.converged else None

    ids = data.ids
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(c) for c in ids]
    gd = np.full(data.n, np.nan)
    ld = np.full(data.n, np.nan)
    deleted = []
    for i, res in enumerate(results):
        if res is None:
            deleted.append(None)
            continue
        diff = res.params - full
        gd[i] = max(float(diff @ info @ diff), 0.0)
        ld[i] = max(2.0 * (ll_full - model.log_likelihood(res.theta_hat, data)), 0.0)
        deleted.append(res.theta_hat)
    return GlobalInfluenceReport(list(ids), gd, ld, deleted, _benchmark(gd), _benchmark(ld))


def default_scale(data, k):
    """Sample standard deviation of covariate ``k`` over all measurements."""
    return float(np.std(data.X[:, k], ddof=1))


def _resolve(scheme):
    scheme = SCHEME_ALIASES.get(scheme, scheme)
    if scheme not in SCHEMES:
        raise SchemeInapplicable(f"unknown perturbation scheme {scheme!r}")
    return scheme


def _check_explanatory(data, k):
    if not 0 <= k < data.p:
        raise SchemeInapplicable(f"covariate index {k} out of range")
    col = data.X[:, k]
    if np.unique(col).size <= 2:
        raise SchemeInapplicable(
            f"covariate {data.covariate_names[k]!r} is not continuous"
        )


def perturbed_loglik(theta, data, scheme, omega, covariate=None, scale=None):
    """Log-likelihood of the perturbed model at perturbation ``omega``.

    ``theta`` is the vector ``(beta, phi)``.  The null perturbation is all
    ones for the case-weight and dispersion schemes and all zeros for the
    explanatory scheme.  Complex ``theta`` is supported so that complex-step
    derivatives can be taken.
    """
    scheme = _resolve(scheme)
    theta = np.asarray(theta)
    omega = np.asarray(omega, dtype=float)
    beta, phi = theta[:-1], theta[-1]
    g = data.group
    y = data.y.astype(float)
    yp = data.y_plus.astype(float)
    eta = data.X @ beta + data.offset
    if scheme == "explanatory":
        eta = eta + beta[covariate] * scale * omega[g]
    mu = np.exp(eta)
    mp = _cluster_sum(g, mu, data.n)
    lgy = numerics.log_gamma(y + 1.0)
    if scheme == "dispersion":
        phi = omega * phi
    shared = (_loggamma(phi + yp) - _loggamma(phi) + phi * np.log(phi)
              - phi * np.log(phi + mp))
    if scheme == "case_weight_measurement":
        m = data.sizes[g]
        per_obs = shared[g] / m - lgy + y * eta - y * np.log(phi + mp[g])
        return np.sum(omega * per_obs)
    per_cluster = shared + _cluster_sum(g, y * eta - lgy, data.n) - yp * np.log(phi + mp)
    if scheme == "case_weight_subject":
        return np.sum(omega * per_cluster)
    return np.sum(per_cluster)


def _cluster_sum(g, v, n):
    out = np.zeros(n, dtype=v.dtype)
    np.add.at(out, g, v)
    return out


def _loggamma(z):
    if np.iscomplexobj(z):
        return special.loggamma(z)
    return special.gammaln(z)


def null_perturbation(data, scheme):
    scheme = _resolve(scheme)
    if scheme == "case_weight_measurement":
        return np.ones(data.n_obs)
    if scheme == "explanatory":
        return np.zeros(data.n)
    return np.ones(data.n)


def delta_matrix(fit_result, data, scheme, covariate=None, scale=None):
    """Cross-derivative matrix of the perturbed log-likelihood.

    Rows follow ``(beta_1, ..., beta_p, phi)``; columns are clusters, or
    measurements for the per-measurement case-weight scheme.

    Parameters
    ----------
    scheme : str
        One of ``case_weight_subject``, ``case_weight_measurement``,
        ``explanatory``, ``dispersion`` (CLI aliases ``weight``,
        ``weight-obs`` also accepted).
    covariate : int or str, optional
        Perturbed column for the explanatory scheme.
    scale : float, optional
        Scale factor for the explanatory scheme; defaults to the sample
        standard deviation of the column.
    """
    scheme = _resolve(scheme)
    theta = fit_result.theta_hat if hasattr(fit_result, "theta_hat") else fit_result
    pc = model._Pieces(theta, data)
    phi, g = pc.phi, data.group
    meta = {}
    labels = list(data.ids)
    if scheme == "case_weight_subject":
        entries = np.vstack([pc.score_beta_terms().T, pc.score_phi_terms()])
    elif scheme == "case_weight_measurement":
        m = data.sizes[g].astype(float)
        w = (phi / m + data.y) / pc.denom[g]
        d_beta = data.y[:, None] * data.X - w[:, None] * pc.xmu[g]
        psi = model._psi_difference(phi, data.y_plus)
        d_phi = (psi[g] + 1.0 - np.log1p(pc.mp[g] / phi)) / m - w
        entries = np.vstack([d_beta.T, d_phi])
        labels = [f"{data.ids[c]}:{j + 1}" for c, j in
                  zip(g, np.concatenate([np.arange(s) for s in data.sizes]))]
    elif scheme == "explanatory":
        k = covariate
        if isinstance(k, str):
            if k not in data.covariate_names:
                raise SchemeInapplicable(f"unknown covariate {k!r}")
            k = data.covariate_names.index(k)
        _check_explanatory(data, k)
        S = default_scale(data, k) if scale is None else float(scale)
        if not S > 0:
            raise SchemeInapplicable("scale factor must be positive")
        bk = theta.beta[k]
        d_beta = -(bk * S * pc.a * phi / pc.denom)[:, None] * pc.xmu
        resid_sum = data.cluster_sum(data.y - pc.a[g] * pc.mu)
        d_beta[:, k] += S * resid_sum
        d_phi = bk * S * pc.mp * (pc.yp - pc.mp) / pc.denom**2
        entries = np.vstack([d_beta.T, d_phi])
        meta = {"covariate": data.covariate_names[k], "index": int(k), "scale": S}
    else:
        d_beta = phi * pc.hess_betaphi_terms()
        d_phi = pc.score_phi_terms() + phi * pc.hess_phiphi_terms()
        entries = np.vstack([d_beta.T, d_phi])
    return DeltaMatrix(scheme, entries, meta, labels)


def curvature(delta, info):
    """Normal-curvature summary of a perturbation scheme.

    ``B = Delta' info^-1 Delta``; the maximal curvature is ``2 * lambda_max(B)``,
    ``d_max`` its eigenvector (largest-magnitude entry positive) and the total
    local curvatures are ``2 * diag(B)``.
    """
    D = delta.entries if isinstance(delta, DeltaMatrix) else np.asarray(delta)
    B = D.T @ numerics.cholesky_solve(info, D)
    B = 0.5 * (B + B.T)
    lam, v = numerics.max_eigpair(B)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    c_i = 2.0 * np.clip(np.diag(B), 0.0, None)
    scheme = delta.scheme if isinstance(delta, DeltaMatrix) else "custom"
    labels = delta.labels if isinstance(delta, DeltaMatrix) else []
    return LocalInfluenceReport(scheme, 2.0 * lam, v, c_i, _benchmark(c_i), labels)


def normal_curvature(delta, info, d):
    """Curvature ``2 |d' Delta' info^-1 Delta d|`` in a given direction."""
    D = delta.entries if isinstance(delta, DeltaMatrix) else np.asarray(delta)
    d = np.asarray(d, dtype=float)
    d = d / np.linalg.norm(d)
    Dd = D @ d
    return float(2.0 * abs(Dd @ numerics.cholesky_solve(info, Dd)))


def local_influence(fit_result, data, scheme, covariate=None, scale=None):
    delta = delta_matrix(fit_result, data, scheme, covariate, scale)
    return curvature(delta, fit_result.info), delta


def prd(fit_full, fit_reduced):
    """Percentage relative deviation ``(full - reduced) / full * 100``.

    Ordered ``(phi, beta_1, ..., beta_p)``; NaN where the full estimate is
    below 1e-10 in magnitude.
    """
    if tuple(fit_full.covariate_names) != tuple(fit_reduced.covariate_names):
        raise ModelMismatch("fits use different covariates")
    full = np.append(fit_full.theta_hat.phi, fit_full.theta_hat.beta)
    red = np.append(fit_reduced.theta_hat.phi, fit_reduced.theta_hat.beta)
    out = np.full(full.size, np.nan)
    ok = np.abs(full) >= 1e-10
    out[ok] = (full[ok] - red[ok]) / full[ok] * 100.0
    return out
