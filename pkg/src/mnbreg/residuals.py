"""Randomized quantile residuals, Pearson residuals and simulated envelopes."""
from dataclasses import dataclass

import numpy as np

from . import model, numerics
from .errors import DomainError
from .estimation import FitOptions, FitResult, PoissonResult, fit, poisson_fit
from .model import ThetaParams

U_CLAMP = 1e-12


@dataclass
class ResidualReport:
    cluster_ids: list
    residuals: np.ndarray
    kind: str
    seed: int | None = None
    measurement_index: np.ndarray | None = None


@dataclass
class EnvelopeBand:
    sorted_index: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    observed: np.ndarray
    nsim: int
    seed: int
    theoretical: np.ndarray | None = None
    n_failed: int = 0


def _nb_log_terms(top, mu_plus, phi):
    """Log pmf of the cluster-total negative binomial for t = 0..top."""
    t = np.arange(top + 1, dtype=float)
    log_q = np.log(phi) - np.log(phi + mu_plus)
    log_1mq = np.log(mu_plus) - np.log(phi + mu_plus)
    return (
        numerics.log_gamma(t + phi) - numerics.log_gamma(t + 1.0)
        - numerics.log_gamma(phi) + phi * log_q + t * log_1mq
    )


def nb_total_pmf(y_plus, mu_plus, phi):
    _validate_total(y_plus, mu_plus, phi)
    return float(np.exp(_nb_log_terms(int(y_plus), mu_plus, phi)[-1]))


def _validate_total(y_plus, mu_plus, phi):
    if y_plus < 0 or int(y_plus) != y_plus:
        raise DomainError("y_plus must be a nonnegative integer")
    if not (mu_plus > 0 and np.isfinite(mu_plus)):
        raise DomainError("mu_plus must be positive")
    if not (phi > 0 and np.isfinite(phi)):
        raise DomainError("phi must be positive")


def nb_total_cdf(y_plus, mu_plus, phi):
    """CDF at ``y_plus`` of the negative binomial law of a cluster total.

    Summed term by term from ``t = 0`` with ``q = phi / (phi + mu_plus)``.
    """
    _validate_total(y_plus, mu_plus, phi)
    terms = np.exp(_nb_log_terms(int(y_plus), mu_plus, phi))
    return min(float(np.sum(terms)), 1.0)


def _total_cdf_pairs(y_plus, mu_plus, phi):
    """Left and right limits ``(F(y-1), F(y))`` for every cluster."""
    y_plus = np.asarray(y_plus, dtype=np.int64)
    a = np.empty(y_plus.size)
    b = np.empty(y_plus.size)
    for i, (y, m) in enumerate(zip(y_plus, mu_plus)):
        c = np.cumsum(np.exp(_nb_log_terms(int(y), m, phi)))
        b[i] = min(c[-1], 1.0)
        a[i] = min(c[-2], 1.0) if y > 0 else 0.0
    return a, b


def _quantile_residuals(theta, data, rng):
    mu = model.linear_predictor_flat(theta, data)
    mp = data.cluster_sum(mu)
    a, b = _total_cdf_pairs(data.y_plus, mp, theta.phi)
    v = 1.0 - rng.random(data.n)  # uniform on (0, 1]
    u = np.clip(a + (b - a) * v, U_CLAMP, 1.0 - U_CLAMP)
    return numerics.std_normal_quantile(u)


def quantile_residuals(fit_result, data, seed):
    """One randomized quantile residual per cluster, built on the cluster total."""
    theta = _theta_of(fit_result)
    rng = np.random.default_rng(seed)
    r = _quantile_residuals(theta, data, rng)
    return ResidualReport(list(data.ids), r, "quantile_mnb", seed)


def pearson_residuals(poisson_result, data):
    """``(y - mu) / sqrt(mu)`` for every measurement of the Poisson baseline."""
    mu = np.asarray(poisson_result.mu if isinstance(poisson_result, PoissonResult)
                    else poisson_result, dtype=float)
    r = (data.y - mu) / np.sqrt(mu)
    ids = [data.ids[g] for g in data.group]
    idx = np.concatenate([np.arange(m) for m in data.sizes])
    return ResidualReport(ids, r, "pearson_poisson", None, idx)


def _theta_of(obj):
    if isinstance(obj, FitResult):
        return obj.theta_hat
    if isinstance(obj, ThetaParams):
        return obj
    raise TypeError("expected a FitResult or ThetaParams")


def _replace_counts(data, y):
    return data.with_counts(y)


def simulate_counts(mu, phi, data, rng):
    """Counts drawn from the MNB model with flat means ``mu``.

    A shared Gamma(phi, rate=phi) frailty per cluster scales every mean of
    that cluster; counts are then conditionally Poisson.
    """
    g = rng.gamma(phi, 1.0 / phi, size=data.n)
    return rng.poisson(mu * g[data.group])


def simulated_envelope(fitted, data, nsim=100, band=0.95, seed=0, refit=True,
                       min_max=False):
    """Pointwise simulated envelope for sorted residuals.

    Parameters
    ----------
    fitted : FitResult or PoissonResult
        MNB fits give randomized quantile residuals; a Poisson baseline gives
        Pearson residuals.
    nsim : int
        Replicates, at least 19.
    band : float
        Central coverage of the pointwise band.
    refit : bool
        Refit the model to each replicate before computing its residuals.
    min_max : bool
        Use replicate minima and maxima as the band (the classic 21-replicate
        envelope) instead of quantiles.

    Each replicate ``k`` draws from its own generator seeded by ``(seed, k)``.
    """
    if nsim < 19:
        raise DomainError("nsim must be at least 19")
    if not 0 < band < 1:
        raise DomainError("band must lie in (0, 1)")
    mnb = isinstance(fitted, FitResult)
    if mnb:
        theta = fitted.theta_hat
        mu = model.linear_predictor_flat(theta, data)
        observed = _quantile_residuals(theta, data, np.random.default_rng([seed, nsim]))
        opts = FitOptions(init=theta, grad_tol=fitted.options.grad_tol)
    else:
        mu = np.asarray(fitted.mu, dtype=float)
        observed = pearson_residuals(fitted, data).residuals
    sims = []
    failed = 0
    for k in range(nsim):
        rng = np.random.default_rng([seed, k])
        if mnb:
            y = simulate_counts(mu, theta.phi, data, rng)
            th = theta
            if refit and np.any(y > 0) and data.n > data.p:
                try:
                    res = fit(_replace_counts(data, y), opts)
                except Exception:
                    res = None
                if res is None or not res.converged:
                    failed += 1
                    continue
                th = res.theta_hat
            sim_data = _replace_counts(data, y)
            sims.append(np.sort(_quantile_residuals(th, sim_data, rng)))
        else:
            y = rng.poisson(mu)
            sim_mu = mu
            if refit and np.any(y > 0):
                try:
                    sim_mu = poisson_fit(_replace_counts(data, y)).mu
                except Exception:
                    failed += 1
                    continue
            sims.append(np.sort((y - sim_mu) / np.sqrt(sim_mu)))
    sims = np.array(sims)
    if sims.shape[0] == 0:
        raise DomainError("every envelope replicate failed")
    if min_max:
        lower, upper = sims.min(axis=0), sims.max(axis=0)
    else:
        alpha = (1.0 - band) / 2.0
        lower = np.quantile(sims, alpha, axis=0)
        upper = np.quantile(sims, 1.0 - alpha, axis=0)
    median = np.median(sims, axis=0)
    order = np.argsort(observed, kind="stable")
    npts = observed.size
    theo = numerics.std_normal_quantile((np.arange(1, npts + 1) - 0.375) / (npts + 0.25))
    return EnvelopeBand(order, lower, median, upper, observed[order], nsim, seed,
                        theo, failed)
