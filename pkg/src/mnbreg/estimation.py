"""Maximum likelihood fitting of the MNB regression model and a Poisson baseline."""
from dataclasses import dataclass, field, replace

import numpy as np

from . import model, numerics
from .errors import (
    DataDegenerate,
    DomainError,
    MaxIterationsExceeded,
    NonFiniteMean,
    NotPositiveDefinite,
    SingularInformation,
)
from .model import ThetaParams

ARMIJO_C1 = 1e-4
BACKTRACK = 0.5
# cap on the infinity norm of one quasi-Newton step
MAX_STEP = 2.0
STALL_RTOL = 1e-14
PHI_INIT_BOUNDS = (0.01, 100.0)


@dataclass(frozen=True)
class FitOptions:
    """Settings for :func:`fit`.

    ``phi_fixed`` holds the dispersion at a given value and estimates only the
    regression coefficients (used for Poisson-limit comparisons).
    """

    init: ThetaParams | None = None
    grad_tol: float = 1e-6
    max_iter: int = 500
    phi_log_scale: bool = True
    phi_fixed: float | None = None

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise DomainError("grad_tol must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")
        if self.phi_fixed is not None and not self.phi_fixed > 0:
            raise DomainError("phi_fixed must be positive")


@dataclass
class FitResult:
    theta_hat: ThetaParams
    loglik: float
    info: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    lambda_hat: float
    converged: bool
    iterations: int
    grad_norm: float
    covariate_names: tuple = ()
    cluster_ids: tuple = ()
    message: str = ""
    options: FitOptions = field(default_factory=FitOptions, repr=False)

    @property
    def params(self):
        """``(beta, phi)`` as one vector."""
        return self.theta_hat.as_vector()

    @property
    def param_names(self):
        return (*self.covariate_names, "phi")

    def raise_for_status(self):
        """Raise the matching library error when the fit did not converge."""
        if self.converged:
            return self
        if "information" in self.message:
            raise SingularInformation(self.message, self.iterations, self.grad_norm)
        raise MaxIterationsExceeded(self.message, self.iterations, self.grad_norm)

    def table(self):
        """Wald table rows: dispersion first, then coefficients."""
        p = len(self.theta_hat.beta)
        rows = [dict(parameter="phi", estimate=self.theta_hat.phi, std_error=self.se[p],
                     z_value=None, p_value=None)]
        for k, name in enumerate(self.covariate_names):
            rows.append(dict(parameter=name, estimate=float(self.theta_hat.beta[k]),
                             std_error=float(self.se[k]), z_value=float(self.z[k]),
                             p_value=float(self.p_values[k])))
        return rows


@dataclass
class PoissonResult:
    beta_hat: np.ndarray
    fitted_means: list
    mu: np.ndarray
    loglik: float
    pearson: float
    df: int
    iterations: int
    grad_norm: float

    @property
    def dispersion_ratio(self):
        """Pearson statistic over residual degrees of freedom."""
        return self.pearson / self.df if self.df > 0 else np.nan


def _check_design(data):
    if data.n < data.p + 1:
        raise DataDegenerate(f"need at least p+1={data.p + 1} clusters, got {data.n}")
    if not np.any(data.y > 0):
        raise DataDegenerate("all counts are zero")
    X = data.X
    const = np.all(X == X[:1], axis=0)
    if np.any(const & (X[0] == 0)):
        raise DataDegenerate("design has an all-zero column")
    if const.sum() > 1:
        raise DataDegenerate("more than one constant column in the design")
    if np.linalg.matrix_rank(X) < data.p:
        raise DataDegenerate("design matrix is rank deficient")


def _poisson_loglik(beta, data):
    mu, eta = model._linear_means(beta, data.X, data.offset)
    return float(np.dot(data.y, eta) - mu.sum() - data.lgamma_y1), mu


def poisson_fit(data, tol=1e-8, max_iter=100):
    """Independent-Poisson log-linear fit with the same predictor and offset.

    Newton-Raphson with step halving, started from a least-squares fit of
    ``log(y + 0.5) - offset``.
    """
    _check_design(data)
    X, y = data.X, data.y.astype(float)
    beta = np.linalg.lstsq(X, np.log(y + 0.5) - data.offset, rcond=None)[0]
    ll, mu = _poisson_loglik(beta, data)
    grad = X.T @ (y - mu)
    it = 0
    while np.max(np.abs(grad)) > tol and it < max_iter:
        it += 1
        step = np.linalg.solve((X.T * mu) @ X, grad)
        t = 1.0
        while True:
            try:
                new_ll, new_mu = _poisson_loglik(beta + t * step, data)
            except NonFiniteMean:
                new_ll = -np.inf
            if new_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10:
            break
        beta = beta + t * step
        ll, mu = new_ll, new_mu
        grad = X.T @ (y - mu)
    pearson = float(np.sum((y - mu) ** 2 / mu))
    fitted = [mu[s:s + m] for s, m in zip(data.starts, data.sizes)]
    return PoissonResult(beta, fitted, mu, ll, pearson, data.n_obs - data.p, it,
                         float(np.max(np.abs(grad))))


def default_start(data):
    """Poisson coefficients plus a moment-matched dispersion."""
    pois = poisson_fit(data)
    excess = max(pois.pearson - data.n_obs, 1e-3)
    phi0 = float(np.clip(pois.mu.sum() / excess, *PHI_INIT_BOUNDS))
    return ThetaParams(pois.beta_hat, phi0)


class _Objective:
    """Negative log-likelihood in the optimizer's coordinates."""

    def __init__(self, data, opts):
        self.data = data
        self.log_phi = opts.phi_log_scale
        self.phi_fixed = opts.phi_fixed
        self.p = data.p

    def theta(self, z):
        if self.phi_fixed is not None:
            return ThetaParams(z, self.phi_fixed)
        phi = np.exp(z[-1]) if self.log_phi else z[-1]
        return ThetaParams(z[:-1], phi)

    def to_z(self, theta):
        if self.phi_fixed is not None:
            return theta.beta.copy()
        last = np.log(theta.phi) if self.log_phi else theta.phi
        return np.append(theta.beta, last)

    def value_grad(self, z):
        try:
            th = self.theta(z)
            ll = model.log_likelihood(th, self.data)
        except (NonFiniteMean, DomainError):
            return np.inf, None
        if not np.isfinite(ll):
            return np.inf, None
        g = model.score(th, self.data)
        if self.phi_fixed is not None:
            g = g[:-1]
        elif self.log_phi:
            g[-1] *= th.phi
        return -ll, -g


def _bfgs(obj, z0, grad_tol, max_iter):
    f, g = obj.value_grad(z0)
    if g is None:
        raise NonFiniteMean("log-likelihood is not finite at the starting values")
    z = z0.copy()
    Hinv = np.eye(z.size)
    scale = max(1.0, abs(f) / obj.data.n)
    it = stalled = 0
    while it < max_iter:
        if np.max(np.abs(g)) <= grad_tol * scale:
            return z, it, True
        it += 1
        d = -Hinv @ g
        slope = g @ d
        if slope >= 0:
            Hinv = np.eye(z.size)
            d, slope = -g, -(g @ g)
        t = min(1.0, MAX_STEP / np.max(np.abs(d)))
        while True:
            f_new, g_new = obj.value_grad(z + t * d)
            if g_new is not None and f_new <= f + ARMIJO_C1 * t * slope:
                break
            t *= BACKTRACK
            if t < 1e-16:
                return z, it, False
        s = t * d
        yk = g_new - g
        sy = s @ yk
        if it == 1 and sy > 0:
            Hinv = np.eye(z.size) * (sy / (yk @ yk))
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yk):
            rho = 1.0 / sy
            V = np.eye(z.size) - rho * np.outer(s, yk)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        # progress at rounding level: hand over to the Newton polish
        stalled = stalled + 1 if f - f_new <= STALL_RTOL * max(1.0, abs(f)) else 0
        z, f, g = z + s, f_new, g_new
        if stalled >= 3:
            return z, it, np.max(np.abs(g)) <= grad_tol * max(1.0, abs(f) / obj.data.n)
        scale = max(1.0, abs(f) / obj.data.n)
    return z, it, np.max(np.abs(g)) <= grad_tol * scale


def _newton_polish(theta, data, grad_tol, phi_fixed, steps=25):
    """Newton steps on the analytic information to tighten the gradient."""
    ll = model.log_likelihood(theta, data)
    for _ in range(steps):
        u = model.score(theta, data)
        if phi_fixed is not None:
            u = u[:-1]
        if np.max(np.abs(u)) <= 1e-3 * grad_tol:
            break
        info = model.observed_information(theta, data)
        if phi_fixed is not None:
            info = info[:-1, :-1]
        try:
            step = numerics.cholesky_solve(info, u)
        except NotPositiveDefinite:
            break
        t = 1.0
        improved = False
        while t > 1e-6:
            vec = theta.as_vector()
            vec[: step.size] += t * step
            try:
                cand = ThetaParams.from_vector(vec)
                cand_ll = model.log_likelihood(cand, data)
            except (DomainError, NonFiniteMean):
                t *= 0.5
                continue
            if cand_ll >= ll - 1e-12 * abs(ll):
                improved = True
                break
            # near the optimum the likelihood change drowns in rounding;
            # a smaller score is then the better acceptance test
            cand_u = model.score(cand, data)[: u.size]
            if np.max(np.abs(cand_u)) < 0.5 * np.max(np.abs(u)):
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        theta, ll = cand, cand_ll
    return theta


def _wald(theta, info, phi_fixed):
    p = theta.beta.size
    se = np.full(p + 1, np.nan)
    try:
        if phi_fixed is None:
            cov = numerics.spd_inverse(info)
            se = np.sqrt(np.diag(cov))
        else:
            se[:p] = np.sqrt(np.diag(numerics.spd_inverse(info[:p, :p])))
    except NotPositiveDefinite:
        return se, np.full(p, np.nan), np.full(p, np.nan), False
    z = theta.beta / se[:p]
    pv = 2.0 * numerics.std_normal_cdf(-np.abs(z))
    return se, z, pv, True


def fit(data, opts=None):
    """Maximum likelihood fit of the MNB regression model.

    Parameters
    ----------
    data : LongitudinalDataset
    opts : FitOptions, optional

    Returns
    -------
    FitResult
        ``converged`` is False (with ``message`` set) when the iteration cap
        is hit or the observed information is not positive definite; call
        :meth:`FitResult.raise_for_status` to turn that into an exception.
    """
    opts = opts or FitOptions()
    _check_design(data)
    start = opts.init if opts.init is not None else default_start(data)
    if start.beta.size != data.p:
        raise DomainError("initial beta has the wrong length")
    obj = _Objective(data, opts)
    z, iters, ok = _bfgs(obj, obj.to_z(start), opts.grad_tol, opts.max_iter)
    theta = _newton_polish(obj.theta(z), data, opts.grad_tol, opts.phi_fixed)
    return _assemble(theta, data, opts, iters, ok)


def _assemble(theta, data, opts, iters, ok):
    ll = model.log_likelihood(theta, data)
    u = model.score(theta, data)
    if opts.phi_fixed is not None:
        u = u[:-1]
    grad_norm = float(np.max(np.abs(u)))
    info = model.observed_information(theta, data)
    se, z, pv, pd = _wald(theta, info, opts.phi_fixed)
    converged = grad_norm <= opts.grad_tol and pd
    if converged:
        message = "converged"
    elif not pd:
        message = "observed information is not positive definite at the estimate"
    elif not ok:
        message = f"gradient norm {grad_norm:.3e} above tolerance after {iters} iterations"
    else:
        message = f"gradient norm {grad_norm:.3e} above tolerance"
    return FitResult(
        theta_hat=theta, loglik=ll, info=info, se=se, z=z, p_values=pv,
        lambda_hat=theta.lambda_, converged=bool(converged), iterations=iters,
        grad_norm=grad_norm, covariate_names=data.covariate_names,
        cluster_ids=tuple(data.ids), message=message, options=opts,
    )


def refit_excluding(data, exclude, warm_start=None, opts=None):
    """Fit with the clusters in ``exclude`` removed, warm-started at ``warm_start``."""
    opts = opts or FitOptions()
    exclude = {str(e) for e in exclude}
    if not exclude:
        return fit(data, opts)
    reduced = data.without(exclude)
    if warm_start is not None:
        opts = replace(opts, init=warm_start)
    return fit(reduced, opts)
