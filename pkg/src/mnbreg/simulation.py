"""Data generators and the Monte Carlo engine for bias, RMSE and coverage studies."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import AllReplicationsFailed, DomainError, NotPositiveDefinite, ZeroMean
from .estimation import FitOptions, fit
from .model import LongitudinalDataset

GENERATORS = ("poisson_glg", "poisson_normal_iid", "poisson_normal_correlated")
COVARIATES = ("standard_normal", "uniform01", "dummy_two_level")


def correlated_sigma(inv_phi=4.0):
    """3x3 random-effect covariance with ``inv_phi`` on the diagonal."""
    return np.array([
        [inv_phi, -0.5, -0.1],
        [-0.5, inv_phi, -1.0],
        [-0.1, -1.0, inv_phi],
    ])


def gen_mnb_cluster(mu, phi, rng):
    """One MNB count vector through its Poisson-gamma representation.

    A frailty ``g ~ Gamma(shape=phi, rate=phi)`` (mean one) multiplies every
    mean of the cluster and the counts are then independent Poisson draws.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0) or not (phi > 0):
        raise DomainError("mu and phi must be positive")
    g = rng.gamma(phi, 1.0 / phi)
    return rng.poisson(mu * g)


def gen_poisson_normal_cluster(mu, rng, sigma2=None, Sigma=None):
    """Poisson counts with a normal random intercept on the log scale.

    With ``sigma2`` one intercept ``b ~ N(0, sigma2)`` is shared by the
    cluster; with ``Sigma`` every measurement gets its own ``b_j`` from
    ``N(0, Sigma)`` with unit loading.
    """
    mu = np.asarray(mu, dtype=float)
    if Sigma is None:
        if sigma2 is None or sigma2 <= 0:
            raise DomainError("sigma2 must be positive")
        b = rng.normal(0.0, np.sqrt(sigma2))
    else:
        L = numerics.cholesky_factor(np.asarray(Sigma, dtype=float))
        if L.shape[0] != mu.size:
            raise DomainError("Sigma dimension must equal the cluster size")
        b = L @ rng.standard_normal(mu.size)
    return rng.poisson(mu * np.exp(b))


@dataclass(frozen=True)
class StudyConfig:
    generator: str = "poisson_glg"
    n: int = 100
    m: int = 3
    beta_true: tuple = (1.5, 1.0, 0.0)
    phi_true: float | None = None
    sigma2: float | None = None
    Sigma: tuple | None = None
    replications: int = 1000
    confidence: float = 0.95
    seed: int = 0
    covariate_spec: tuple = ("standard_normal", "dummy_two_level")
    compute_vmr: bool = False

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise DomainError(f"unknown generator {self.generator!r}")
        if self.replications < 1 or self.n < 2 or self.m < 1:
            raise DomainError("need replications >= 1, n >= 2 and m >= 1")
        if len(self.beta_true) != len(self.covariate_spec) + 1:
            raise DomainError("beta_true needs an intercept plus one entry per covariate")
        bad = set(self.covariate_spec) - set(COVARIATES)
        if bad:
            raise DomainError(f"unknown covariate kinds {sorted(bad)}")
        given = [k for k in ("phi_true", "sigma2", "Sigma") if getattr(self, k) is not None]
        wanted = {"poisson_glg": "phi_true", "poisson_normal_iid": "sigma2",
                  "poisson_normal_correlated": "Sigma"}[self.generator]
        if given != [wanted]:
            raise DomainError(f"{self.generator} needs exactly one dispersion spec: {wanted}")
        if not 0 < self.confidence < 1:
            raise DomainError("confidence must lie in (0, 1)")
        if self.Sigma is not None:
            S = np.asarray(self.Sigma, dtype=float)
            if S.shape != (self.m, self.m):
                raise DomainError("Sigma must be m x m")
            try:
                numerics.cholesky_factor(S)
            except NotPositiveDefinite:
                raise DomainError("Sigma must be positive definite") from None
            object.__setattr__(self, "Sigma", tuple(map(tuple, S)))
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "covariate_spec", tuple(self.covariate_spec))

    @property
    def phi_reference(self):
        """Dispersion value the estimates are compared with."""
        if self.phi_true is not None:
            return float(self.phi_true)
        if self.sigma2 is not None:
            return 1.0 / self.sigma2
        return 1.0 / float(np.mean(np.diag(np.asarray(self.Sigma))))

    @property
    def param_names(self):
        return ("phi",) + tuple(f"beta{k}" for k in range(len(self.beta_true)))


@dataclass
class SimulationSummary:
    param_names: tuple
    true_values: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    coverage: np.ndarray
    R_effective: int
    replications: int
    vmr_range: tuple | None = None
    estimates: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        out = {
            "parameters": {
                name: {"true": float(t), "bias": float(b), "rmse": float(r),
                       "coverage": float(c)}
                for name, t, b, r, c in zip(self.param_names, self.true_values,
                                            self.bias, self.rmse, self.coverage)
            },
            "R_effective": int(self.R_effective),
            "replications": int(self.replications),
        }
        if self.vmr_range is not None:
            out["vmr_range"] = [float(v) for v in self.vmr_range]
        return out


def design(config, rng):
    """Design matrix (intercept first) and cluster labels for one replication.

    Continuous covariates vary by measurement; the two-level dummy is a
    balanced cluster-level group indicator.
    """
    n, m = config.n, config.m
    cols = [np.ones(n * m)]
    for kind in config.covariate_spec:
        if kind == "standard_normal":
            cols.append(rng.standard_normal(n * m))
        elif kind == "uniform01":
            cols.append(rng.random(n * m))
        else:
            cols.append(np.repeat((np.arange(n) >= n // 2).astype(float), m))
    return np.column_stack(cols), np.repeat(np.arange(n), m)


def generate(config, replication):
    """Simulated dataset for one replication; a pure function of (seed, replication)."""
    rng = np.random.default_rng([config.seed, replication])
    X, groups = design(config, rng)
    mu = np.exp(X @ np.asarray(config.beta_true))
    n, m = config.n, config.m
    if config.generator == "poisson_glg":
        phi = config.phi_true
        g = rng.gamma(phi, 1.0 / phi, size=n)
        y = rng.poisson(mu * g[groups])
    elif config.generator == "poisson_normal_iid":
        b = rng.normal(0.0, np.sqrt(config.sigma2), size=n)
        y = rng.poisson(mu * np.exp(b[groups]))
    else:
        L = numerics.cholesky_factor(np.asarray(config.Sigma))
        b = (rng.standard_normal((n, m)) @ L.T).ravel()
        y = rng.poisson(mu * np.exp(b))
    names = ["(Intercept)"] + [f"x{k + 1}" for k in range(len(config.covariate_spec))]
    return LongitudinalDataset.from_arrays(y, X, groups, None, names)


def vmr(data):
    """Pooled sample variance over pooled mean of all counts."""
    y = np.asarray(data.y if isinstance(data, LongitudinalDataset) else data, float)
    if y.size < 2:
        raise DomainError("need at least two counts")
    mean = y.mean()
    if mean == 0:
        raise ZeroMean("all counts are zero")
    return float(y.var(ddof=1) / mean)


def _replicate(config, r, opts):
    data = generate(config, r)
    v = vmr(data) if config.compute_vmr else np.nan
    try:
        res = fit(data, opts)
    except Exception:
        return None, v
    if not res.converged:
        return None, v
    est = np.append(res.theta_hat.phi, res.theta_hat.beta)
    se = np.append(res.se[-1], res.se[:-1])
    return (est, se), v


def monte_carlo(config, threads=1, opts=None):
    """Bias, RMSE and Wald coverage over ``config.replications`` datasets.

    Non-converged replications are dropped and reported through
    ``R_effective``.  Results do not depend on ``threads``.
    """
    opts = opts or FitOptions()
    reps = range(config.replications)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(lambda r: _replicate(config, r, opts), reps))
    else:
        out = [_replicate(config, r, opts) for r in reps]
    ok = [o[0] for o in out if o[0] is not None]
    if not ok:
        raise AllReplicationsFailed("no replication converged")
    est = np.array([e for e, _ in ok])
    se = np.array([s for _, s in ok])
    truth = np.append(config.phi_reference, config.beta_true)
    dev = est - truth
    bias = dev.mean(axis=0)
    rmse = np.sqrt(np.mean(dev**2, axis=0))
    zc = numerics.std_normal_quantile(0.5 + config.confidence / 2.0)
    coverage = 100.0 * np.mean(np.abs(dev) <= zc * se, axis=0)
    vmrs = np.array([o[1] for o in out])
    vmr_range = (float(np.nanmin(vmrs)), float(np.nanmax(vmrs))) if config.compute_vmr else None
    return SimulationSummary(config.param_names, truth, bias, rmse, coverage, len(ok),
                             config.replications, vmr_range, est)


_FLOAT_KEYS = {"phi_true", "sigma2", "confidence"}
_INT_KEYS = {"n", "m", "replications", "seed"}


def parse_config(text):
    """Parse the flat ``key = value`` study configuration format.

    Lists are comma separated; ``Sigma`` rows are separated by ``;``.
    ``Sigma = banded`` (optionally ``banded:<inverse phi>``) selects the 3x3
    matrix used in the misspecification study.  ``#`` starts a comment.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value.strip().strip('"').strip("'")
    kw = {}
    for key, value in raw.items():
        if key in ("R", "replications"):
            kw["replications"] = int(value)
        elif key in _INT_KEYS:
            kw[key] = int(value)
        elif key in _FLOAT_KEYS:
            kw[key] = float(value)
        elif key == "generator":
            kw[key] = value
        elif key == "beta_true":
            kw[key] = tuple(float(v) for v in value.strip("[]()").split(","))
        elif key in ("covariate_spec", "covariates"):
            kw["covariate_spec"] = tuple(v.strip() for v in value.strip("[]()").split(","))
        elif key == "Sigma":
            if value.startswith("banded"):
                inv = float(value.split(":", 1)[1]) if ":" in value else 4.0
                kw[key] = correlated_sigma(inv)
            else:
                kw[key] = np.array([[float(v) for v in row.split(",")]
                                    for row in value.split(";")])
        elif key in ("compute_vmr", "vmr"):
            kw["compute_vmr"] = value.lower() in ("1", "true", "yes", "on")
        else:
            raise DomainError(f"unknown config key {key!r}")
    return StudyConfig(**kw)

