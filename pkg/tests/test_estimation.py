import math

import numpy as np
import pytest
from scipy import optimize, special

from mnbreg import model
from mnbreg.errors import DataDegenerate, SingularInformation
from mnbreg.estimation import FitOptions, fit, poisson_fit, refit_excluding
from mnbreg.model import LongitudinalDataset, ThetaParams

from conftest import make_mnb_data


def independent_negloglik(v, data):
    """Negative log-likelihood from the closed form, with phi on the log scale."""
    beta, phi = v[:-1], math.exp(v[-1])
    mu = np.exp(data.X @ beta + data.offset)
    total = 0.0
    for s, m in zip(data.starts, data.sizes):
        y, mi = data.y[s:s + m], mu[s:s + m]
        yp, mp = y.sum(), mi.sum()
        total += (special.gammaln(phi + yp) - special.gammaln(phi) + phi * np.log(phi)
                  - (phi + yp) * np.log(phi + mp) + np.sum(y * np.log(mi))
                  - np.sum(special.gammaln(y + 1.0)))
    return -total


@pytest.mark.parametrize("seed,phi", [(1, 0.8), (2, 3.0), (3, 12.0)])
def test_mle_matches_generic_optimizer(seed, phi):
    data, theta = make_mnb_data(n=60, phi=phi, seed=seed, ragged=True)
    res = fit(data)
    assert res.converged
    x0 = np.append(theta.beta, math.log(theta.phi))
    ref = optimize.minimize(independent_negloglik, x0, args=(data,), method="Nelder-Mead",
                            options=dict(xatol=1e-10, fatol=1e-12, maxiter=20000, maxfev=40000))
    np.testing.assert_allclose(res.theta_hat.beta, ref.x[:-1], atol=2e-5)
    assert math.log(res.theta_hat.phi) == pytest.approx(ref.x[-1], abs=2e-4)
    assert -res.loglik <= ref.fun + 1e-8


def test_converged_fit_has_small_score_and_pd_information(seizure_fit, seizures):
    res = seizure_fit
    assert res.converged and res.message == "converged"
    assert np.max(np.abs(model.score(res.theta_hat, seizures))) <= 1e-6
    assert np.all(np.linalg.eigvalsh(res.info) > 0)
    np.testing.assert_allclose(res.se, np.sqrt(np.diag(np.linalg.inv(res.info))), rtol=1e-10)
    np.testing.assert_allclose(res.z, res.theta_hat.beta / res.se[:-1])
    assert res.lambda_hat == pytest.approx(res.theta_hat.phi ** -0.5)


def test_table_orders_phi_first_without_test(seizure_fit):
    rows = seizure_fit.table()
    assert rows[0]["parameter"] == "phi" and rows[0]["z_value"] is None
    assert [r["parameter"] for r in rows[1:]] == list(seizure_fit.covariate_names)


def test_fit_is_deterministic(seizures):
    a, b = fit(seizures), fit(seizures)
    assert a.params.tobytes() == b.params.tobytes()
    assert a.info.tobytes() == b.info.tobytes()


def test_estimate_independent_of_start(seizures, seizure_fit):
    for phi0 in (0.05, 1.0, 40.0):
        res = fit(seizures, FitOptions(init=ThetaParams(np.zeros(4), phi0)))
        np.testing.assert_allclose(res.params, seizure_fit.params, rtol=1e-6, atol=1e-7)


def test_scale_and_offset_equivariance():
    data, _ = make_mnb_data(n=50, seed=4)
    base = fit(data)
    X2 = data.X.copy()
    X2[:, 1] *= 3.0
    scaled = LongitudinalDataset.from_arrays(data.y, X2, data.group, data.offset + 0.7,
                                             data.covariate_names)
    res = fit(scaled)
    assert res.theta_hat.beta[1] == pytest.approx(base.theta_hat.beta[1] / 3.0, rel=1e-6)
    assert res.theta_hat.beta[0] == pytest.approx(base.theta_hat.beta[0] - 0.7, abs=1e-6)
    assert res.theta_hat.phi == pytest.approx(base.theta_hat.phi, rel=1e-6)
    assert res.loglik == pytest.approx(base.loglik, rel=1e-10)


def test_offset_shift_is_absorbed_by_intercept():
    data, _ = make_mnb_data(n=50, seed=5)
    base = fit(data)
    shifted = LongitudinalDataset.from_arrays(data.y, data.X, data.group, data.offset + 2.5,
                                              data.covariate_names)
    res = fit(shifted)
    assert abs(res.loglik - base.loglik) <= 1e-8 * max(1.0, abs(base.loglik))
    assert abs(res.theta_hat.beta[0] - (base.theta_hat.beta[0] - 2.5)) <= 1e-8
    assert abs(res.theta_hat.beta[1] - base.theta_hat.beta[1]) <= 1e-8
    assert abs(res.theta_hat.phi - base.theta_hat.phi) <= 1e-8 * base.theta_hat.phi


def test_self_consistency_over_replications():
    beta, phi = np.array([0.8, 0.5]), 2.0
    est = []
    for seed in range(200):
        data, _ = make_mnb_data(n=40, beta=beta, phi=phi, seed=1000 + seed)
        res = fit(data)
        if res.converged:
            est.append(res.theta_hat.beta)
    est = np.array(est)
    assert len(est) >= 195
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - beta) <= 4 * se)


def _poisson_oracle(data):
    def nll(b):
        eta = data.X @ b + data.offset
        return -(np.dot(data.y, eta) - np.exp(eta).sum())

    def grad(b):
        return -data.X.T @ (data.y - np.exp(data.X @ b + data.offset))

    return optimize.minimize(nll, np.zeros(data.p), jac=grad, method="BFGS",
                             options=dict(gtol=1e-10)).x


def test_poisson_fit_and_large_phi_limit():
    rng = np.random.default_rng(9)
    n, m = 80, 4
    X = np.column_stack([np.ones(n * m), rng.standard_normal(n * m)])
    y = rng.poisson(np.exp(X @ [0.5, 0.3]))
    data = LongitudinalDataset.from_arrays(y, X, np.repeat(np.arange(n), m))
    pois = poisson_fit(data)
    np.testing.assert_allclose(pois.beta_hat, _poisson_oracle(data), atol=1e-7)
    near = fit(data, FitOptions(phi_fixed=1e9))
    np.testing.assert_allclose(near.theta_hat.beta, pois.beta_hat, atol=1e-6)
    assert pois.dispersion_ratio == pytest.approx(
        np.sum((y - pois.mu) ** 2 / pois.mu) / (n * m - 2))


def test_refit_excluding(seizures, seizure_fit):
    same = refit_excluding(seizures, [])
    np.testing.assert_allclose(same.params, seizure_fit.params, rtol=1e-10)
    warm = refit_excluding(seizures, ["49"], seizure_fit.theta_hat)
    cold = fit(seizures.without(["49"]))
    np.testing.assert_allclose(warm.params, cold.params, rtol=1e-6)
    assert "49" not in warm.cluster_ids and len(warm.cluster_ids) == 58


def test_degenerate_designs():
    groups = np.repeat(np.arange(5), 2)
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    with pytest.raises(DataDegenerate):
        fit(LongitudinalDataset.from_arrays(np.zeros(10, int), X, groups))
    with pytest.raises(DataDegenerate):
        fit(LongitudinalDataset.from_arrays(np.arange(10), np.column_stack([X, 2 * X[:, 1]]),
                                            groups))
    with pytest.raises(DataDegenerate):
        fit(LongitudinalDataset.from_arrays([1, 2], X[:2], [0, 1]))


def test_underdispersed_data_flags_nonconvergence():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(90), rng.standard_normal(90)])
    data = LongitudinalDataset.from_arrays(np.full(90, 5), X, np.repeat(np.arange(30), 3))
    res = fit(data)
    assert not res.converged
    with pytest.raises(SingularInformation):
        res.raise_for_status()
