import numpy as np
import pytest

from mnbreg.datasets import load_seizures
from mnbreg.estimation import fit
from mnbreg.model import LongitudinalDataset, ThetaParams


@pytest.fixture(scope="session")
def seizures():
    return load_seizures()


@pytest.fixture(scope="session")
def seizure_fit(seizures):
    return fit(seizures)


def make_mnb_data(n=40, m=3, beta=(0.8, 0.5), phi=2.0, seed=0, ragged=False):
    """Small MNB sample with one standard normal covariate."""
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, m + 1, size=n) if ragged else np.full(n, m)
    groups = np.repeat(np.arange(n), sizes)
    N = groups.size
    X = np.column_stack([np.ones(N), rng.standard_normal(N)])
    offset = rng.uniform(-0.2, 0.2, size=N)
    mu = np.exp(X @ np.asarray(beta) + offset)
    g = rng.gamma(phi, 1.0 / phi, size=n)
    y = rng.poisson(mu * g[groups])
    data = LongitudinalDataset.from_arrays(y, X, groups, offset, ["(Intercept)", "x"])
    return data, ThetaParams(np.asarray(beta, float), phi)


@pytest.fixture
def small_data():
    return make_mnb_data()


ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
