"""Special functions and the small dense linear algebra used by the models.

The special functions accept scalars or arrays and are thin, domain-checked
wrappers over :mod:`scipy.special`.  Symmetric matrices are plain 2-d
``ndarray`` objects.
"""
import numpy as np
from scipy import linalg as sla
from scipy import special

from .errors import ConvergenceFailure, DomainError, NotPositiveDefinite


def _positive(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} requires finite x > 0")
    return arr


def _unwrap(x, out):
    return float(out) if np.ndim(x) == 0 else out


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    return _unwrap(x, special.gammaln(_positive(x, "log_gamma")))


def digamma(x):
    return _unwrap(x, special.psi(_positive(x, "digamma")))


def trigamma(x):
    return _unwrap(x, special.polygamma(1, _positive(x, "trigamma")))


def std_normal_quantile(p):
    """Inverse of the standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0) or np.any(arr >= 1):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    return _unwrap(p, special.ndtri(arr))


def std_normal_cdf(x):
    return _unwrap(x, special.ndtr(np.asarray(x, dtype=float)))


def _check_square(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DomainError("expected a non-empty square matrix")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix has non-finite entries")
    return A


def cholesky_factor(A):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If factorization fails or a pivot (squared diagonal of the factor)
        is at most ``dim * eps * max(diag(A))``.
    """
    A = _check_square(A)
    dim = A.shape[0]
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    floor = dim * np.finfo(float).eps * max(np.max(np.diag(A)), 0.0)
    pivots = np.diag(L) ** 2
    if np.any(pivots <= floor):
        raise NotPositiveDefinite(
            f"pivot {pivots.min():.3e} at or below threshold {floor:.3e}"
        )
    return L


def cholesky_solve(A, b):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    ``b`` may be a vector or a matrix of right-hand sides.
    """
    L = cholesky_factor(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise DomainError("dimension mismatch between A and b")
    return sla.cho_solve((L, True), b)


def spd_inverse(A):
    L = cholesky_factor(A)
    inv = sla.cho_solve((L, True), np.eye(L.shape[0]))
    return 0.5 * (inv + inv.T)


def max_eigpair(A, tol=1e-8):
    """Largest eigenvalue and its unit eigenvector for a symmetric PSD matrix.

    The eigenvector is sign-normalized so its first nonzero component is
    positive.  The pair is checked against ``||A v - lam v||_inf <= tol * lam``
    (absolute ``tol`` when ``lam`` is zero).
    """
    A = _check_square(A)
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    lam = max(float(vals[-1]), 0.0)
    v = vecs[:, -1].copy()
    nz = np.flatnonzero(np.abs(v) > 1e-14)
    if nz.size and v[nz[0]] < 0:
        v = -v
    v /= np.linalg.norm(v)
    resid = float(np.max(np.abs(A @ v - lam * v)))
    bound = tol * lam if lam > 0 else tol
    if resid > bound:
        # one Rayleigh-quotient refinement before giving up
        lam = float(v @ A @ v)
        resid = float(np.max(np.abs(A @ v - lam * v)))
        if resid > tol * max(lam, 1.0):
            raise ConvergenceFailure(
                f"eigenpair residual {resid:.3e} exceeds bound", iterations=1,
                residual=resid,
            )
    return lam, v
