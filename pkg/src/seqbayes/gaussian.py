"""Multivariate Gaussian primitives used by every filter.

All routines work in float64. Batched variants accept arrays with arbitrary
leading dimensions, e.g. ``(N, d)`` means and ``(N, d, d)`` covariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractError, NumericalError

LOG_2PI = np.log(2.0 * np.pi)

# eigenvalues below -NEG_TOL * trace are treated as genuinely indefinite
NEG_TOL = 1e-10
# eigenvalue floor applied before a fallback factorization
EIG_FLOOR = 1e-12


def symmetrize(cov):
    cov = np.asarray(cov, dtype=float)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def _condition(cov):
    """Return (eigenvalues, eigenvectors) of a symmetric matrix after flooring."""
    w, v = np.linalg.eigh(cov)
    tr = float(np.trace(cov))
    scale = abs(tr)
    if w.size and w.min() < -NEG_TOL * scale:
        bad = int(np.argmin(w))
        raise NumericalError(
            f"matrix is indefinite: eigenvalue {w[bad]:.3e} (#{bad}) "
            f"below tolerance {-NEG_TOL * scale:.3e}"
        )
    return np.maximum(w, EIG_FLOOR * max(tr, 0.0)), v


def matrix_sqrt(cov):
    """Lower-triangular square root ``S`` with ``S @ S.T == cov``.

    A Cholesky factorization is tried first. Semi-definite input falls back to
    an eigendecomposition with floored eigenvalues, re-triangularized by a QR
    step so that the returned factor is always lower triangular.

    Parameters
    ----------
    cov : array_like, shape (d, d)
        Symmetric positive semi-definite matrix.

    Returns
    -------
    ndarray, shape (d, d)

    Raises
    ------
    NumericalError
        If ``cov`` has an eigenvalue below ``-1e-10 * trace(cov)``.
    """
    cov = symmetrize(cov)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise NumericalError("matrix contains non-finite entries")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = _condition(cov)
    a = v * np.sqrt(w)
    _, r = np.linalg.qr(a.T)
    s = r.T
    signs = np.where(np.diag(s) < 0, -1.0, 1.0)
    return s * signs


def batch_sqrt(covs):
    """`matrix_sqrt` over the leading dimensions of ``covs``."""
    covs = symmetrize(covs)
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        pass
    flat = covs.reshape(-1, covs.shape[-2], covs.shape[-1])
    out = np.empty_like(flat)
    for i, c in enumerate(flat):
        try:
            out[i] = matrix_sqrt(c)
        except NumericalError as exc:
            raise NumericalError(str(exc), index=i) from None
    return out.reshape(covs.shape)


def floor_psd(cov):
    """Symmetrize and clip negative eigenvalues of a (nearly) PSD matrix.

    Matrices that are already positive definite are returned symmetrized only.
    """
    cov = symmetrize(cov)
    if cov.size == 0:
        return cov
    w = np.linalg.eigvalsh(cov)
    if w.min() >= 0.0:
        return cov
    w, v = _condition(cov)
    w = np.maximum(w, 0.0)
    return symmetrize((v * w) @ v.T)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance of a Gaussian density.

    The covariance is re-symmetrized on construction and tiny negative
    eigenvalues (round-off) are clipped to zero.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ContractError(
                f"mean shape {mean.shape} incompatible with cov shape {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", floor_psd(cov))

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def std(self):
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


def log_density(b, x, regularize=0.0):
    """Log of N(x; b.mean, b.cov), vectorized over the leading axes of ``x``.

    Parameters
    ----------
    b : GaussianBelief
    x : array_like, shape (..., d)
    regularize : float
        Optional ridge added to the diagonal before factorization.

    Raises
    ------
    NumericalError
        If the (regularized) covariance is singular.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != b.dim:
        raise ContractError(f"point dimension {x.shape[-1]} != belief dimension {b.dim}")
    return batch_log_density(x, b.mean, b.cov, regularize=regularize)


def batch_log_density(x, means, covs, regularize=0.0):
    """Gaussian log density with broadcasting over means, covariances and points."""
    x = np.asarray(x, dtype=float)
    covs = symmetrize(covs)
    d = covs.shape[-1]
    if regularize:
        covs = covs + regularize * np.eye(d)
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is singular; cannot evaluate density") from None
    diff = x - means
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    if chol.ndim == 2:
        flat = diff.reshape(-1, d)
        z = solve_triangular(chol, flat.T, lower=True).T.reshape(diff.shape)
        return -0.5 * (np.sum(z * z, axis=-1) + logdet + d * LOG_2PI)
    shape = np.broadcast_shapes(diff.shape[:-1], chol.shape[:-2])
    diff = np.broadcast_to(diff, shape + (d,))
    chol = np.broadcast_to(chol, shape + (d, d))
    z = np.linalg.solve(chol, diff[..., None])[..., 0]
    return -0.5 * (np.sum(z * z, axis=-1) + logdet + d * LOG_2PI)


def sample(b, rng, size=None):
    """Draw ``mean + S z`` with ``z`` standard normal.

    ``size`` follows numpy conventions for the leading sample dimensions.
    """
    s = matrix_sqrt(b.cov)
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    z = rng.standard_normal(shape + (b.dim,))
    return b.mean + z @ s.T


def weighted_moments(points, weights, cov_weights=None):
    """Weighted mean and covariance of a point set.

    Parameters
    ----------
    points : array_like, shape (N, d)
    weights : array_like, shape (N,)
        Mean weights; must sum to one.
    cov_weights : array_like, shape (N,), optional
        Separate covariance weights (unscented transform). Defaults to
        ``weights``.

    Returns
    -------
    GaussianBelief
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    w = np.asarray(weights, dtype=float)
    if points.shape[0] == 0:
        raise ContractError("cannot compute moments of an empty point set")
    if w.shape != (points.shape[0],):
        raise ContractError(f"weights shape {w.shape} does not match {points.shape[0]} points")
    if abs(w.sum() - 1.0) > 1e-12 * max(1.0, np.abs(w).sum()):
        raise ContractError(f"weights sum to {w.sum():.15g}, expected 1")
    wc = w if cov_weights is None else np.asarray(cov_weights, dtype=float)
    mean = w @ points
    diff = points - mean
    cov = (diff * wc[:, None]).T @ diff
    return GaussianBelief(mean, cov)
