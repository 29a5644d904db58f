"""Linear Kalman filter steps on plain arrays."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError
from .gaussian import symmetrize


def kf_predict(mean, cov, a, q, u=None):
    """``(A m + u, A P A^T + Q)``."""
    m = a @ mean
    if u is not None:
        m = m + u
    return m, symmetrize(a @ cov @ a.T + q)


def kf_update(mean, cov, h, r, innovation):
    """Posterior for a linear observation with the given innovation ``y - y_hat``.

    Returns
    -------
    mean, cov, gain, innovation_cov
    """
    s = symmetrize(h @ cov @ h.T + r)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(s)
        raise NumericalError(
            f"innovation covariance is not positive definite: eigenvalues {w}"
        ) from None
    pht = cov @ h.T
    k = np.linalg.solve(chol.T, np.linalg.solve(chol, pht.T)).T
    new_mean = mean + k @ innovation
    # Joseph form keeps the covariance symmetric PSD
    i_kh = np.eye(mean.shape[0]) - k @ h
    new_cov = i_kh @ cov @ i_kh.T + k @ r @ k.T
    return new_mean, symmetrize(new_cov), k, s
