"""Unscented Kalman filter with additive noise.

The module exposes single-belief functions (`ukf_time_update`,
`ukf_measurement_update`) and batched array kernels (`ut_predict`,
`ut_update`) that advance many Gaussians at once. The batched kernels are what
the sigma-point, mixture and Rao-Blackwellised particle filters use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, NumericalError
from .gaussian import GaussianBelief, batch_sqrt, symmetrize


@dataclass(frozen=True)
class UtConfig:
    """Scaling constants of the unscented transform.

    ``kappa=None`` selects the usual ``3 - n``.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in (0, 1], got {self.alpha}")

    def lam(self, n):
        kappa = 3.0 - n if self.kappa is None else self.kappa
        return self.alpha**2 * (n + kappa) - n

    def weights(self, n):
        """Mean and covariance weights ``(W^m, W^c)`` for dimension ``n``."""
        lam = self.lam(n)
        if not n + lam > 0:
            raise ContractError(f"n + lambda must be positive (n={n}, lambda={lam})")
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha**2 + self.beta
        return wm, wc


@dataclass(frozen=True)
class SigmaPointSet:
    """``2n+1`` sigma points (rows) with their mean and covariance weights."""

    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray


def sigma_points(means, covs, cfg):
    """Batched sigma points, shape ``(..., 2n+1, n)``."""
    means = np.asarray(means, dtype=float)
    n = means.shape[-1]
    wm, wc = cfg.weights(n)
    s = batch_sqrt(covs)
    offsets = np.sqrt(n + cfg.lam(n)) * np.swapaxes(s, -1, -2)
    centre = means[..., None, :]
    pts = np.concatenate([centre, centre + offsets, centre - offsets], axis=-2)
    return pts, wm, wc


def unscented_moments(points, wm, wc):
    """Weighted mean ``(..., d)`` and covariance ``(..., d, d)`` of point sets."""
    mean = np.einsum("j,...jd->...d", wm, points)
    diff = points - mean[..., None, :]
    cov = np.einsum("j,...ja,...jb->...ab", wc, diff, diff)
    return mean, symmetrize(cov)


def generate_sigma_points(b, cfg=UtConfig()):
    """Sigma points of a single `GaussianBelief`."""
    pts, wm, wc = sigma_points(b.mean, b.cov, cfg)
    return SigmaPointSet(pts, wm, wc)


def ut_predict(means, covs, fn, q, cfg):
    """Unscented time update for a batch of Gaussians.

    Returns
    -------
    prior_means, prior_covs, propagated_points, wm, wc
    """
    pts, wm, wc = sigma_points(means, covs, cfg)
    prop = fn(pts)
    if not np.all(np.isfinite(prop)):
        raise NumericalError("non-finite sigma point after propagation")
    mean, cov = unscented_moments(prop, wm, wc)
    return mean, cov + q, prop, wm, wc


def _chol_innovation(pyy):
    try:
        return np.linalg.cholesky(pyy)
    except np.linalg.LinAlgError:
        flat = pyy.reshape(-1, pyy.shape[-2], pyy.shape[-1])
        for i, m in enumerate(flat):
            w = np.linalg.eigvalsh(m)
            if w.min() <= 0:
                raise NumericalError(
                    "innovation covariance P^yy is not positive definite: "
                    f"eigenvalues {np.array2string(w, precision=3)}",
                    index=i if flat.shape[0] > 1 else None,
                ) from None
        raise NumericalError("innovation covariance factorization failed") from None


def ut_update(prior_means, prior_covs, points, wm, wc, hfn, r, y):
    """Unscented measurement update for a batch of Gaussians.

    ``points`` are the sigma points representing each prior. The gain is
    ``K = P^xy (P^yy)^{-1}`` with ``R`` already inside ``P^yy``.

    Returns
    -------
    post_means, post_covs, y_pred, p_yy
    """
    ys = hfn(points)
    if not np.all(np.isfinite(ys)):
        raise NumericalError("non-finite predicted measurement")
    y_pred = np.einsum("j,...jd->...d", wm, ys)
    dy = ys - y_pred[..., None, :]
    dx = points - prior_means[..., None, :]
    pyy = symmetrize(np.einsum("j,...ja,...jb->...ab", wc, dy, dy) + r)
    pxy = np.einsum("j,...ja,...jb->...ab", wc, dx, dy)
    chol = _chol_innovation(pyy)
    # K^T = Pyy^{-1} Pxy^T via two triangular solves
    tmp = np.linalg.solve(chol, np.swapaxes(pxy, -1, -2))
    kt = np.linalg.solve(np.swapaxes(chol, -1, -2), tmp)
    k = np.swapaxes(kt, -1, -2)
    innov = y - y_pred
    mean = prior_means + np.einsum("...ab,...b->...a", k, innov)
    cov = prior_covs - k @ pyy @ kt
    return mean, symmetrize(cov), y_pred, pyy


def ukf_time_update(b_post, model, p=None, cfg=UtConfig()):
    """Prior belief and propagated sigma points.

    Returns
    -------
    (GaussianBelief, SigmaPointSet)
    """
    mean, cov, prop, wm, wc = ut_predict(
        b_post.mean, b_post.cov, lambda x: model.g(x, p), model.q, cfg
    )
    return GaussianBelief(mean, cov), SigmaPointSet(prop, wm, wc)


def ukf_measurement_update(b_prior, prior_points, model, p, y, cfg=UtConfig(), redraw=True):
    """Posterior belief after conditioning on ``y``.

    With ``redraw=True`` (default) the sigma points are regenerated from the
    prior belief, so the process noise enters the innovation and cross
    covariances and the update is exact on linear models. With
    ``redraw=False`` the propagated points of the time update are reused.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (model.n_y,):
        raise ContractError(f"measurement shape {y.shape} != ({model.n_y},)")
    if redraw or prior_points is None:
        pts, wm, wc = sigma_points(b_prior.mean, b_prior.cov, cfg)
    else:
        pts, wm, wc = prior_points.points, prior_points.mean_weights, prior_points.cov_weights
    mean, cov, _, _ = ut_update(
        b_prior.mean, b_prior.cov, pts, wm, wc, lambda x: model.h(x, p), model.r, y
    )
    return GaussianBelief(mean, cov)


def unscented_expectation(means, covs, fn, cfg=UtConfig()):
    """Unscented approximation of ``E[fn(x)]`` under each Gaussian of a batch."""
    pts, wm, _ = sigma_points(means, covs, cfg)
    return np.einsum("j,...jd->...d", wm, np.atleast_1d(fn(pts)).reshape(pts.shape[:-1] + (-1,)))


class UnscentedKalmanFilter:
    """Recursive UKF over a `StateSpaceModel`.

    Parameters
    ----------
    model : StateSpaceModel
    belief : GaussianBelief
        Initial posterior ``(x_0|0, P_0|0)``.
    cfg : UtConfig
    redraw : bool
        Regenerate sigma points before the measurement update.
    """

    name = "ukf"

    def __init__(self, model, belief, cfg=UtConfig(), redraw=True):
        self.model = model
        self.cfg = cfg
        self.redraw = redraw
        self.belief = belief
        self._points = None
        cfg.weights(model.n)

    def predict(self, p=None):
        self.belief, self._points = ukf_time_update(self.belief, self.model, p, self.cfg)
        return self.belief

    def update(self, y, p=None):
        self.belief = ukf_measurement_update(
            self.belief, self._points, self.model, p, y, self.cfg, redraw=self.redraw
        )
        return self.belief

    @property
    def mean(self):
        return self.belief.mean

    @property
    def std(self):
        return self.belief.std

    @property
    def cov(self):
        return self.belief.cov
