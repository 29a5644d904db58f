"""Sigma-point particle filter.

Every particle owns a Gaussian ``N(x^j, P^j)``. A UKF step conditioned on the
current measurement turns it into a proposal, from which the new particle is
drawn. The default weights use the full importance ratio; the literal
likelihood-only weights are available with ``simplified_weights=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .gaussian import GaussianBelief, batch_log_density, batch_sqrt
from .particles import (
    LOG_UNDERFLOW,
    ResamplingPolicy,
    check_likelihood,
    ess_of,
    normalize_log_weights,
    resample_indices,
    weighted_cov,
    weighted_std,
)
from .ukf import UtConfig, sigma_points, ut_predict, ut_update


@dataclass(frozen=True)
class SppfParticles:
    """Struct-of-arrays particle cloud: states ``(N, n)``, covs ``(N, n, n)``, weights ``(N,)``."""

    states: np.ndarray
    covs: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_belief(cls, belief, n_particles, rng):
        s = batch_sqrt(belief.cov)
        x = belief.mean + rng.standard_normal((n_particles, belief.dim)) @ s.T
        covs = np.broadcast_to(belief.cov, (n_particles,) + belief.cov.shape).copy()
        return cls(x, covs, np.full(n_particles, 1.0 / n_particles))

    @property
    def size(self):
        return self.states.shape[0]

    def belief(self, j):
        return GaussianBelief(self.states[j], self.covs[j])


def sppf_step(
    cloud,
    model,
    p_prev,
    p,
    y,
    ut_cfg,
    policy,
    rng,
    simplified_weights=False,
    redraw=True,
    min_log_likelihood=LOG_UNDERFLOW,
):
    """One SPPF recursion; returns ``(cloud, info)``.

    ``p_prev`` drives the transition into step k and ``p`` the observation at
    step k. ``info`` carries the pre-resampling weights, ESS and proposal
    means for diagnostics.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    prev = cloud.states
    try:
        pm, pc, prop, wm, wc = ut_predict(
            prev, cloud.covs, lambda x: model.g(x, p_prev), model.q, ut_cfg
        )
        pts = sigma_points(pm, pc, ut_cfg)[0] if redraw else prop
        qm, qc, _, _ = ut_update(pm, pc, pts, wm, wc, lambda x: model.h(x, p), model.r, y)
        chol = batch_sqrt(qc)
    except NumericalError as exc:
        raise NumericalError(f"SPPF proposal failed: {exc}", index=exc.index) from None
    z = rng.standard_normal(qm.shape)
    x = qm + np.einsum("nab,nb->na", chol, z)

    loglik = batch_log_density(y, model.h(x, p), model.r)
    check_likelihood(loglik, min_log_likelihood)
    with np.errstate(divide="ignore"):
        logw = np.log(cloud.weights) + loglik
    if not simplified_weights:
        log_trans = batch_log_density(x, model.g(prev, p_prev), model.q)
        diag = np.diagonal(chol, axis1=-2, axis2=-1)
        log_prop = -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(diag), axis=-1)
        log_prop = log_prop - 0.5 * x.shape[1] * np.log(2.0 * np.pi)
        logw = logw + log_trans - log_prop
    w = normalize_log_weights(logw)
    info = {"weights": w, "ess": ess_of(w), "proposal_means": qm, "resampled": False}

    covs = qc
    if policy.should_resample(w):
        idx = resample_indices(w, policy.scheme, rng)
        x, covs = x[idx], covs[idx]
        w = np.full(x.shape[0], 1.0 / x.shape[0])
        info["resampled"] = True
    return SppfParticles(x, covs, w), info


class SigmaPointParticleFilter:
    """Recursive SPPF over a `StateSpaceModel`."""

    name = "sppf"

    def __init__(
        self,
        model,
        prior,
        n_particles,
        rng=None,
        ut_cfg=UtConfig(),
        policy=ResamplingPolicy(),
        simplified_weights=False,
        redraw=True,
        min_log_likelihood=LOG_UNDERFLOW,
    ):
        self.model = model
        self.rng = np.random.default_rng() if rng is None else rng
        self.ut_cfg = ut_cfg
        self.policy = policy
        self.simplified_weights = simplified_weights
        self.redraw = redraw
        self.min_log_likelihood = min_log_likelihood
        if not simplified_weights and np.linalg.eigvalsh(model.q).min() <= 0:
            raise ConfigError(
                "full-ratio SPPF weights need a positive definite Q; "
                "use sppf.simplified_weights for singular process noise"
            )
        self.cloud = SppfParticles.from_belief(prior, n_particles, self.rng)
        self.ess = float(n_particles)
        self._p_prev = None

    def predict(self, p=None):
        # the proposal needs y, so the transition is deferred to update()
        self._p_prev = p

    def update(self, y, p=None):
        self.cloud, info = sppf_step(
            self.cloud,
            self.model,
            self._p_prev,
            p,
            y,
            self.ut_cfg,
            self.policy,
            self.rng,
            simplified_weights=self.simplified_weights,
            redraw=self.redraw,
            min_log_likelihood=self.min_log_likelihood,
        )
        self.ess = info["ess"]
        self.last_info = info
        return self.cloud

    @property
    def mean(self):
        return self.cloud.weights @ self.cloud.states

    @property
    def std(self):
        return weighted_std(self.cloud.states, self.cloud.weights)

    @property
    def cov(self):
        w = self.cloud.weights
        return np.einsum("j,jab->ab", w, self.cloud.covs) + weighted_cov(self.cloud.states, w)
