"""Gaussian-mixture sigma-point particle filter.

The posterior is a ``G_s``-component Gaussian mixture. Each step runs a bank
of UKFs over the (state, process noise) and (prior, measurement noise)
component pairs, importance-samples particles from the resulting posterior
mixture, and collapses them back to ``G_s`` components with weighted EM.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ContractError, DegenerateLikelihoodError, NumericalError
from .gaussian import GaussianBelief, batch_log_density, batch_sqrt, symmetrize
from .particles import LOG_UNDERFLOW, ParticleSet, check_likelihood, normalize_log_weights
from .ukf import UtConfig, sigma_points, unscented_expectation, ut_predict, ut_update


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture weights ``(G,)``, component means ``(G, d)`` and covariances ``(G, d, d)``."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        c = np.asarray(self.covs, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if w.shape[0] < 1 or m.shape[0] != w.shape[0] or c.shape != m.shape + (m.shape[1],):
            raise ContractError(
                f"inconsistent mixture shapes: weights {w.shape}, means {m.shape}, covs {c.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ContractError("mixture weights must be nonnegative and sum to one")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", symmetrize(c))

    @classmethod
    def single(cls, belief):
        return cls(np.ones(1), belief.mean[None], belief.cov[None])

    @classmethod
    def from_components(cls, weights, components):
        return cls(
            weights,
            np.stack([b.mean for b in components]),
            np.stack([b.cov for b in components]),
        )

    @property
    def size(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [GaussianBelief(m, c) for m, c in zip(self.means, self.covs)]

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        mu = self.mean()
        diff = self.means - mu
        spread = np.einsum("g,ga,gb->ab", self.weights, diff, diff)
        return np.einsum("g,gab->ab", self.weights, self.covs) + spread


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 20
    tol: float = 1e-6
    cov_floor: float = 1e-10


@dataclass(frozen=True)
class GmsppfConfig:
    """Mixture sizes, particle count and EM settings."""

    G_s: int = 1
    G_p: int = 1
    G_m: int = 1
    N: int = 1000
    em: EmConfig = field(default_factory=EmConfig)

    def __post_init__(self):
        for name in ("G_s", "G_p", "G_m", "N"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"gmsppf.{name} must be at least 1")
        if self.N < self.G_s:
            raise ConfigError("gmsppf.particles must be at least G_s")


def gmm_component_logpdf(mix, x):
    """``log alpha_s + log N(x; m_s, P_s)`` with shape ``(..., G)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[:-1] + (mix.size,))
    with np.errstate(divide="ignore"):
        logw = np.log(mix.weights)
    for s in range(mix.size):
        out[..., s] = logw[s] + batch_log_density(x, mix.means[s], mix.covs[s])
    return out


def gmm_logpdf(mix, x):
    """Mixture log density via log-sum-exp over components."""
    return logsumexp(gmm_component_logpdf(mix, x), axis=-1)


def gmm_time_update(mix, noise_mix, model, p, ut_cfg=UtConfig()):
    """Prior mixture with ``G_s * G_p`` components, ordered ``s * G_p + q``.

    ``noise_mix`` is the process-noise mixture; each pair applies a UKF time
    update of component ``s`` with noise mean and covariance of component ``q``.
    """
    try:
        pm, pc, _, _, _ = ut_predict(
            mix.means, mix.covs, lambda x: model.g(x, p), np.zeros((mix.dim, mix.dim)), ut_cfg
        )
    except NumericalError as exc:
        raise NumericalError(f"mixture time update failed: {exc}", index=exc.index) from None
    means = (pm[:, None, :] + noise_mix.means[None, :, :]).reshape(-1, mix.dim)
    covs = (pc[:, None] + noise_mix.covs[None, :]).reshape(-1, mix.dim, mix.dim)
    alpha = np.outer(mix.weights, noise_mix.weights).ravel()
    return GaussianMixture(alpha / alpha.sum(), means, covs)


def gmm_measurement_update(
    prior_mix, meas_noise_mix, model, p, y, ut_cfg=UtConfig(), min_log_likelihood=None
):
    """Posterior mixture with ``G_s^- * G_m`` components, ordered ``s * G_m + r``.

    Component weights follow ``alpha^- gamma^r p_r(y | x = prior mean)``.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    g, d = prior_mix.size, prior_mix.dim
    gm = meas_noise_mix.size
    pts, wm, wc = sigma_points(prior_mix.means, prior_mix.covs, ut_cfg)
    means = np.empty((g, gm, d))
    covs = np.empty((g, gm, d, d))
    for r in range(gm):
        wbar, rcov = meas_noise_mix.means[r], meas_noise_mix.covs[r]
        try:
            m, c, _, _ = ut_update(
                prior_mix.means, prior_mix.covs, pts, wm, wc,
                lambda x: model.h(x, p) + wbar, rcov, y,
            )
        except NumericalError as exc:
            raise NumericalError(
                f"mixture measurement update failed: {exc}", index=exc.index
            ) from None
        means[:, r], covs[:, r] = m, c
    y_at_means = model.h(prior_mix.means, p)
    loglik = np.stack(
        [
            batch_log_density(y, y_at_means + meas_noise_mix.means[r], meas_noise_mix.covs[r])
            for r in range(gm)
        ],
        axis=1,
    )
    check_likelihood(loglik.ravel(), min_log_likelihood)
    with np.errstate(divide="ignore"):
        logw = (
            np.log(prior_mix.weights)[:, None] + np.log(meas_noise_mix.weights)[None, :] + loglik
        )
    alpha = normalize_log_weights(logw.ravel())
    return GaussianMixture(alpha, means.reshape(-1, d), covs.reshape(-1, d, d))


def gmm_sample(mix, n, rng):
    """Draw ``n`` points; returns ``(points, component_labels)``."""
    labels = rng.choice(mix.size, size=n, p=mix.weights)
    chol = batch_sqrt(mix.covs)
    z = rng.standard_normal((n, mix.dim))
    x = mix.means[labels] + np.einsum("nab,nb->na", chol[labels], z)
    return x, labels


def gmm_importance_sample(
    posterior_mix, prior_mix, model, p, y, n, rng, min_log_likelihood=LOG_UNDERFLOW
):
    """Particles from the posterior mixture weighted by ``p(y|x) prior(x) / posterior(x)``."""
    x, _ = gmm_sample(posterior_mix, n, rng)
    lq = gmm_logpdf(posterior_mix, x)
    if np.any(~np.isfinite(lq)):
        raise ContractError("posterior mixture density vanished at a drawn particle")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    loglik = batch_log_density(y, model.h(x, p), model.r)
    check_likelihood(loglik, min_log_likelihood)
    logw = loglik + gmm_logpdf(prior_mix, x) - lq
    return ParticleSet(x, normalize_log_weights(logw))


def _whitening_scale(x, w):
    mean = w @ x
    var = w @ np.square(x - mean)
    scale = np.sqrt(var)
    # spread at roundoff level of the mean counts as no spread
    scale[scale <= 1e-12 * np.maximum(np.abs(mean), 1.0)] = 1.0
    return scale


def _constrained_cov(scatter, scale, floor):
    """Maximizer of the Gaussian likelihood subject to ``P >= floor * diag(scale^2)``."""
    white = scatter / np.outer(scale, scale)
    lam, vec = np.linalg.eigh(symmetrize(white))
    lam = np.maximum(lam, floor)
    return symmetrize((vec * lam) @ vec.T * np.outer(scale, scale))


def _kmeanspp(x, w, g, rng, scale):
    xs = x / scale
    centres = [int(rng.choice(x.shape[0], p=w))]
    d2 = np.sum(np.square(xs - xs[centres[0]]), axis=1)
    for _ in range(1, g):
        prob = w * d2
        tot = prob.sum()
        j = int(rng.choice(x.shape[0], p=prob / tot)) if tot > 0 else int(rng.choice(x.shape[0], p=w))
        centres.append(j)
        d2 = np.minimum(d2, np.sum(np.square(xs - xs[j]), axis=1))
    return x[centres]


def _weighted_loglik(x, w, weights, means, covs):
    mix = GaussianMixture(weights, means, covs)
    return float(w @ gmm_logpdf(mix, x))


def em_fit(particles, weights, n_components, em_cfg=EmConfig(), rng=None, return_history=False):
    """Weighted EM fit of an ``n_components`` Gaussian mixture.

    Responsibilities use the current mixture; the M-step weights them by the
    particle weights. Covariances are constrained to
    ``P >= cov_floor * diag(particle variance)``, which keeps each
    iteration a constrained maximization, so the weighted log-likelihood is
    non-decreasing.

    Returns
    -------
    GaussianMixture, or ``(GaussianMixture, list_of_loglik)`` when
    ``return_history`` is set.
    """
    x = np.asarray(particles, dtype=float)
    w = np.asarray(weights, dtype=float)
    n, d = x.shape
    if n < n_components:
        raise ContractError("need at least as many particles as components")
    if abs(w.sum() - 1.0) > 1e-10:
        raise ContractError("particle weights must be normalized")
    rng = np.random.default_rng() if rng is None else rng
    scale = _whitening_scale(x, w)
    floor = em_cfg.cov_floor

    def m_step(resp):
        r = resp * w[:, None]
        mass = r.sum(axis=0)
        means = np.empty((n_components, d))
        covs = np.empty((n_components, d, d))
        for s in range(n_components):
            if mass[s] <= 1e-300:
                j = int(np.argmax(w))
                means[s] = x[j]
                covs[s] = _constrained_cov(global_scatter, scale, floor)
                mass[s] = 1.0 / n
                continue
            means[s] = r[:, s] @ x / mass[s]
            diff = x - means[s]
            covs[s] = _constrained_cov((diff * r[:, s, None]).T @ diff / mass[s], scale, floor)
        return mass / mass.sum(), means, covs

    mean_all = w @ x
    diff0 = x - mean_all
    global_scatter = (diff0 * w[:, None]).T @ diff0
    if n_components == 1:
        mix = GaussianMixture(
            np.ones(1), mean_all[None], _constrained_cov(global_scatter, scale, floor)[None]
        )
        hist = [_weighted_loglik(x, w, mix.weights, mix.means, mix.covs)]
        return (mix, hist) if return_history else mix

    means = _kmeanspp(x, w, n_components, rng, scale)
    covs = np.broadcast_to(
        _constrained_cov(global_scatter, scale, floor), (n_components, d, d)
    ).copy()
    alpha = np.full(n_components, 1.0 / n_components)
    history = []
    prev = None
    for _ in range(em_cfg.max_iters):
        comp = gmm_component_logpdf(GaussianMixture(alpha, means, covs), x)
        tot = logsumexp(comp, axis=1, keepdims=True)
        ll = float(w @ tot[:, 0])
        history.append(ll)
        if prev is not None and abs(ll - prev) <= em_cfg.tol * max(abs(prev), 1e-300):
            break
        prev = ll
        alpha, means, covs = m_step(np.exp(comp - tot))
    else:
        history.append(_weighted_loglik(x, w, alpha, means, covs))
    mix = GaussianMixture(alpha, means, covs)
    return (mix, history) if return_history else mix


def gmsppf_estimate(mix, g=None, ut_cfg=UtConfig()):
    """``sum_s alpha_s E[g(x) | component s]``; unscented inner expectation for nonlinear g."""
    if g is None:
        return mix.mean()
    per = unscented_expectation(mix.means, mix.covs, g, ut_cfg)
    return mix.weights @ per


class GaussianMixtureSigmaPointParticleFilter:
    """Recursive GMSPPF over a `StateSpaceModel`."""

    name = "gmsppf"

    def __init__(
        self,
        model,
        prior,
        cfg=GmsppfConfig(),
        rng=None,
        ut_cfg=UtConfig(),
        process_noise=None,
        measurement_noise=None,
        min_log_likelihood=LOG_UNDERFLOW,
    ):
        self.model = model
        self.cfg = cfg
        self.rng = np.random.default_rng() if rng is None else rng
        self.ut_cfg = ut_cfg
        self.min_log_likelihood = min_log_likelihood
        n = model.n
        self.process_noise = process_noise or GaussianMixture.single(
            GaussianBelief(np.zeros(n), model.q)
        )
        self.measurement_noise = measurement_noise or GaussianMixture.single(
            GaussianBelief(np.zeros(model.n_y), model.r)
        )
        if self.process_noise.size != cfg.G_p or self.measurement_noise.size != cfg.G_m:
            raise ConfigError("noise mixtures must have G_p and G_m components")
        if isinstance(prior, GaussianMixture):
            self.mixture = prior
        elif cfg.G_s == 1:
            self.mixture = GaussianMixture.single(prior)
        else:
            ps = ParticleSet.from_belief(prior, cfg.N, self.rng)
            self.mixture = em_fit(ps.particles, ps.weights, cfg.G_s, cfg.em, self.rng)
        self.particles = None
        self.counts = []

    def predict(self, p=None):
        self.prior = gmm_time_update(self.mixture, self.process_noise, self.model, p, self.ut_cfg)
        return self.prior

    def update(self, y, p=None):
        post = gmm_measurement_update(
            self.prior, self.measurement_noise, self.model, p, y, self.ut_cfg
        )
        self.particles = gmm_importance_sample(
            post, self.prior, self.model, p, y, self.cfg.N, self.rng, self.min_log_likelihood
        )
        self.mixture = em_fit(
            self.particles.particles, self.particles.weights, self.cfg.G_s, self.cfg.em, self.rng
        )
        self.counts = [self.prior.size, post.size, self.mixture.size]
        return self.mixture

    @property
    def mean(self):
        return self.mixture.mean()

    @property
    def std(self):
        return np.sqrt(np.maximum(np.diag(self.mixture.cov()), 0.0))

    @property
    def cov(self):
        return self.mixture.cov()
