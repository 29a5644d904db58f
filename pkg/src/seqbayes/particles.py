"""Bootstrap particle filter: propagation, log-space reweighting, resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DegenerateLikelihoodError, NumericalError
from .gaussian import GaussianBelief, batch_log_density, matrix_sqrt

# log of the smallest positive normal double: likelihoods below this underflow
LOG_UNDERFLOW = float(np.log(np.finfo(float).tiny))


@dataclass(frozen=True)
class ParticleSet:
    """``N`` particles (rows of ``particles``) with normalized ``weights``."""

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.particles, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (x.shape[0],):
            raise ContractError(f"{w.shape[0]} weights for {x.shape[0]} particles")
        if x.shape[0] < 1:
            raise ContractError("a particle set needs at least one particle")
        if np.any(w < 0):
            raise ContractError("particle weights must be nonnegative")
        object.__setattr__(self, "particles", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, particles):
        particles = np.asarray(particles, dtype=float)
        return cls(particles, np.full(particles.shape[0], 1.0 / particles.shape[0]))

    @classmethod
    def from_belief(cls, belief, n_particles, rng):
        s = matrix_sqrt(belief.cov)
        x = belief.mean + rng.standard_normal((n_particles, belief.dim)) @ s.T
        return cls.uniform(x)

    @property
    def size(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]

    def normalized(self):
        return ParticleSet(self.particles, self.weights / self.weights.sum())


@dataclass(frozen=True)
class ResamplingPolicy:
    """Resampling scheme and the ESS fraction below which it triggers.

    ``threshold_fraction=1`` resamples at every step.
    """

    scheme: str = "systematic"
    threshold_fraction: float = 0.2

    def __post_init__(self):
        if self.scheme not in ("systematic", "multinomial"):
            raise ConfigError(f"unknown resampling scheme {self.scheme!r}")
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise ConfigError("threshold_fraction must lie in (0, 1]")

    def should_resample(self, weights):
        if self.threshold_fraction >= 1.0:
            return True
        n = weights.shape[0]
        return ess_of(weights) < self.threshold_fraction * n


def normalize_log_weights(logw):
    """Normalized linear weights from log weights using a max shift."""
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if np.any(np.isnan(logw)) or not np.any(finite):
        raise DegenerateLikelihoodError("all importance weights vanished")
    shifted = np.exp(logw - logw[finite].max())
    return shifted / shifted.sum()


def check_likelihood(loglik, min_log_likelihood=LOG_UNDERFLOW):
    """Raise if every particle's likelihood is below ``exp(min_log_likelihood)``.

    ``min_log_likelihood=None`` only rejects non-finite log-likelihoods.
    """
    best = np.max(loglik) if loglik.size else -np.inf
    if np.isnan(best) or best == -np.inf:
        raise DegenerateLikelihoodError("likelihood is zero for every particle")
    if min_log_likelihood is not None and best < min_log_likelihood:
        raise DegenerateLikelihoodError(
            f"largest log-likelihood {best:.4g} is below {min_log_likelihood:.4g}: "
            "the measurement is implausible under every particle"
        )


def _noise(q, size, rng):
    s = matrix_sqrt(q)
    if not np.any(s):
        return np.zeros((size, q.shape[0]))
    return rng.standard_normal((size, q.shape[0])) @ s.T


def bootstrap_propagate(ps, model, p, rng):
    """Draw ``x^j <- g(x^j, p) + v`` with ``v ~ N(0, Q)``; weights unchanged."""
    x = model.g(ps.particles, p)
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise NumericalError("particle became non-finite", index=int(np.argmax(bad)))
    x = x + _noise(model.q, ps.size, rng)
    return ParticleSet(x, ps.weights)


def log_likelihoods(particles, model, p, y):
    """``log N(y; h(x^j, p), R)`` for every particle."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (model.n_y,):
        raise ContractError(f"measurement shape {y.shape} != ({model.n_y},)")
    return batch_log_density(y, model.h(particles, p), model.r)


def likelihood_reweight(ps, model, p, y, min_log_likelihood=LOG_UNDERFLOW):
    """Multiply weights by the measurement likelihood and renormalize.

    Raises
    ------
    DegenerateLikelihoodError
        When the likelihood underflows for every particle.
    """
    loglik = log_likelihoods(ps.particles, model, p, y)
    check_likelihood(loglik, min_log_likelihood)
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + loglik
    return ParticleSet(ps.particles, normalize_log_weights(logw))


def general_reweight(
    ps, model, p, y, proposal_logpdf, transition_logpdf, min_log_likelihood=LOG_UNDERFLOW
):
    """Full importance ratio ``w * p(y|x) p(x|x_prev) / q(x|x_prev, y)``.

    ``proposal_logpdf`` and ``transition_logpdf`` are arrays of log densities
    at the particles, or callables taking the particle array.
    """
    lq = proposal_logpdf(ps.particles) if callable(proposal_logpdf) else proposal_logpdf
    lp = transition_logpdf(ps.particles) if callable(transition_logpdf) else transition_logpdf
    lq = np.asarray(lq, dtype=float)
    lp = np.asarray(lp, dtype=float)
    if np.any(~np.isfinite(lq)):
        j = int(np.argmax(~np.isfinite(lq)))
        raise ContractError(f"proposal density is zero at drawn particle {j}")
    loglik = log_likelihoods(ps.particles, model, p, y)
    check_likelihood(loglik, min_log_likelihood)
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + loglik + (lp - lq)
    return ParticleSet(ps.particles, normalize_log_weights(logw))


def ess_of(weights):
    return 1.0 / np.sum(np.square(weights))


def effective_sample_size(ps):
    """``1 / sum(w^2)``, between 1 and N for normalized weights."""
    return ess_of(ps.weights)


def resample_indices(weights, scheme, rng):
    """Ancestor indices drawn according to ``weights``."""
    n = weights.shape[0]
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    if scheme == "systematic":
        u = (np.arange(n) + rng.uniform()) / n
    elif scheme == "multinomial":
        u = np.sort(rng.uniform(size=n))
    else:
        raise ConfigError(f"unknown resampling scheme {scheme!r}")
    return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)


def resample(ps, policy, rng):
    """Resample with replacement and reset all weights to ``1/N``."""
    idx = resample_indices(ps.weights, policy.scheme, rng)
    return ParticleSet.uniform(ps.particles[idx])


def estimate(ps, g=None):
    """Weighted sum ``sum_j w^j g(x^j)``; the posterior mean when ``g`` is None."""
    vals = ps.particles if g is None else np.asarray(g(ps.particles), dtype=float)
    return np.tensordot(ps.weights, vals, axes=(0, 0))


def weighted_std(particles, weights):
    mean = weights @ particles
    var = weights @ np.square(particles - mean)
    return np.sqrt(np.maximum(var, 0.0))


def weighted_cov(particles, weights):
    diff = particles - weights @ particles
    return (diff * weights[:, None]).T @ diff


class ParticleFilter:
    """Bootstrap particle filter.

    Parameters
    ----------
    model : StateSpaceModel
    prior : GaussianBelief or ParticleSet
        Initial density; a belief is sampled with ``n_particles`` draws.
    n_particles : int
    rng : numpy.random.Generator
    policy : ResamplingPolicy
    min_log_likelihood : float or None
        Degeneracy floor, see `check_likelihood`.
    """

    name = "pf"

    def __init__(
        self,
        model,
        prior,
        n_particles=None,
        rng=None,
        policy=ResamplingPolicy(),
        min_log_likelihood=LOG_UNDERFLOW,
    ):
        self.model = model
        self.rng = np.random.default_rng() if rng is None else rng
        self.policy = policy
        self.min_log_likelihood = min_log_likelihood
        if isinstance(prior, GaussianBelief):
            if not n_particles:
                raise ContractError("n_particles is required when sampling a prior belief")
            prior = ParticleSet.from_belief(prior, n_particles, self.rng)
        self.particles = prior
        self.ess = effective_sample_size(prior)
        self.resampled = False

    def predict(self, p=None):
        self.particles = bootstrap_propagate(self.particles, self.model, p, self.rng)
        return self.particles

    def reweight(self, y, p=None):
        self.particles = likelihood_reweight(
            self.particles, self.model, p, y, self.min_log_likelihood
        )
        self.ess = effective_sample_size(self.particles)

    def update(self, y, p=None):
        self.reweight(y, p)
        self.resampled = self.policy.should_resample(self.particles.weights)
        if self.resampled:
            self.particles = resample(self.particles, self.policy, self.rng)
        return self.particles

    @property
    def mean(self):
        return estimate(self.particles)

    @property
    def std(self):
        return weighted_std(self.particles.particles, self.particles.weights)

    @property
    def cov(self):
        return weighted_cov(self.particles.particles, self.particles.weights)
