"""Particle filter with mutation of time-invariant state components.

After resampling, the slots of unfit particles may be taken by the model
prediction of the previous point estimate, and their parameter components
undergo a multiplicative creep mutation. Mutated particles are penalized in
proportion to how far they moved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .particles import (
    LOG_UNDERFLOW,
    ParticleFilter,
    ParticleSet,
    ResamplingPolicy,
    estimate,
    resample_indices,
)


@dataclass(frozen=True)
class MutationConfig:
    """Probabilities and radii of the prior replacement and creep mutation.

    Attributes
    ----------
    p_r : float
        Probability that an unfit particle is replaced by the prior estimate.
    p_m : float
        Per-component mutation probability.
    radius : float or sequence of float
        Perturbation radius ``d_i`` per invariant component.
    invariant_indices : sequence of int
        State components treated as time-invariant parameters.
    norm_on_invariant : bool
        Measure the relative mutation size on the invariant components only
        instead of the full state.
    """

    p_r: float = 0.05
    p_m: float = 0.25
    radius: object = 0.2
    invariant_indices: Sequence[int] = ()
    norm_on_invariant: bool = False

    def __post_init__(self):
        for name in ("p_r", "p_m"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"mpf.{name} must lie in [0, 1], got {v}")
        idx = tuple(int(i) for i in self.invariant_indices)
        if not idx:
            raise ConfigError("mpf.invariant_indices must not be empty")
        object.__setattr__(self, "invariant_indices", idx)
        r = np.broadcast_to(np.asarray(self.radius, dtype=float), (len(idx),)).copy()
        if np.any(r <= 0):
            raise ConfigError("mpf.radius entries must be positive")
        object.__setattr__(self, "radius", r)


def unfit_indices(weights):
    """Indices of particles whose weight is below ``1/N``."""
    return np.flatnonzero(weights < 1.0 / weights.shape[0])


def replace_unfit_with_prior(ps, unfit, prior_mean, cfg, rng):
    """Replace each listed particle by ``prior_mean`` with probability ``p_r``."""
    unfit = np.asarray(unfit, dtype=int)
    if cfg.p_r == 0.0 or unfit.size == 0:
        return ps
    hit = unfit[rng.uniform(size=unfit.size) < cfg.p_r]
    x = ps.particles.copy()
    x[hit] = prior_mean
    return ParticleSet(x, ps.weights)


def mutate(ps, cfg, rng, eligible=None):
    """Creep-mutate invariant components: ``x <- x (1 + d (m - 0.5))``.

    ``eligible`` optionally lists the particles that may mutate (all by
    default); each eligible component mutates with probability ``p_m``.

    Returns
    -------
    (ParticleSet, ndarray of bool)
        Mutated set and a per-particle flag marking particles that changed.
    """
    n = ps.size
    rows = np.arange(n) if eligible is None else np.asarray(eligible, dtype=int)
    flags = np.zeros(n, dtype=bool)
    if cfg.p_m == 0.0 or rows.size == 0:
        return ps, flags
    idx = np.asarray(cfg.invariant_indices)
    pick = rng.uniform(size=(rows.size, idx.size)) < cfg.p_m
    m = rng.uniform(size=(rows.size, idx.size))
    factor = np.where(pick, 1.0 + cfg.radius * (m - 0.5), 1.0)
    x = ps.particles.copy()
    x[np.ix_(rows, idx)] = x[np.ix_(rows, idx)] * factor
    flags[rows] = pick.any(axis=1)
    return ParticleSet(x, ps.weights), flags


def mutation_weights(ps, parents, mutated, n=None, indices=None):
    """Penalize mutated particles by ``1 / (|dx| / |x_parent| + 1)`` and normalize.

    ``indices`` restricts the norms to a subset of components. A parent with
    zero norm keeps the unpenalized weight.
    """
    n = ps.size if n is None else n
    if not np.any(mutated):
        return ParticleSet.uniform(ps.particles)
    x = ps.particles if indices is None else ps.particles[:, indices]
    x0 = parents if indices is None else parents[:, indices]
    w = np.full(ps.size, 1.0 / n)
    num = np.linalg.norm(x - x0, axis=1)
    den = np.linalg.norm(x0, axis=1)
    ok = mutated & (den > 0)
    w[ok] = (1.0 / n) / (num[ok] / den[ok] + 1.0)
    return ParticleSet(ps.particles, w / w.sum())


class MutationParticleFilter(ParticleFilter):
    """Bootstrap particle filter whose resampling step adds mutation."""

    name = "mpf"

    def __init__(
        self,
        model,
        prior,
        mutation,
        n_particles=None,
        rng=None,
        policy=ResamplingPolicy(threshold_fraction=0.3),
        min_log_likelihood=LOG_UNDERFLOW,
    ):
        super().__init__(model, prior, n_particles, rng, policy, min_log_likelihood)
        self.mutation = mutation
        self._point = estimate(self.particles)
        self._prior_point = self._point

    def predict(self, p=None):
        self._prior_point = self.model.g(self._point, p)
        return super().predict(p)

    def update(self, y, p=None):
        self.reweight(y, p)
        self.resampled = self.policy.should_resample(self.particles.weights)
        if self.resampled:
            ps = self.particles
            unfit = unfit_indices(ps.weights)
            idx = resample_indices(ps.weights, self.policy.scheme, self.rng)
            ps = ParticleSet.uniform(ps.particles[idx])
            ps = replace_unfit_with_prior(ps, unfit, self._prior_point, self.mutation, self.rng)
            parents = ps.particles
            ps, flags = mutate(ps, self.mutation, self.rng, eligible=unfit)
            sub = list(self.mutation.invariant_indices) if self.mutation.norm_on_invariant else None
            self.particles = mutation_weights(ps, parents, flags, indices=sub)
        self._point = estimate(self.particles)
        return self.particles
