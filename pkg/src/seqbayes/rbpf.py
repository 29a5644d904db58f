"""Rao-Blackwellised particle filter.

The state is split into ``x^a`` (sampled with particles) and ``x^b`` (tracked
by one conditional Gaussian filter per particle). The conditional filter is a
UKF, or an exact Kalman filter when the model declares linear maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .gaussian import GaussianBelief, batch_log_density, matrix_sqrt, symmetrize
from .particles import (
    LOG_UNDERFLOW,
    ResamplingPolicy,
    check_likelihood,
    ess_of,
    normalize_log_weights,
    resample_indices,
    weighted_std,
)
from .ukf import UtConfig, sigma_points, unscented_expectation, unscented_moments, ut_update


@dataclass(frozen=True)
class PartitionedBelief:
    """Particles over ``x^a`` paired with Gaussian beliefs over ``x^b``.

    Attributes
    ----------
    a_particles : ndarray, shape (N, n_a)
    a_weights : ndarray, shape (N,)
    b_means : ndarray, shape (N, n_b)
    b_covs : ndarray, shape (N, n_b, n_b)
    a_indices, b_indices : tuple of int
        Positions of the two blocks in the full state vector.
    """

    a_particles: np.ndarray
    a_weights: np.ndarray
    b_means: np.ndarray
    b_covs: np.ndarray
    a_indices: tuple
    b_indices: tuple

    def __post_init__(self):
        a_idx = tuple(int(i) for i in self.a_indices)
        b_idx = tuple(int(i) for i in self.b_indices)
        n = len(a_idx) + len(b_idx)
        if not a_idx:
            raise ConfigError("the sampled block x^a must not be empty")
        if sorted(a_idx + b_idx) != list(range(n)):
            raise ConfigError("partition indices must be disjoint and cover the state")
        object.__setattr__(self, "a_indices", a_idx)
        object.__setattr__(self, "b_indices", b_idx)
        a = np.asarray(self.a_particles, dtype=float).reshape(-1, len(a_idx))
        nb = len(b_idx)
        m = np.asarray(self.b_means, dtype=float).reshape(a.shape[0], nb)
        c = np.asarray(self.b_covs, dtype=float).reshape(a.shape[0], nb, nb)
        w = np.asarray(self.a_weights, dtype=float)
        if w.shape != (a.shape[0],):
            raise ContractError("one weight per particle is required")
        object.__setattr__(self, "a_particles", a)
        object.__setattr__(self, "b_means", m)
        object.__setattr__(self, "b_covs", symmetrize(c))
        object.__setattr__(self, "a_weights", w)

    @property
    def size(self):
        return self.a_particles.shape[0]

    @property
    def n(self):
        return len(self.a_indices) + len(self.b_indices)

    @property
    def b_beliefs(self):
        return [GaussianBelief(m, c) for m, c in zip(self.b_means, self.b_covs)]

    @classmethod
    def from_belief(cls, belief, a_indices, b_indices, n_particles, rng):
        """Sample ``x^a`` from its marginal; every ``x^b`` belief starts at the marginal."""
        a = list(a_indices)
        b = list(b_indices)
        s = matrix_sqrt(belief.cov[np.ix_(a, a)])
        xa = belief.mean[a] + rng.standard_normal((n_particles, len(a))) @ s.T
        mb = np.broadcast_to(belief.mean[b], (n_particles, len(b))).copy()
        cb = np.broadcast_to(belief.cov[np.ix_(b, b)], (n_particles, len(b), len(b))).copy()
        return cls(xa, np.full(n_particles, 1.0 / n_particles), mb, cb, a_indices, b_indices)


def _assemble(pb, xa, xb):
    """Full states from broadcastable blocks ``xa (..., n_a)`` and ``xb (..., n_b)``."""
    shape = np.broadcast_shapes(xa.shape[:-1], xb.shape[:-1])
    out = np.empty(shape + (pb.n,))
    out[..., list(pb.a_indices)] = xa
    out[..., list(pb.b_indices)] = xb
    return out


def _blocks(model, pb):
    a, b = list(pb.a_indices), list(pb.b_indices)
    return a, b, model.q[np.ix_(a, a)], model.q[np.ix_(b, b)]


def rbpf_time_update(pb, model, p, ut_cfg=UtConfig(), rng=None):
    """Draw ``x^a`` from its transition, then predict every ``x^b`` belief given it.

    ``x^a`` is propagated with the conditional means of ``x^b``; cross terms of
    the process noise between the blocks are ignored.
    """
    a, b, qa, qb = _blocks(model, pb)
    prev_full = _assemble(pb, pb.a_particles, pb.b_means)
    xa = model.g(prev_full, p)[:, a]
    s = matrix_sqrt(qa)
    if np.any(s):
        xa = xa + rng.standard_normal(xa.shape) @ s.T
    if not np.all(np.isfinite(xa)):
        bad = int(np.argmax(~np.isfinite(xa).all(axis=1)))
        raise NumericalError("particle became non-finite", index=bad)
    if not b:
        return PartitionedBelief(xa, pb.a_weights, pb.b_means, pb.b_covs, pb.a_indices, pb.b_indices)

    lin = model.linear
    if lin is not None:
        A = lin.a
        p_arr = np.zeros(model.n_p) if p is None else np.asarray(p, dtype=float)
        abb, aba = A[np.ix_(b, b)], A[np.ix_(b, a)]
        # conditional on the new x^a, as for the nonlinear path
        mean = pb.b_means @ abb.T + xa @ aba.T + (lin.b @ p_arr)[b]
        cov = abb @ pb.b_covs @ abb.T + qb
    else:
        pts, wm, wc = sigma_points(pb.b_means, pb.b_covs, ut_cfg)
        full = _assemble(pb, xa[:, None, :], pts)
        try:
            prop = model.g(full, p)[..., b]
        except NumericalError as exc:
            raise NumericalError(f"conditional time update failed: {exc}") from None
        if not np.all(np.isfinite(prop)):
            bad = int(np.argmax(~np.isfinite(prop).all(axis=(1, 2))))
            raise NumericalError("conditional filter produced non-finite state", index=bad)
        mean, cov = unscented_moments(prop, wm, wc)
        cov = cov + qb
    return PartitionedBelief(xa, pb.a_weights, mean, cov, pb.a_indices, pb.b_indices)


def _innovation(pb, model, p, y, ut_cfg):
    """Predicted output, innovation covariance and gain per particle."""
    b = list(pb.b_indices)
    if not b:
        yp = model.h(_assemble(pb, pb.a_particles, pb.b_means), p)
        return yp, np.broadcast_to(model.r, (pb.size,) + model.r.shape), None
    lin = model.linear
    if lin is not None:
        p_arr = np.zeros(model.n_p) if p is None else np.asarray(p, dtype=float)
        a = list(pb.a_indices)
        hb, ha = lin.h[:, b], lin.h[:, a]
        yp = pb.b_means @ hb.T + pb.a_particles @ ha.T + lin.d @ p_arr
        pxy = pb.b_covs @ hb.T
        s = symmetrize(hb @ pxy + model.r)
        try:
            k = np.swapaxes(np.linalg.solve(s, np.swapaxes(pxy, -1, -2)), -1, -2)
        except np.linalg.LinAlgError:
            raise NumericalError("conditional innovation covariance is singular") from None
        return yp, s, (k, y - yp)
    pts, wm, wc = sigma_points(pb.b_means, pb.b_covs, ut_cfg)

    def hfn(xb):
        return model.h(_assemble(pb, pb.a_particles[:, None, :], xb), p)

    mean, cov, yp, s = ut_update(pb.b_means, pb.b_covs, pts, wm, wc, hfn, model.r, y)
    return yp, s, (mean, cov)


def rbpf_reweight(pb, model, p, y, ut_cfg=UtConfig(), min_log_likelihood=LOG_UNDERFLOW):
    """Weights times the conditional filters' innovation densities ``N(y; y_hat, S)``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    yp, s, _ = _innovation(pb, model, p, y, ut_cfg)
    return _weighted(pb, y, yp, s, min_log_likelihood)


def _weighted(pb, y, yp, s, min_log_likelihood):
    try:
        loglik = batch_log_density(y, yp, s)
    except NumericalError as exc:
        raise NumericalError(f"degenerate innovation covariance: {exc}") from None
    check_likelihood(loglik, min_log_likelihood)
    with np.errstate(divide="ignore"):
        logw = np.log(pb.a_weights) + loglik
    return PartitionedBelief(
        pb.a_particles, normalize_log_weights(logw), pb.b_means, pb.b_covs,
        pb.a_indices, pb.b_indices,
    )


def rbpf_measurement_update(pb, model, p, y, ut_cfg=UtConfig()):
    """Condition every ``x^b`` belief on ``y`` through its own filter."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    _, s, upd = _innovation(pb, model, p, y, ut_cfg)
    return _conditioned(pb, model, s, upd)


def _conditioned(pb, model, s, upd):
    if upd is None:
        return pb
    if model.linear is not None:
        k, innov = upd
        mean = pb.b_means + np.einsum("nab,nb->na", k, innov)
        cov = symmetrize(pb.b_covs - k @ s @ np.swapaxes(k, -1, -2))
    else:
        mean, cov = upd
    return PartitionedBelief(pb.a_particles, pb.a_weights, mean, cov, pb.a_indices, pb.b_indices)


def rbpf_resample(pb, policy, rng):
    """Resample (particle, belief) pairs jointly; weights reset to ``1/N``."""
    idx = resample_indices(pb.a_weights, policy.scheme, rng)
    return PartitionedBelief(
        pb.a_particles[idx], np.full(pb.size, 1.0 / pb.size), pb.b_means[idx],
        pb.b_covs[idx], pb.a_indices, pb.b_indices,
    ), idx


def rbpf_estimate(pb, g=None, ut_cfg=UtConfig()):
    """``sum_j w^j E[g(x^a_j, x^b) | x^a_j]``; identity g gives the stacked means."""
    if g is None:
        return pb.a_weights @ _assemble(pb, pb.a_particles, pb.b_means)
    if not pb.b_indices:
        return pb.a_weights @ np.asarray(g(pb.a_particles), dtype=float)

    def inner(xb):
        return g(_assemble(pb, pb.a_particles[:, None, :], xb))

    per = unscented_expectation(pb.b_means, pb.b_covs, inner, ut_cfg)
    return pb.a_weights @ per


def rbpf_cov(pb):
    """Full covariance of the particle/conditional-Gaussian mixture."""
    w = pb.a_weights
    full = _assemble(pb, pb.a_particles, pb.b_means)
    diff = full - w @ full
    cov = (diff * w[:, None]).T @ diff
    b = list(pb.b_indices)
    if b:
        cov[np.ix_(b, b)] += np.einsum("j,jab->ab", w, pb.b_covs)
    return cov


def rbpf_std(pb):
    """Marginal std of the full state: weighted spread of ``x^a`` and mixture std of ``x^b``."""
    out = np.empty(pb.n)
    w = pb.a_weights
    out[list(pb.a_indices)] = weighted_std(pb.a_particles, w)
    if pb.b_indices:
        mb = w @ pb.b_means
        var = w @ (np.diagonal(pb.b_covs, axis1=1, axis2=2) + np.square(pb.b_means - mb))
        out[list(pb.b_indices)] = np.sqrt(np.maximum(var, 0.0))
    return out


class RaoBlackwellisedParticleFilter:
    """Recursive RBPF over a `StateSpaceModel`.

    Parameters
    ----------
    model : StateSpaceModel
    prior : GaussianBelief
    a_indices : sequence of int
        Sampled components; the rest are marginalized.
    n_particles : int
    """

    name = "rbpf"

    def __init__(
        self,
        model,
        prior,
        a_indices,
        n_particles,
        rng=None,
        ut_cfg=UtConfig(),
        policy=ResamplingPolicy(),
        min_log_likelihood=LOG_UNDERFLOW,
    ):
        self.model = model
        self.rng = np.random.default_rng() if rng is None else rng
        self.ut_cfg = ut_cfg
        self.policy = policy
        self.min_log_likelihood = min_log_likelihood
        a = tuple(int(i) for i in a_indices)
        if any(i < 0 or i >= model.n for i in a):
            raise ConfigError(f"rbpf.partition.a_indices out of range for n={model.n}")
        b = tuple(i for i in range(model.n) if i not in a)
        self.belief = PartitionedBelief.from_belief(prior, a, b, n_particles, self.rng)
        self.ess = float(n_particles)
        self.resampled = False
        self.ancestors = None

    def predict(self, p=None):
        self.belief = rbpf_time_update(self.belief, self.model, p, self.ut_cfg, self.rng)
        return self.belief

    def update(self, y, p=None):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        yp, s, upd = _innovation(self.belief, self.model, p, y, self.ut_cfg)
        pb = _weighted(self.belief, y, yp, s, self.min_log_likelihood)
        pb = _conditioned(pb, self.model, s, upd)
        self.ess = ess_of(pb.a_weights)
        self.resampled = self.policy.should_resample(pb.a_weights)
        self.ancestors = None
        if self.resampled:
            pb, self.ancestors = rbpf_resample(pb, self.policy, self.rng)
        self.belief = pb
        return pb

    @property
    def mean(self):
        return rbpf_estimate(self.belief)

    @property
    def std(self):
        return rbpf_std(self.belief)

    @property
    def cov(self):
        return rbpf_cov(self.belief)
