import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqbayes.errors import ConfigError
from seqbayes.gaussian import GaussianBelief
from seqbayes.model import linear_model
from seqbayes.mpf import (
    MutationConfig,
    MutationParticleFilter,
    mutate,
    mutation_weights,
    replace_unfit_with_prior,
    unfit_indices,
)
from seqbayes.particles import ParticleFilter, ParticleSet, ResamplingPolicy


def cfg(**kw):
    kw.setdefault("invariant_indices", [1])
    return MutationConfig(**kw)


def test_config_validation():
    with pytest.raises(ConfigError):
        MutationConfig(invariant_indices=[])
    with pytest.raises(ConfigError):
        cfg(p_r=1.5)
    with pytest.raises(ConfigError):
        cfg(radius=0.0)
    assert (MutationConfig.p_r, MutationConfig.p_m) == (0.05, 0.25)


def test_unfit_below_uniform_weight():
    np.testing.assert_array_equal(unfit_indices(np.array([0.1, 0.5, 0.25, 0.15])), [0, 3])


def test_replace_probability_limits(rng):
    ps = ParticleSet.uniform(rng.standard_normal((6, 2)))
    assert replace_unfit_with_prior(ps, [0, 2], np.zeros(2), cfg(p_r=0.0), rng) is ps
    out = replace_unfit_with_prior(ps, [0, 2], np.array([7.0, 8.0]), cfg(p_r=1.0), rng)
    np.testing.assert_array_equal(out.particles[[0, 2]], [[7, 8], [7, 8]])
    np.testing.assert_array_equal(out.particles[[1, 3, 4, 5]], ps.particles[[1, 3, 4, 5]])


class FixedUniform:
    """Generator stand-in returning a constant for every uniform draw."""

    def __init__(self, value):
        self.value = value

    def uniform(self, size=None):
        return np.full(size, self.value)


def test_creep_fixed_point():
    ps = ParticleSet.uniform(np.array([[1.0, 10.0]]))
    out, flags = mutate(ps, cfg(p_m=1.0), FixedUniform(0.5))
    np.testing.assert_array_equal(out.particles, ps.particles)


def test_creep_formula():
    # m = 1 for the mutation draw: 10 * (1 + 0.2 * 0.5) = 11
    class Draws:
        def __init__(self):
            self.calls = 0

        def uniform(self, size=None):
            self.calls += 1
            return np.zeros(size) if self.calls == 1 else np.ones(size)

    out, flags = mutate(ParticleSet.uniform(np.array([[3.0, 10.0]])), cfg(p_m=1.0), Draws())
    assert out.particles[0, 1] == pytest.approx(11.0)
    assert out.particles[0, 0] == 3.0
    assert flags[0]


@given(st.integers(0, 2**31 - 1))
def test_mutation_touches_invariant_only(seed):
    r = np.random.default_rng(seed)
    ps = ParticleSet.uniform(r.standard_normal((20, 4)))
    c = MutationConfig(p_m=0.5, invariant_indices=[1, 3])
    out, flags = mutate(ps, c, r)
    np.testing.assert_array_equal(out.particles[:, [0, 2]], ps.particles[:, [0, 2]])


def test_mutation_only_eligible_rows(rng):
    ps = ParticleSet.uniform(rng.standard_normal((10, 2)))
    out, flags = mutate(ps, cfg(p_m=1.0), rng, eligible=[2, 5])
    np.testing.assert_array_equal(np.flatnonzero(flags), [2, 5])
    keep = [i for i in range(10) if i not in (2, 5)]
    np.testing.assert_array_equal(out.particles[keep], ps.particles[keep])


def test_mutation_rate_binomial(rng):
    n = 20_000
    ps = ParticleSet.uniform(np.ones((n, 2)))
    _, flags = mutate(ps, cfg(p_m=0.25), rng)
    assert abs(flags.mean() - 0.25) < 4 * np.sqrt(0.25 * 0.75 / n)


def test_mutation_weight_examples():
    parents = np.array([[1.0, 0.0], [1.0, 0.0]])
    # relative difference 0 gives 1/N; relative difference 1 gives 1/(2N)
    ps = ParticleSet.uniform(np.array([[1.0, 0.0], [2.0, 0.0]]))
    out = mutation_weights(ps, parents, np.array([True, True]))
    np.testing.assert_allclose(out.weights, [2 / 3, 1 / 3])
    out = mutation_weights(ps, parents, np.array([False, True]))
    np.testing.assert_allclose(out.weights, [2 / 3, 1 / 3])


def test_mutation_weight_zero_parent_guard():
    ps = ParticleSet.uniform(np.array([[1.0], [2.0]]))
    out = mutation_weights(ps, np.zeros((2, 1)), np.array([True, True]))
    np.testing.assert_allclose(out.weights, 0.5)


@given(st.integers(0, 2**31 - 1))
def test_mutation_never_rewards(seed):
    r = np.random.default_rng(seed)
    parents = r.standard_normal((12, 3))
    flags = r.uniform(size=12) < 0.5
    x = parents + flags[:, None] * r.standard_normal((12, 3))
    n = 12
    out = mutation_weights(ParticleSet.uniform(x), parents, flags)
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-12)
    raw = out.weights / out.weights[~flags].max() / n if (~flags).any() else None
    if raw is not None:
        assert np.all(raw[flags] <= 1.0 / n + 1e-15)


def _model():
    a = np.array([[0.95, 0.0], [0.0, 1.0]])
    h = np.array([[1.0, 0.5]])
    return linear_model(a, h, np.diag([0.1, 1e-6]), [[0.2]])


def test_reduces_to_bootstrap_pf():
    m = _model()
    prior = GaussianBelief([0.0, 1.0], np.eye(2))
    pol = ResamplingPolicy(threshold_fraction=0.5)
    pf = ParticleFilter(m, prior, 200, np.random.default_rng(3), pol)
    mpf = MutationParticleFilter(
        m, prior, cfg(p_r=0.0, p_m=0.0), 200, np.random.default_rng(3), pol
    )
    ys = np.random.default_rng(9).standard_normal(30)
    for y in ys:
        pf.predict()
        mpf.predict()
        pf.update([y])
        mpf.update([y])
        np.testing.assert_array_equal(pf.particles.particles, mpf.particles.particles)
        np.testing.assert_array_equal(pf.particles.weights, mpf.particles.weights)


def test_mpf_weights_normalized_and_tracks(rng):
    m = _model()
    mpf = MutationParticleFilter(m, GaussianBelief([0.0, 1.0], np.eye(2)), cfg(), 300, rng)
    for y in rng.standard_normal(40):
        mpf.predict()
        mpf.update([y])
        assert mpf.particles.weights.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.isfinite(mpf.mean))
