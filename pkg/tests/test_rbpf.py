import dataclasses

import numpy as np
import pytest
from scipy import stats

from seqbayes.errors import ConfigError
from seqbayes.gaussian import GaussianBelief
from seqbayes.model import linear_model
from seqbayes.particles import ParticleFilter, ResamplingPolicy
from seqbayes.rbpf import (
    PartitionedBelief,
    RaoBlackwellisedParticleFilter,
    rbpf_estimate,
    rbpf_measurement_update,
    rbpf_resample,
    rbpf_reweight,
    rbpf_time_update,
)

from oracles import kf_step, simulate_linear

# x = [a, b1, b2]: a is an AR(1) block sampled by particles, b is marginalized;
# the blocks only couple through the measurement
A = np.array([[0.95, 0.0, 0.0], [0.0, 0.9, 0.2], [0.0, -0.2, 0.9]])
H = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
Q = np.diag([0.05, 0.1, 0.1])
R = np.diag([0.2, 0.3])


def partitioned_model():
    return linear_model(A, H, Q, R)


def as_nonlinear(m):
    return dataclasses.replace(m, linear=None)


def prior():
    return GaussianBelief(np.zeros(3), np.eye(3))


def test_partition_validation(rng):
    with pytest.raises(ConfigError):
        PartitionedBelief(np.zeros((2, 1)), np.full(2, 0.5), np.zeros((2, 1)), np.ones((2, 1, 1)), (), (0, 1))
    with pytest.raises(ConfigError):
        PartitionedBelief(np.zeros((2, 1)), np.full(2, 0.5), np.zeros((2, 1)), np.ones((2, 1, 1)), (0,), (2,))
    with pytest.raises(ConfigError):
        RaoBlackwellisedParticleFilter(partitioned_model(), prior(), [5], 10, rng)


def test_empty_marginal_is_bootstrap_pf():
    m = partitioned_model()
    ys = simulate_linear(np.random.default_rng(1), A, H, Q, R, np.zeros(3), 25)[1]
    pol = ResamplingPolicy(threshold_fraction=0.5)
    pf = ParticleFilter(m, prior(), 100, np.random.default_rng(4), pol)
    rb = RaoBlackwellisedParticleFilter(m, prior(), [0, 1, 2], 100, np.random.default_rng(4), policy=pol)
    for y in ys[1:]:
        pf.predict()
        rb.predict()
        pf.update(y)
        rb.update(y)
        np.testing.assert_array_equal(rb.belief.a_particles, pf.particles.particles)
        np.testing.assert_allclose(rb.belief.a_weights, pf.particles.weights, rtol=1e-12)


def test_static_sampled_block(rng):
    a = A.copy()
    a[0, 0] = 1.0
    q = Q.copy()
    q[0, 0] = 0.0
    m = linear_model(a, H, q, R)
    pb = PartitionedBelief.from_belief(prior(), (0,), (1, 2), 20, rng)
    out = rbpf_time_update(pb, m, None, rng=rng)
    np.testing.assert_array_equal(out.a_particles, pb.a_particles)
    assert not np.allclose(out.b_covs, pb.b_covs)


@pytest.mark.parametrize("linear", [True, False])
def test_conditional_filters_match_kf(linear, rng):
    m = partitioned_model() if linear else as_nonlinear(partitioned_model())
    pb = PartitionedBelief.from_belief(prior(), (0,), (1, 2), 8, rng)
    pb = dataclasses.replace(pb, b_means=rng.standard_normal((8, 2)))
    pr = rbpf_time_update(pb, m, None, rng=rng)
    abb, qb = A[1:, 1:], Q[1:, 1:]
    for j in range(8):
        np.testing.assert_allclose(pr.b_means[j], abb @ pb.b_means[j], atol=1e-9)
        np.testing.assert_allclose(pr.b_covs[j], abb @ pb.b_covs[j] @ abb.T + qb, atol=1e-9)
    y = np.array([0.4, -0.3])
    post = rbpf_measurement_update(pr, m, None, y)
    for j in range(8):
        shifted = y - H[:, 0] * pr.a_particles[j, 0]
        _, _, mu, pu = kf_step(
            pr.b_means[j], pr.b_covs[j], np.eye(2), H[:, 1:], np.zeros((2, 2)), R, shifted
        )
        np.testing.assert_allclose(post.b_means[j], mu, atol=1e-9)
        np.testing.assert_allclose(post.b_covs[j], pu, atol=1e-9)


def test_uninformative_measurement_keeps_priors(rng):
    m = linear_model(A, H, Q, 1e12 * np.eye(2))
    pb = PartitionedBelief.from_belief(prior(), (0,), (1, 2), 5, rng)
    post = rbpf_measurement_update(pb, m, None, np.array([3.0, 3.0]))
    np.testing.assert_allclose(post.b_means, pb.b_means, atol=1e-9)
    np.testing.assert_allclose(post.b_covs, pb.b_covs, atol=1e-9)


def test_reweight_examples():
    m = linear_model([[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0]], np.eye(2), [[0.5]])
    same = PartitionedBelief(np.ones((4, 1)), np.full(4, 0.25), np.zeros((4, 1)), np.full((4, 1, 1), 0.5), (0,), (1,))
    out = rbpf_reweight(same, m, None, np.array([0.7]))
    np.testing.assert_allclose(out.a_weights, 0.25, atol=1e-15)
    # innovation std is 1 (0.5 + 0.5); second particle predicts 10 std away
    two = PartitionedBelief(np.array([[0.0], [10.0]]), np.full(2, 0.5), np.zeros((2, 1)), np.full((2, 1, 1), 0.5), (0,), (1,))
    for model in (m, as_nonlinear(m)):
        out = rbpf_reweight(two, model, None, np.array([0.0]))
        assert out.a_weights[1] / out.a_weights[0] == pytest.approx(np.exp(-50.0), rel=1e-9)


def test_resample_keeps_pairs(rng):
    pb = PartitionedBelief.from_belief(prior(), (0,), (1, 2), 30, rng)
    tag = np.arange(30.0)
    pb = dataclasses.replace(
        pb, b_means=np.stack([tag, -tag], axis=1), a_weights=rng.dirichlet(np.ones(30))
    )
    out, idx = rbpf_resample(pb, ResamplingPolicy(), rng)
    np.testing.assert_array_equal(out.b_means[:, 0], idx)
    np.testing.assert_array_equal(out.a_particles, pb.a_particles[idx])
    np.testing.assert_allclose(out.a_weights, 1 / 30)


def test_estimate_examples(rng):
    one = PartitionedBelief(np.array([[2.0]]), np.ones(1), np.array([[5.0, 6.0]]), np.eye(2)[None], (1,), (0, 2))
    np.testing.assert_array_equal(rbpf_estimate(one), [5.0, 2.0, 6.0])
    pb = PartitionedBelief.from_belief(prior(), (0,), (1, 2), 40, rng)
    pb = dataclasses.replace(pb, a_weights=rng.dirichlet(np.ones(40)))
    full = rbpf_estimate(pb, lambda x: x[..., 0] ** 2)
    assert full == pytest.approx(pb.a_weights @ pb.a_particles[:, 0] ** 2, rel=1e-12)


def test_marginal_mean_matches_kf(rng):
    m = partitioned_model()
    _, ys = simulate_linear(np.random.default_rng(2), A, H, Q, R, np.zeros(3), 15)
    rb = RaoBlackwellisedParticleFilter(m, prior(), [0], 500, rng)
    mk, pk = np.zeros(3), np.eye(3)
    for y in ys[1:]:
        rb.predict()
        rb.update(y)
        _, _, mk, pk = kf_step(mk, pk, A, H, Q, R, y)
    sd = np.sqrt(np.diag(pk))
    assert np.all(np.abs(rb.mean - mk) < 5 * sd / np.sqrt(500) * 3)


def test_variance_reduction_small(rng):
    m = partitioned_model()
    _, ys = simulate_linear(np.random.default_rng(3), A, H, Q, R, np.zeros(3), 15)
    mk, pk = np.zeros(3), np.eye(3)
    for y in ys[1:]:
        _, _, mk, pk = kf_step(mk, pk, A, H, Q, R, y)
    d_rb, d_pf = [], []
    for seed in range(30):
        rb = RaoBlackwellisedParticleFilter(m, prior(), [0], 100, np.random.default_rng(seed))
        pf = ParticleFilter(m, prior(), 100, np.random.default_rng(seed))
        for y in ys[1:]:
            for f in (rb, pf):
                f.predict()
                f.update(y)
        d_rb.append(np.sum((rb.mean[1:] - mk[1:]) ** 2))
        d_pf.append(np.sum((pf.mean[1:] - mk[1:]) ** 2))
    res = stats.ttest_rel(d_pf, d_rb, alternative="greater")
    assert np.mean(d_rb) < np.mean(d_pf) and res.pvalue < 0.05
