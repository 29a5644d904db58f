import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqbayes.benchmark import MeasurementSetup, ThreeDofParams, benchmark_model
from seqbayes.errors import ContractError, NumericalError
from seqbayes.gaussian import GaussianBelief, weighted_moments
from seqbayes.model import StateSpaceModel, linear_model
from seqbayes.ukf import (
    UnscentedKalmanFilter,
    UtConfig,
    generate_sigma_points,
    sigma_points,
    ukf_measurement_update,
    ukf_time_update,
    ut_update,
)

from conftest import random_spd
from oracles import kf_step, random_linear_system


def test_sigma_points_identity_cov():
    sp = generate_sigma_points(GaussianBelief(np.zeros(2), np.eye(2)), UtConfig(1.0, 2.0, 1.0))
    r3 = np.sqrt(3.0)
    expect = np.array([[0, 0], [r3, 0], [0, r3], [-r3, 0], [0, -r3]])
    np.testing.assert_allclose(sp.points, expect, atol=1e-15)


def test_sigma_points_scalar_weights():
    sp = generate_sigma_points(GaussianBelief([5.0], [[4.0]]), UtConfig(1.0, 2.0, 2.0))
    r = 2 * np.sqrt(3.0)
    np.testing.assert_allclose(sp.points[:, 0], [5.0, 5.0 + r, 5.0 - r])
    np.testing.assert_allclose(sp.mean_weights, [2 / 3, 1 / 6, 1 / 6])
    np.testing.assert_allclose(sp.cov_weights[0], 2 / 3 + 2.0)


def test_default_constants():
    cfg = UtConfig()
    assert (cfg.alpha, cfg.beta, cfg.kappa) == (1.0, 2.0, None)
    assert cfg.lam(6) == pytest.approx(-3.0)  # kappa = 3 - n
    assert len(cfg.weights(7)[0]) == 15


def test_rejects_nonpositive_n_plus_lambda():
    with pytest.raises(ContractError):
        UtConfig(1.0, 2.0, -2.0).weights(2)
    with pytest.raises(ContractError):
        UtConfig(alpha=0.0)


@given(st.integers(1, 8), st.integers(0, 2**31 - 1), st.floats(0.3, 1.0), st.floats(0, 3))
def test_sigma_point_structure(n, seed, alpha, beta):
    r = np.random.default_rng(seed)
    b = GaussianBelief(r.standard_normal(n), random_spd(r, n))
    cfg = UtConfig(alpha, beta)
    sp = generate_sigma_points(b, cfg)
    assert sp.mean_weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(sp.points[0], b.mean)
    np.testing.assert_allclose(sp.points[1 : n + 1] + sp.points[n + 1 :], np.tile(2 * b.mean, (n, 1)), atol=1e-12)
    m = weighted_moments(sp.points, sp.mean_weights, sp.cov_weights)
    np.testing.assert_allclose(m.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(m.cov, b.cov, atol=1e-11)
    # weights depend only on (n, alpha, beta, kappa)
    other = generate_sigma_points(GaussianBelief(np.zeros(n), np.eye(n)), cfg)
    np.testing.assert_array_equal(sp.mean_weights, other.mean_weights)


def test_identity_transition_zero_noise():
    m = linear_model(np.eye(3), np.eye(3), np.zeros((3, 3)), np.eye(3))
    b = GaussianBelief([1.0, 2.0, 3.0], np.diag([1.0, 2.0, 3.0]))
    bp, _ = ukf_time_update(b, m)
    np.testing.assert_allclose(bp.mean, b.mean, atol=1e-14)
    np.testing.assert_allclose(bp.cov, b.cov, atol=1e-14)


def test_linear_time_update_exact(rng):
    a, h, q, r = random_linear_system(rng, 4, 2)
    m = linear_model(a, h, q, r)
    b = GaussianBelief(rng.standard_normal(4), random_spd(rng, 4))
    bp, _ = ukf_time_update(b, m)
    np.testing.assert_allclose(bp.mean, a @ b.mean, atol=1e-10)
    np.testing.assert_allclose(bp.cov, a @ b.cov @ a.T + q, atol=1e-10)


def test_benchmark_step_from_rest_matches_rk4():
    base = benchmark_model(ThreeDofParams(), MeasurementSetup(), np.zeros((6, 6)), np.eye(4))
    m = base.discretize()
    b = GaussianBelief(np.zeros(6), np.zeros((6, 6)))
    bp, _ = ukf_time_update(b, m, np.array([100.0]))
    np.testing.assert_allclose(bp.mean, m.g(np.zeros(6), [100.0]), atol=1e-8)


def test_gain_matches_closed_form(rng):
    n, n_y = 3, 2
    h = rng.standard_normal((n_y, n))
    r = random_spd(rng, n_y)
    m = linear_model(np.eye(n), h, np.zeros((n, n)), r)
    prior = GaussianBelief(rng.standard_normal(n), random_spd(rng, n))
    y = rng.standard_normal(n_y)
    post = ukf_measurement_update(prior, None, m, None, y)
    k = prior.cov @ h.T @ np.linalg.inv(h @ prior.cov @ h.T + r)
    np.testing.assert_allclose(post.mean, prior.mean + k @ (y - h @ prior.mean), atol=1e-10)
    np.testing.assert_allclose(post.cov, prior.cov - k @ h @ prior.cov, atol=1e-10)


def test_uninformative_measurement():
    m = linear_model(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2) * 1e12)
    prior = GaussianBelief([1.0, -1.0], np.eye(2))
    post = ukf_measurement_update(prior, None, m, None, np.array([5.0, 5.0]))
    assert np.linalg.norm(post.mean - prior.mean) < 1e-9


def test_zero_innovation_contracts(rng):
    m = linear_model(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    prior = GaussianBelief([1.0, -1.0], random_spd(rng, 2))
    post = ukf_measurement_update(prior, None, m, None, prior.mean.copy())
    np.testing.assert_allclose(post.mean, prior.mean, atol=1e-14)
    assert np.linalg.eigvalsh(prior.cov - post.cov).min() >= -1e-12


def test_singular_innovation_raises():
    m = linear_model(np.eye(1), np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))
    prior = GaussianBelief([0.0], [[0.0]])
    with pytest.raises(NumericalError, match="innovation"):
        ukf_measurement_update(prior, None, m, None, np.array([1.0]))


def test_measurement_shape_checked():
    m = linear_model(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ContractError):
        ukf_measurement_update(GaussianBelief([0, 0], np.eye(2)), None, m, None, [1.0])


@given(st.integers(0, 2**31 - 1))
def test_linear_equivalence_full_filter(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 7))
    n_y = int(r.integers(1, 4))
    a, h, q, rr = random_linear_system(r, n, n_y)
    m0, p0 = r.standard_normal(n), random_spd(r, n)
    f = UnscentedKalmanFilter(linear_model(a, h, q, rr), GaussianBelief(m0, p0))
    m, P = m0, p0
    for _ in range(20):
        y = r.standard_normal(n_y)
        f.predict()
        f.update(y)
        _, _, m, P = kf_step(m, P, a, h, q, rr, y)
        assert np.max(np.abs(f.mean - m)) < 1e-9
        assert np.linalg.eigvalsh(f.cov).min() >= -1e-12


def test_reuse_differs_from_redraw_under_process_noise(rng):
    # only the redrawn variant sees Q in the innovation covariance
    a, h, q, r = random_linear_system(rng, 3, 2)
    m = linear_model(a, h, q, r)
    f1 = UnscentedKalmanFilter(m, GaussianBelief(np.zeros(3), np.eye(3)), redraw=False)
    f2 = UnscentedKalmanFilter(m, GaussianBelief(np.zeros(3), np.eye(3)), redraw=True)
    for _ in range(5):
        y = rng.standard_normal(2)
        for f in (f1, f2):
            f.predict()
            f.update(y)
    # reused points carry the prior without Q, redrawn ones include it
    assert not np.allclose(f1.mean, f2.mean, atol=1e-12)
    np.testing.assert_allclose(f2.cov, f2.cov.T)


def test_batched_update_matches_loop(rng):
    n, n_y = 3, 2
    h = rng.standard_normal((n_y, n))
    r = np.eye(n_y)
    means = rng.standard_normal((4, n))
    covs = np.stack([random_spd(rng, n) for _ in range(4)])
    y = rng.standard_normal(n_y)
    pts, wm, wc = sigma_points(means, covs, UtConfig())
    bm, bc, _, _ = ut_update(means, covs, pts, wm, wc, lambda x: x @ h.T, r, y)
    for j in range(4):
        p1, w1, c1 = sigma_points(means[j], covs[j], UtConfig())
        m1, cv1, _, _ = ut_update(means[j], covs[j], p1, w1, c1, lambda x: x @ h.T, r, y)
        np.testing.assert_allclose(bm[j], m1, atol=1e-12)
        np.testing.assert_allclose(bc[j], cv1, atol=1e-12)
