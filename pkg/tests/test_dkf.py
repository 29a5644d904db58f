import numpy as np
import pytest

from seqbayes.benchmark import MeasurementSetup, ThreeDofParams, benchmark_model
from seqbayes.errors import ConfigError, ContractError
from seqbayes.dkf import (
    DualBelief,
    DualKalmanUnscentedFilter,
    InputKfModel,
    dual_step,
    input_matrix,
    input_measurement_update,
    input_time_update,
)
from seqbayes.gaussian import GaussianBelief
from seqbayes.model import StateSpaceModel
from seqbayes.ukf import UnscentedKalmanFilter

Q = np.diag([1e-9] * 3 + [1e-14] * 3)
R = np.diag([1e-11, 1e-9, 1e-3, 1e-10])


def bench(r=R):
    return benchmark_model(ThreeDofParams(), MeasurementSetup(), Q, r).discretize()


def dual(p_var=1e10, x=None):
    x = np.zeros(6) if x is None else x
    return DualBelief(GaussianBelief([0.0], [[p_var]]), GaussianBelief(x, 1e-12 * np.eye(6)))


def test_input_model_validation():
    with pytest.raises(ContractError):
        InputKfModel([[-1.0]])
    with pytest.raises(ConfigError):
        InputKfModel([[1.0]], mode="extended")


def test_input_time_update():
    db = dual(5.0)
    same = input_time_update(db, InputKfModel([[0.0]]))
    assert same.input.cov[0, 0] == 5.0 and same.input.mean[0] == 0.0
    grown = input_time_update(db, InputKfModel([[200.0]]))
    assert grown.input.cov[0, 0] == 205.0


def test_input_cov_grows_without_measurement():
    db = dual(1e10)
    im = InputKfModel([[2e2]])
    for k in range(1, 6):
        db = input_time_update(db, im)
        assert db.input.cov[0, 0] == pytest.approx(1e10 + k * 2e2, rel=1e-15)


def test_linear_gain_oracle():
    m = bench()
    x = np.array([1e-3, -2e-3, 5e-4, 0.01, 0.0, -0.02])
    db = dual(3e3, x)
    y = np.array([1e-3, 0.3, -0.2, 0.1])
    out, info = input_measurement_update(db, m, x, y, InputKfModel([[0.0]]))
    assert info["linear"]
    d = np.array([[0.0], [0.0], [1.0 / 1000.0], [0.0]])
    pp = 3e3
    k = pp * d.T @ np.linalg.inv(pp * d @ d.T + R)
    y0 = m.h(x, np.zeros(1))
    np.testing.assert_allclose(info["gain"], k, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(out.input.mean, k @ (y - y0), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(out.input.cov, pp - k @ d * pp, rtol=1e-8)


def test_input_matrix_flags_nonlinear():
    d, _, lin = input_matrix(lambda p: np.concatenate([p, p**2], axis=-1), np.array([1.0]), np.eye(1))
    assert not lin
    np.testing.assert_allclose(d, [[1.0], [2.0]])


def test_unscented_input_path():
    m = StateSpaceModel(lambda x, p: x, lambda x, p: np.concatenate([x + p, p**3], axis=-1),
                        np.eye(1), np.eye(2), n_p=1)
    db = DualBelief(GaussianBelief([0.5], [[0.1]]), GaussianBelief([0.0], [[1.0]]))
    out, info = input_measurement_update(db, m, np.zeros(1), np.array([0.6, 0.2]), InputKfModel([[0.0]]))
    assert not info["linear"]
    assert out.input.cov[0, 0] < 0.1


def test_uninformative_and_zero_innovation():
    x = np.zeros(6)
    m = bench(1e12 * np.eye(4))
    db = dual(1e2, x)
    out, _ = input_measurement_update(db, m, x, np.array([1.0, 1.0, 1.0, 1.0]), InputKfModel([[0.0]]))
    assert abs(out.input.mean[0]) < 1e-6
    m = bench()
    db = DualBelief(GaussianBelief([50.0], [[1e2]]), GaussianBelief(x, 1e-12 * np.eye(6)))
    y = m.h(x, np.array([50.0]))
    out, _ = input_measurement_update(db, m, x, y, InputKfModel([[0.0]]))
    assert out.input.mean[0] == pytest.approx(50.0, abs=1e-9)
    assert out.input.cov[0, 0] < 1e2


def test_known_input_reduces_to_ukf(rng):
    m = bench()
    p = np.array([80.0])
    x0 = GaussianBelief(np.zeros(6), 1e-10 * np.eye(6))
    dkf = DualKalmanUnscentedFilter(m, x0, GaussianBelief(p, [[0.0]]), InputKfModel([[0.0]]))
    ukf = UnscentedKalmanFilter(m, x0)
    x = np.zeros(6)
    for _ in range(40):
        x = m.g(x, p)
        y = m.h(x, p) + np.sqrt(np.diag(R)) * rng.standard_normal(4)
        dkf.update(y)
        ukf.predict(p)
        ukf.update(y, p)
        np.testing.assert_allclose(dkf.mean, ukf.mean, rtol=0, atol=1e-10)
        assert dkf.input_mean[0] == p[0]


def test_null_input_recovery():
    m = bench()
    f = DualKalmanUnscentedFilter(
        m, GaussianBelief(np.zeros(6), 1e-12 * np.eye(6)), GaussianBelief([0.0], [[1e10]]),
        InputKfModel([[2e2]]),
    )
    for _ in range(50):
        f.update(np.zeros(4))
    assert abs(f.input_mean[0]) < 3 * f.input_std[0]


def test_input_covariance_decoupled_from_state_update(rng):
    m = bench()
    im = InputKfModel([[2e2]])
    a = b = dual(1e10)
    for _ in range(30):
        y = np.array([1e-4, 0.02, -0.03, 0.01]) * rng.standard_normal(4)
        a, _ = dual_step(a, m, y, im)
        b, _ = dual_step(b, m, y, im, update_state=False)
        np.testing.assert_allclose(a.input.cov, b.input.cov, rtol=1e-9)


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        DualKalmanUnscentedFilter(
            bench(), GaussianBelief(np.zeros(6), np.eye(6)), GaussianBelief([0.0, 0.0], np.eye(2)),
            InputKfModel(np.eye(2)),
        )
