import copy
import dataclasses

import numpy as np
import pytest

from seqbayes.benchmark import ForceSpec, MeasurementSetup, ThreeDofParams, simulate
from seqbayes.config import resolve
from seqbayes.errors import NumericalError
from seqbayes.runner import (
    EstimateTrajectory,
    build_filter,
    experiment_setup,
    filter_rng,
    make_record,
    run,
    run_experiment,
    score,
)


def short(case, *overrides, horizon=3.0):
    return resolve({"scenario": case}, [f"model.horizon={horizon}", *overrides])


def test_noiseless_ukf_is_exact():
    # exact model: no measurement noise and no process noise
    cfg = short("state", "measurement.noise_fraction=0", "estimation.process_cov=0")
    _, _, m = run_experiment(cfg, "ukf", 0)
    for name in ("u1", "u2", "u3", "v1", "v2", "v3"):
        assert m[f"rel_rmse.{name}"] < 1e-6


@pytest.mark.parametrize("fid", ["ukf", "pf", "sppf"])
def test_run_twice_identical(fid):
    cfg = short("state", horizon=1.0)
    a = run_experiment(cfg, fid, 3)[1]
    b = run_experiment(cfg, fid, 3)[1]
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.stds, b.stds)


def test_filter_streams_are_distinct():
    a = filter_rng(0, "pf").standard_normal(3)
    b = filter_rng(0, "mpf").standard_normal(3)
    c = filter_rng(1, "pf").standard_normal(3)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    np.testing.assert_array_equal(a, filter_rng(0, "pf").standard_normal(3))


@pytest.mark.parametrize("fid,case", [("ukf", "state"), ("pf", "state"), ("dkf", "input_state_parameter")])
def test_causality(fid, case):
    cfg = short(case, horizon=1.0)
    exp = experiment_setup(cfg)
    rec = make_record(exp, 2)
    bad = dataclasses.replace(rec, noisy=rec.noisy.copy())
    k = 60
    bad.noisy[k] += 10 * rec.noise_std
    outs = []
    for r in (rec, bad):
        f, model = build_filter(cfg, fid, 2, exp)
        outs.append(run(f, r, model, fid).means)
    np.testing.assert_array_equal(outs[0][:k], outs[1][:k])
    assert not np.array_equal(outs[0][k:], outs[1][k:])


def test_trajectory_layout():
    cfg = short("state_parameter", horizon=0.5)
    rec, traj, m = run_experiment(cfg, "ukf", 0)
    assert traj.means.shape == (51, 7)
    assert traj.names[-1] == "kc"
    assert traj.means[0, 6] == pytest.approx(0.9e12)
    assert np.all(traj.stds >= 0)
    assert "param_rel_error.kc" in m.values


def _traj_from(rec, means, inputs=None):
    return EstimateTrajectory(
        "x", rec.times, ["u1", "u2", "u3", "v1", "v2", "v3"], means, np.zeros_like(means),
        input_means=inputs, input_stds=None if inputs is None else np.zeros_like(inputs),
    )


@pytest.fixture(scope="module")
def record():
    return simulate(ThreeDofParams(), MeasurementSetup(), ForceSpec(), steps=400, seed=0)


def test_score_identity(record):
    m = score(_traj_from(record, record.states.copy(), record.inputs.copy()), record)
    for k, v in m.values.items():
        if k.startswith(("rmse", "rel_rmse")) or k == "input_rel_rmse":
            assert v == 0.0
    assert m["input_corr"] == pytest.approx(1.0)


def test_score_zero_estimate(record):
    m = score(_traj_from(record, np.zeros_like(record.states)), record)
    for name in ("u1", "u2", "u3", "v1", "v2", "v3"):
        assert m[f"rel_rmse.{name}"] == pytest.approx(1.0)


def test_score_offset(record):
    m = score(_traj_from(record, record.states + 0.25), record)
    for name in ("u1", "u2", "u3", "v1", "v2", "v3"):
        assert m[f"rmse.{name}"] == pytest.approx(0.25)


def test_score_zero_truth_flagged():
    rec = simulate(ThreeDofParams(), MeasurementSetup(), ForceSpec(std=0.0), steps=10)
    m = score(_traj_from(rec, np.full((11, 6), 0.1)), rec)
    assert m["rel_rmse.u1"] == pytest.approx(0.1)
    assert "rel_rmse.u1:absolute" in m.flags


def test_error_carries_step():
    cfg = short("state", horizon=0.5)
    exp = experiment_setup(cfg)
    rec = make_record(exp, 0)
    f, model = build_filter(cfg, "pf", 0, exp)
    f.min_log_likelihood = 0.0  # impossible floor: first update must fail
    with pytest.raises(NumericalError) as exc:
        run(f, rec, model, "pf")
    assert exc.value.step == 1
