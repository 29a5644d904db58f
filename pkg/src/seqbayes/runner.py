"""Uniform filter driver and error metrics.

`build_filter` turns a resolved experiment configuration into a filter
instance, `run` steps it causally over a `SimulationRecord` and `score`
compares the resulting `EstimateTrajectory` with the ground truth.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .benchmark import (
    ForceSpec,
    MeasurementSetup,
    augmented_benchmark,
    benchmark_model,
    params_from_config,
    simulate,
    write_csv,
)
from .dkf import DualKalmanUnscentedFilter, InputKfModel
from .errors import ConfigError, NumericalError
from .gaussian import GaussianBelief
from .gmsppf import EmConfig, GaussianMixtureSigmaPointParticleFilter, GmsppfConfig
from .mpf import MutationConfig, MutationParticleFilter
from .particles import LOG_UNDERFLOW, ParticleFilter, ResamplingPolicy
from .rbpf import RaoBlackwellisedParticleFilter
from .sppf import SigmaPointParticleFilter
from .ukf import UnscentedKalmanFilter, UtConfig

FILTER_IDS = ("ukf", "pf", "sppf", "mpf", "rbpf", "gmsppf", "dkf")
STATE_NAMES = ("u1", "u2", "u3", "v1", "v2", "v3")


@dataclass
class EstimateTrajectory:
    """Per-step estimates on the record grid; row 0 is the initial belief."""

    filter_id: str
    times: np.ndarray
    names: list
    means: np.ndarray
    stds: np.ndarray
    covs: np.ndarray = None
    input_means: np.ndarray = None
    input_stds: np.ndarray = None
    runtime: float = 0.0

    def __post_init__(self):
        if self.means.shape != self.stds.shape or self.means.shape[0] != self.times.shape[0]:
            raise ValueError("trajectory arrays must align with the time grid")

    def columns(self):
        cols = ["t"] + [f"mean_{n}" for n in self.names] + [f"std_{n}" for n in self.names]
        if self.input_means is not None:
            k = self.input_means.shape[1]
            pn = ["p"] if k == 1 else [f"p{j + 1}" for j in range(k)]
            cols += [f"mean_{n}" for n in pn] + [f"std_{n}" for n in pn]
        return cols

    def to_csv(self, path):
        parts = [self.times[:, None], self.means, self.stds]
        if self.input_means is not None:
            parts += [self.input_means, self.input_stds]
        write_csv(path, self.columns(), np.hstack(parts))


@dataclass
class Metrics:
    """Flat metric values plus flags for metrics that fell back to absolute."""

    values: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self):
        lines = [f"{k} = {format(float(v), '.17g')}" for k, v in self.values.items()]
        lines += [f"flag = {f}" for f in self.flags]
        return "\n".join(lines) + "\n"


def _diag(values, n, field_name):
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.ndim == 1 and v.size == 1:
        v = np.full(n, v[0])
    if v.shape == (n,):
        return np.diag(v)
    if v.shape == (n, n):
        return v
    raise ConfigError(f"{field_name}: expected {n} diagonal entries, got shape {v.shape}")


def _min_loglik(value):
    if value is None:
        return None
    if value == "underflow":
        return LOG_UNDERFLOW
    return float(value)


def filter_rng(seed, filter_id):
    """Generator for a (seed, filter) pair, independent of the simulation stream."""
    return np.random.default_rng([int(seed), zlib.crc32(filter_id.encode())])


@dataclass
class ExperimentSetup:
    """Objects derived once per configuration and shared across runs."""

    params: object
    setup: MeasurementSetup
    force: ForceSpec
    dt: float
    steps: int
    case: str
    burn_in: float
    parameter: dict = None


def experiment_setup(cfg):
    model = cfg["model"]
    params = params_from_config(model["params"])
    meas = cfg["measurement"]
    setup = MeasurementSetup(
        tuple(meas["displacement_dofs"]), tuple(meas["accel_channels"]), meas["noise_fraction"]
    )
    force = ForceSpec(**model["force"])
    dt = float(model["dt"])
    if not dt > 0:
        raise ConfigError("model.dt must be positive")
    steps = int(round(float(model["horizon"]) / dt))
    if steps < 1:
        raise ConfigError("model.horizon must cover at least one step")
    est = cfg["estimation"]
    return ExperimentSetup(
        params, setup, force, dt, steps, est["case"], float(est.get("burn_in", 0.2)),
        est.get("parameter"),
    )


def make_record(exp, seed):
    return simulate(exp.params, exp.setup, exp.force, exp.dt, exp.steps, seed)


def build_model(exp, cfg, filter_id):
    """Filter model and prior belief for one filter section."""
    est = cfg["estimation"]
    fsec = cfg["filters"][filter_id]
    n_y = exp.setup.n_y
    r = _diag(fsec["measurement_cov"], n_y, f"filters.{filter_id}.measurement_cov")
    dofs = exp.force.dofs
    x0 = np.asarray(est["initial_mean"], dtype=float)
    if x0.shape != (6,):
        raise ConfigError("estimation.initial_mean: expected 6 entries")
    if exp.case == "state":
        q = _diag(est["process_cov"], 6, "estimation.process_cov")
        p0 = _diag(est["initial_cov"], 6, "estimation.initial_cov")
        model = benchmark_model(exp.params, exp.setup, q, r, exp.dt, dofs).discretize()
        return model, GaussianBelief(x0, p0)
    par = exp.parameter
    if not par or par.get("name") != "kc":
        raise ConfigError("estimation.parameter.name: only 'kc' can be estimated")
    q = _diag(est["process_cov"], 7, "estimation.process_cov")
    p0 = _diag(est["initial_cov"], 7, "estimation.initial_cov")
    scale = float(par["scale"])
    model = augmented_benchmark(
        exp.params, exp.setup, q, r, float(par["initial"]), q[6, 6], scale, exp.dt, dofs
    )
    return model, GaussianBelief(np.r_[x0, model.theta0], p0)


def _ut(fsec):
    return UtConfig(
        float(fsec.get("alpha", 1.0)), float(fsec.get("beta", 2.0)), fsec.get("kappa")
    )


def _policy(fsec, default=0.2):
    return ResamplingPolicy(
        fsec.get("resample_scheme", "systematic"), float(fsec.get("resample_threshold", default))
    )


def build_filter(cfg, filter_id, seed, exp=None):
    """Instantiate ``filter_id`` from the resolved configuration.

    Returns
    -------
    (filter, model)
    """
    if filter_id not in FILTER_IDS:
        raise ConfigError(f"unknown filter id {filter_id!r}; known: {', '.join(FILTER_IDS)}")
    if filter_id not in cfg["filters"]:
        raise ConfigError(f"filters.{filter_id}: section missing from the configuration")
    exp = exp or experiment_setup(cfg)
    fsec = cfg["filters"][filter_id]
    model, prior = build_model(exp, cfg, filter_id)
    rng = filter_rng(seed, filter_id)
    mll = _min_loglik(cfg["estimation"].get("min_log_likelihood"))
    redraw = bool(fsec.get("redraw_sigma_points", True))
    theta_idx = tuple(range(6, model.n))
    if filter_id == "ukf":
        f = UnscentedKalmanFilter(model, prior, _ut(fsec), redraw=redraw)
    elif filter_id == "pf":
        f = ParticleFilter(model, prior, int(fsec["particles"]), rng, _policy(fsec), mll)
    elif filter_id == "sppf":
        f = SigmaPointParticleFilter(
            model, prior, int(fsec["particles"]), rng, _ut(fsec), _policy(fsec),
            simplified_weights=bool(fsec.get("simplified_weights", False)),
            redraw=redraw, min_log_likelihood=mll,
        )
    elif filter_id == "mpf":
        if not theta_idx:
            raise ConfigError("filters.mpf: mutation needs a parameter-augmented case")
        mut = MutationConfig(
            float(fsec.get("p_r", 0.05)), float(fsec.get("p_m", 0.25)),
            fsec.get("radius", 0.2), theta_idx,
        )
        f = MutationParticleFilter(
            model, prior, mut, int(fsec["particles"]), rng, _policy(fsec, 0.3), mll
        )
    elif filter_id == "rbpf":
        part = fsec.get("partition", {}).get("a_indices", list(theta_idx))
        if not part:
            raise ConfigError("filters.rbpf.partition.a_indices must not be empty")
        f = RaoBlackwellisedParticleFilter(
            model, prior, part, int(fsec["particles"]), rng, _ut(fsec), _policy(fsec), mll
        )
    elif filter_id == "gmsppf":
        em = fsec.get("em", {})
        gcfg = GmsppfConfig(
            int(fsec.get("G_s", 1)), int(fsec.get("G_p", 1)), int(fsec.get("G_m", 1)),
            int(fsec["particles"]),
            EmConfig(int(em.get("max_iters", 20)), float(em.get("tol", 1e-6)),
                     float(em.get("cov_floor", 1e-10))),
        )
        f = GaussianMixtureSigmaPointParticleFilter(
            model, prior, gcfg, rng, _ut(fsec), min_log_likelihood=mll
        )
    else:
        n_p = model.n_p
        ip = GaussianBelief(
            np.full(n_p, float(fsec.get("input_init_mean", 0.0))),
            _diag(fsec["input_init_cov"], n_p, "filters.dkf.input_init_cov"),
        )
        im = InputKfModel(
            _diag(fsec["input_cov"], n_p, "filters.dkf.input_cov"),
            fsec.get("input_update", "auto"),
        )
        f = DualKalmanUnscentedFilter(model, prior, ip, im, _ut(fsec), redraw=redraw)
    return f, model


def _cov_of(f):
    c = getattr(f, "cov", None)
    if c is not None:
        return c
    std = f.std
    return np.diag(std**2)


def state_names(model):
    names = list(STATE_NAMES)
    names += list(getattr(model, "names", ()) or ())
    return names


def run(filt, record, model=None, filter_id=None, keep_covs=True):
    """Step ``filt`` causally over ``record``.

    Step k uses the input of the interval ``[t_{k-1}, t_k]`` for the time
    update and ``(y_k, p_k)`` for the measurement update. Estimates of
    augmented parameters are reported in coefficient units.

    Raises
    ------
    NumericalError
        With ``step`` set to the failing time step.
    """
    model = model or filt.model
    n, steps = model.n, record.steps
    means = np.empty((steps + 1, n))
    stds = np.empty((steps + 1, n))
    covs = np.empty((steps + 1, n, n)) if keep_covs else None
    dual = hasattr(filt, "input_mean")
    if dual:
        n_p = model.n_p
        pm, ps = np.empty((steps + 1, n_p)), np.empty((steps + 1, n_p))

    def store(k):
        means[k], stds[k] = filt.mean, filt.std
        if keep_covs:
            covs[k] = _cov_of(filt)
        if dual:
            pm[k], ps[k] = filt.input_mean, filt.input_std

    store(0)
    t0 = time.perf_counter()
    y, p = record.noisy, record.inputs
    for k in range(1, steps + 1):
        try:
            filt.predict(p[k - 1])
            filt.update(y[k], p[k])
        except NumericalError as exc:
            exc.step = k
            raise
        store(k)
    runtime = time.perf_counter() - t0

    scales = getattr(model, "scales", None)
    if scales is not None and model.names:
        idx = list(model.theta_indices)
        means[:, idx] = model.to_coefficients(means[:, idx])
        stds[:, idx] = stds[:, idx] * scales
        if keep_covs:
            s = np.ones(n)
            s[idx] = scales
            covs = covs * np.outer(s, s)
    return EstimateTrajectory(
        filter_id or getattr(filt, "name", "filter"), record.times, state_names(model),
        means, stds, covs,
        pm if dual else None, ps if dual else None, runtime,
    )


def _rms(x, axis=0):
    return np.sqrt(np.mean(np.square(x), axis=axis))


def score(traj, record, burn_in=0.2, theta_true=None, nees_level=0.99):
    """Error metrics of a trajectory against the ground truth of ``record``.

    Parameters
    ----------
    traj : EstimateTrajectory
    record : SimulationRecord
    burn_in : float
        Leading fraction of the horizon excluded from input correlation,
        parameter and NEES metrics.
    theta_true : dict, optional
        True coefficient values by name; defaults to the record parameters.
    """
    if traj.means.shape[0] != record.times.shape[0]:
        raise ValueError("trajectory and record lengths differ")
    m = Metrics()
    truth = record.states
    est = traj.means[:, :6]
    err = est - truth
    rmse = _rms(err)
    scale = _rms(truth)
    start = int(np.floor(burn_in * record.steps))
    for j, name in enumerate(STATE_NAMES):
        m.values[f"rmse.{name}"] = rmse[j]
    for j, name in enumerate(STATE_NAMES):
        if scale[j] > 0:
            m.values[f"rel_rmse.{name}"] = rmse[j] / scale[j]
        else:
            m.values[f"rel_rmse.{name}"] = rmse[j]
            m.flags.append(f"rel_rmse.{name}:absolute")
    tot = _rms(err.ravel()) / max(_rms(truth.ravel()), 1e-300)
    m.values["rel_rmse.state"] = tot

    theta_true = theta_true or record.metadata.get("params", {})
    for j, name in enumerate(traj.names[6:], start=6):
        true = float(theta_true[name])
        final = traj.means[-1, j]
        if true != 0:
            m.values[f"param_rel_error.{name}"] = abs(final - true) / abs(true)
        else:
            m.values[f"param_rel_error.{name}"] = abs(final - true)
            m.flags.append(f"param_rel_error.{name}:absolute")
        m.values[f"param_final.{name}"] = final

    if traj.input_means is not None:
        a = traj.input_means[start:, 0]
        b = record.inputs[start:, 0]
        if np.std(a) > 0 and np.std(b) > 0:
            m.values["input_corr"] = float(np.corrcoef(a, b)[0, 1])
        else:
            m.values["input_corr"] = 0.0
            m.flags.append("input_corr:zero_variance")
        m.values["input_rel_rmse"] = _rms(a - b) / max(_rms(b), 1e-300)

    if traj.covs is not None:
        c = traj.covs[start:, :6, :6]
        e = err[start:]
        try:
            nees = np.einsum("ka,ka->k", e, np.linalg.solve(c, e[..., None])[..., 0])
            bound = chi2.ppf(nees_level, 6)
            m.values["nees_fraction"] = float(np.mean(nees <= bound))
        except np.linalg.LinAlgError:
            m.flags.append("nees:singular_covariance")
    return m


def run_experiment(cfg, filter_id, seed, record=None, exp=None):
    """Simulate (unless a record is given), filter and score one (filter, seed) cell."""
    exp = exp or experiment_setup(cfg)
    record = record if record is not None else make_record(exp, seed)
    filt, model = build_filter(cfg, filter_id, seed, exp)
    traj = run(filt, record, model, filter_id)
    metrics = score(traj, record, exp.burn_in)
    return record, traj, metrics


__all__ = [
    "EstimateTrajectory",
    "Metrics",
    "build_filter",
    "run",
    "score",
    "run_experiment",
]
