"""Three-degree-of-freedom spring-mass-damper benchmark with a cubic spring.

Includes the ground-truth simulator, synthesis of noisy measurements and the
experiment configurations of the three estimation case studies.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError
from .model import ContinuousDynamics, ParametricModel, augment_with_parameters, rk4_discretize

COEFF_NAMES = ("m1", "m2", "m3", "c1", "c2", "c3", "k1", "k2", "k3", "kc")


@dataclass(frozen=True)
class ThreeDofParams:
    """Masses [kg], dampers [N s/m], linear springs [N/m] and cubic coefficient ``kc``."""

    m1: float = 1000.0
    m2: float = 1000.0
    m3: float = 1000.0
    c1: float = 250.0
    c2: float = 250.0
    c3: float = 250.0
    k1: float = 1e4
    k2: float = 1e4
    k3: float = 1e4
    kc: float = 1e12

    def __post_init__(self):
        for name in COEFF_NAMES:
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ConfigError(f"model.params.{name} must be finite")
        for name in ("m1", "m2", "m3"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.params.{name} must be positive")
        for name in ("c1", "c2", "c3", "k1", "k2", "k3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"model.params.{name} must be nonnegative")

    def coeffs(self):
        return {name: float(getattr(self, name)) for name in COEFF_NAMES}

    def matrices(self):
        """Mass, damping and linear stiffness matrices."""
        m = np.diag([self.m1, self.m2, self.m3])
        c = np.array(
            [
                [self.c1 + self.c2, -self.c2, 0.0],
                [-self.c2, self.c2 + self.c3, -self.c3],
                [0.0, -self.c3, self.c3],
            ]
        )
        k = np.array(
            [
                [self.k1 + self.k2, -self.k2, 0.0],
                [-self.k2, self.k2 + self.k3, -self.k3],
                [0.0, -self.k3, self.k3],
            ]
        )
        return m, c, k


@dataclass(frozen=True)
class MeasurementSetup:
    """Observed channels: displacements of ``displacement_dofs`` then accelerations.

    DOFs are numbered from 1. The default displacement row is ``S_d = [0 1 0]``.
    """

    displacement_dofs: tuple = (2,)
    accel_channels: tuple = (1, 2, 3)
    noise_fraction: float = 0.03

    def __post_init__(self):
        d = tuple(int(i) for i in self.displacement_dofs)
        a = tuple(int(i) for i in self.accel_channels)
        if not d and not a:
            raise ConfigError("measurement needs at least one channel")
        if any(i not in (1, 2, 3) for i in d + a):
            raise ConfigError("measurement DOFs must be in {1, 2, 3}")
        if not self.noise_fraction >= 0:
            raise ConfigError("measurement.noise_fraction must be nonnegative")
        object.__setattr__(self, "displacement_dofs", d)
        object.__setattr__(self, "accel_channels", a)

    @property
    def selection(self):
        """Displacement selection matrix ``S_d``."""
        return np.eye(3)[[i - 1 for i in self.displacement_dofs]]

    @property
    def n_y(self):
        return len(self.displacement_dofs) + len(self.accel_channels)

    @property
    def channel_names(self):
        return [f"d{i}" for i in self.displacement_dofs] + [f"a{i}" for i in self.accel_channels]


def _force_vector(p, input_dofs):
    p = np.asarray(p, dtype=float)
    f = np.zeros(p.shape[:-1] + (3,))
    for j, dof in enumerate(input_dofs):
        f[..., dof - 1] = p[..., j]
    return f


def accelerations(x, p, coeffs, input_dofs=(2,)):
    """``M^{-1}(p - C v - K u - r_nl(u))`` broadcasting coefficients over ``x``."""
    c = coeffs
    u1, u2, u3 = x[..., 0], x[..., 1], x[..., 2]
    v1, v2, v3 = x[..., 3], x[..., 4], x[..., 5]
    f = _force_vector(p, input_dofs)
    a1 = (
        f[..., 0]
        - (c["c1"] + c["c2"]) * v1 + c["c2"] * v2
        - (c["k1"] + c["k2"]) * u1 + c["k2"] * u2
        - c["kc"] * u1**3
    ) / c["m1"]
    a2 = (
        f[..., 1]
        + c["c2"] * v1 - (c["c2"] + c["c3"]) * v2 + c["c3"] * v3
        + c["k2"] * u1 - (c["k2"] + c["k3"]) * u2 + c["k3"] * u3
    ) / c["m2"]
    a3 = (
        f[..., 2] + c["c3"] * v2 - c["c3"] * v3 + c["k3"] * u2 - c["k3"] * u3
    ) / c["m3"]
    return np.stack(np.broadcast_arrays(a1, a2, a3), axis=-1)


def build_dynamics(params, input_dofs=(2,)):
    """Continuous dynamics ``F([u; v], p) = [v; M^{-1}(p - C v - K u - r_nl(u))]``.

    The input ``p`` holds the forces on ``input_dofs`` (default: mass 2 only).
    """
    input_dofs = tuple(int(i) for i in input_dofs)

    def f(x, p, t, coeffs):
        acc = accelerations(x, p, coeffs, input_dofs)
        return np.concatenate([np.broadcast_to(x[..., 3:6], acc.shape), acc], axis=-1)

    return ContinuousDynamics(f, 6, n_p=len(input_dofs), coeffs=params.coeffs())


def build_output(setup, input_dofs=(2,)):
    """Observation ``[S_d u; accelerations of the selected masses]``."""
    sd = [i - 1 for i in setup.displacement_dofs]
    ac = [i - 1 for i in setup.accel_channels]
    input_dofs = tuple(int(i) for i in input_dofs)

    def output(x, p, coeffs):
        x = np.asarray(x, dtype=float)
        acc = accelerations(x, p, coeffs, input_dofs)
        return np.concatenate([x[..., sd], acc[..., ac]], axis=-1)

    return output


def benchmark_model(params, setup, q, r, dt=0.01, input_dofs=(2,)):
    return ParametricModel(
        build_dynamics(params, input_dofs), build_output(setup, input_dofs), q, r, dt
    )


@dataclass(frozen=True)
class ForceSpec:
    """Zero-mean Gaussian white-noise force held constant over ``hold`` samples."""

    std: float = 100.0
    hold: int = 1
    dofs: tuple = (2,)

    def __post_init__(self):
        if not self.std >= 0:
            raise ConfigError("model.force.std must be nonnegative")
        if int(self.hold) < 1:
            raise ConfigError("model.force.hold must be at least 1")
        dofs = tuple(int(i) for i in self.dofs)
        if not dofs or any(i not in (1, 2, 3) for i in dofs):
            raise ConfigError("model.force.dofs must be a nonempty subset of {1, 2, 3}")
        object.__setattr__(self, "dofs", dofs)
        object.__setattr__(self, "hold", int(self.hold))

    def draw(self, steps, rng):
        n_blocks = steps // self.hold + 1
        blocks = rng.standard_normal((n_blocks, len(self.dofs))) * self.std
        return np.repeat(blocks, self.hold, axis=0)[: steps + 1]


@dataclass
class SimulationRecord:
    """Ground truth and measurements on the grid ``t_k = k dt``, ``k = 0..steps``."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    seed: int
    noise_std: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.times.shape[0]
        for name in ("states", "inputs", "clean", "noisy"):
            if getattr(self, name).shape[0] != n:
                rows = getattr(self, name).shape[0]
                raise ContractError(f"record field {name} has {rows} rows, expected {n}")

    @property
    def steps(self):
        return self.times.shape[0] - 1

    def columns(self):
        n_p = self.inputs.shape[1]
        pcols = ["p"] if n_p == 1 else [f"p{j + 1}" for j in range(n_p)]
        names = self.metadata.get("channels") or [str(j + 1) for j in range(self.clean.shape[1])]
        return (
            ["t", "u1", "u2", "u3", "v1", "v2", "v3"]
            + pcols
            + [f"y_clean_{c}" for c in names]
            + [f"y_noisy_{c}" for c in names]
        )

    def to_csv(self, path):
        data = np.column_stack([self.times, self.states, self.inputs, self.clean, self.noisy])
        write_csv(path, self.columns(), data)

    def sidecar(self):
        meta = dict(self.metadata)
        meta["seed"] = int(self.seed)
        meta["noise_std"] = [float(v) for v in self.noise_std]
        return meta

    def write(self, csv_path, meta_path):
        self.to_csv(csv_path)
        with open(meta_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, csv_path, meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        with open(csv_path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        n_p = sum(1 for h in header if h == "p" or (h.startswith("p") and h[1:].isdigit()))
        n_y = (data.shape[1] - 7 - n_p) // 2
        seed = meta.pop("seed")
        noise_std = np.asarray(meta.pop("noise_std"))
        return cls(
            data[:, 0], data[:, 1:7], data[:, 7 : 7 + n_p],
            data[:, 7 + n_p : 7 + n_p + n_y], data[:, 7 + n_p + n_y :],
            seed, noise_std, meta,
        )


def write_csv(path, header, data):
    """Deterministic CSV with full double precision."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.asarray(data, dtype=float):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def simulate(params, setup, force, dt=0.01, steps=6000, seed=0, x0=None):
    """RK4 ground truth with zero-order-hold input and noisy measurements.

    Parameters
    ----------
    params : ThreeDofParams
    setup : MeasurementSetup
    force : ForceSpec or array_like, shape (steps + 1, n_p)
        Generated white noise, or an explicit force history.
    dt : float
    steps : int
    seed : int
        Seeds the force draw and the measurement noise.
    x0 : array_like, optional
        Initial ``[u; v]``; zero by default.

    Raises
    ------
    DivergenceError
        If the trajectory becomes non-finite; carries the first bad step.
    """
    if not dt > 0:
        raise ConfigError("model.dt must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(force, ForceSpec):
        dofs = force.dofs
        p = force.draw(steps, rng)
    else:
        p = np.asarray(force, dtype=float).reshape(steps + 1, -1)
        dofs = (2,) if p.shape[1] == 1 else tuple(range(1, p.shape[1] + 1))
    dyn = build_dynamics(params, dofs)
    out = build_output(setup, dofs)
    step = rk4_discretize(dyn, dt)
    x = np.zeros((steps + 1, 6))
    x[0] = 0.0 if x0 is None else np.asarray(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            try:
                x[k + 1] = step(x[k], p[k])
            except Exception:
                raise DivergenceError("simulation diverged", step=k + 1) from None
            if not np.all(np.isfinite(x[k + 1])):
                raise DivergenceError("simulation diverged", step=k + 1)
    clean = out(x, p, params.coeffs())
    if not np.all(np.isfinite(clean)):
        k = int(np.argmax(~np.isfinite(clean).all(axis=1)))
        raise DivergenceError("non-finite measurement", step=k)
    rms = np.sqrt(np.mean(np.square(clean), axis=0))
    std = setup.noise_fraction * rms
    noisy = clean + rng.standard_normal(clean.shape) * std
    meta = {
        "params": params.coeffs(),
        "setup": {
            "displacement_dofs": list(setup.displacement_dofs),
            "accel_channels": list(setup.accel_channels),
            "noise_fraction": setup.noise_fraction,
        },
        "input_dofs": list(dofs),
        "dt": dt,
        "steps": steps,
        "channels": setup.channel_names,
    }
    return SimulationRecord(np.arange(steps + 1) * dt, x, p, clean, noisy, seed, std, meta)


def mechanical_energy(params, states):
    """Kinetic plus elastic energy, including the quartic potential ``kc u1^4 / 4``."""
    m, _, k = params.matrices()
    u, v = states[..., :3], states[..., 3:]
    kin = 0.5 * np.einsum("...i,ij,...j->...", v, m, v)
    pot = 0.5 * np.einsum("...i,ij,...j->...", u, k, u) + 0.25 * params.kc * u[..., 0] ** 4
    return kin + pot


def natural_frequencies(params):
    """Undamped linear natural frequencies [rad/s] from ``eig(M^{-1} K)``."""
    m, _, k = params.matrices()
    w = np.linalg.eigvals(np.linalg.solve(m, k))
    return np.sort(np.sqrt(np.real(w)))


def augmented_benchmark(params, setup, q, r, theta0, theta_var, scale=1e12, dt=0.01, input_dofs=(2,)):
    """Model over ``[u, v, kc / scale]`` with a random-walk parameter."""
    base = benchmark_model(params, setup, np.asarray(q)[:6, :6], r, dt, input_dofs)
    return augment_with_parameters(
        base, ("kc",), [theta0], [[theta_var]], scales=[scale]
    )


_STATE_CASE = {
    "initial_mean": [0.0] * 6,
    "initial_cov": [1e-20] * 6,
    "process_cov": [1e-9, 1e-9, 1e-9, 1e-14, 1e-14, 1e-14],
}
_R_STATE = [1e-5, 1e-8, 1e-8, 1e-8]
_Q_PARAM = [1e-11, 1e-9, 1e-9, 1e-11, 1e-9, 1e-9, 1e-25]


def _base_config():
    return {
        "model": {
            "params": ThreeDofParams().coeffs(),
            "dt": 0.01,
            "horizon": 60.0,
            "force": {"std": 100.0, "hold": 1, "dofs": [2]},
        },
        "measurement": {
            "displacement_dofs": [2],
            "accel_channels": [1, 2, 3],
            "noise_fraction": 0.03,
        },
        "seeds": [0],
        "output": {"dir": None},
    }


def _ukf(r):
    return {
        "measurement_cov": list(r),
        "alpha": 1.0,
        "beta": 2.0,
        "kappa": None,
        "redraw_sigma_points": True,
    }


def _pf(r, n, thr=0.2):
    return {
        "measurement_cov": list(r),
        "particles": n,
        "resample_threshold": thr,
        "resample_scheme": "systematic",
    }


def scenario(case):
    """Fully populated experiment configuration for one case study.

    Parameters
    ----------
    case : {'state', 'state_parameter', 'input_state_parameter'}

    Returns
    -------
    dict
        Nested configuration accepted by the command-line harness.
    """
    cfg = _base_config()
    if case == "state":
        cfg["estimation"] = {
            "case": "state",
            **copy.deepcopy(_STATE_CASE),
            "min_log_likelihood": None,
            "burn_in": 0.2,
        }
        cfg["filters"] = {
            "ukf": _ukf(_R_STATE),
            "pf": _pf(_R_STATE, 30),
            "sppf": {**_pf(_R_STATE, 25), "simplified_weights": False, "redraw_sigma_points": True},
        }
    elif case == "state_parameter":
        cfg["estimation"] = {
            "case": "state_parameter",
            "initial_mean": [0.0] * 6,
            "initial_cov": [1e-11] * 6 + [1e-2],
            "process_cov": list(_Q_PARAM),
            "parameter": {"name": "kc", "scale": 1e12, "initial": 0.9e12},
            "min_log_likelihood": None,
            "burn_in": 0.2,
        }
        cfg["filters"] = {
            "ukf": _ukf([1e-9, 1e2, 1e-3, 1e-3]),
            "pf": _pf([1e-9, 1e1, 1e-3, 1e-3], 1000),
            "mpf": {
                **_pf([1e-9, 1e2, 1e-2, 1e-2], 400, 0.3),
                "p_r": 0.05,
                "p_m": 0.25,
                "radius": 0.2,
            },
            "rbpf": {**_pf([1e-14, 1e-4, 1e-6, 1e-4], 70), "partition": {"a_indices": [6]}},
            "gmsppf": {
                "measurement_cov": [1e-9, 1e1, 1e-3, 1e-2],
                "particles": 1000,
                "G_s": 1,
                "G_p": 1,
                "G_m": 1,
                "em": {"max_iters": 20, "tol": 1e-6, "cov_floor": 1e-10},
            },
        }
    elif case == "input_state_parameter":
        cfg["estimation"] = {
            "case": "input_state_parameter",
            "initial_mean": [0.0] * 6,
            "initial_cov": [1e-5] * 6 + [1e-2],
            "process_cov": [1e-10, 1e-9, 1e-9, 1e-8, 1e-8, 1e-8, 1e-25],
            "parameter": {"name": "kc", "scale": 1e12, "initial": 0.9e12},
            "min_log_likelihood": None,
            "burn_in": 0.2,
        }
        cfg["filters"] = {
            "dkf": {
                **_ukf([1e-11, 1e-9, 1e-3, 1e-10]),
                "input_cov": 2e2,
                "input_init_cov": 1e10,
                "input_init_mean": 0.0,
                "input_update": "auto",
            }
        }
    else:
        raise ConfigError(
            f"unknown scenario {case!r}; expected state, state_parameter or input_state_parameter"
        )
    return cfg


def params_from_config(section):
    missing = [n for n in COEFF_NAMES if n not in section]
    if missing:
        raise ConfigError(f"model.params.{missing[0]}: required parameter is missing")
    return ThreeDofParams(**{n: float(section[n]) for n in COEFF_NAMES})


def record_params(record):
    return ThreeDofParams(**record.metadata["params"])


__all__ = [
    "ThreeDofParams",
    "MeasurementSetup",
    "ForceSpec",
    "SimulationRecord",
    "accelerations",
    "build_dynamics",
    "build_output",
    "benchmark_model",
    "augmented_benchmark",
    "simulate",
    "scenario",
    "mechanical_energy",
    "natural_frequencies",
    "write_csv",
]
