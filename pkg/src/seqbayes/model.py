"""Nonlinear state-space models, RK4 discretization and state augmentation.

Model callables are vectorized: a state argument of shape ``(..., n)`` yields
an output of shape ``(..., n)`` (transition) or ``(..., n_y)`` (observation).
Filters rely on this to propagate whole particle clouds or sigma-point sets in
a single call.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericalError


def _as_input(p, n_p):
    if p is None:
        return np.zeros(n_p)
    return np.asarray(p, dtype=float)


@dataclass(frozen=True)
class ContinuousDynamics:
    """Vector field ``dx/dt = f(x, p, t, coeffs)``.

    ``coeffs`` is a mapping of named model coefficients. Augmented models
    override entries of it with (possibly batched) parameter values, so ``f``
    must broadcast coefficient arrays against the leading axes of ``x``.
    """

    f: Callable
    n: int
    n_p: int = 0
    coeffs: Mapping[str, float] = field(default_factory=dict)

    def __call__(self, x, p=None, t=0.0, coeffs=None):
        merged = dict(self.coeffs)
        if coeffs:
            merged.update(coeffs)
        return self.f(np.asarray(x, dtype=float), _as_input(p, self.n_p), t, merged)


def rk4_discretize(dyn, dt):
    """Discrete transition ``g(x, p, t=0, coeffs=None)`` from one classical RK4 step.

    The input is held constant over the step (zero-order hold).

    Raises
    ------
    ContractError
        If ``dt`` is not positive.
    """
    if not dt > 0:
        raise ContractError(f"dt must be positive, got {dt}")
    half = 0.5 * dt

    def g(x, p=None, t=0.0, coeffs=None):
        x = np.asarray(x, dtype=float)
        k1 = dyn(x, p, t, coeffs)
        k2 = dyn(x + half * k1, p, t + half, coeffs)
        k3 = dyn(x + half * k2, p, t + half, coeffs)
        k4 = dyn(x + dt * k3, p, t + dt, coeffs)
        for stage, k in enumerate((k1, k2, k3, k4), start=1):
            if not np.all(np.isfinite(k)):
                raise NumericalError(f"non-finite dynamics output in RK4 stage k{stage}")
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return g


@dataclass(frozen=True)
class LinearMaps:
    """Matrices of a linear-Gaussian model ``x' = A x + B p``, ``y = H x + D p``."""

    a: np.ndarray
    h: np.ndarray
    b: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time model ``x_{k+1} = g(x_k, p_k) + v``, ``y_k = h(x_k, p_k) + w``.

    Attributes
    ----------
    transition, observation : callable
        Vectorized ``(x, p) -> array``.
    q, r : ndarray
        Process and measurement noise covariances.
    dt : float
        Sampling interval in seconds.
    n_p : int
        Input dimension.
    linear : LinearMaps, optional
        Present when the model is exactly linear; enables Kalman-filter paths.
    """

    transition: Callable
    observation: Callable
    q: np.ndarray
    r: np.ndarray
    dt: float = 1.0
    n_p: int = 0
    linear: Optional[LinearMaps] = None

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        for name, m in (("q", q), ("r", r)):
            if m.shape[0] != m.shape[1]:
                raise ContractError(f"{name} must be square, got {m.shape}")
            if not np.allclose(m, m.T, rtol=1e-12, atol=0.0):
                raise ContractError(f"{name} must be symmetric")
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def n_y(self):
        return self.r.shape[0]

    def g(self, x, p=None):
        return self.transition(x, _as_input(p, self.n_p))

    def h(self, x, p=None):
        return self.observation(x, _as_input(p, self.n_p))

    def with_noise(self, q=None, r=None):
        return replace(
            self,
            q=self.q if q is None else q,
            r=self.r if r is None else r,
        )


def linear_model(a, h, q, r, b=None, d=None, dt=1.0):
    """Build a vectorized linear-Gaussian `StateSpaceModel`."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n_p = 0
    if b is not None:
        b = np.atleast_2d(np.asarray(b, dtype=float))
        n_p = b.shape[1]
    if d is not None:
        d = np.atleast_2d(np.asarray(d, dtype=float))
        n_p = d.shape[1]
    bb = b if b is not None else np.zeros((a.shape[0], n_p))
    dd = d if d is not None else np.zeros((h.shape[0], n_p))

    def transition(x, p):
        return x @ a.T + p @ bb.T

    def observation(x, p):
        return x @ h.T + p @ dd.T

    return StateSpaceModel(
        transition, observation, q, r, dt=dt, n_p=n_p, linear=LinearMaps(a, h, bb, dd)
    )


def evaluate_observation(model, x, p=None):
    """Noise-free observation ``h(x, p)`` with dimension checks."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n:
        raise ContractError(f"state dimension {x.shape[-1]} != model dimension {model.n}")
    p = _as_input(p, model.n_p)
    if p.shape[-1:] != (model.n_p,) and not (model.n_p == 0 and p.size == 0):
        raise ContractError(f"input dimension {p.shape} != model input dimension {model.n_p}")
    return model.h(x, p)


@dataclass(frozen=True)
class ParametricModel:
    """Continuous dynamics plus an observation map sharing named coefficients.

    ``output(x, p, coeffs)`` must broadcast like ``dynamics.f``.
    """

    dynamics: ContinuousDynamics
    output: Callable
    q: np.ndarray
    r: np.ndarray
    dt: float

    @property
    def coeffs(self):
        return dict(self.dynamics.coeffs)

    def discretize(self):
        """Discrete `StateSpaceModel` with the nominal coefficients."""
        g = rk4_discretize(self.dynamics, self.dt)
        coeffs = self.coeffs

        def transition(x, p):
            return g(x, p)

        def observation(x, p):
            return self.output(np.asarray(x, dtype=float), p, coeffs)

        return StateSpaceModel(
            transition, observation, self.q, self.r, dt=self.dt, n_p=self.dynamics.n_p
        )


@dataclass(frozen=True)
class InputProcessModel:
    """Gaussian random walk ``p_{k+1} = p_k + w^p`` with covariance ``input_process_cov``."""

    input_process_cov: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.input_process_cov, dtype=float))
        if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() < -1e-12 * abs(np.trace(c)):
            raise ContractError("input process covariance must be symmetric PSD")
        object.__setattr__(self, "input_process_cov", c)

    @property
    def n_p(self):
        return self.input_process_cov.shape[0]


@dataclass(frozen=True)
class AugmentedModel(StateSpaceModel):
    """State-space model over ``[x, theta]`` where theta follows a random walk.

    ``theta`` is stored in state coordinates. A coefficient is recovered as
    ``scale * theta`` (``transform='none'``) or ``scale * exp(theta)``
    (``transform='log'``).
    """

    base: Optional[ParametricModel] = None
    names: tuple = ()
    scales: np.ndarray = None
    transform: str = "none"
    theta0: np.ndarray = None
    theta_process_cov: np.ndarray = None

    @property
    def theta_dim(self):
        return len(self.names)

    @property
    def base_dim(self):
        return self.n - self.theta_dim

    @property
    def theta_indices(self):
        return tuple(range(self.base_dim, self.n))

    def to_coefficients(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.transform == "log":
            return self.scales * np.exp(theta)
        return self.scales * theta

    def to_state(self, values):
        values = np.asarray(values, dtype=float) / self.scales
        if self.transform == "log":
            return np.log(values)
        return values


def augment_with_parameters(
    model,
    names,
    theta0,
    theta_cov,
    scales=None,
    transform="none",
    cross_cov=None,
):
    """Append named coefficients of ``model`` to the state as a random walk.

    Parameters
    ----------
    model : ParametricModel
        Base model whose coefficients are overridden by the parameter states.
    names : sequence of str
        Coefficient names, one per parameter.
    theta0 : array_like
        Initial/nominal parameter values in coefficient units.
    theta_cov : array_like
        Random-walk covariance per discrete step, in state coordinates.
    scales : array_like, optional
        Normalization so that state coordinate = coefficient / scale.
    transform : {'none', 'log'}
    cross_cov : array_like, optional
        State-parameter block of the augmented process noise (default zero).

    Returns
    -------
    AugmentedModel
        Its transition applies the base RK4 step with overridden coefficients
        and copies theta unchanged; ``q = [[Q, X], [X.T, theta_cov]]``.
    """
    names = tuple(names)
    if not names:
        raise ConfigError("at least one parameter name is required")
    known = model.coeffs
    missing = [nm for nm in names if nm not in known]
    if missing:
        raise ConfigError(f"unknown model coefficient(s): {', '.join(missing)}")
    if transform not in ("none", "log"):
        raise ConfigError(f"unknown parameter transform {transform!r}")
    n_t = len(names)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    scales = np.ones(n_t) if scales is None else np.atleast_1d(np.asarray(scales, dtype=float))
    theta_cov = np.atleast_2d(np.asarray(theta_cov, dtype=float))
    if theta0.shape != (n_t,) or scales.shape != (n_t,) or theta_cov.shape != (n_t, n_t):
        raise ContractError("theta0, scales and theta_cov must match the number of names")
    if np.linalg.eigvalsh(0.5 * (theta_cov + theta_cov.T)).min() < 0:
        raise ContractError("theta_cov must be positive semi-definite")

    n = model.dynamics.n
    step = rk4_discretize(model.dynamics, model.dt)

    def coeff_overrides(theta):
        vals = scales * np.exp(theta) if transform == "log" else scales * theta
        return {nm: vals[..., i] for i, nm in enumerate(names)}

    def transition(xa, p):
        xa = np.asarray(xa, dtype=float)
        x, theta = xa[..., :n], xa[..., n:]
        out = np.empty_like(xa)
        out[..., :n] = step(x, p, 0.0, coeff_overrides(theta))
        out[..., n:] = theta
        return out

    def observation(xa, p):
        xa = np.asarray(xa, dtype=float)
        merged = dict(known)
        merged.update(coeff_overrides(xa[..., n:]))
        return model.output(xa[..., :n], p, merged)

    q = np.zeros((n + n_t, n + n_t))
    q[:n, :n] = model.q
    q[n:, n:] = theta_cov
    if cross_cov is not None:
        x = np.asarray(cross_cov, dtype=float).reshape(n, n_t)
        q[:n, n:] = x
        q[n:, :n] = x.T

    theta_state = theta0 / scales
    if transform == "log":
        theta_state = np.log(theta_state)
    return AugmentedModel(
        transition,
        observation,
        q,
        model.r,
        dt=model.dt,
        n_p=model.dynamics.n_p,
        base=model,
        names=names,
        scales=scales,
        transform=transform,
        theta0=theta_state,
        theta_process_cov=theta_cov,
    )
