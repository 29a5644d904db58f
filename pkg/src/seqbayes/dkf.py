"""Dual Kalman filter for joint input and (augmented) state estimation.

A linear Kalman filter tracks the unknown input as a random walk, with the
state held at its current estimate. An unscented Kalman filter tracks the
(parameter-augmented) state, driven by the input estimate.

Step order: input time update, state time update with the prior input mean,
input measurement update with the state held at its prior mean, state
measurement update with the posterior input mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericalError
from .gaussian import GaussianBelief, symmetrize
from .kalman import kf_update
from .ukf import UtConfig, sigma_points, ut_predict, ut_update

LINEARITY_TOL = 1e-9


@dataclass(frozen=True)
class DualBelief:
    """Input and state beliefs carried between steps."""

    input: GaussianBelief
    state: GaussianBelief


@dataclass(frozen=True)
class InputKfModel:
    """Random walk ``p_{k+1} = p_k + w^p`` observed through ``h(x_hat, p)``.

    ``mode`` selects the measurement update: ``'auto'`` probes ``h`` for
    linearity in ``p`` at every step and uses the exact Kalman update when it
    holds, ``'linear'`` always uses the Kalman update with a finite-difference
    input matrix, and ``'unscented'`` always uses an unscented pass.
    """

    process_cov: np.ndarray
    mode: str = "auto"

    def __post_init__(self):
        c = symmetrize(np.atleast_2d(np.asarray(self.process_cov, dtype=float)))
        if np.linalg.eigvalsh(c).min() < -1e-12 * max(abs(np.trace(c)), 1.0):
            raise ContractError("input process covariance must be PSD")
        if self.mode not in ("auto", "linear", "unscented"):
            raise ConfigError(f"unknown input update mode {self.mode!r}")
        object.__setattr__(self, "process_cov", c)

    @property
    def n_p(self):
        return self.process_cov.shape[0]


def input_time_update(db, input_model):
    """Input covariance grows by ``Q^p``; the mean is unchanged."""
    b = db.input
    return DualBelief(GaussianBelief(b.mean, b.cov + input_model.process_cov), db.state)


def _probe_steps(cov):
    s = np.sqrt(np.maximum(np.diag(cov), 0.0))
    s[s == 0] = 1.0
    return s


def input_matrix(hfn, p_mean, p_cov):
    """Central-difference input matrix ``D`` and a linearity flag.

    ``hfn`` maps an input array ``(..., n_p)`` to outputs ``(..., n_y)``.
    """
    n_p = p_mean.shape[0]
    s = _probe_steps(p_cov)
    e = np.eye(n_p) * s
    probes = np.concatenate([p_mean[None], p_mean + e, p_mean - e, (p_mean + s)[None]])
    out = np.asarray(hfn(probes), dtype=float)
    h0, hp, hm, hall = out[0], out[1 : n_p + 1], out[n_p + 1 : 2 * n_p + 1], out[-1]
    d = ((hp - hm) / (2.0 * s[:, None])).T
    scale = np.max(np.abs(out)) + 1e-300
    resid = max(
        np.max(np.abs(hp + hm - 2.0 * h0)),
        np.max(np.abs(hall - h0 - d @ s)),
    )
    return d, h0, bool(resid <= LINEARITY_TOL * scale)


def input_measurement_update(db, model, x_hold, y, input_model, ut_cfg=UtConfig()):
    """Condition the input belief on ``y`` with the state held at ``x_hold``.

    Returns
    -------
    DualBelief, dict
        The dict reports ``'linear'`` (which update was used) and the gain.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    b = db.input

    def hfn(p):
        return model.h(np.broadcast_to(x_hold, p.shape[:-1] + x_hold.shape), p)

    use_linear = input_model.mode == "linear"
    d = None
    if input_model.mode in ("auto", "linear"):
        d, _, is_linear = input_matrix(hfn, b.mean, b.cov)
        use_linear = use_linear or is_linear
    if use_linear:
        innov = y - hfn(b.mean)
        mean, cov, k, _ = kf_update(b.mean, b.cov, d, model.r, innov)
    else:
        pts, wm, wc = sigma_points(b.mean, b.cov, ut_cfg)
        mean, cov, _, pyy = ut_update(b.mean, b.cov, pts, wm, wc, hfn, model.r, y)
        k = None
    return DualBelief(GaussianBelief(mean, cov), db.state), {"linear": use_linear, "gain": k}


def dual_step(db, model, y, input_model, ut_cfg=UtConfig(), redraw=True, update_state=True):
    """One full recursion; returns ``(DualBelief, info)``.

    ``update_state=False`` skips the final state measurement update, which
    leaves the input recursion untouched given the same state estimates.
    """
    db = input_time_update(db, input_model)
    p_prior = db.input.mean
    st = db.state
    try:
        pm, pc, prop, wm, wc = ut_predict(
            st.mean, st.cov, lambda x: model.g(x, p_prior), model.q, ut_cfg
        )
    except NumericalError as exc:
        raise NumericalError(f"state time update failed: {exc}") from None
    db = DualBelief(db.input, GaussianBelief(pm, pc))
    db, info = input_measurement_update(db, model, pm, y, input_model, ut_cfg)
    if update_state:
        p_post = db.input.mean
        pts = sigma_points(pm, pc, ut_cfg)[0] if redraw else prop
        mean, cov, _, _ = ut_update(
            pm, pc, pts, wm, wc, lambda x: model.h(x, p_post),
            model.r, np.atleast_1d(np.asarray(y, dtype=float)),
        )
        db = DualBelief(db.input, GaussianBelief(mean, cov))
    return db, info


class DualKalmanUnscentedFilter:
    """Joint input-state-parameter estimator.

    The runner's known inputs are ignored: the input is estimated.
    """

    name = "dkf"

    def __init__(
        self,
        model,
        state_prior,
        input_prior,
        input_model,
        ut_cfg=UtConfig(),
        redraw=True,
    ):
        if input_model.n_p != model.n_p or input_prior.dim != model.n_p:
            raise ConfigError(
                f"input dimension mismatch: model has {model.n_p}, "
                f"input model {input_model.n_p}, prior {input_prior.dim}"
            )
        self.model = model
        self.input_model = input_model
        self.ut_cfg = ut_cfg
        self.redraw = redraw
        self.belief = DualBelief(input_prior, state_prior)
        ut_cfg.weights(model.n)

    def predict(self, p=None):
        # deferred: the input and state recursions are interleaved in update()
        return None

    def update(self, y, p=None):
        self.belief, self.last_info = dual_step(
            self.belief, self.model, y, self.input_model, self.ut_cfg, self.redraw
        )
        return self.belief

    @property
    def mean(self):
        return self.belief.state.mean

    @property
    def std(self):
        return self.belief.state.std

    @property
    def cov(self):
        return self.belief.state.cov

    @property
    def input_mean(self):
        return self.belief.input.mean

    @property
    def input_std(self):
        return self.belief.input.std
