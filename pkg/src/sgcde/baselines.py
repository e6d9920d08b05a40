"""Non-learned forecasting baselines."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import so3
from .dynamics import BodyState, InertiaTensor, RigidBodyConfig, Scenario, integrate_dopri45
from .sgfilter import SgFit, eval_path, extrapolation_window, fit


def constant_velocity_forecast(times: np.ndarray, rotations: np.ndarray, targets) -> np.ndarray:
    """Extrapolate the angular velocity between the last two samples.

    ``w = vee(Log(x_N x_{N-1}^T)) / dt`` and ``y(t) = Exp((t - t_N) w) x_N``.
    """
    times = np.asarray(times, dtype=float)
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    if len(times) < 2:
        raise ValueError("constant-velocity forecast needs two samples")
    x_prev, x_last = rotations[-2], rotations[-1]
    w = so3.log_map(x_last @ x_prev.T) / (times[-1] - times[-2])
    dt = np.atleast_1d(np.asarray(targets, dtype=float)) - times[-1]
    return so3.exp_map(dt[:, None] * w) @ x_last


def sg_window_fit(times: np.ndarray, rotations: np.ndarray, window: int = 13, order: int = 2, weights=None) -> SgFit:
    """Fit over the last ``window`` samples, anchored at the most recent one."""
    if window % 2 == 0:
        raise ValueError("SG window size must be odd")
    return fit(extrapolation_window(times, rotations, window // 2, order), weights)


def sg_extrapolation_forecast(sg: SgFit, targets, check_range: bool = True) -> np.ndarray:
    """Evaluate the fitted SG path beyond the last sample."""
    return eval_path(sg, np.atleast_1d(np.asarray(targets, dtype=float)), check_range=check_range)


def momentum_estimate(omega: np.ndarray, inertia: np.ndarray, delta: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Body-frame momentum ``J (w + eps)``, ``eps ~ N(0, (delta |w|)^2 I)``; exact when ``rng`` is None."""
    omega = np.asarray(omega, dtype=float)
    j = np.asarray(inertia, dtype=float)
    if rng is None or delta == 0:
        return j * omega
    eps = rng.normal(0.0, delta * np.linalg.norm(omega), 3)
    return j * (omega + eps)


def conservational_forecast(
    x_last: np.ndarray,
    momentum: np.ndarray,
    inertia,
    targets,
    t_last: float = 0.0,
    rtol: float = 1e-9,
    atol: float = 1e-9,
) -> tuple[np.ndarray, int]:
    """Torque-free rigid-body forecast from ``x_last`` with ``w0 = J^-1 L``.

    Returns the rotations at ``targets`` and the integrator NFE.
    """
    J = inertia if isinstance(inertia, InertiaTensor) else InertiaTensor(np.asarray(inertia, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if np.any(targets <= t_last):
        raise ValueError("targets must lie after the last observation")
    omega0 = np.asarray(momentum, dtype=float) / J.j
    cfg = RigidBodyConfig(inertia=J, scenario=Scenario.FREE_ROTATION)
    out = integrate_dopri45(cfg, BodyState(t_last, np.asarray(x_last, dtype=float), omega0), float(targets.max()),
                            rtol=rtol, atol=atol, t_eval=targets)
    return out.r, out.nfe
