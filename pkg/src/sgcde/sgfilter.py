"""Savitzky-Golay regression on SO(3).

A window of rotations is expressed relative to an anchor sample through the
logarithm, ``b_m = Log(x_m x_k^T)``, and a polynomial
``p(tau) = rho_0 + rho_1 tau + rho_2 tau^2 / 2`` is fitted to these residuals
by (weighted) linear least squares. The smooth control path is
``phi(t) = Exp(p(t - t_k)) x_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from . import so3
from .errors import (
    NearPiSingularity,
    PolynomialOutOfInjectiveRange,
    SingularNormalEquations,
    WindowTooLarge,
)

SOFTPLUS_INV_ONE = math.log(math.e - 1.0)


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


@dataclass
class SgWindow:
    times: np.ndarray
    rotations: np.ndarray
    anchor: int
    order: int = 2

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        m = self.times.size
        if self.rotations.shape[0] != m:
            raise ValueError("times and rotations differ in length")
        if m < self.order + 1:
            raise ValueError(f"window of {m} samples cannot determine an order-{self.order} polynomial")
        if not 0 <= self.anchor < m:
            raise ValueError("anchor index outside window")

    @property
    def anchor_time(self) -> float:
        return float(self.times[self.anchor])

    @property
    def anchor_rot(self) -> np.ndarray:
        return self.rotations[self.anchor]


@dataclass
class SgWeights:
    """Per-sample window weights; the effective weight is ``softplus(raw)`` (always positive)."""

    raw: np.ndarray

    @classmethod
    def identity(cls, size: int) -> "SgWeights":
        return cls(np.full(size, SOFTPLUS_INV_ONE))

    @property
    def effective(self) -> np.ndarray:
        return softplus(self.raw)


@dataclass
class SgFit:
    coeffs: np.ndarray  # (order+1, 3): rows rho_0, rho_1, rho_2, ...
    anchor_time: float
    anchor_rot: np.ndarray
    spacing: float = 0.1
    bound: float = field(default=np.inf, repr=False)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def rho(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    @property
    def rho0(self) -> np.ndarray:
        return self.coeffs[0]

    @property
    def rho1(self) -> np.ndarray:
        return self.coeffs[1]

    @property
    def rho2(self) -> np.ndarray:
        return self.coeffs[2] if self.order >= 2 else np.zeros(3)

    def poly(self, t, deriv: int = 0) -> np.ndarray:
        """``d^deriv/dt^deriv p(t - t_k)`` for scalar or array ``t``; shape ``t.shape + (3,)``."""
        tau = np.asarray(t, dtype=float) - self.anchor_time
        out = np.zeros(tau.shape + (3,))
        for i in range(deriv, self.order + 1):
            c = tau ** (i - deriv) / math.factorial(i - deriv)
            out = out + c[..., None] * self.coeffs[i]
        return out


def vandermonde(taus: np.ndarray, order: int = 2) -> np.ndarray:
    """Rows ``[1, tau, tau^2/2!, ..., tau^p/p!]``."""
    taus = np.asarray(taus, dtype=float)
    return np.stack([taus**i / math.factorial(i) for i in range(order + 1)], axis=-1)


def residuals(window: SgWindow) -> np.ndarray:
    """``vee(Log(x_m x_k^T))`` for every sample, shape (M, 3)."""
    rel = window.rotations @ window.anchor_rot.T
    return so3.log_map(rel)


def build_design(window: SgWindow) -> tuple[np.ndarray, np.ndarray]:
    """Full Kronecker-expanded system ``A = V (x) I_3`` and stacked residual vector ``b``."""
    V = vandermonde(window.times - window.anchor_time, window.order)
    A = np.kron(V, np.eye(3))
    b = residuals(window).reshape(-1)
    return A, b


def fit(window: SgWindow, weights: Optional[SgWeights | np.ndarray] = None) -> SgFit:
    """Closed-form (weighted) least-squares polynomial fit.

    Because ``A`` and ``W`` are both Kronecker products with ``I_3`` the normal
    equations decouple per axis; the ``(p+1) x (p+1)`` system is solved by
    Cholesky, which doubles as the positive-definiteness check.
    """
    V = vandermonde(window.times - window.anchor_time, window.order)
    B = residuals(window)
    if weights is None:
        w = np.ones(len(V))
    elif isinstance(weights, SgWeights):
        w = weights.effective
    else:
        w = np.asarray(weights, dtype=float)
    if w.shape != (len(V),):
        raise ValueError(f"expected {len(V)} weights, got shape {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    N = V.T @ (w[:, None] * V)
    rhs = V.T @ (w[:, None] * B)
    try:
        cho = linalg.cho_factor(N)
    except linalg.LinAlgError as exc:
        raise SingularNormalEquations(str(exc)) from exc
    if np.linalg.cond(N) > 1e14:
        raise SingularNormalEquations("normal equations are numerically singular")
    coeffs = linalg.cho_solve(cho, rhs)
    # ||rho|| <= ||(A^T W A)^-1|| ||A^T W b||, with the Kronecker factor I_3 leaving norms unchanged
    bound = float(np.linalg.norm(np.linalg.inv(N), 2) * np.linalg.norm(rhs))
    dts = np.diff(window.times)
    spacing = float(np.min(np.abs(dts))) if dts.size else 0.1
    return SgFit(coeffs, window.anchor_time, window.anchor_rot.copy(), spacing, bound)


def weighted_residual(window: SgWindow, rho: np.ndarray, weights: Optional[np.ndarray] = None) -> float:
    A, b = build_design(window)
    w = np.ones(b.size // 3) if weights is None else np.asarray(weights, dtype=float)
    r = A @ np.asarray(rho).reshape(-1) - b
    return float(np.sum(np.repeat(w, 3) * r * r))


def _check_range(p: np.ndarray, check: bool):
    if check and np.any(np.linalg.norm(p, axis=-1) >= np.pi):
        raise PolynomialOutOfInjectiveRange("||p(t - t_k)|| reached pi")


def eval_path(fit: SgFit, t, check_range: bool = True) -> np.ndarray:
    """``phi(t) = Exp(p(t - t_k)) x_k`` for scalar or array ``t``."""
    p = fit.poly(t)
    _check_range(p, check_range)
    return so3.exp_map(p) @ fit.anchor_rot


def angular_velocity(fit: SgFit, t) -> np.ndarray:
    """World-frame angular velocity ``w`` with ``phi'(t) = hat(w) phi(t)``."""
    p = fit.poly(t)
    pd = fit.poly(t, 1)
    return np.einsum("...ij,...j->...i", so3.left_jacobian(p), pd)


def eval_derivatives(fit: SgFit, t, check_range: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """First and second time derivatives of the 3x3 path.

    The first derivative is analytic, ``hat(J_l(p) p') phi``; the second is a
    central difference of the first with ``h = min(1e-5, spacing / 100)``.
    """
    t = np.asarray(t, dtype=float)
    _check_range(fit.poly(t), check_range)

    def first(tt):
        return so3.hat(angular_velocity(fit, tt)) @ eval_path(fit, tt, check_range=False)

    h = min(1e-5, fit.spacing / 100.0)
    dX = first(t)
    d2X = (first(t + h) - first(t - h)) / (2 * h)
    return dX, d2X


def extrapolation_window(times: Sequence[float], rotations: np.ndarray, n: int, order: int = 2) -> SgWindow:
    """Window over the last ``2n + 1`` samples, anchored at the most recent one."""
    times = np.asarray(times, dtype=float)
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    size = 2 * n + 1
    if size < order + 1:
        raise ValueError(f"2n+1 = {size} < p+1 = {order + 1}: design matrix is rank deficient")
    if len(times) < size:
        raise WindowTooLarge(f"need {size} samples, trajectory has {len(times)}")
    ts, rs = times[-size:], rotations[-size:]
    steps = so3.rotation_angle(rs[1:] @ np.swapaxes(rs[:-1], -1, -2))
    if np.any(steps >= np.pi - so3.EPS_LOG):
        raise NearPiSingularity("consecutive samples are pi apart")
    window = SgWindow(ts, rs, anchor=size - 1, order=order)
    residuals(window)  # raises NearPiSingularity if any sample is pi away from the anchor
    return window


def centered_window(times: np.ndarray, rotations: np.ndarray, k: int, n: int, order: int = 2) -> SgWindow:
    """Window of up to ``2n + 1`` samples around ``k``, shifted inward at the ends."""
    total = len(times)
    size = min(2 * n + 1, total)
    lo = min(max(0, k - n), total - size)
    return SgWindow(times[lo : lo + size], rotations[lo : lo + size], anchor=k - lo, order=order)


def smooth_trajectory(times: np.ndarray, rotations: np.ndarray, n: int, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Sliding-window smoothing: returns smoothed rotations ``Exp(rho_0) x_k`` and world angular velocities."""
    times = np.asarray(times, dtype=float)
    rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    smoothed = np.empty_like(rotations)
    omega = np.empty((len(times), 3))
    for k in range(len(times)):
        f = fit(centered_window(times, rotations, k, n, order))
        smoothed[k] = eval_path(f, times[k])
        omega[k] = angular_velocity(f, times[k])
    return smoothed, omega
