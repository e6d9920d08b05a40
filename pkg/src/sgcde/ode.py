"""Explicit Runge-Kutta integrators with function-evaluation accounting.

``dopri45`` is the Dormand-Prince 5(4) pair with FSAL, a PI step-size
controller and the standard 4th-order continuous extension, so observations
can be taken at exact times without shortening steps. ``rk4`` is the classical
fixed-step scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import StepSizeUnderflow

Rhs = Callable[[float, np.ndarray], np.ndarray]

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4

# continuous extension: y(t + s h) = y + h * K^T (P @ [s, s^2, s^3, s^4])
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)


@dataclass
class OdeSolution:
    t: np.ndarray
    y: np.ndarray
    nfe: int
    n_accepted: int
    n_rejected: int
    t_eval: Optional[np.ndarray] = None
    y_eval: Optional[np.ndarray] = None
    step_sizes: list = field(default_factory=list)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x)))


def _initial_step(f: Rhs, t0: float, y0: np.ndarray, f0: np.ndarray, rtol: float, atol: float) -> tuple[float, int]:
    # Hairer, Norsett & Wanner, II.4 starting step heuristic (one extra evaluation)
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1), 1


def dopri45(
    f: Rhs,
    t0: float,
    y0: np.ndarray,
    t_end: float,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    dt_init: Optional[float] = None,
    t_eval: Optional[Sequence[float]] = None,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    dt_min: float = 1e-12,
    max_steps: int = 1_000_000,
) -> OdeSolution:
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t_end`` adaptively.

    ``post_step`` may project an accepted state (e.g. back onto a manifold);
    when it changes the state the FSAL derivative is re-evaluated. ``t_eval``
    points are filled from the dense interpolant of the step that covers them.
    Raises StepSizeUnderflow when the controller asks for a step below ``dt_min``.
    """
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    y = np.array(y0, dtype=float)
    t = float(t0)
    nfe = 0
    k = np.empty((7,) + y.shape)
    k[0] = f(t, y)
    nfe += 1
    if dt_init is None:
        h, extra = _initial_step(f, t, y, k[0], rtol, atol)
        nfe += extra
    else:
        h = float(dt_init)

    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) < 0) or (t_eval.size and (t_eval[0] < t0 or t_eval[-1] > t_end)):
            raise ValueError("t_eval must be sorted and inside [t0, t_end]")
        y_eval = np.empty((t_eval.size,) + y.shape)
        next_eval = 0
        while next_eval < t_eval.size and t_eval[next_eval] == t0:
            y_eval[next_eval] = y
            next_eval += 1
    ts, ys, hs = [t], [y.copy()], []
    beta = 0.04
    alpha = 0.2 - 0.75 * beta
    err_prev = 1e-4
    n_acc = n_rej = 0
    rejected_last = False

    while t < t_end:
        if n_acc + n_rej >= max_steps:
            raise RuntimeError("maximum number of steps exceeded")
        h = min(h, t_end - t)
        if h < dt_min and t_end - t > dt_min:
            raise StepSizeUnderflow(f"step size {h:.3e} below {dt_min:.1e} at t={t:.6f}")
        for i in range(1, 7):
            dy = sum(a * k[j] for j, a in enumerate(_A[i]) if a != 0.0)
            k[i] = f(t + _C[i] * h, y + h * dy)
        nfe += 6
        y_new = y + h * np.tensordot(_B5[:6], k[:6], axes=1)
        err_vec = h * np.tensordot(_E, k, axes=1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(err_vec / scale)

        if err <= 1.0:
            t_new = t + h
            if t_eval is not None:
                while next_eval < t_eval.size and t_eval[next_eval] <= t_new + 1e-14 * max(1.0, abs(t_new)):
                    s = (t_eval[next_eval] - t) / h
                    powers = np.array([s, s * s, s**3, s**4])
                    y_eval[next_eval] = y + h * np.tensordot(_P @ powers, k, axes=1)
                    next_eval += 1
            if post_step is not None:
                projected = post_step(y_new)
                changed = projected is not y_new and not np.array_equal(projected, y_new)
                y_new = projected
            else:
                changed = False
            hs.append(h)
            t, y = t_new, y_new
            if changed:
                k[0] = f(t, y)
                nfe += 1
            else:
                k[0] = k[6]
            ts.append(t)
            ys.append(y.copy())
            n_acc += 1
            err_c = max(err, 1e-10)
            fac = 0.9 * err_c ** (-alpha) * err_prev**beta
            fac = min(10.0, max(0.2, fac))
            if rejected_last:
                fac = min(1.0, fac)
            h *= fac
            err_prev = err_c
            rejected_last = False
        else:
            n_rej += 1
            h *= max(0.2, 0.9 * err ** (-1 / 5))
            rejected_last = True

    return OdeSolution(
        t=np.array(ts),
        y=np.array(ys),
        nfe=nfe,
        n_accepted=n_acc,
        n_rejected=n_rej,
        t_eval=t_eval,
        y_eval=y_eval if t_eval is not None else None,
        step_sizes=hs,
    )


def rk4(f: Rhs, t0: float, y0: np.ndarray, dt: float, n_steps: int) -> OdeSolution:
    """Classical fixed-step RK4; returns every step, ``nfe = 4 * n_steps``."""
    y = np.array(y0, dtype=float)
    t = float(t0)
    ts, ys = [t], [y.copy()]
    for i in range(n_steps):
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (i + 1) * dt
        ts.append(t)
        ys.append(y.copy())
    return OdeSolution(np.array(ts), np.array(ys), 4 * n_steps, n_steps, 0)
