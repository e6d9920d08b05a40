import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from sgcde.errors import StepSizeUnderflow
from sgcde.ode import dopri45, rk4


def oscillator(t, y):
    return np.array([y[1], -y[0]])


def test_dopri_harmonic_oscillator():
    sol = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, rtol=1e-9, atol=1e-9)
    assert sol.t[-1] == 10.0
    assert np.abs(sol.y[-1] - [math.cos(10), -math.sin(10)]).max() < 1e-7


def test_nfe_accounting_fsal():
    # one initial evaluation, then six per attempted step (the seventh stage is reused)
    sol = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, rtol=1e-9, atol=1e-9, dt_init=0.01)
    assert sol.nfe == 1 + 6 * (sol.n_accepted + sol.n_rejected)


def test_dopri_matches_scipy_rk45():
    f = lambda t, y: np.array([y[1], (1 - y[0] ** 2) * y[1] - y[0]])
    ours = dopri45(f, 0.0, np.array([2.0, 0.0]), 5.0, rtol=1e-10, atol=1e-10)
    ref = solve_ivp(f, (0, 5), [2.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12)
    assert np.abs(ours.y[-1] - ref.y[:, -1]).max() < 1e-7


def test_dense_output_at_exact_times():
    t_eval = np.linspace(0, 10, 101)
    sol = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, rtol=1e-9, atol=1e-9, t_eval=t_eval)
    assert np.array_equal(sol.t_eval, t_eval)
    assert np.abs(sol.y_eval[:, 0] - np.cos(t_eval)).max() < 1e-7


def test_tolerance_controls_error():
    errs = []
    for tol in (1e-4, 1e-7, 1e-10):
        sol = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, rtol=tol, atol=tol)
        errs.append(abs(sol.y[-1, 0] - math.cos(10)))
    assert errs[0] > errs[1] > errs[2]


def test_nfe_grows_with_tighter_tolerance():
    loose = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, rtol=1e-3, atol=1e-6)
    tight = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 10.0, rtol=1e-10, atol=1e-10)
    assert tight.nfe > loose.nfe


def test_post_step_hook_applied():
    calls = []

    def hook(y):
        calls.append(1)
        return y

    sol = dopri45(oscillator, 0.0, np.array([1.0, 0.0]), 1.0, post_step=hook)
    assert len(calls) == sol.n_accepted


def test_step_size_underflow():
    f = lambda t, y: np.array([1.0 / (1.0 - t) ** 2])
    with pytest.raises(StepSizeUnderflow):
        dopri45(f, 0.0, np.array([1.0]), 2.0, rtol=1e-10, atol=1e-10, dt_min=1e-10)


def test_rk4_nfe_and_order():
    sol = rk4(lambda t, y: -y, 0.0, np.array([1.0]), 0.025, 80)
    assert sol.nfe == 320
    assert sol.t[-1] == pytest.approx(2.0, abs=1e-15)
    e1 = abs(rk4(lambda t, y: -y, 0.0, np.array([1.0]), 0.1, 20).y[-1, 0] - math.exp(-2))
    e2 = abs(rk4(lambda t, y: -y, 0.0, np.array([1.0]), 0.05, 40).y[-1, 0] - math.exp(-2))
    assert 3.8 < math.log2(e1 / e2) < 4.2
