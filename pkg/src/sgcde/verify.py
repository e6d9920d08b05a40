"""Named invariant checks runnable from the command line (``sgcde verify``)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import so3
from .errors import CheckpointError, NearPiSingularity, SgcdeError


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


_REGISTRY: list[tuple[str, Callable[[np.random.Generator], tuple[bool, str]]]] = []


def check(name: str):
    def deco(fn):
        _REGISTRY.append((name, fn))
        return fn

    return deco


def _rng_axis(rng, n, lo=0.0, hi=math.pi - 0.1):
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    return axis * rng.uniform(lo, hi, (n, 1))


# geometry


@check("hat_vee_inverse")
def _(rng):
    v = rng.normal(size=(1000, 3))
    err = np.abs(so3.vee(so3.hat(v)) - v).max()
    return err == 0.0, f"max err {err:.1e}"


@check("exp_log_roundtrip")
def _(rng):
    r = so3.random_rotation(rng, 10_000)
    r = r[so3.rotation_angle(r) < math.pi - 1e-3]
    err = np.abs(so3.exp_map(so3.log_map(r)) - r).max()
    return err < 1e-9, f"max err {err:.1e}"


@check("log_exp_roundtrip")
def _(rng):
    v = _rng_axis(rng, 10_000)
    err = np.abs(so3.log_map(so3.exp_map(v)) - v).max()
    return err < 1e-9, f"max err {err:.1e}"


@check("exp_is_rotation")
def _(rng):
    r = so3.exp_map(rng.normal(scale=3.0, size=(1000, 3)))
    d = so3.orthogonality_defect(r).max()
    det = np.abs(np.linalg.det(r) - 1).max()
    return d < 1e-12 and det < 1e-12, f"defect {d:.1e}, |det-1| {det:.1e}"


@check("small_angle_branch_continuity")
def _(rng):
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    below = so3.exp_map(u * (so3.SMALL_ANGLE * (1 - 1e-9)))
    above = so3.exp_map(u * (so3.SMALL_ANGLE * (1 + 1e-9)))
    err = np.abs(below - above).max()
    return err < 1e-12, f"jump {err:.1e}"


@check("log_near_pi_raises")
def _(rng):
    try:
        so3.log_map(so3.exp_map(np.array([math.pi - 1e-8, 0.0, 0.0])))
    except NearPiSingularity:
        return True, "NearPiSingularity raised"
    return False, "no error"


@check("rge_matches_geodesic")
def _(rng):
    a = so3.random_rotation(rng, 1000)
    b = so3.exp_map(_rng_axis(rng, 1000)) @ a
    err = np.abs(so3.rge(a, b) - so3.geodesic_dist(a, b)).max()
    return err < 1e-9, f"max err {err:.1e}"


@check("gso_orthonormal")
def _(rng):
    r = so3.from_6d_gso(rng.normal(size=(1000, 6)))
    d = so3.orthogonality_defect(r).max()
    return d < 1e-9, f"defect {d:.1e}"


@check("gso_6d_roundtrip")
def _(rng):
    r = so3.random_rotation(rng, 1000)
    err = np.abs(so3.from_6d_gso(so3.to_6d(r)) - r).max()
    return err < 1e-12, f"max err {err:.1e}"


@check("left_jacobian_finite_difference")
def _(rng):
    v, u = _rng_axis(rng, 1)[0], rng.normal(size=3)
    h = 1e-6
    fd = (so3.exp_map(v + h * u) - so3.exp_map(v - h * u)) / (2 * h)
    an = so3.hat(so3.left_jacobian(v) @ u) @ so3.exp_map(v)
    err = np.abs(fd - an).max()
    return err < 1e-8, f"max err {err:.1e}"


@check("left_right_jacobian_relation")
def _(rng):
    v = _rng_axis(rng, 100)
    err = np.abs(so3.left_jacobian(v) - so3.exp_map(v) @ so3.right_jacobian(v)).max()
    return err < 1e-12, f"max err {err:.1e}"


@check("quaternion_roundtrip")
def _(rng):
    r = so3.random_rotation(rng, 500)
    err = np.abs(so3.quat_to_matrix(so3.matrix_to_quat(r)) - r).max()
    return err < 1e-12, f"max err {err:.1e}"


@check("uniform_sampling_zero_mean")
def _(rng):
    m = np.abs(so3.random_rotation(rng, 20_000).mean(0)).max()
    return m < 0.02, f"|E[R]| max entry {m:.3f}"


# integrators and dynamics


@check("dopri45_harmonic_accuracy")
def _(rng):
    from .ode import dopri45

    sol = dopri45(lambda t, y: np.array([y[1], -y[0]]), 0.0, np.array([1.0, 0.0]), 10.0, rtol=1e-10, atol=1e-10)
    err = np.abs(sol.y[-1] - [math.cos(10), -math.sin(10)]).max()
    return err < 1e-8, f"err {err:.1e}, nfe {sol.nfe}"


@check("rk4_fourth_order")
def _(rng):
    from .ode import rk4

    errs = []
    for n in (20, 40):
        sol = rk4(lambda t, y: -y, 0.0, np.array([1.0]), 2.0 / n, n)
        errs.append(abs(sol.y[-1, 0] - math.exp(-2.0)))
    rate = math.log2(errs[0] / errs[1])
    return 3.8 < rate < 4.2, f"observed order {rate:.2f}"


def _free_run(j=(1.0, 2.0, 3.0), t_end=10.0):
    from .dynamics import BodyState, InertiaTensor, RigidBodyConfig, integrate_dopri45

    cfg = RigidBodyConfig(InertiaTensor(np.array(j)))
    w0 = np.array([0.4, -0.3, 0.5])
    return integrate_dopri45(cfg, BodyState(0.0, np.eye(3), w0), t_end, rtol=1e-9, atol=1e-9), np.array(j)


@check("free_rotation_energy")
def _(rng):
    from .dynamics import kinetic_energy

    out, j = _free_run()
    e = kinetic_energy(j, out.omega)
    drift = np.abs(e / e[0] - 1).max()
    return drift < 1e-6, f"relative drift {drift:.1e}"


@check("free_rotation_world_momentum")
def _(rng):
    from .dynamics import world_momentum

    out, j = _free_run()
    L = world_momentum(j, out.r, out.omega)
    drift = (np.linalg.norm(L - L[0], axis=1) / np.linalg.norm(L[0])).max()
    return drift < 1e-6, f"relative drift {drift:.1e}"


@check("integrated_states_are_rotations")
def _(rng):
    out, _ = _free_run()
    d = so3.orthogonality_defect(out.r).max()
    return d < 1e-9, f"defect {d:.1e}"


@check("damping_exponential_decay")
def _(rng):
    from .dynamics import BodyState, InertiaTensor, RigidBodyConfig, Scenario, integrate_dopri45

    cfg = RigidBodyConfig(InertiaTensor(np.ones(3)), Scenario.VELOCITY_DAMPING)
    w0 = np.array([0.3, -0.2, 0.4])
    out = integrate_dopri45(cfg, BodyState(0.0, np.eye(3), w0), 10.0)
    ratio = np.linalg.norm(out.omega[-1]) / np.linalg.norm(w0)
    rel = abs(ratio / math.exp(-2.0) - 1)
    return rel < 0.01, f"ratio {ratio:.6f}, rel err {rel:.1e}"


@check("variable_dynamics_balanced")
def _(rng):
    from .dynamics import resolved_plan

    plan = resolved_plan(200, 0)
    shares = [plan.count(s) / 200 for s in set(plan)]
    return len(shares) == 4 and all(abs(s - 0.25) <= 0.025 for s in shares), f"shares {sorted(shares)}"


# Savitzky-Golay filter


def _quadratic_window(rng, n=13):
    from .sgfilter import SgWindow

    times = np.sort(rng.uniform(-1.2, 0.0, n))
    times[-1] = 0.0
    rho = np.vstack([np.zeros(3), rng.normal(scale=0.5, size=3), rng.normal(scale=0.5, size=3)])
    anchor = so3.random_rotation(rng)
    p = rho[1] * times[:, None] + rho[2] * times[:, None] ** 2 / 2
    return SgWindow(times, so3.exp_map(p) @ anchor, anchor=n - 1), rho


@check("sg_exact_recovery")
def _(rng):
    from .sgfilter import fit

    worst = 0.0
    for _ in range(100):
        w, rho = _quadratic_window(rng)
        worst = max(worst, np.abs(fit(w).coeffs - rho).max())
    return worst < 1e-8, f"max |rho - rho*| {worst:.1e}"


@check("sg_unit_weights_match_unweighted")
def _(rng):
    from .sgfilter import SgWeights, fit, SgWindow

    times = np.arange(13) * 0.1
    w = SgWindow(times, so3.perturb(so3.exp_map(np.outer(times, [0.3, 0.1, -0.2])), 0.05, rng), anchor=12)
    err = np.abs(fit(w, SgWeights.identity(13)).coeffs - fit(w).coeffs).max()
    return err < 1e-12, f"max err {err:.1e}"


@check("sg_kronecker_equivalence")
def _(rng):
    from .sgfilter import build_design, fit

    w, _ = _quadratic_window(rng)
    w.rotations = so3.perturb(w.rotations, 0.05, rng)
    A, b = build_design(w)
    full = np.linalg.lstsq(A, b, rcond=None)[0]
    err = np.abs(full - fit(w).rho).max()
    return err < 1e-10, f"max err {err:.1e}"


@check("sg_weights_positive")
def _(rng):
    from .sgfilter import SgWeights

    eff = SgWeights(rng.normal(scale=30.0, size=1000)).effective
    return bool(np.all(eff > 0)), f"min weight {eff.min():.1e}"


@check("sg_first_derivative_finite_difference")
def _(rng):
    from .sgfilter import eval_derivatives, eval_path, fit

    w, _ = _quadratic_window(rng)
    f = fit(w)
    t, h = -0.3, 1e-6
    fd = (eval_path(f, t + h) - eval_path(f, t - h)) / (2 * h)
    d1, _ = eval_derivatives(f, t)
    err = np.abs(fd - d1).max() / np.abs(d1).max()
    return err < 1e-7, f"relative err {err:.1e}"


# model and loss


def _tiny_model(order=2, latent=8):
    from .model import CdeModel, ModelConfig

    return CdeModel(ModelConfig(latent=latent, hidden=16, order=order, window=5, dtype="float64"), seed=0)


def _tiny_inputs(rng):
    t = np.arange(5) * 0.1
    x = so3.perturb(so3.exp_map(np.outer(t, [0.4, -0.2, 0.3])), 0.05, rng)
    return t, x


@check("decoder_outputs_rotations")
def _(rng):
    import torch

    m = _tiny_model()
    with torch.no_grad():
        r = m.decode(torch.as_tensor(rng.normal(scale=5.0, size=(500, 8)))).numpy()
    d = so3.orthogonality_defect(r).max()
    det = np.abs(np.linalg.det(r) - 1).max()
    return d < 1e-9 and det < 1e-9, f"defect {d:.1e}"


@check("second_order_reduction")
def _(rng):
    import torch

    from .model import rk4_forecast

    m1, m2 = _tiny_model(order=1), _tiny_model(order=2)
    m2.load_state_dict({**m2.state_dict(), **m1.state_dict()})
    with torch.no_grad():
        for p in m2.g.parameters():
            p.zero_()
        t, x = _tiny_inputs(rng)
        a, _ = rk4_forecast(m1, t, x, np.array([0.6, 0.7]))
        b, _ = rk4_forecast(m2, t, x, np.array([0.6, 0.7]))
    err = (a - b).abs().max().item()
    return err == 0.0, f"max diff {err:.1e}"


@check("zero_field_constant_latent")
def _(rng):
    import torch

    m = _tiny_model(order=1)
    with torch.no_grad():
        for p in m.f.parameters():
            p.zero_()
        t, x = _tiny_inputs(rng)
        path = m.control_path(t[None], x[None])
        from .model import _rk4_latents

        z0 = m.encode(torch.tensor([0.0], dtype=m.dtype), torch.as_tensor(x[:1]))
        zs = _rk4_latents(m, path, z0, np.array([10, 20]), 0.025)
    err = (zs - z0[:, None]).abs().max().item()
    return err == 0.0, f"max drift {err:.1e}"


@check("rhs_linear_in_control")
def _(rng):
    import torch

    m = _tiny_model()
    z = torch.as_tensor(rng.normal(size=(1, 8)))
    dX = torch.as_tensor(rng.normal(size=(1, 10)))
    dX[:, 0] = 0
    with torch.no_grad():
        err = (m.rhs(z, 2.5 * dX) - 2.5 * m.rhs(z, dX)).abs().max().item()
    return err < 1e-12, f"max err {err:.1e}"


@check("loss_nonnegative_zero_iff_equal")
def _(rng):
    from .model import geodesic_loss

    a = so3.random_rotation(rng, 50)
    b = so3.exp_map(_rng_axis(rng, 50, 0.01, 3.0)) @ a
    z = geodesic_loss(a, a)
    return z == 0.0 and geodesic_loss(a, b) > 0, f"loss(a,a)={z}"


@check("loss_symmetric")
def _(rng):
    from .model import geodesic_loss

    a = so3.random_rotation(rng, 50)
    b = so3.exp_map(_rng_axis(rng, 50)) @ a
    err = abs(geodesic_loss(a, b) - geodesic_loss(b, a))
    return err < 1e-9, f"diff {err:.1e}"


# baselines and persistence


@check("constant_velocity_exact")
def _(rng):
    from .baselines import constant_velocity_forecast

    w, x0 = np.array([0.5, -0.2, 0.3]), so3.random_rotation(rng)
    t = np.arange(13) * 0.1
    x = so3.exp_map(np.outer(t, w)) @ x0
    tgt = np.array([1.6, 2.0])
    pred = constant_velocity_forecast(t, x, tgt)
    err = so3.rge(pred, so3.exp_map(np.outer(tgt, w)) @ x0).max()
    return err < 1e-9, f"max rge {err:.1e}"


@check("conservational_energy_conserved")
def _(rng):
    from .baselines import conservational_forecast
    from .dynamics import BodyState, InertiaTensor, RigidBodyConfig, integrate_dopri45, kinetic_energy

    j = np.array([1.0, 2.0, 3.0])
    L = np.array([0.3, -0.5, 0.8])
    r, _ = conservational_forecast(np.eye(3), L, j, np.linspace(0.1, 2.0, 20))
    # the forecast returns orientations only, so energy is checked on the same torque-free solve
    out = integrate_dopri45(RigidBodyConfig(InertiaTensor(j)), BodyState(0.0, np.eye(3), L / j), 2.0)
    e = kinetic_energy(j, out.omega)
    drift = np.abs(e / e[0] - 1).max()
    return drift < 1e-6 and so3.orthogonality_defect(r).max() < 1e-9, f"relative drift {drift:.1e}"


@check("rge_bounded_degrees")
def _(rng):
    v = np.degrees(so3.rge(so3.random_rotation(rng, 5000), so3.random_rotation(rng, 5000)))
    same = np.degrees(so3.rge(np.eye(3), np.eye(3)))
    return bool(v.min() >= 0 and v.max() <= 180 and same == 0), f"range [{v.min():.2f}, {v.max():.2f}]"


@check("checkpoint_roundtrip")
def _(rng):
    import torch

    from .checkpoint import from_dict, to_dict

    m = _tiny_model()
    m2 = from_dict(to_dict(m))
    same = all(torch.equal(a, b) for a, b in zip(m.state_dict().values(), m2.state_dict().values()))
    return same, "bitwise equal" if same else "mismatch"


@check("checkpoint_nonfinite_detected")
def _(rng):
    from .checkpoint import from_dict, to_dict

    d = to_dict(_tiny_model())
    d["params"]["f.layers.0.weight"][3] = float("nan")
    try:
        from_dict(d)
    except CheckpointError:
        return True, "corruption reported"
    return False, "corrupted checkpoint accepted"


def run_checks(seed: int = 0, names: Optional[list[str]] = None, ckpt: Optional[str] = None) -> list[CheckResult]:
    results = []
    selected = [(n, f) for n, f in _REGISTRY if names is None or n in names]
    if ckpt is not None:
        selected.append(("checkpoint_file_valid", lambda rng: _check_file(ckpt)))
    for i, (name, fn) in enumerate(selected):
        rng = np.random.default_rng([seed, i])
        start = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except (SgcdeError, ArithmeticError, ValueError) as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return results


def _check_file(path: str) -> tuple[bool, str]:
    from .checkpoint import load

    try:
        load(path)
    except SgcdeError as exc:
        return False, f"{type(exc).__name__}: {exc}"
    return True, "loads, all parameters finite"


def check_names() -> list[str]:
    return [n for n, _ in _REGISTRY]


def format_table(results: list[CheckResult]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'property'.ljust(w)}  result  time    detail", "-" * (w + 40)]
    for r in results:
        lines.append(f"{r.name.ljust(w)}  {'PASS' if r.passed else 'FAIL'}    {r.seconds:5.2f}s  {r.detail}")
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} properties passed")
    return "\n".join(lines) + "\n"
