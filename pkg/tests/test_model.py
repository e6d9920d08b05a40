import math

import numpy as np
import pytest
import torch

from sgcde import so3
from sgcde import torch_so3 as tso3
from sgcde.errors import DegenerateColumns, NearPiSingularity
from sgcde.model import (
    CdeModel,
    ModelConfig,
    cde_rhs,
    encode_initial,
    geodesic_loss,
    rk4_forecast,
    solve_forward,
)


def tiny(order=2, **kw):
    cfg = dict(latent=8, hidden=16, order=order, window=13, dtype="float64")
    cfg.update(kw)
    return CdeModel(ModelConfig(**cfg), seed=0)


@pytest.fixture
def segment():
    rng = np.random.default_rng(4)
    t = 2.0 + np.arange(21) * 0.1
    x = so3.perturb(so3.exp_map(np.outer(t, [0.5, -0.2, 0.3])) @ so3.random_rotation(rng), 0.05, rng)
    return t[:13], x[:13], t[13:], x[13:]


def test_default_latent_size():
    m = CdeModel(ModelConfig())
    z = encode_initial(m, 0.0, np.eye(3))
    assert z.shape == (125,)
    assert m.g is not None and CdeModel(ModelConfig(order=1, latent=8, hidden=8)).g is None


def test_zero_encoder_gives_bias():
    m = tiny()
    with torch.no_grad():
        for p in m.encoder.parameters():
            p.zero_()
        m.encoder.layers[-1].bias.copy_(torch.arange(8.0))
    a = encode_initial(m, 0.0, np.eye(3))
    b = encode_initial(m, 5.0, so3.exp_map([0.3, 0.2, 0.1]))
    assert torch.equal(a, torch.arange(8.0, dtype=torch.float64)) and torch.equal(a, b)


def test_encoder_time_sensitivity():
    m = tiny()
    a = encode_initial(m, 0.0, np.eye(3))
    b = encode_initial(m, 0.1, np.eye(3))
    assert (a - b).abs().max() > 1e-6


def test_rhs_linear_in_control():
    m = tiny()
    rng = np.random.default_rng(0)
    z = torch.as_tensor(rng.normal(size=(1, 8)))
    dX = torch.as_tensor(rng.normal(size=(1, 10)))
    dX[:, 0] = 0
    d2X = torch.zeros(1, 10, dtype=torch.float64)
    with torch.no_grad():
        assert torch.allclose(cde_rhs(m, z, 3.0 * dX, d2X), 3.0 * cde_rhs(m, z, dX, d2X), atol=1e-14)


def test_zero_field_keeps_latent(segment):
    t, x, tt, _ = segment
    m = tiny(order=1)
    with torch.no_grad():
        for p in m.f.parameters():
            p.zero_()
        preds, _ = rk4_forecast(m, t, x, tt - t[0])
        z0 = m.encode(torch.tensor([t[0]], dtype=torch.float64), torch.as_tensor(x[:1]))
        const = m.decode(z0)
    assert torch.allclose(preds[0], const.expand_as(preds[0]), atol=0)


def test_second_order_reduction_bitwise(segment):
    t, x, tt, _ = segment
    m1, m2 = tiny(order=1), tiny(order=2)
    m2.load_state_dict({**m2.state_dict(), **m1.state_dict()})
    with torch.no_grad():
        for p in m2.g.parameters():
            p.zero_()
        a, _ = rk4_forecast(m1, t, x, tt - t[0])
        b, _ = rk4_forecast(m2, t, x, tt - t[0])
    assert torch.equal(a, b)


def test_rk4_nfe_over_two_seconds(segment):
    t, x, tt, y = segment
    m = tiny()
    res = solve_forward(m, t, x, tt, solver="rk4", truths=y)
    assert res.nfe == 4 * 80
    assert res.rge.shape == (8,)
    assert so3.orthogonality_defect(res.rotations).max() < 1e-9


def test_dopri_and_rk4_agree_for_smooth_model(segment):
    t, x, tt, _ = segment
    m = tiny()
    a = solve_forward(m, t, x, tt, solver="rk4")
    b = solve_forward(m, t, x, tt, solver="dopri45", rtol=1e-8, atol=1e-10)
    assert so3.rge(a.rotations, b.rotations).max() < 1e-6
    assert b.nfe > 0


def test_zero_decoder_is_defined_error(segment):
    t, x, tt, _ = segment
    m = tiny()
    with torch.no_grad():
        for p in m.decoder.layers[-1].parameters():
            p.zero_()
    with pytest.raises(DegenerateColumns):
        solve_forward(m, t, x, tt, solver="rk4")


def test_unknown_solver(segment):
    t, x, tt, _ = segment
    with pytest.raises(ValueError):
        solve_forward(tiny(), t, x, tt, solver="euler")


def test_decoded_outputs_are_rotations():
    m = tiny()
    with torch.no_grad():
        r = m.decode(torch.randn(1000, 8, dtype=torch.float64) * 10).numpy()
    assert so3.orthogonality_defect(r).max() < 1e-9
    assert np.abs(np.linalg.det(r) - 1).max() < 1e-9


def test_loss_values():
    rng = np.random.default_rng(2)
    a = so3.random_rotation(rng, 10)
    assert geodesic_loss(a, a) == 0.0
    theta = 0.7
    b = so3.exp_map(np.array([0, theta, 0])) @ a[0]
    assert geodesic_loss(b[None], a[:1]) == pytest.approx(math.sqrt(2) * theta, abs=1e-12)
    c = so3.exp_map(rng.normal(size=(10, 3))) @ a
    assert geodesic_loss(a, c) == pytest.approx(geodesic_loss(c, a), abs=1e-12)
    with pytest.raises(NearPiSingularity):
        geodesic_loss(so3.exp_map([0, 0, math.pi])[None], np.eye(3)[None])


def test_torch_loss_matches_numpy_and_counts_anomalies():
    rng = np.random.default_rng(3)
    a, b = so3.random_rotation(rng, 20), so3.random_rotation(rng, 20)
    keep = so3.rotation_angle(a @ np.swapaxes(b, -1, -2)) < math.pi - 1e-3
    a, b = a[keep], b[keep]
    loss, anomalies = tso3.geodesic_loss(torch.as_tensor(a), torch.as_tensor(b))
    assert loss.item() == pytest.approx(geodesic_loss(a, b), rel=1e-12)
    assert anomalies == 0
    flip = torch.as_tensor(so3.exp_map([0, 0, math.pi])[None])
    _, n = tso3.geodesic_loss(flip, torch.eye(3, dtype=torch.float64)[None])
    assert n == 1


def test_torch_so3_matches_numpy():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(200, 3)) * np.array([[1e-6], [1.0]] * 100)
    tv = torch.as_tensor(v)
    assert np.abs(tso3.exp_map(tv).numpy() - so3.exp_map(v)).max() < 1e-14
    assert np.abs(tso3.left_jacobian(tv).numpy() - so3.left_jacobian(v)).max() < 1e-14
    six = rng.normal(size=(50, 6))
    assert np.abs(tso3.from_6d_gso(torch.as_tensor(six)).numpy() - so3.from_6d_gso(six)).max() < 1e-14


def test_dead_second_order_gradient():
    # f = 0 and an identity-producing decoder with d2X = 0 (constant path): g gets zero gradient
    m = tiny(order=2)
    with torch.no_grad():
        for p in m.f.parameters():
            p.zero_()
        for p in m.decoder.parameters():
            p.zero_()
        m.decoder.layers[-1].bias.copy_(torch.tensor([1.0, 0, 0, 0, 1.0, 0]))
    t = np.arange(13) * 0.1
    x = np.stack([so3.exp_map([0.1, 0.2, 0.3])] * 13)
    preds, _ = rk4_forecast(m, t[None], x[None], np.array([1.5, 2.0]))
    loss, _ = tso3.geodesic_loss(preds, torch.as_tensor(np.stack([x[:2]])))
    loss.backward()
    for p in m.g.parameters():
        assert p.grad is None or torch.all(p.grad == 0)


def test_hermite_model_path(segment):
    t, x, tt, _ = segment
    m = tiny(path="hermite")
    res = solve_forward(m, t, x, tt, solver="rk4")
    assert res.rotations.shape == (8, 3, 3)
