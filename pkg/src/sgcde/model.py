"""First- and second-order neural CDEs driven by an SO(3) control path."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import so3
from . import torch_so3 as tso3
from .errors import NonFiniteState
from .ode import dopri45
from .paths import HermitePath, SgPath
from .sgfilter import SOFTPLUS_INV_ONE

CHANNELS = 10  # time + flattened 3x3 rotation


class Mlp(nn.Module):
    def __init__(self, sizes: Sequence[int], final_scale: float = 1.0):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        if final_scale != 1.0:
            with torch.no_grad():
                self.layers[-1].weight.mul_(final_scale)
                self.layers[-1].bias.mul_(final_scale)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            x = torch.tanh(layer(x))
        return self.layers[-1](x)


@dataclass
class ModelConfig:
    latent: int = 125
    hidden: int = 128
    depth: int = 2
    order: int = 2
    window: int = 13
    poly_order: int = 2
    path: str = "sg"
    field_init: float = 1e-2
    decoder_hidden: int = 0
    dtype: str = "float32"

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


class CdeModel(nn.Module):
    """Encoder ``(t0, x0) -> z0``, vector fields ``f`` (and ``g``), decoder ``z -> 6D``, SG weights."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        if seed is not None:
            torch.manual_seed(seed)
        w, h = cfg.latent, cfg.hidden
        hidden = [h] * cfg.depth
        self.encoder = Mlp([CHANNELS, *hidden, w])
        self.f = Mlp([w, *hidden, w * CHANNELS], final_scale=cfg.field_init)
        self.g = Mlp([w, *hidden, w * CHANNELS], final_scale=cfg.field_init) if cfg.order == 2 else None
        dec = [w, cfg.decoder_hidden, 6] if cfg.decoder_hidden else [w, 6]
        self.decoder = Mlp(dec)
        self.sg_raw = nn.Parameter(torch.full((cfg.window,), SOFTPLUS_INV_ONE))
        self.to(cfg.torch_dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.cfg.torch_dtype

    @property
    def sg_weights(self) -> torch.Tensor:
        return nn.functional.softplus(self.sg_raw)

    def encode(self, t0: torch.Tensor, x0: torch.Tensor) -> torch.Tensor:
        inp = torch.cat([t0.reshape(-1, 1), x0.reshape(-1, 9)], -1)
        return self.encoder(inp)

    def rhs(self, z: torch.Tensor, dX: torch.Tensor, d2X: Optional[torch.Tensor] = None) -> torch.Tensor:
        F = self.f(z).view(z.shape[0], -1, CHANNELS)
        out = (F @ dX[..., None])[..., 0]
        if self.g is not None and d2X is not None:
            G = self.g(z).view(z.shape[0], -1, CHANNELS)
            out = out + (G @ d2X[..., None])[..., 0]
        return out

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return tso3.from_6d_gso(self.decoder(z))

    def control_path(self, times: np.ndarray, rotations: np.ndarray):
        if self.cfg.path == "hermite":
            return HermitePath(times, rotations, dtype=self.dtype)
        times = np.asarray(times)
        window = self.cfg.window
        if times.shape[-1] < window:
            raise ValueError(f"conditioning length {times.shape[-1]} < window {window}")
        return SgPath(
            times[..., -window:],
            np.asarray(rotations)[..., -window:, :, :],
            self.sg_weights,
            order=self.cfg.poly_order,
        )

    def parameter_blocks(self) -> dict[str, list[torch.nn.Parameter]]:
        blocks = {
            "encoder": list(self.encoder.parameters()),
            "f": list(self.f.parameters()),
            "decoder": list(self.decoder.parameters()),
            "sg_weights": [self.sg_raw],
        }
        if self.g is not None:
            blocks["g"] = list(self.g.parameters())
        return blocks


def cde_rhs(model: CdeModel, z, dX, d2X=None) -> torch.Tensor:
    return model.rhs(torch.as_tensor(z, dtype=model.dtype), torch.as_tensor(dX, dtype=model.dtype),
                     None if d2X is None else torch.as_tensor(d2X, dtype=model.dtype))


def encode_initial(model: CdeModel, t0: float, x0: np.ndarray) -> torch.Tensor:
    return model.encode(torch.tensor([t0], dtype=model.dtype), torch.as_tensor(np.asarray(x0, dtype=float), dtype=model.dtype))[0]


def offset_index(offsets: np.ndarray, dt: float) -> np.ndarray:
    k = np.rint(np.asarray(offsets) / dt).astype(int)
    if not np.allclose(k * dt, offsets, atol=1e-9):
        raise ValueError("target offsets must be multiples of the solver step")
    return k


def _rk4_latents(model: CdeModel, path, z0: torch.Tensor, steps: np.ndarray, dt: float) -> torch.Tensor:
    """Fixed-step RK4 from offset 0; latent states at step indices ``steps``, shape (B, m, w)."""
    n_steps = int(np.max(steps))
    grid = np.arange(2 * n_steps + 1) * (dt / 2)
    dX, d2X = path.derivs(grid)
    second = model.g is not None
    z = z0
    history = {0: z0}
    for i in range(n_steps):
        a, m, b = 2 * i, 2 * i + 1, 2 * i + 2
        k1 = model.rhs(z, dX[:, a], d2X[:, a] if second else None)
        k2 = model.rhs(z + dt / 2 * k1, dX[:, m], d2X[:, m] if second else None)
        k3 = model.rhs(z + dt / 2 * k2, dX[:, m], d2X[:, m] if second else None)
        k4 = model.rhs(z + dt * k3, dX[:, b], d2X[:, b] if second else None)
        z = z + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        history[i + 1] = z
    zs = torch.stack([history[int(k)] for k in steps], 1)
    if not torch.isfinite(zs).all():
        raise NonFiniteState("latent state diverged")
    return zs


def rk4_forecast(model: CdeModel, t_cond: np.ndarray, x_cond: np.ndarray, target_offsets: np.ndarray, dt: float = 0.025):
    """Taped fixed-step RK4 solve for a batch with a shared time grid.

    ``t_cond`` (B, M) and ``x_cond`` (B, M, 3, 3) are the conditioning samples;
    ``target_offsets`` are seconds after ``t_cond[:, 0]``. Returns predicted
    rotations (B, m, 3, 3) and the number of vector-field evaluations.
    """
    t_cond = np.asarray(t_cond, dtype=float)
    x_cond = np.asarray(x_cond, dtype=float)
    if t_cond.ndim == 1:
        t_cond, x_cond = t_cond[None], x_cond[None]
    steps = offset_index(target_offsets, dt)
    path = model.control_path(t_cond, x_cond)
    z0 = model.encode(torch.as_tensor(t_cond[:, 0], dtype=model.dtype), torch.as_tensor(x_cond[:, 0], dtype=model.dtype))
    zs = _rk4_latents(model, path, z0, steps, dt)
    return model.decode(zs), 4 * int(steps.max())


@dataclass
class ForecastResult:
    times: np.ndarray
    rotations: np.ndarray
    nfe: int
    rge: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def _decode_checked(model: CdeModel, z: torch.Tensor) -> np.ndarray:
    v = model.decoder(z).detach().cpu().double().numpy()
    return so3.from_6d_gso(v)  # raises DegenerateColumns


def solve_forward(
    model: CdeModel,
    t_cond: np.ndarray,
    x_cond: np.ndarray,
    targets: np.ndarray,
    solver: str = "dopri45",
    rtol: float = 1e-3,
    atol: float = 1e-6,
    dt: float = 0.025,
    truths: Optional[np.ndarray] = None,
) -> ForecastResult:
    """Forecast rotations at absolute ``targets`` from one conditioning sequence.

    ``solver="rk4"`` uses the training discretization; ``"dopri45"`` the
    adaptive solver, whose NFE is the cost measure. Raises DegenerateColumns if
    the decoder output cannot be orthonormalized and NonFiniteState if the
    latent state diverges.
    """
    t_cond = np.asarray(t_cond, dtype=float)
    x_cond = np.array(x_cond, dtype=float).reshape(-1, 3, 3)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    offsets = targets - t_cond[0]
    with torch.no_grad():
        path = model.control_path(t_cond[None], x_cond[None])
        z0 = model.encode(torch.as_tensor(t_cond[:1], dtype=model.dtype), torch.as_tensor(x_cond[:1], dtype=model.dtype))
        if solver == "rk4":
            steps = offset_index(offsets, dt)
            latent = _rk4_latents(model, path, z0, steps, dt)[0]
            nfe = 4 * int(steps.max())
        elif solver == "dopri45":
            use2 = model.g is not None

            def f(s: float, y: np.ndarray) -> np.ndarray:
                dX, d2X = path.derivs([s])
                zt = torch.as_tensor(y, dtype=model.dtype)[None]
                return model.rhs(zt, dX[:, 0], d2X[:, 0] if use2 else None)[0].double().numpy()

            sol = dopri45(f, 0.0, z0[0].double().numpy(), float(offsets.max()), rtol=rtol, atol=atol, t_eval=offsets)
            latent = torch.as_tensor(sol.y_eval, dtype=model.dtype)
            nfe = sol.nfe
        else:
            raise ValueError(f"unknown solver {solver!r}")
        if not torch.isfinite(latent).all():
            raise NonFiniteState("latent state diverged")
        rots = _decode_checked(model, latent)
    res = ForecastResult(targets, rots, nfe)
    if truths is not None:
        res.rge = so3.rge(rots, np.asarray(truths, dtype=float).reshape(-1, 3, 3))
    return res


def geodesic_loss(preds: np.ndarray, truths: np.ndarray) -> float:
    """Sum over pairs of ``||Log(y x^T)||_F``; raises NearPiSingularity near pi."""
    rel = np.asarray(preds) @ np.swapaxes(np.asarray(truths), -1, -2)
    return float(math.sqrt(2.0) * np.sum(np.linalg.norm(so3.log_map(rel), axis=-1)))
