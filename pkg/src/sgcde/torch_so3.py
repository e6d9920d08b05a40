"""Differentiable batched SO(3) operations in torch (mirrors :mod:`sgcde.so3`)."""

from __future__ import annotations

import math

import torch

SMALL = 1e-4


def hat(v: torch.Tensor) -> torch.Tensor:
    z = torch.zeros_like(v[..., 0])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return torch.stack(
        [
            torch.stack([z, -w, y], -1),
            torch.stack([w, z, -x], -1),
            torch.stack([-y, x, z], -1),
        ],
        -2,
    )


def vee(s: torch.Tensor) -> torch.Tensor:
    return torch.stack([s[..., 2, 1], s[..., 0, 2], s[..., 1, 0]], -1)


def _safe_norm(v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    # norm with a finite gradient at zero; the second value is the "small" mask
    sq = (v * v).sum(-1)
    small = sq < SMALL * SMALL
    theta = torch.sqrt(torch.where(small, torch.ones_like(sq), sq))
    return theta, small


def _coeffs(v: torch.Tensor):
    theta, small = _safe_norm(v)
    t2 = (v * v).sum(-1)
    a = torch.where(small, 1 - t2 / 6 + t2 * t2 / 120, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - torch.cos(theta)) / theta**2)
    c = torch.where(small, 1 / 6 - t2 / 120 + t2 * t2 / 5040, (theta - torch.sin(theta)) / theta**3)
    return a, b, c


def exp_map(v: torch.Tensor) -> torch.Tensor:
    a, b, _ = _coeffs(v)
    K = hat(v)
    eye = torch.eye(3, dtype=v.dtype, device=v.device).expand(K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def left_jacobian(v: torch.Tensor) -> torch.Tensor:
    _, b, c = _coeffs(v)
    K = hat(v)
    eye = torch.eye(3, dtype=v.dtype, device=v.device).expand(K.shape)
    return eye + b[..., None, None] * K + c[..., None, None] * (K @ K)


def rotation_angle(r: torch.Tensor, eps: float = 1e-30) -> torch.Tensor:
    """atan2 form: finite gradients everywhere (eps guards the norm at 0 and pi)."""
    w = vee(r - r.transpose(-1, -2)) / 2
    s = torch.sqrt((w * w).sum(-1) + eps)
    c = (r.diagonal(dim1=-2, dim2=-1).sum(-1) - 1) / 2
    return torch.atan2(s, c)


def from_6d_gso(v: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    a1, a2 = v[..., :3], v[..., 3:6]
    b1 = torch.nn.functional.normalize(a1, dim=-1, eps=eps)
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = torch.nn.functional.normalize(u2, dim=-1, eps=eps)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], -1)


def geodesic_loss(preds: torch.Tensor, truths: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Sum of ``||Log(y x^T)||_F = sqrt(2) * angle``; also returns the count of near-pi pairs."""
    theta = rotation_angle(preds @ truths.transpose(-1, -2))
    anomalies = int((theta.detach() > math.pi - 1e-6).sum())
    return math.sqrt(2.0) * theta.sum(), anomalies
