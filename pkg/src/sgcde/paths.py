"""Control paths for the neural CDE.

Both paths expose ``derivs(s)``: the 10-channel first and second derivatives
of ``X(t) = (t, vec(R(t)))`` at offsets ``s`` (seconds after the first
conditioning sample). Channel 0 is time, so ``dX[..., 0] = 1`` and
``d2X[..., 0] = 0``.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from . import so3
from . import torch_so3 as tso3


def _as_tensor(x, dtype) -> torch.Tensor:
    return torch.tensor(np.array(x, dtype=float), dtype=dtype)


def _with_time_channel(d: torch.Tensor, value: float) -> torch.Tensor:
    lead = torch.full(d.shape[:-1] + (1,), value, dtype=d.dtype)
    return torch.cat([lead, d], -1)


class SgPath:
    """Weighted Savitzky-Golay path ``Exp(p(t - t_k)) x_k`` anchored at the last conditioning sample.

    ``weights`` are the effective (positive) window weights; gradients flow
    from the path derivatives back into them through the normal-equation solve.
    """

    def __init__(self, times: np.ndarray, rotations: np.ndarray, weights: torch.Tensor, order: int = 2, fd_step: float | None = None):
        times = np.asarray(times, dtype=float)
        rotations = np.asarray(rotations, dtype=float)
        if times.ndim == 1:
            times, rotations = times[None], rotations[None]
        dtype = weights.dtype
        self.dtype = dtype
        self.order = order
        B, M = times.shape
        if weights.shape[-1] != M:
            raise ValueError(f"{weights.shape[-1]} window weights for {M} samples")
        anchor_rot = rotations[:, -1]
        rel = rotations @ np.swapaxes(anchor_rot, -1, -2)[:, None]
        resid = so3.log_map(rel)  # (B, M, 3)
        taus = times - times[:, -1:]
        V = np.stack([taus**i / math.factorial(i) for i in range(order + 1)], -1)
        Vt = _as_tensor(V, dtype)
        Bt = _as_tensor(resid, dtype)
        w = weights.expand(B, M)[..., None]
        N = Vt.transpose(1, 2) @ (w * Vt)
        rhs = Vt.transpose(1, 2) @ (w * Bt)
        self.coeffs = torch.linalg.solve(N, rhs)  # (B, order+1, 3)
        self.anchor_offset = _as_tensor(times[:, -1] - times[:, 0], dtype)  # (B,)
        self.anchor_rot = _as_tensor(anchor_rot, dtype)
        spacing = float(np.min(np.diff(times, axis=1))) if M > 1 else 0.1
        self.h = fd_step if fd_step is not None else min(1e-5, spacing / 100.0)

    def poly(self, s: torch.Tensor, deriv: int = 0) -> torch.Tensor:
        tau = s[None, :] - self.anchor_offset[:, None]  # (B, T)
        out = torch.zeros(tau.shape + (3,), dtype=self.dtype)
        for i in range(deriv, self.order + 1):
            c = tau ** (i - deriv) / math.factorial(i - deriv)
            out = out + c[..., None] * self.coeffs[:, None, i, :]
        return out

    def rotation(self, s) -> torch.Tensor:
        s = torch.as_tensor(s, dtype=self.dtype).reshape(-1)
        return tso3.exp_map(self.poly(s)) @ self.anchor_rot[:, None]

    def _first(self, s: torch.Tensor) -> torch.Tensor:
        p = self.poly(s)
        omega = (tso3.left_jacobian(p) @ self.poly(s, 1)[..., None])[..., 0]
        phi = tso3.exp_map(p) @ self.anchor_rot[:, None]
        return (tso3.hat(omega) @ phi).reshape(phi.shape[:-2] + (9,))

    def derivs(self, s) -> tuple[torch.Tensor, torch.Tensor]:
        s = torch.as_tensor(s, dtype=self.dtype).reshape(-1)
        T = s.shape[0]
        stacked = self._first(torch.cat([s, s + self.h, s - self.h]))
        d1, dp, dm = stacked[:, :T], stacked[:, T : 2 * T], stacked[:, 2 * T :]
        d2 = (dp - dm) / (2 * self.h)
        return _with_time_channel(d1, 1.0), _with_time_channel(d2, 0.0)


class HermitePath:
    """Cubic Hermite spline through the flattened 9D observations with backward-difference tangents.

    Beyond the last knot the path continues linearly (constant 9D velocity).
    """

    def __init__(self, times: np.ndarray, rotations: np.ndarray, dtype=torch.float64):
        times = np.asarray(times, dtype=float)
        rotations = np.asarray(rotations, dtype=float)
        if times.ndim == 1:
            times, rotations = times[None], rotations[None]
        if times.shape[1] < 2:
            raise ValueError("Hermite path needs at least two samples")
        self.dtype = dtype
        rel = times - times[:, :1]
        y = rotations.reshape(times.shape + (9,))
        m = np.empty_like(y)
        m[:, 1:] = np.diff(y, axis=1) / np.diff(rel, axis=1)[..., None]
        m[:, 0] = m[:, 1]
        self.knots = rel  # numpy (B, M)
        self.y = _as_tensor(y, dtype)
        self.m = _as_tensor(m, dtype)

    def _locate(self, s: np.ndarray):
        B, M = self.knots.shape
        idx = np.stack([np.clip(np.searchsorted(self.knots[b], s, side="right") - 1, 0, M - 2) for b in range(B)])
        t_i = np.take_along_axis(self.knots, idx, 1)
        h = np.take_along_axis(self.knots, idx + 1, 1) - t_i
        u = (s[None, :] - t_i) / h
        beyond = s[None, :] > self.knots[:, -1:]
        return idx, _as_tensor(h, self.dtype), _as_tensor(u, self.dtype), torch.as_tensor(beyond)

    def _gather(self, arr: torch.Tensor, idx: np.ndarray) -> torch.Tensor:
        ix = torch.as_tensor(idx)[..., None].expand(idx.shape + (9,))
        return torch.gather(arr, 1, ix)

    def values(self, s) -> torch.Tensor:
        s = np.asarray(s, dtype=float).reshape(-1)
        idx, h, u, beyond = self._locate(s)
        y0, y1 = self._gather(self.y, idx), self._gather(self.y, idx + 1)
        m0, m1 = self._gather(self.m, idx), self._gather(self.m, idx + 1)
        h_, u_ = h[..., None], u[..., None]
        val = (
            (2 * u_**3 - 3 * u_**2 + 1) * y0
            + (u_**3 - 2 * u_**2 + u_) * h_ * m0
            + (-2 * u_**3 + 3 * u_**2) * y1
            + (u_**3 - u_**2) * h_ * m1
        )
        last = self.y[:, -1:, :] + (_as_tensor(s, self.dtype)[None, :, None] - _as_tensor(self.knots[:, -1:], self.dtype)[..., None]) * self.m[:, -1:, :]
        return torch.where(beyond[..., None], last, val)

    def rotation(self, s) -> torch.Tensor:
        """GSO projection of the 9D path."""
        v = self.values(s).reshape(-1, 3, 3)
        return tso3.from_6d_gso(torch.cat([v[..., :, 0], v[..., :, 1]], -1)).reshape(self.y.shape[0], -1, 3, 3)

    def derivs(self, s) -> tuple[torch.Tensor, torch.Tensor]:
        s = np.asarray(s, dtype=float).reshape(-1)
        idx, h, u, beyond = self._locate(s)
        y0, y1 = self._gather(self.y, idx), self._gather(self.y, idx + 1)
        m0, m1 = self._gather(self.m, idx), self._gather(self.m, idx + 1)
        h_, u_ = h[..., None], u[..., None]
        d1 = (
            (6 * u_**2 - 6 * u_) * y0
            + (3 * u_**2 - 4 * u_ + 1) * h_ * m0
            + (-6 * u_**2 + 6 * u_) * y1
            + (3 * u_**2 - 2 * u_) * h_ * m1
        ) / h_
        d2 = (
            (12 * u_ - 6) * y0 + (6 * u_ - 4) * h_ * m0 + (-12 * u_ + 6) * y1 + (6 * u_ - 2) * h_ * m1
        ) / h_**2
        b = beyond[..., None]
        d1 = torch.where(b, self.m[:, -1:, :].expand_as(d1), d1)
        d2 = torch.where(b, torch.zeros_like(d2), d2)
        return _with_time_channel(d1, 1.0), _with_time_channel(d2, 0.0)
