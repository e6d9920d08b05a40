"""Mini-batch training of the SG neural CDE on simulated segments."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import torch

from . import torch_so3 as tso3
from .errors import NonFiniteGradient
from .model import CdeModel, rk4_forecast

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    steps: int = 1000
    span: float = 1.2
    horizon: float = 0.8
    obs_dt: float = 0.1
    dt: float = 0.025
    seed: int = 0
    val_every: int = 50
    val_segments: int = 64
    include_span: bool = False
    grad_clip: Optional[float] = None

    def __post_init__(self):
        for name in ("span", "horizon"):
            k = getattr(self, name) / self.obs_dt
            if abs(k - round(k)) > 1e-9:
                raise ValueError(f"{name} must be a multiple of the observation spacing")

    @property
    def n_cond(self) -> int:
        return int(round(self.span / self.obs_dt)) + 1

    @property
    def n_target(self) -> int:
        return int(round(self.horizon / self.obs_dt))


@dataclass
class SegmentBatch:
    t_cond: np.ndarray  # (B, M)
    x_cond: np.ndarray  # (B, M, 3, 3) noisy
    offsets: np.ndarray  # (m,) seconds after t_cond[:, 0]
    truth: np.ndarray  # (B, m, 3, 3) clean


class SegmentSampler:
    """Uniform sampling over trajectories and window offsets of one split."""

    def __init__(self, records: list[dict], cfg: TrainConfig):
        if not records:
            raise ValueError("no trajectories to sample from")
        self.t = np.array([r["t"] for r in records], dtype=float)
        self.noisy = np.array([r["noisy"] for r in records], dtype=float).reshape(len(records), -1, 3, 3)
        self.clean = np.array([r["clean"] for r in records], dtype=float).reshape(len(records), -1, 3, 3)
        self.cfg = cfg
        self.length = cfg.n_cond + cfg.n_target
        if self.t.shape[1] < self.length:
            raise ValueError("trajectories shorter than one training segment")

    def batch(self, rng: np.random.Generator, size: int) -> SegmentBatch:
        traj = rng.integers(0, self.t.shape[0], size)
        start = rng.integers(0, self.t.shape[1] - self.length + 1, size)
        return self.take(traj, start)

    def take(self, traj: np.ndarray, start: np.ndarray) -> SegmentBatch:
        M, m = self.cfg.n_cond, self.cfg.n_target
        cond = start[:, None] + np.arange(M)
        tgt = start[:, None] + M + np.arange(m)
        if self.cfg.include_span:
            tgt = start[:, None] + np.arange(1, M + m)
        t_cond = self.t[traj[:, None], cond]
        offsets = self.t[traj[0], tgt[0]] - self.t[traj[0], cond[0, 0]]
        return SegmentBatch(t_cond, self.noisy[traj[:, None], cond], offsets, self.clean[traj[:, None], tgt])


def batch_loss(model: CdeModel, batch: SegmentBatch, dt: float) -> tuple[torch.Tensor, int, int]:
    """Mean over the batch of the summed geodesic loss; returns (loss, nfe, near-pi count)."""
    preds, nfe = rk4_forecast(model, batch.t_cond, batch.x_cond, batch.offsets, dt)
    truth = torch.as_tensor(batch.truth, dtype=model.dtype)
    total, anomalies = tso3.geodesic_loss(preds, truth)
    return total / preds.shape[0], nfe, anomalies


def backward(model: CdeModel, batch: SegmentBatch, dt: float = 0.025) -> tuple[float, dict[str, list[torch.Tensor]]]:
    """Loss and reverse-mode gradients, grouped by parameter block."""
    model.zero_grad(set_to_none=True)
    loss, _, _ = batch_loss(model, batch, dt)
    loss.backward()
    grads = {}
    for name, params in model.parameter_blocks().items():
        gs = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
        if not all(torch.isfinite(g).all() for g in gs):
            raise NonFiniteGradient(f"non-finite gradient in block {name}")
        grads[name] = gs
    return float(loss.detach()), grads


def validation_batch(records: list[dict], cfg: TrainConfig) -> Optional[SegmentBatch]:
    if not records:
        return None
    sampler = SegmentSampler(records, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    return sampler.batch(rng, cfg.val_segments)


def train(model: CdeModel, train_records: list[dict], cfg: TrainConfig, val_records: Optional[list[dict]] = None, progress=None) -> list[dict]:
    """Adam on randomly sampled (span, horizon) segments. Returns the metrics log.

    With a fixed seed the log is bitwise reproducible (single-threaded torch).
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 0])
    sampler = SegmentSampler(train_records, cfg)
    val = validation_batch(val_records or [], cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    history: list[dict] = []
    start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        batch = sampler.batch(rng, cfg.batch_size)
        opt.zero_grad(set_to_none=True)
        loss, nfe, anomalies = batch_loss(model, batch, cfg.dt)
        loss.backward()
        for p in model.parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradient(f"non-finite gradient at step {step}")
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        entry = {
            "step": step,
            "train_loss": float(loss.detach()),
            "nfe": nfe,
            "anomalies": anomalies,
            "mean_rge_deg": float(loss.detach()) / math.sqrt(2.0) / batch.truth.shape[1] * 180 / math.pi,
        }
        if val is not None and (step % cfg.val_every == 0 or step == cfg.steps or step <= 10):
            with torch.no_grad():
                vloss, _, _ = batch_loss(model, val, cfg.dt)
            entry["val_loss"] = float(vloss)
        history.append(entry)
        if progress is not None:
            progress(entry)
        if step % 50 == 0:
            log.info("step %d loss %.4f val %s (%.1fs)", step, entry["train_loss"], entry.get("val_loss"), time.perf_counter() - start)
    return history


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
