"""Figures and CSV exports for evaluation reports (matplotlib, file output only)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import so3  # noqa: E402
from .evaluate import EvalReport  # noqa: E402


def s2_projection(rotations: np.ndarray) -> np.ndarray:
    """Unit vector part of the (w >= 0) quaternion; identity maps to the zero vector."""
    return so3.sphere_projection(np.asarray(rotations, dtype=float).reshape(-1, 3, 3))


def export_csv(report: EvalReport, outdir) -> list[Path]:
    """One CSV per horizon with a row per (method, scenario)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for h in sorted({r["horizon_s"] for r in report.rows}):
        p = outdir / f"rge_h{h:.1f}s.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "scenario", "rge_mean_deg", "rge_std_deg", "n", "nfe_mean"])
            for r in report.rows:
                if r["horizon_s"] == h:
                    w.writerow([r["method"], r["scenario"], f"{r['rge_mean_deg']:.6f}", f"{r['rge_std_deg']:.6f}", r["n"], f"{r['nfe_mean']:.3f}"])
        paths.append(p)
    return paths


def export_projections(records: Sequence[dict], outdir, limit: int = 5) -> list[Path]:
    """S^2 coordinates of clean and noisy samples for the first ``limit`` trajectories."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in list(records)[:limit]:
        t = np.asarray(rec["t"])
        clean = s2_projection(np.asarray(rec["clean"]))
        noisy = s2_projection(np.asarray(rec["noisy"]))
        p = outdir / f"s2_traj{rec.get('id', 0)}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "clean_x", "clean_y", "clean_z", "noisy_x", "noisy_y", "noisy_z"])
            for row in zip(t, clean, noisy):
                w.writerow([f"{row[0]:.4f}", *(f"{v:.8f}" for v in row[1]), *(f"{v:.8f}" for v in row[2])])
        paths.append(p)
    return paths


def plot_rge(report: EvalReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r["method"], r["scenario"]) for r in report.rows})
    for method, scen in keys:
        rows = sorted((r for r in report.rows if r["method"] == method and r["scenario"] == scen), key=lambda r: r["horizon_s"])
        h = [r["horizon_s"] for r in rows]
        ax.errorbar(h, [r["rge_mean_deg"] for r in rows], yerr=[r["rge_std_deg"] for r in rows],
                    marker="o", capsize=3, label=f"{method} ({scen})")
    ax.set_xlabel("forecast horizon [s]")
    ax.set_ylabel("RGE [deg]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_nfe(report: EvalReport, path) -> Optional[Path]:
    data = {m: v for m, v in report.nfe.items() if v and max(v) > 0}
    if not data:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot(list(data.values()))
    ax.set_xticks(range(1, len(data) + 1), list(data.keys()))
    ax.set_ylabel("function evaluations per forecast")
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def plot_training(history: Sequence[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [e["step"] for e in history]
    ax.plot(steps, [e["train_loss"] for e in history], lw=0.8, label="train")
    val = [(e["step"], e["val_loss"]) for e in history if "val_loss" in e]
    if val:
        ax.plot(*zip(*val), marker=".", label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("geodesic loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_s2(records: Sequence[dict], path, limit: int = 3) -> Path:
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="3d")
    for rec in list(records)[:limit]:
        c = s2_projection(np.asarray(rec["clean"]))
        n = s2_projection(np.asarray(rec["noisy"]))
        line = ax.plot(*c.T, lw=1.2)[0]
        ax.scatter(*n.T, s=4, color=line.get_color(), alpha=0.5)
    ax.set_box_aspect((1, 1, 1))
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
