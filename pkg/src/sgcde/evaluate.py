"""Evaluation harness: per-horizon RGE tables for learned and baseline forecasters."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import so3
from .baselines import (
    conservational_forecast,
    constant_velocity_forecast,
    momentum_estimate,
    sg_extrapolation_forecast,
    sg_window_fit,
)
from .errors import IoError, SgcdeError

ROW_KEYS = ("method", "scenario", "horizon_s", "rge_mean_deg", "rge_std_deg", "n", "nfe_mean")


@dataclass
class EvalSettings:
    span: float = 1.2
    obs_dt: float = 0.1
    horizons: tuple = (0.8, 1.2)
    stride: int = 10
    seed: int = 0
    solver: str = "dopri45"
    rtol: float = 1e-3
    atol: float = 1e-6
    dt: float = 0.025
    sg_window: int = 13
    momentum_noise: bool = True

    @property
    def n_cond(self) -> int:
        return int(round(self.span / self.obs_dt)) + 1

    @property
    def horizon_steps(self) -> np.ndarray:
        k = np.rint(np.asarray(self.horizons, dtype=float) / self.obs_dt).astype(int)
        if np.any(k < 1) or not np.allclose(k * self.obs_dt, self.horizons):
            raise ValueError("horizons must be positive multiples of the observation spacing")
        return k


@dataclass
class Segment:
    """Conditioning samples plus the ground truth at the forecast horizons."""

    t_cond: np.ndarray
    x_cond: np.ndarray  # noisy
    targets: np.ndarray  # absolute times
    truth: np.ndarray  # clean rotations at targets
    omega_last: np.ndarray  # true body angular velocity at t_N
    inertia: np.ndarray
    delta: float
    rng: np.random.Generator


Forecaster = Callable[[Segment], tuple[np.ndarray, int]]


def segments(rec: dict, settings: EvalSettings) -> list[Segment]:
    t = np.asarray(rec["t"], dtype=float)
    clean = np.asarray(rec["clean"], dtype=float).reshape(-1, 3, 3)
    noisy = np.asarray(rec["noisy"], dtype=float).reshape(-1, 3, 3)
    omega = np.asarray(rec["omega"], dtype=float) if "omega" in rec else np.zeros((len(t), 3))
    inertia = np.asarray(rec.get("inertia", [1.0, 1.0, 1.0]), dtype=float)
    M = settings.n_cond
    hk = settings.horizon_steps
    need = M + int(hk.max())
    rng = np.random.default_rng([settings.seed, int(rec.get("id", 0))])
    out = []
    for s in range(0, len(t) - need + 1, settings.stride):
        last = s + M - 1
        idx = last + hk
        out.append(Segment(t[s : s + M], noisy[s : s + M], t[idx], clean[idx], omega[last], inertia,
                           float(rec.get("delta", 0.0)), rng))
    return out


def cv_method(seg: Segment) -> tuple[np.ndarray, int]:
    return constant_velocity_forecast(seg.t_cond, seg.x_cond, seg.targets), 0


def sg_method(window: int = 13, order: int = 2) -> Forecaster:
    def run(seg: Segment):
        f = sg_window_fit(seg.t_cond, seg.x_cond, window, order)
        # the raw filter is allowed to leave the injective range; rge stays defined
        return sg_extrapolation_forecast(f, seg.targets, check_range=False), 0

    return run


def conservational_method(noise: bool = True) -> Forecaster:
    def run(seg: Segment):
        L = momentum_estimate(seg.omega_last, seg.inertia, seg.delta, seg.rng if noise else None)
        # starts from the noisy last observation, as the other forecasters do
        return conservational_forecast(seg.x_cond[-1], L, seg.inertia, seg.targets, float(seg.t_cond[-1]))

    return run


def cde_method(model, solver: str = "dopri45", rtol: float = 1e-3, atol: float = 1e-6, dt: float = 0.025) -> Forecaster:
    from .model import solve_forward

    def run(seg: Segment):
        res = solve_forward(model, seg.t_cond, seg.x_cond, seg.targets, solver=solver, rtol=rtol, atol=atol, dt=dt)
        return res.rotations, res.nfe

    return run


@dataclass
class EvalReport:
    rows: list[dict]
    nfe: dict = field(default_factory=dict)  # method -> per-segment NFE list
    failures: dict = field(default_factory=dict)  # method -> count of segments that raised
    settings: dict = field(default_factory=dict)

    def row(self, method: str, horizon: float, scenario: Optional[str] = None) -> dict:
        for r in self.rows:
            if r["method"] == method and math.isclose(r["horizon_s"], horizon) and (scenario is None or r["scenario"] == scenario):
                return r
        raise KeyError((method, horizon, scenario))

    def to_dict(self) -> dict:
        nfe_stats = {
            m: {"mean": float(np.mean(v)) if v else 0.0, "std": float(np.std(v)) if v else 0.0,
                "min": int(min(v)) if v else 0, "max": int(max(v)) if v else 0, "samples": list(map(int, v))}
            for m, v in self.nfe.items()
        }
        return {"rows": self.rows, "nfe": nfe_stats, "failures": self.failures, "settings": self.settings}

    def write_json(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        except OSError as exc:
            raise IoError(f"cannot write report {path}: {exc}") from exc
        return path

    def text_table(self) -> str:
        header = ["method", "scenario", "horizon_s", "rge_deg", "n", "nfe_mean"]
        body = [
            [r["method"], r["scenario"], f"{r['horizon_s']:.1f}", f"{r['rge_mean_deg']:.2f} ± {r['rge_std_deg']:.2f}",
             str(r["n"]), f"{r['nfe_mean']:.1f}"]
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        lines = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
        return "\n".join(lines) + "\n"

    @classmethod
    def read_json(cls, path) -> "EvalReport":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IoError(f"cannot read report {path}: {exc}") from exc
        nfe = {m: s.get("samples", []) for m, s in d.get("nfe", {}).items()}
        return cls(d["rows"], nfe, d.get("failures", {}), d.get("settings", {}))


def evaluate(methods: dict[str, Forecaster], records: Sequence[dict], settings: EvalSettings = EvalSettings()) -> EvalReport:
    """RGE in degrees at every horizon for each method, trajectory and segment.

    Per-trajectory means are aggregated into mean and std across trajectories.
    Segments whose forecast raises a package error are counted as failures and
    excluded.
    """
    if not records:
        raise IoError("no trajectories to evaluate")
    horizons = [float(h) for h in settings.horizons]
    rows, nfe_all, failures = [], {}, {}
    for name, method in methods.items():
        per_traj: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
        nfes, failed = [], 0
        for rec in sorted(records, key=lambda r: r.get("id", 0)):
            scen = rec.get("family", rec.get("scenario", "unknown"))
            errs = []
            for seg in segments(rec, settings):
                try:
                    pred, nfe = method(seg)
                except SgcdeError:
                    failed += 1
                    continue
                errs.append(np.degrees(so3.rge(pred, seg.truth)))
                nfes.append(nfe)
            if errs:
                means = np.mean(errs, axis=0)
                for h, v in zip(horizons, means):
                    per_traj[scen][h].append(float(v))
        for scen in sorted(per_traj):
            for h in horizons:
                vals = np.asarray(per_traj[scen][h])
                rows.append({
                    "method": name,
                    "scenario": scen,
                    "horizon_s": h,
                    "rge_mean_deg": float(vals.mean()),
                    "rge_std_deg": float(vals.std()),
                    "n": int(vals.size),
                    "nfe_mean": float(np.mean(nfes)) if nfes else 0.0,
                })
        nfe_all[name] = nfes
        failures[name] = failed
    s = asdict(settings)
    s["horizons"] = horizons
    return EvalReport(rows, nfe_all, failures, s)


def baseline_methods(settings: EvalSettings, include: Sequence[str] = ("cv", "sg", "conservational")) -> dict[str, Forecaster]:
    table = {
        "cv": cv_method,
        "sg": sg_method(settings.sg_window),
        "conservational": conservational_method(settings.momentum_noise),
    }
    unknown = set(include) - set(table)
    if unknown:
        raise ValueError(f"unknown baselines {sorted(unknown)}")
    return {k: table[k] for k in include}
