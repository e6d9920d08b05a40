"""Rotational rigid-body simulation under the five external-torque scenarios."""

from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import so3
from .errors import UnresolvedScenario
from .ode import OdeSolution, dopri45

log = logging.getLogger(__name__)

INERTIA_BASES = {
    1: (1.0, 2.0, 3.0),
    2: (3.0, 1.0, 2.0),
    3: (3.0, 2.0, 1.0),
    4: (2.0, 3.0, 1.0),
}
SPLIT_OF_DIST = {1: "train", 2: "train", 3: "val", 4: "test"}


class Scenario(str, enum.Enum):
    FREE_ROTATION = "free"
    LINEAR_CONTROL = "linear"
    VELOCITY_DAMPING = "damping"
    CONFIG_DEPENDENT_TORQUE = "config"
    VARIABLE_DYNAMICS = "variable"

    @classmethod
    def parse(cls, name: str) -> "Scenario":
        aliases = {
            "freerotation": cls.FREE_ROTATION,
            "free_rotation": cls.FREE_ROTATION,
            "linearcontrol": cls.LINEAR_CONTROL,
            "linear_control": cls.LINEAR_CONTROL,
            "velocitydamping": cls.VELOCITY_DAMPING,
            "velocity_damping": cls.VELOCITY_DAMPING,
            "configdependenttorque": cls.CONFIG_DEPENDENT_TORQUE,
            "config_dependent_torque": cls.CONFIG_DEPENDENT_TORQUE,
            "combined": cls.CONFIG_DEPENDENT_TORQUE,
            "variabledynamics": cls.VARIABLE_DYNAMICS,
            "variable_dynamics": cls.VARIABLE_DYNAMICS,
        }
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


RESOLVED_SCENARIOS = (
    Scenario.FREE_ROTATION,
    Scenario.LINEAR_CONTROL,
    Scenario.VELOCITY_DAMPING,
    Scenario.CONFIG_DEPENDENT_TORQUE,
)


@dataclass(frozen=True)
class InertiaTensor:
    """Principal moments of inertia (the tensor is stored diagonal only)."""

    j: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.j, dtype=float).reshape(3)
        if np.any(j <= 0) or not np.all(np.isfinite(j)):
            raise ValueError(f"principal moments must be positive, got {j}")
        object.__setattr__(self, "j", j)

    @classmethod
    def from_tensor(cls, tensor: np.ndarray) -> tuple["InertiaTensor", np.ndarray]:
        """Diagonalize a symmetric inertia tensor; returns moments and principal axes."""
        vals, vecs = np.linalg.eigh(np.asarray(tensor, dtype=float))
        if np.linalg.det(vecs) < 0:
            vecs[:, 0] *= -1
        return cls(vals), vecs

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.j)


@dataclass(frozen=True)
class RigidBodyConfig:
    inertia: InertiaTensor
    scenario: Scenario = Scenario.FREE_ROTATION
    resolved: Optional[Scenario] = None
    control_A: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    control_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    damping_D: np.ndarray = field(default_factory=lambda: -0.2 * np.eye(3))
    field_vec: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    field_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    field_gain: float = 1.0
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if self.active in (Scenario.VELOCITY_DAMPING, Scenario.CONFIG_DEPENDENT_TORQUE):
            D = np.asarray(self.damping_D, dtype=float)
            if np.any(np.linalg.eigvalsh((D + D.T) / 2) >= 0):
                raise ValueError("damping matrix must be negative definite")

    @property
    def active(self) -> Scenario:
        if self.scenario is Scenario.VARIABLE_DYNAMICS:
            return self.resolved if self.resolved is not None else Scenario.VARIABLE_DYNAMICS
        return self.scenario


@dataclass(frozen=True)
class BodyState:
    t: float
    r: np.ndarray
    omega: np.ndarray


@dataclass
class Trajectory:
    t: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    omega: Optional[np.ndarray] = None
    config: Optional[RigidBodyConfig] = None
    split: str = ""
    delta: float = 0.0
    id: int = 0
    dist: int = 0
    inertia: Optional[np.ndarray] = None
    scenario: str = ""

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")


def torque(config: RigidBodyConfig, state: BodyState) -> np.ndarray:
    """Body-frame external torque for the configured scenario."""
    scenario = config.active
    j = config.inertia.j
    w = np.asarray(state.omega, dtype=float)
    if scenario is Scenario.FREE_ROTATION:
        return np.zeros(3)
    if scenario is Scenario.LINEAR_CONTROL:
        return j * (config.control_A @ w + config.control_b)
    if scenario is Scenario.VELOCITY_DAMPING:
        return j * (config.damping_D @ w)
    if scenario is Scenario.CONFIG_DEPENDENT_TORQUE:
        return config.w1 * config_torque(config, state.r) + config.w2 * j * (config.damping_D @ w)
    raise UnresolvedScenario("variable-dynamics config has no resolved scenario")


def config_torque(config: RigidBodyConfig, r: np.ndarray) -> np.ndarray:
    """Dipole-style torque ``k (R v) x g`` evaluated in the world frame, returned in the body frame."""
    world = config.field_gain * np.cross(r @ config.field_vec, config.field_dir)
    return r.T @ world


def euler_rhs(config: RigidBodyConfig, state: BodyState) -> tuple[np.ndarray, np.ndarray]:
    j = config.inertia.j
    w = np.asarray(state.omega, dtype=float)
    dR = state.r @ so3.hat(w)
    domega = (torque(config, state) - np.cross(w, j * w)) / j
    return dR, domega


def kinetic_energy(j: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return 0.5 * np.sum(np.asarray(omega) ** 2 * j, axis=-1)


def world_momentum(j: np.ndarray, r: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", r, np.asarray(omega) * j)


def _pack(r: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(r, dtype=float).reshape(9), np.asarray(omega, dtype=float)])


def _project(y: np.ndarray) -> np.ndarray:
    r = y[:9].reshape(3, 3)
    if so3.orthogonality_defect(r) <= so3.ORTHO_TOL:
        return y
    return _pack(so3.reorthonormalize(r), y[9:])


@dataclass
class Integration:
    t: np.ndarray
    r: np.ndarray
    omega: np.ndarray
    nfe: int
    solution: OdeSolution


def integrate_dopri45(
    config: RigidBodyConfig,
    state0: BodyState,
    t_end: float,
    rtol: float = 1e-9,
    atol: float = 1e-9,
    dt_init: Optional[float] = 1e-3,
    t_eval: Optional[Iterable[float]] = None,
) -> Integration:
    """Integrate Euler's equations; returns solver steps, or the ``t_eval`` samples if given."""
    if config.active is Scenario.VARIABLE_DYNAMICS:
        raise UnresolvedScenario("variable-dynamics config has no resolved scenario")

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        dR, dw = euler_rhs(config, BodyState(t, y[:9].reshape(3, 3), y[9:]))
        return np.concatenate([dR.reshape(9), dw])

    sol = dopri45(
        rhs,
        state0.t,
        _pack(state0.r, state0.omega),
        t_end,
        rtol=rtol,
        atol=atol,
        dt_init=dt_init,
        t_eval=None if t_eval is None else np.asarray(list(t_eval), dtype=float),
        post_step=_project,
    )
    if t_eval is not None:
        ts, ys = sol.t_eval, sol.y_eval
        rs = np.array([so3.reorthonormalize(y[:9].reshape(3, 3)) for y in ys])
    else:
        ts, ys = sol.t, sol.y
        rs = ys[:, :9].reshape(-1, 3, 3)
    return Integration(ts, rs, ys[:, 9:], sol.nfe, sol)


def sample_initial_omega(rng: np.random.Generator, sigma: float = 0.3, eta: float = 0.1) -> np.ndarray:
    """Per-component rejection sampling from N(0, sigma^2) restricted to ``|x| > eta``."""
    if sigma <= 0 or eta < 0:
        raise ValueError("need sigma > 0 and eta >= 0")
    out = np.empty(3)
    for i in range(3):
        while True:
            x = rng.normal(0.0, sigma)
            if abs(x) > eta:
                out[i] = x
                break
    return out


def sample_inertia(dist_id: int, rng: np.random.Generator, sigma: float = 0.2) -> InertiaTensor:
    if dist_id not in INERTIA_BASES:
        raise ValueError(f"dist_id must be one of {sorted(INERTIA_BASES)}")
    base = np.array(INERTIA_BASES[dist_id])
    if sigma == 0:
        return InertiaTensor(base)
    while True:
        j = base + rng.normal(0.0, sigma, 3)
        if np.all(j > 0.1):
            return InertiaTensor(j)


def sample_config(
    scenario: Scenario,
    inertia: InertiaTensor,
    rng: np.random.Generator,
    resolved: Optional[Scenario] = None,
) -> RigidBodyConfig:
    """Draw scenario parameters; variable dynamics must pass ``resolved``."""
    active = resolved if scenario is Scenario.VARIABLE_DYNAMICS else scenario
    if active is None or active is Scenario.VARIABLE_DYNAMICS:
        raise UnresolvedScenario("variable dynamics needs a resolved scenario")
    kwargs = {}
    if active is Scenario.LINEAR_CONTROL:
        kwargs["control_A"] = rng.normal(0.0, 0.1, (3, 3)) - 0.05 * np.eye(3)
        kwargs["control_b"] = rng.normal(0.0, 0.1, 3)
    return RigidBodyConfig(inertia=inertia, scenario=scenario, resolved=resolved, **kwargs)


@dataclass
class DatasetSpec:
    scenario: Scenario = Scenario.FREE_ROTATION
    count: int = 200
    delta: float = 0.05 * np.pi
    duration: float = 10.0
    obs_dt: float = 0.1
    rtol: float = 1e-8
    atol: float = 1e-8
    inertia_sigma: float = 0.2
    omega_sigma: float = 0.3
    omega_eta: float = 0.1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.scenario = Scenario.parse(self.scenario)
        if self.count < 1 or self.duration <= 0 or self.obs_dt <= 0:
            raise ValueError("count, duration and obs_dt must be positive")

    @property
    def n_obs(self) -> int:
        return int(round(self.duration / self.obs_dt)) + 1


def split_plan(count: int) -> list[int]:
    """MOI distribution id per trajectory index: half train (dists 1/2 alternating), a quarter each val/test."""
    n_train = count // 2
    n_val = count // 4
    n_test = count - n_train - n_val
    return [1 + (i % 2) for i in range(n_train)] + [3] * n_val + [4] * n_test


def resolved_plan(count: int, seed: int) -> list[Scenario]:
    """Balanced, shuffled assignment of the four concrete scenarios."""
    reps = [RESOLVED_SCENARIOS[i % 4] for i in range(count)]
    order = np.random.default_rng([seed, 0xFACE]).permutation(count)
    return [reps[i] for i in order]


def simulate_one(spec: DatasetSpec, idx: int, dist_id: int, resolved: Optional[Scenario]) -> dict:
    rng = np.random.default_rng([spec.seed, idx])
    inertia = sample_inertia(dist_id, rng, spec.inertia_sigma)
    config = sample_config(spec.scenario, inertia, rng, resolved)
    r0 = so3.random_rotation(rng)
    w0 = sample_initial_omega(rng, spec.omega_sigma, spec.omega_eta)
    t_obs = np.arange(spec.n_obs) * spec.obs_dt
    out = integrate_dopri45(
        config, BodyState(0.0, r0, w0), t_obs[-1], rtol=spec.rtol, atol=spec.atol, t_eval=t_obs
    )
    clean = out.r
    steps = so3.rotation_angle(clean[1:] @ np.swapaxes(clean[:-1], -1, -2))
    if np.any(steps >= np.pi - so3.EPS_LOG):
        raise ValueError(f"trajectory {idx}: consecutive samples rotate by pi or more")
    noisy = so3.perturb(clean, spec.delta, rng)
    return {
        "id": idx,
        "scenario": config.active.value,
        "family": spec.scenario.value,
        "split": SPLIT_OF_DIST[dist_id],
        "dist": dist_id,
        "inertia": inertia.j.tolist(),
        "delta": spec.delta,
        "omega0": w0.tolist(),
        "omega": out.omega.tolist(),
        "t": t_obs.tolist(),
        "clean": clean.reshape(-1, 9).tolist(),
        "noisy": noisy.reshape(-1, 9).tolist(),
        "nfe": out.nfe,
    }


def generate_dataset(spec: DatasetSpec) -> list[dict]:
    """Simulate ``spec.count`` trajectories; one independent RNG stream per index."""
    dists = split_plan(spec.count)
    if spec.scenario is Scenario.VARIABLE_DYNAMICS:
        resolved = resolved_plan(spec.count, spec.seed)
    else:
        resolved = [None] * spec.count
    jobs = list(zip(range(spec.count), dists, resolved))
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            futures = [ex.submit(simulate_one, spec, i, d, r) for i, d, r in jobs]
            records = [f.result() for f in futures]
    else:
        records = [simulate_one(spec, i, d, r) for i, d, r in jobs]
    log.info("simulated %d %s trajectories", len(records), spec.scenario.value)
    return records


def write_jsonl(records: Iterable[dict], path: str | Path, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    if meta is not None:
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)
    return path


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def dataset_meta(spec: DatasetSpec) -> dict:
    d = {k: (v.value if isinstance(v, Scenario) else v) for k, v in spec.__dict__.items()}
    d["split_of_dist"] = {str(k): v for k, v in SPLIT_OF_DIST.items()}
    d["inertia_bases"] = {str(k): list(v) for k, v in INERTIA_BASES.items()}
    return d


def record_to_trajectory(rec: dict) -> Trajectory:
    return Trajectory(
        t=np.asarray(rec["t"], dtype=float),
        clean=np.asarray(rec["clean"], dtype=float).reshape(-1, 3, 3),
        noisy=np.asarray(rec["noisy"], dtype=float).reshape(-1, 3, 3),
        omega=np.asarray(rec["omega"], dtype=float) if "omega" in rec else None,
        split=rec.get("split", ""),
        delta=float(rec.get("delta", 0.0)),
        id=int(rec.get("id", 0)),
        dist=int(rec.get("dist", 0)),
        inertia=np.asarray(rec["inertia"], dtype=float) if "inertia" in rec else None,
        scenario=rec.get("scenario", ""),
    )
