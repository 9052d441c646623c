"""Experiment configuration files (TOML).

Example::

    seed = 0
    output_dir = "runs/delta"

    [system]
    preset = "rotation2d"      # identity-channel | double-integrator | rotation2d | rotation3d
    omega = 1.5707963267948966  # or give A = [[...]] and B = [[...]] instead of a preset

    [source]
    kind = "points"            # points | gaussian | ring | pyramid | torus | mixture | csv
    points = [[-1.0, -1.0]]

    [target]
    kind = "mixture"
    n = 2000
    params = { std = 0.25 }

    [train]
    steps = 3000

    [propagate]
    K = 16                     # or times = [0.0, 0.25, 1.0]
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ensembles import Ensemble, gaussian, load_csv, shape
from .lti import LtiSystem
from .propagation import PropagationPlan
from .training import TrainConfig

SEED_ENV = "SWARMFLOW_SEED"


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class EnsembleSpec:
    kind: str
    n: int = 1000
    params: dict = field(default_factory=dict)
    path: Path | None = None
    points: list | None = None
    seed: int | None = None

    def build(self, default_seed: int) -> Ensemble:
        seed = default_seed if self.seed is None else self.seed
        if self.kind == "points":
            return Ensemble(np.asarray(self.points, dtype=float), "points")
        if self.kind == "csv":
            if not self.path.exists():
                raise FileNotFoundError(f"point cloud file not found: {self.path}")
            return load_csv(self.path)
        if self.kind == "gaussian":
            p = dict(self.params)
            mean = p.pop("mean", [0.0, 0.0])
            chol = p.pop("cov_cholesky", None)
            if chol is None and "std" in p:
                chol = float(p.pop("std")) * np.eye(len(mean))
            if p:
                raise ConfigError(f"unknown gaussian parameters {sorted(p)}")
            return gaussian(self.n, mean, chol, seed)
        return shape(self.kind, self.n, self.params, seed)


@dataclass
class ExperimentConfig:
    system: LtiSystem
    source: EnsembleSpec
    target: EnsembleSpec
    train: TrainConfig
    plan: PropagationPlan
    output_dir: Path
    seed: int = 0
    svg: bool = True

    def source_ensemble(self) -> Ensemble:
        return self.source.build(self.seed)

    def target_ensemble(self) -> Ensemble:
        return self.target.build(self.seed + 1)


def _system(section: dict) -> LtiSystem:
    s = dict(section)
    preset = s.pop("preset", None)
    if preset is None:
        if "A" not in s or "B" not in s:
            raise ConfigError("[system] needs either a preset or both A and B")
        return LtiSystem(s.pop("A"), s.pop("B"), name=s.pop("name", "custom"))
    builders = {
        "identity-channel": lambda d=2: LtiSystem.identity_channel(d),
        "double-integrator": lambda axes=1: LtiSystem.double_integrator(axes),
        "rotation2d": lambda omega=math.pi / 2: LtiSystem.rotation2d(omega),
        "rotation3d": lambda omega_z=math.pi / 2, omega_x=0.0: LtiSystem.rotation3d(omega_z, omega_x),
    }
    if preset not in builders:
        raise ConfigError(f"unknown system preset {preset!r}; choose from {sorted(builders)}")
    try:
        return builders[preset](**s)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for preset {preset!r}: {exc}") from None


def _ensemble(section: dict, base: Path, which: str) -> EnsembleSpec:
    s = dict(section)
    kind = s.pop("kind", None)
    if kind is None:
        raise ConfigError(f"[{which}] needs a kind")
    spec = EnsembleSpec(kind=kind, n=int(s.pop("n", 1000)), params=s.pop("params", {}),
                        seed=s.pop("seed", None))
    if kind == "points":
        spec.points = s.pop("points", None)
        if spec.points is None:
            raise ConfigError(f"[{which}] kind 'points' needs a points list")
    elif kind == "csv":
        if "path" not in s:
            raise ConfigError(f"[{which}] kind 'csv' needs a path")
        spec.path = (base / s.pop("path")).resolve()
    if s:
        raise ConfigError(f"[{which}] has unknown keys {sorted(s)}")
    return spec


def load_config(path, env=None) -> ExperimentConfig:
    """Parse a config file; ``SWARMFLOW_SEED`` in ``env`` overrides the seed.

    Raises :class:`ConfigError` (or ``FileNotFoundError``) on problems and
    refuses uncontrollable systems.
    """
    env = os.environ if env is None else env
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    seed = int(env.get(SEED_ENV, raw.get("seed", 0)))
    try:
        system = _system(raw.get("system", {"preset": "identity-channel"}))
        if not system.controllable:
            raise ConfigError(
                f"system {system.name} is not controllable (Kalman rank < {system.d}); refusing to steer"
            )
        train_section = dict(raw.get("train", {}))
        train_section["seed"] = seed
        train = TrainConfig(**train_section)
        prop = dict(raw.get("propagate", {}))
        plan = (PropagationPlan(np.asarray(prop["times"], dtype=float)) if "times" in prop
                else PropagationPlan.uniform(int(prop.get("K", 16))))
        cfg = ExperimentConfig(
            system=system,
            source=_ensemble(raw.get("source", {}), base, "source"),
            target=_ensemble(raw.get("target", {}), base, "target"),
            train=train,
            plan=plan,
            output_dir=(base / raw.get("output_dir", "swarmflow_out")).resolve(),
            seed=seed,
            svg=bool(prop.get("svg", True)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for spec, which in ((cfg.source, "source"), (cfg.target, "target")):
        if spec.kind == "csv" and not spec.path.exists():
            raise FileNotFoundError(f"[{which}] point cloud file not found: {spec.path}")
    return cfg
