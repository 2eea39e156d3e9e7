"""Pipeline configuration and simulator scenarios, both read from YAML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .control import ControllerGains, ExecutionParams, PlanarArm
from .environment import Environment, SimObject
from .learning import ActionSet, QTable, RewardConfig, StiffnessClusterer
from .segmentation import ContactParams
from .skills import SkillClass
from .trace import ObjectDatabase, default_database

CONFIG_ENV = "LFD_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArmConfig:
    lengths: tuple = (0.35, 0.3, 0.1)
    admittance: float = 1e-3

    def build(self) -> PlanarArm:
        return PlanarArm(tuple(self.lengths), admittance=self.admittance)


@dataclass(frozen=True)
class ForceConfig:
    base: float = 0.5
    increment: float = 0.3
    ceiling: float = 10.0
    noise: float = 0.2


@dataclass(frozen=True)
class LearningConfig:
    alpha: float = 0.5
    gamma: float = 0.3
    eps_grow: float = 0.8
    max_episodes: int = 50
    clusters: int = 2


@dataclass(frozen=True)
class EnvironmentConfig:
    strip_fraction: float = 0.12
    peel_detect_fraction: float = 0.10


@dataclass(frozen=True)
class ExecutionConfig:
    budget: int = 2000
    rate_hz: float = 100.0
    pos_tol: float = 1e-3
    compliance: float = 1e-3
    creep: float = 2e-5
    press_steps: int = 150
    lookahead: float = 0.05
    edge_margin: float = 0.005


@dataclass(frozen=True)
class PipelineConfig:
    contact: ContactParams = field(default_factory=ContactParams)
    gains: ControllerGains = field(default_factory=ControllerGains)
    execution: ExecutionConfig = field(default_factory=ExecutionConfig)
    arm: ArmConfig = field(default_factory=ArmConfig)
    force: ForceConfig = field(default_factory=ForceConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    seed: int = 0

    def execution_params(self) -> ExecutionParams:
        return ExecutionParams(contact_force=self.force.base, **dataclasses.asdict(self.execution))

    def table_factory(self):
        f, lr = self.force, self.learning

        def make(cluster_id: int, skill: SkillClass) -> QTable:
            return QTable(cluster_id, skill, ActionSet(f.base, f.increment, f.ceiling), lr.alpha, lr.gamma, lr.eps_grow)

        return make

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arm"]["lengths"] = list(d["arm"]["lengths"])
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_SECTION_TYPES = {
    "contact": ContactParams,
    "gains": ControllerGains,
    "execution": ExecutionConfig,
    "arm": ArmConfig,
    "force": ForceConfig,
    "reward": RewardConfig,
    "learning": LearningConfig,
    "environment": EnvironmentConfig,
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key '{where}{k}'")
        out[k] = _merge(base[k], v, f"{where}{k}.") if isinstance(base[k], dict) and isinstance(v, dict) else v
    return out


def default_config_text() -> str:
    return resources.files("oneshot_lfd.data").joinpath("default_config.yaml").read_text(encoding="utf-8")


def config_from_dict(d: dict) -> PipelineConfig:
    kw = {}
    try:
        for name, cls in _SECTION_TYPES.items():
            sec = dict(d.get(name, {}))
            if name == "arm" and "lengths" in sec:
                sec["lengths"] = tuple(sec["lengths"])
            kw[name] = cls(**sec)
        kw["seed"] = int(d.get("seed", 0))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e
    return PipelineConfig(**kw)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Shipped defaults, overlaid with ``path`` (or ``$LFD_CONFIG`` when unset)."""
    base = yaml.safe_load(default_config_text())
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        user = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = _merge(base, user)
    return config_from_dict(base)


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioObjectConfig:
    object_id: int
    cls: str
    position: tuple  # centroid in the arm plane, m
    stiffness: float | None = None
    peel_threshold: float | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    objects: tuple
    noise: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "noise": self.noise,
            "seed": self.seed,
            "objects": [
                {k: v for k, v in (("id", o.object_id), ("class", o.cls), ("position", list(o.position)),
                                   ("stiffness", o.stiffness), ("peel_threshold", o.peel_threshold)) if v is not None}
                for o in self.objects
            ],
        }


def scenario_from_dict(d: dict, db: ObjectDatabase | None = None) -> Scenario:
    db = db or default_database()
    objs = []
    try:
        for rec in d["objects"]:
            cls = rec["class"]
            ext = db[cls].extent
            pos = tuple(float(v) for v in rec.get("position", (0.0, 0.5 * ext[2])))
            if len(pos) != 2:
                raise ConfigError(f"object {rec['id']}: position needs two plane coordinates")
            objs.append(ScenarioObjectConfig(int(rec["id"]), cls, pos, rec.get("stiffness"), rec.get("peel_threshold")))
    except KeyError as e:
        raise ConfigError(f"scenario: missing {e}") from e
    ids = [o.object_id for o in objs]
    if len(set(ids)) != len(ids):
        raise ConfigError("scenario: duplicate object ids")
    return Scenario(str(d.get("name", "scenario")), tuple(objs), bool(d.get("noise", False)), int(d.get("seed", 0)))


def load_scenario(path: str | Path, db: ObjectDatabase | None = None) -> Scenario:
    p = Path(path)
    if not p.exists():
        shipped = resources.files("oneshot_lfd.data").joinpath("scenarios", f"{p.stem}.yaml")
        if shipped.is_file():
            return scenario_from_dict(yaml.safe_load(shipped.read_text(encoding="utf-8")), db)
        raise FileNotFoundError(f"no scenario file {path}")
    return scenario_from_dict(yaml.safe_load(p.read_text()), db)


def build_environment(scenario: Scenario, cfg: PipelineConfig | None = None, db: ObjectDatabase | None = None,
                      seed: int | None = None) -> Environment:
    cfg = cfg or PipelineConfig()
    db = db or default_database()
    objs = []
    for o in scenario.objects:
        c = db[o.cls]
        objs.append(
            SimObject(
                o.object_id,
                o.cls,
                np.array(o.position),
                np.array([c.extent[0], c.extent[2]]),
                c.stiffness if o.stiffness is None else float(o.stiffness),
                c.peel_force_threshold if o.peel_threshold is None else float(o.peel_threshold),
                c.states,
            )
        )
    return Environment.from_objects(
        objs,
        noise=scenario.noise,
        noise_amplitude=cfg.force.noise,
        strip_fraction=cfg.environment.strip_fraction,
        peel_detect_fraction=cfg.environment.peel_detect_fraction,
        seed=scenario.seed if seed is None else seed,
    )


def fit_clusterer(cfg: PipelineConfig | None = None, db: ObjectDatabase | None = None) -> StiffnessClusterer:
    """Cluster the stiffness of every peelable class in the database."""
    cfg = cfg or PipelineConfig()
    db = db or default_database()
    k = [c.stiffness for c in db if "peeled" in c.states]
    return StiffnessClusterer(cfg.learning.clusters).fit(k)
