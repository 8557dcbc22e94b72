"""Run configuration: one JSON file describing mesh, subspaces, simulation
and optimization settings.

A config file looks like::

    {
      "version": 1,
      "mesh": {"box": {"cells": [10, 3, 3], "size": [1.0, 0.2, 0.2]}},
      "materials": {"mu": 1e5, "gamma": 1e5, "density": 1000.0},
      "subspace": {"w": 5, "m": 2, "k": 1},
      "clusters": {"passive": 5, "active": 1},
      "contact_samples": 20,
      "sim": {"h": 0.01, "lg_iters": 10},
      "objective": {"kind": "locomotion", "direction": [1, 0, 0]},
      "cmaes": {"population": 16, "iterations": 200},
      "steps": 200
    }

Missing sections take their defaults. ``mesh.path`` is resolved relative to
the config file's directory.
"""

from dataclasses import asdict, dataclass, field, fields
import json
import os
from pathlib import Path

import numpy as np

from .actuation import PARAM_NAMES, ParamBounds
from .cmaes import CmaesConfig
from .errors import ConfigError
from .opt import ObjectiveConfig
from .sim import CONTACT_METRICS, SimConfig

CONFIG_VERSION = 1
OUTPUT_ENV = "SOFTGAIT_OUTPUT_DIR"


@dataclass
class MeshSpec:
    path: str = None
    box_cells: tuple = (10, 3, 3)
    box_size: tuple = (1.0, 0.2, 0.2)

    def to_dict(self):
        if self.path is not None:
            return {"path": self.path}
        return {"box": {"cells": list(self.box_cells), "size": list(self.box_size)}}

    @classmethod
    def from_dict(cls, data):
        _check_keys("mesh", data, {"path", "box"})
        if "path" in data and "box" in data:
            raise ConfigError("mesh: give either 'path' or 'box', not both")
        if "path" in data:
            return cls(path=str(data["path"]))
        box = data.get("box", {})
        _check_keys("mesh.box", box, {"cells", "size"})
        spec = cls(box_cells=tuple(int(c) for c in box.get("cells", cls.box_cells)),
                   box_size=tuple(float(s) for s in box.get("size", cls.box_size)))
        if len(spec.box_cells) != 3 or min(spec.box_cells) < 1:
            raise ConfigError("mesh.box.cells must be three positive integers")
        if len(spec.box_size) != 3 or min(spec.box_size) <= 0:
            raise ConfigError("mesh.box.size must be three positive lengths")
        return spec


@dataclass
class Materials:
    mu: float = 1e5
    gamma: float = 1e5
    density: float = 1000.0


@dataclass
class SubspaceSpec:
    w: int = 5       # skinning eigenmodes (r = 12 w before pruning)
    m: int = 2       # actuation modes
    k: int = 1       # sinusoids per mode


@dataclass
class ClusterSpec:
    passive: int = 5
    active: int = 1


@dataclass
class RunConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    materials: Materials = field(default_factory=Materials)
    subspace: SubspaceSpec = field(default_factory=SubspaceSpec)
    clusters: ClusterSpec = field(default_factory=ClusterSpec)
    contact_samples: int = 20
    sim: dict = field(default_factory=dict)
    objective: dict = field(default_factory=dict)
    cmaes: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    frozen: dict = field(default_factory=dict)
    mode_select: int = None
    steps: int = 200
    lift: float = 0.0
    display_fraction: float = 0.1
    output_dir: str = None
    seed: int = 0
    base_dir: str = field(default=".", compare=False, repr=False)
    version: int = CONFIG_VERSION

    # Typed views -------------------------------------------------------
    def sim_config(self, contact_samples=None):
        kwargs = dict(self.sim)
        if "gravity" in kwargs:
            kwargs["gravity"] = tuple(kwargs["gravity"])
        if contact_samples is not None:
            kwargs["contact_samples"] = tuple(int(i) for i in contact_samples)
        return SimConfig(**kwargs)

    def objective_config(self):
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in self.objective.items()}
        return ObjectiveConfig(**kwargs)

    def cmaes_config(self):
        kwargs = dict(self.cmaes)
        kwargs.setdefault("seed", self.seed)
        return CmaesConfig(**kwargs)

    def param_bounds(self):
        return ParamBounds(**self.bounds)

    def mesh_path(self):
        if self.mesh.path is None:
            return None
        p = Path(self.mesh.path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def resolved_output_dir(self):
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "softgait_out")

    @property
    def shape(self):
        rows = self.mode_select if self.mode_select else self.subspace.m
        return (rows, self.subspace.k)

    # Validation -----------------------------------------------------------
    def validate(self, check_files=True):
        s = self.subspace
        for name, value in (("subspace.w", s.w), ("subspace.m", s.m), ("subspace.k", s.k),
                            ("clusters.passive", self.clusters.passive),
                            ("clusters.active", self.clusters.active),
                            ("contact_samples", self.contact_samples), ("steps", self.steps)):
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        m = self.materials
        if not (m.mu > 0 and m.gamma >= 0 and m.density > 0):
            raise ConfigError("materials need mu > 0, gamma >= 0 and density > 0")
        if self.mode_select is not None and not 1 <= self.mode_select <= s.m:
            raise ConfigError(f"mode_select must lie in [1, {s.m}]")
        if not self.display_fraction > 0:
            raise ConfigError("display_fraction must be positive")
        unknown = set(self.frozen) - set(PARAM_NAMES)
        if unknown:
            raise ConfigError(f"cannot freeze unknown parameters {sorted(unknown)}")
        if "contact_samples" in self.sim:
            raise ConfigError("set the sample count with the top-level 'contact_samples'")
        metric = self.sim.get("contact_metric", "system")
        if metric not in CONTACT_METRICS:
            raise ConfigError(f"sim.contact_metric must be one of {CONTACT_METRICS}")
        try:
            self.sim_config()
            self.objective_config()
            self.cmaes_config()
            self.param_bounds()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if check_files and self.mesh.path is not None and not self.mesh_path().is_file():
            raise ConfigError(f"mesh file {self.mesh_path()} does not exist")
        return self

    # Serialization ----------------------------------------------------
    def to_dict(self):
        out = {"version": self.version, "mesh": self.mesh.to_dict()}
        for f in fields(self):
            if f.name in ("mesh", "version", "base_dir"):
                continue
            value = getattr(self, f.name)
            if hasattr(value, "__dataclass_fields__"):
                value = asdict(value)
            out[f.name] = _plain(value)
        return out

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def from_dict(cls, data, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        _check_keys("config", data, known)
        kwargs = {"base_dir": str(base_dir)}
        sections = {"materials": Materials, "subspace": SubspaceSpec, "clusters": ClusterSpec}
        for key, value in data.items():
            if key == "mesh":
                kwargs[key] = MeshSpec.from_dict(value)
            elif key in sections:
                kind = sections[key]
                _check_keys(key, value, {f.name for f in fields(kind)})
                kwargs[key] = kind(**value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def loads(cls, text, base_dir="."):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text, path.parent)

    def with_overrides(self, **overrides):
        """Copy with top-level or dotted (``"cmaes.iterations"``) overrides."""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = data
            *parents, leaf = key.split(".")
            for p in parents:
                target = target.setdefault(p, {})
            target[leaf] = value
        return RunConfig.from_dict(data, self.base_dir)


def _check_keys(where, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value
