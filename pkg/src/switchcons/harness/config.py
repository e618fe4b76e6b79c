"""Experiment configuration: a single YAML file per experiment.

Schema (all keys except ``name`` and ``seed`` have defaults)::

    name: linear-strong
    seed: 0                      # mandatory; no entropy defaults
    system: {name: linear, params: {n: 7, m: 2}}
    signal:
      kind: generated            # generated | split | random | explicit
      tau_d: 0.1
      tau_u: 0.2
      window: 1.0                # connectivity window to certify
      connectivity: strong       # strong | quasi-strong
      mode_count: 3
      extra_edge_prob: 0.15
      # split:    groups: [[1, 2, 3], [4, 5, 6]]
      # explicit: graphs: {1: {1: [2], 2: [1]}}      N_i lists per mode
      #           switches: [[0.0, 1], [0.5, 2]]
    initial: {kind: random-ball, radius: 1.0}     # | explicit | split-groups
    t0: 0.0
    t_end: 20.0
    step: 0.001
    certificates: {v: squared_norm, w: null}
    checks: {assumption_v: false, assumption_w: false, stride: 10}
    smoothing: null              # or {tau_blend: 0.01, blend: cosine}
    thresholds: {consensus_rel: 0.001, tol_consensus: 1.0e-6, ...}
    expect: {consensus_reached: true}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"

DEFAULT_THRESHOLDS = {
    "consensus_rel": 1e-3,
    "tol_consensus": 1e-6,
    "decrease_margin": 0.0,
    "monotone_tol": 1e-9,
    "constant_tol": 1e-9,
    "eta_grid": [1e-1, 1e-2, 1e-3],
}

SYSTEM_NAMES = ("linear", "scaled", "so3", "epipole", "stabilization")
SIGNAL_KINDS = ("generated", "split", "random", "explicit")
INITIAL_KINDS = ("random-ball", "explicit", "split-groups")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    system: dict = field(default_factory=lambda: {"name": "linear", "params": {}})
    signal: dict = field(default_factory=lambda: {"kind": "generated"})
    initial: dict = field(default_factory=lambda: {"kind": "random-ball", "radius": 1.0})
    t0: float = 0.0
    t_end: float = 20.0
    step: float = 1e-3
    certificates: dict = field(default_factory=lambda: {"v": "squared_norm", "w": None})
    checks: dict = field(default_factory=lambda: {"assumption_v": False, "assumption_w": False, "stride": 10})
    smoothing: dict | None = None
    thresholds: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        self.seed = int(self.seed)
        self.t0 = float(self.t0)
        self.t_end = float(self.t_end)
        self.step = float(self.step)
        self.thresholds = {**DEFAULT_THRESHOLDS, **(self.thresholds or {})}
        self.validate()

    def validate(self):
        if self.system.get("name") not in SYSTEM_NAMES:
            raise ConfigError(f"unknown system {self.system.get('name')!r}")
        if self.signal.get("kind") not in SIGNAL_KINDS:
            raise ConfigError(f"unknown signal kind {self.signal.get('kind')!r}")
        if self.initial.get("kind") not in INITIAL_KINDS:
            raise ConfigError(f"unknown initial kind {self.initial.get('kind')!r}")
        if not self.t0 < self.t_end:
            raise ConfigError("need t0 < t_end")
        if self.step <= 0:
            raise ConfigError("step must be positive")
        for key, val in self.thresholds.items():
            if key == "decrease_margin":
                if float(val) < 0:
                    raise ConfigError("decrease_margin must be >= 0")
            elif key == "eta_grid":
                if any(float(v) <= 0 for v in val):
                    raise ConfigError("eta_grid entries must be positive")
            elif float(val) <= 0:
                raise ConfigError(f"threshold {key} must be positive")
        from ..lyapunov import CERTIFICATES

        for key in ("v", "w"):
            name = self.certificates.get(key)
            if name is not None and name not in CERTIFICATES:
                raise ConfigError(f"unknown certificate {name!r}")

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "seed" not in data:
            raise ConfigError("seed is mandatory")
        return cls(**copy.deepcopy(data))

    def replace(self, path: str, value) -> "ExperimentConfig":
        """Copy with the dotted field ``path`` set to ``value``."""
        data = self.to_dict()
        keys = path.split(".")
        node = data
        for key in keys[:-1]:
            if node.get(key) is None:
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
        return ExperimentConfig.from_dict(data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def loads(text: str) -> ExperimentConfig:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return ExperimentConfig.from_dict(data)


def list_presets() -> list:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_config(ref: str) -> ExperimentConfig:
    """Load from a path, or by preset name."""
    path = Path(ref)
    if not path.exists():
        path = PRESET_DIR / f"{ref}.yaml"
    if not path.exists():
        raise ConfigError(f"no config file or preset named {ref!r}")
    return loads(path.read_text())
