"""Experiment configuration: one JSON document per run."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .exceptions import ConfigError
from .matching import BOUNDARY_MODES
from .params import SimulationParams


@dataclass
class EnsembleSettings:
    member_count: int = 1
    randomize_weights: bool = True
    shuffle_order: bool = True


@dataclass
class ExperimentConfig:
    """Everything a prepare/train/infer/evaluate pipeline needs.

    ``params`` holds overrides of :class:`SimulationParams`; ``theta_range``
    is ``"auto"`` (chosen by place count) or ``[low, high]``. All member
    seeds derive from ``seed``.
    """

    manifest: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    kappa: int = 25
    epochs: int = 30
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    theta_range: str | list[float] = "auto"
    hyperactive_subsample: float | None = None
    seq_lengths: list[int] = field(default_factory=lambda: [1, 2, 4, 10])
    recall_n: list[int] = field(default_factory=lambda: [1, 5, 10])
    boundary: str = "truncate-rescale"
    gt_tolerance: int = 0
    seed: int = 0
    method: str = "ensemble-modular-snn"
    out: str = "runs/default"
    workers: int = 1
    base_dir: Path | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.ensemble, dict):
            try:
                self.ensemble = EnsembleSettings(**self.ensemble)
            except TypeError as exc:
                raise ConfigError(f"bad ensemble settings: {exc}") from exc
        self.validate()

    def validate(self) -> None:
        self.simulation_params()
        if self.kappa < 1:
            raise ConfigError("kappa must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.ensemble.member_count < 1:
            raise ConfigError("member_count must be at least 1")
        if self.theta_range != "auto":
            if not (isinstance(self.theta_range, (list, tuple)) and len(self.theta_range) == 2
                    and self.theta_range[0] <= self.theta_range[1]):
                raise ConfigError("theta_range must be 'auto' or [low, high]")
        if not self.seq_lengths or min(self.seq_lengths) < 1:
            raise ConfigError("sequence lengths must be positive")
        if not self.recall_n or min(self.recall_n) < 1:
            raise ConfigError("recall N values must be positive")
        if self.boundary not in BOUNDARY_MODES:
            raise ConfigError(f"boundary must be one of {BOUNDARY_MODES}")
        if self.gt_tolerance < 0:
            raise ConfigError("gt_tolerance must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def simulation_params(self) -> SimulationParams:
        return SimulationParams.from_dict(self.params)

    def theta_range_tuple(self) -> tuple[float, float] | None:
        return None if self.theta_range == "auto" else (float(self.theta_range[0]), float(self.theta_range[1]))

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        """Hash of every setting that can change numerical output."""
        d = self.to_dict()
        for key in ("out", "workers"):
            d.pop(key)
        d["params"] = self.simulation_params().to_dict()
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data, base_dir=base_dir)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, base_dir=path.parent.resolve())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
