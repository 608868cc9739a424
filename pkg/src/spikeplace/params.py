"""Neuronal, synaptic and learning constants for one spiking module."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping

from .exceptions import ConfigError


@dataclass(frozen=True)
class SimulationParams:
    """All constants of a single three-layer module.

    Times are in milliseconds, potentials in millivolts, conductances and
    weights are dimensionless. Defaults follow the 28x28 / 400-neuron
    setting; thresholds, resets and refractory periods that the place
    recognition setup leaves open are taken from the Diehl & Cook network.
    """

    dt: float = 0.5
    presentation_duration: float = 350.0
    rest_duration: float = 150.0

    tau_e: float = 100.0
    tau_i: float = 10.0
    e_rest_e: float = -65.0
    e_rest_i: float = -60.0
    e_exc_e: float = 0.0
    e_exc_i: float = 0.0
    e_inh_e: float = -100.0
    e_inh_i: float = -85.0
    tau_ge: float = 1.0
    tau_gi: float = 0.5

    v_thresh_e: float = -52.0
    v_thresh_i: float = -40.0
    v_reset_e: float = -65.0
    v_reset_i: float = -45.0
    refrac_e: float = 5.0
    refrac_i: float = 2.0

    theta_plus: float = 0.05
    tau_theta: float = 1e7

    eta_pre: float = 1e-4
    eta_post: float = 1e-2
    x_tar: float = 0.4
    tau_trace: float = 20.0
    w_max: float = 1.0
    mu: float = 1.0
    w_ei: float = 10.4
    w_ie: float = 17.0

    max_input_rate: float = 63.75
    k_p: int = 784
    k_e: int = 400
    k_i: int = 400

    # homeostatic plumbing around the learning rule
    weight_norm_total: float | None = 78.0
    init_weight_fraction: float = 0.3
    min_spike_floor: int = 5
    rate_step: float = 31.875
    max_retries: int = 10

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        for name in ("presentation_duration", "rest_duration"):
            value = getattr(self, name)
            steps = value / self.dt
            if value < 0 or abs(steps - round(steps)) > 1e-9:
                raise ConfigError(f"{name}={value} is not a multiple of dt={self.dt}")
        if self.presentation_duration <= 0:
            raise ConfigError("presentation_duration must be positive")
        if self.k_e != self.k_i:
            raise ConfigError(f"k_e ({self.k_e}) must equal k_i ({self.k_i})")
        if self.k_p < 1 or self.k_e < 1:
            raise ConfigError("layer sizes must be positive")
        if not self.w_max > 0:
            raise ConfigError("w_max must be positive")
        if self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        if not (self.eta_pre > 0 and self.eta_post > 0):
            raise ConfigError("learning rates must be positive")
        if not self.max_input_rate > 0:
            raise ConfigError("max_input_rate must be positive")
        if not self.e_inh_e < self.e_rest_e < self.v_thresh_e:
            raise ConfigError("need e_inh_e < e_rest_e < v_thresh_e")
        for name in ("tau_e", "tau_i", "tau_ge", "tau_gi", "tau_theta", "tau_trace"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.init_weight_fraction <= 1:
            raise ConfigError("init_weight_fraction must be in (0, 1]")
        if self.max_retries < 0 or self.min_spike_floor < 0 or self.rate_step < 0:
            raise ConfigError("retry settings must be nonnegative")

    @property
    def presentation_steps(self) -> int:
        return int(round(self.presentation_duration / self.dt))

    @property
    def rest_steps(self) -> int:
        return int(round(self.rest_duration / self.dt))

    def decay(self, tau: float, steps: int = 1) -> float:
        """Exact exponential decay factor over ``steps`` time steps."""
        return math.exp(-steps * self.dt / tau)

    def replace(self, **changes: Any) -> "SimulationParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimulationParams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown simulation parameters: {sorted(unknown)}")
        return cls(**dict(data))
