"""Easy-to-hard scheduling of augmentation parameters over epochs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParameterError

SCHEDULE_FUNCTIONS = ("linear", "exp_fast_to_slow", "exp_slow_to_fast", "random_baseline")


@dataclass(frozen=True)
class ScheduleSpec:
    eta_init: float
    eta_final: float
    epochs: int
    function: str = "linear"
    lam: float = 3.0
    seed: int = 0  # only read by random_baseline

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.function not in SCHEDULE_FUNCTIONS:
            raise ConfigError(f"unknown scheduling function {self.function!r}")
        if self.function.startswith("exp") and not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")


@dataclass(frozen=True)
class CurriculumState:
    epoch: int
    theta: float
    p: float | None = None
    phi: float | None = None

    @property
    def satellite_value(self) -> float:
        return self.p if self.p is not None else self.phi


def progress(function: str, x: float, lam: float = 3.0) -> float:
    """Deterministic scheduling function f on [0, 1] with f(0)=0 and f(1)=1."""
    if function == "linear":
        return float(x)
    if function == "exp_fast_to_slow":
        return math.expm1(-lam * x) / math.expm1(-lam)
    if function == "exp_slow_to_fast":
        return math.expm1(lam * x) / math.expm1(lam)
    raise ParameterError(f"{function!r} is not a deterministic scheduling function")


def schedule_value(spec: ScheduleSpec, t: float, rng: np.random.Generator | None = None) -> float:
    """Parameter value at epoch ``t``: init + (final - init) * f(t / n).

    ``random_baseline`` draws f uniformly from [0, 1]; without an explicit
    ``rng`` the draw is seeded from ``(spec.seed, t)`` so it is reproducible.
    """
    if not 0 <= t <= spec.epochs:
        raise ParameterError(f"epoch {t} outside [0, {spec.epochs}]")
    if spec.function == "random_baseline":
        if rng is None:
            rng = np.random.default_rng([spec.seed, int(t)])
        f = float(rng.uniform(0.0, 1.0))
    else:
        f = progress(spec.function, t / spec.epochs, spec.lam)
    return spec.eta_init + (spec.eta_final - spec.eta_init) * f


def curriculum_for_epoch(theta_spec: ScheduleSpec, sat_spec: ScheduleSpec, t: int,
                         sat_mode: str = "discrete_rotation") -> CurriculumState:
    if theta_spec.epochs != sat_spec.epochs:
        raise ConfigError("ground and satellite schedules disagree on the epoch count "
                          f"({theta_spec.epochs} vs {sat_spec.epochs})")
    theta = min(max(schedule_value(theta_spec, t), 1e-9), 360.0)
    sat = schedule_value(sat_spec, t)
    if sat_mode == "discrete_rotation":
        return CurriculumState(t, theta, p=min(max(sat, 0.0), 1.0))
    return CurriculumState(t, theta, phi=sat)
