"""Ball-radius schedules for the replay-buffer degradation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StepOutOfRange

KINDS = ("linear", "log")


@dataclass(frozen=True)
class DistanceSchedule:
    kind: str = "linear"
    d_max: float = 1.0
    t: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; choose from {KINDS}")
        if not self.d_max > 0:
            raise ConfigError("d_max must be positive")
        if self.t < 1:
            raise ConfigError("t must be at least 1")

    def epsilon(self, k):
        """Radius at step ``k`` (scalar or integer array)."""
        k_arr = np.asarray(k)
        if np.any(k_arr < 0) or np.any(k_arr > self.t):
            raise StepOutOfRange(f"step {k} outside [0, {self.t}]")
        if self.kind == "linear":
            eps = k_arr / self.t * self.d_max
        else:
            eps = self.d_max * np.log1p(k_arr) / math.log1p(self.t)
        # pin the final radius exactly
        eps = np.where(k_arr == self.t, self.d_max, eps)
        return float(eps) if eps.ndim == 0 else eps

    def table(self) -> np.ndarray:
        return self.epsilon(np.arange(self.t + 1))


def epsilon(sched: DistanceSchedule, k):
    return sched.epsilon(k)
