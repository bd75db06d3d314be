from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Trajectory:
    """Fixed-horizon state sequence, optionally with the actions between states.

    ``states`` has shape ``(H + 1, state_dim)``; ``actions`` (if present) has
    shape ``(H, action_dim)``.
    """

    states: np.ndarray
    actions: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.actions is not None:
            a = np.asarray(self.actions, dtype=float)
            width = a.shape[-1] if a.ndim == 2 else max(1, a.size // max(1, len(self.states) - 1))
            self.actions = a.reshape(len(self.states) - 1, width)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))

    def __len__(self) -> int:
        return len(self.states)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        if not np.array_equal(self.states, other.states):
            return False
        if (self.actions is None) != (other.actions is None):
            return False
        return self.actions is None or np.array_equal(self.actions, other.actions)
