from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension affine map of ``[lo, hi]`` onto ``[-1, 1]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("normalizer needs lo < hi per dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return 2.0 * (x - self.lo[:d]) / (self.hi[:d] - self.lo[:d]) - 1.0

    def denormalize(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        return (z + 1.0) * 0.5 * (self.hi[:d] - self.lo[:d]) + self.lo[:d]

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["lo"], dtype=float), np.array(d["hi"], dtype=float))

    @classmethod
    def from_dataset(cls, ds, include_actions: bool = False) -> "Normalizer":
        if include_actions:
            if ds.action_min is None:
                raise ValueError("dataset has no actions")
            return cls(np.concatenate([ds.state_min, ds.action_min]), np.concatenate([ds.state_max, ds.action_max]))
        return cls(ds.state_min, ds.state_max)


def dataset_vectors(ds, include_actions: bool = False) -> np.ndarray:
    """(n, H + 1, d) array of raw per-step vectors; the final step gets a zero action."""
    if not include_actions:
        return ds.state_array
    out = []
    for t in ds.trajectories:
        if t.actions is None:
            raise ValueError("dataset has no actions")
        acts = np.concatenate([t.actions, np.zeros((1, t.actions.shape[1]))])
        out.append(np.concatenate([t.states, acts], axis=1))
    return np.stack(out)
