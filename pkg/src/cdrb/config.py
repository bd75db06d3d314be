"""Run configuration: one flat record with a documented default for every field."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

METHODS = ("cdrb", "gaussian")
SCHEDULES = ("linear", "log")
SAMPLERS = ("alg2", "eq5")
ARCHS = ("mlp", "conv")
BACKENDS = ("kdtree", "brute")
LR_DECAYS = ("none", "cosine")


@dataclass
class RunConfig:
    # environment and demonstrations
    maze: str = "maze"  # preset name or path to a maze JSON file
    n_demos: int = 500
    horizon: int = 64
    # replay buffer
    kmeans_k: int = 0  # 0 keeps the full buffer
    kmeans_iters: int = 25
    index_backend: str = "kdtree"
    # diffusion
    method: str = "cdrb"
    schedule: str = "linear"
    t: int = 50
    d_max: float | None = None  # None: half the buffer bounding-box diagonal
    sampler: str = "alg2"
    pin: bool = True
    include_actions: bool = False
    # network and optimiser
    arch: str = "mlp"
    hidden: list[int] = field(default_factory=lambda: [512, 512, 512])
    emb_dim: int = 32
    conv_channels: int = 64
    conv_kernel: int = 5
    lr: float = 1e-3
    lr_decay: str = "none"  # "cosine" anneals lr to zero over the run
    batch: int = 64
    steps: int = 20_000
    # execution
    kp: float = 20.0
    kd: float = 4.0
    goal_radius: float | None = None  # None: the maze's own goal radius
    step_cap_factor: int = 10  # execution step cap = factor * horizon
    # evaluation
    episodes: int = 200
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    # plumbing
    out_dir: str = "runs"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.method in METHODS, f"method must be one of {METHODS}")
        need(self.schedule in SCHEDULES, f"schedule must be one of {SCHEDULES}")
        need(self.sampler in SAMPLERS, f"sampler must be one of {SAMPLERS}")
        need(self.arch in ARCHS, f"arch must be one of {ARCHS}")
        need(self.lr_decay in LR_DECAYS, f"lr_decay must be one of {LR_DECAYS}")
        need(self.index_backend in BACKENDS, f"index_backend must be one of {BACKENDS}")
        need(self.n_demos >= 1, "n_demos must be positive")
        need(self.horizon >= 1, "horizon must be positive")
        need(self.t >= 1, "t must be positive")
        need(self.kmeans_k >= 0, "kmeans_k must be non-negative")
        need(self.d_max is None or self.d_max > 0, "d_max must be positive")
        need(len(self.hidden) >= 1 and all(h >= 1 for h in self.hidden), "hidden widths must be positive")
        need(self.lr > 0 and self.batch >= 1 and self.steps >= 0, "invalid optimiser settings")
        need(self.kp >= 0 and self.kd >= 0 and (self.kp > 0 or self.kd > 0), "invalid controller gains")
        need(self.goal_radius is None or self.goal_radius > 0, "goal_radius must be positive")
        need(self.episodes >= 1 and len(self.seeds) >= 1, "need at least one episode and one seed")
        need(self.threads >= 1, "threads must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)


def stream(seed: int, name: str) -> np.random.Generator:
    """Named random sub-stream of the global seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])
