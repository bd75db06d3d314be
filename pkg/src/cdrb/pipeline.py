"""Glue from a RunConfig to datasets, buffers, trained models, planners and checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .buffer import ReplayBuffer, kmeans_compress
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, stream
from .control import ControllerGains
from .diffusion import NoiseSchedule, SamplerConfig, train_gaussian, train_restoration
from .env import MazeSpec, load_maze
from .errors import ConfigError, FormatError
from .expert import DemoDataset, generate_dataset
from .model import Adam, RestorationNet, cosine_lr, TemporalConvNet, make_net
from .normalize import Normalizer, dataset_vectors
from .planners import CDRBPlanner, GaussianPlanner
from .schedule import DistanceSchedule

log = logging.getLogger(__name__)


@dataclass
class TrainedModel:
    method: str
    net: object
    norm: Normalizer
    maze: MazeSpec
    include_actions: bool = False
    buf: ReplayBuffer | None = None
    schedule: DistanceSchedule | None = None
    noise: NoiseSchedule | None = None
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.net.horizon

    def planner(self, sampler: str = "alg2", pin: bool = True, name: str | None = None):
        if self.method == "cdrb":
            cfg = SamplerConfig(self.schedule, sampler_kind=sampler, pin_endpoints=pin)
            return CDRBPlanner(self.net, self.buf, cfg, self.norm, name=name or "cdrb")
        return GaussianPlanner(self.net, self.noise, self.norm, name=name or "gaussian")


def dataset_for(cfg: RunConfig, maze: MazeSpec | None = None) -> DemoDataset:
    maze = maze or load_maze(cfg.maze)
    return generate_dataset(maze, cfg.n_demos, cfg.horizon, cfg.seed)


def prepare_data(ds: DemoDataset, include_actions: bool) -> tuple[Normalizer, np.ndarray]:
    norm = Normalizer.from_dataset(ds, include_actions)
    return norm, norm.normalize(dataset_vectors(ds, include_actions))


def buffer_for(cfg: RunConfig, data: np.ndarray, state_dim: int) -> ReplayBuffer:
    """Every normalised demo vector (duplicates kept), optionally k-means compressed."""
    flat = data.reshape(-1, data.shape[-1])
    buf = ReplayBuffer(flat, state_dim=state_dim, d_max=cfg.d_max, backend=cfg.index_backend)
    if cfg.kmeans_k:
        buf = kmeans_compress(buf, min(cfg.kmeans_k, len(buf)), cfg.kmeans_iters, stream(cfg.seed, "kmeans"))
    return buf


def new_net(cfg: RunConfig, dim: int, residual: bool, rng: np.random.Generator):
    if cfg.arch == "mlp":
        return RestorationNet(cfg.horizon, dim, cfg.t, tuple(cfg.hidden), cfg.emb_dim, residual=residual, rng=rng)
    return TemporalConvNet(
        cfg.horizon, dim, cfg.t, cfg.conv_channels, len(cfg.hidden), cfg.conv_kernel, cfg.emb_dim, residual=residual, rng=rng
    )


def train_model(
    cfg: RunConfig,
    ds: DemoDataset | None = None,
    maze: MazeSpec | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> TrainedModel:
    maze = maze or load_maze(cfg.maze)
    ds = ds if ds is not None else dataset_for(cfg, maze)
    if ds.horizon != cfg.horizon:
        raise ConfigError(f"dataset horizon {ds.horizon} != config horizon {cfg.horizon}")
    norm, data = prepare_data(ds, cfg.include_actions)
    state_dim = ds.trajectories[0].states.shape[1]
    rng = stream(cfg.seed, f"train-{cfg.method}")
    net = new_net(cfg, data.shape[-1], residual=True, rng=stream(cfg.seed, f"init-{cfg.method}"))
    opt = Adam(net.n_params, lr=cfg.lr)
    if cfg.lr_decay == "cosine":
        outer = callback

        def callback(i, loss):
            opt.lr = cosine_lr(cfg.lr, i, cfg.steps)
            if outer is not None:
                outer(i, loss)

    log.info("training %s: %d params, %d steps", cfg.method, net.n_params, cfg.steps)
    if cfg.method == "cdrb":
        buf = buffer_for(cfg, data, state_dim)
        sched = DistanceSchedule(cfg.schedule, buf.d_max, cfg.t)
        losses = train_restoration(data, buf, sched, net, opt, cfg.steps, cfg.batch, rng, cfg.pin, callback)
        return TrainedModel("cdrb", net, norm, maze, cfg.include_actions, buf, sched, None, losses, {"config": cfg.to_dict()})
    noise = NoiseSchedule.cosine(cfg.t)
    losses = train_gaussian(data, noise, net, opt, cfg.steps, cfg.batch, rng, cfg.pin, callback)
    return TrainedModel("gaussian", net, norm, maze, cfg.include_actions, None, None, noise, losses, {"config": cfg.to_dict()})


def gains_for(cfg: RunConfig) -> ControllerGains:
    return ControllerGains(cfg.kp, cfg.kd)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: TrainedModel, path: str | Path) -> None:
    header = {
        "method": model.method,
        "descriptor": model.net.descriptor(),
        "horizon": model.net.horizon,
        "state_dim": model.net.state_dim,
        "include_actions": model.include_actions,
        "normalization": model.norm.to_dict(),
        "maze": model.maze.to_dict(),
        "meta": model.meta,
        "final_loss": float(np.mean(model.losses[-100:])) if len(model.losses) else None,
    }
    arrays = {"params": model.net.params}
    if model.method == "cdrb":
        header["schedule"] = {"kind": model.schedule.kind, "t": model.schedule.t, "d_max": model.schedule.d_max}
        header["buffer"] = {"state_dim": model.buf.state_dim, "d_max": model.buf.d_max, "backend": model.buf.backend}
        arrays["buffer"] = model.buf.points
    else:
        arrays["alpha_bar"] = model.noise.alpha_bar
    save_checkpoint(path, header, arrays)


def load_model(path: str | Path) -> TrainedModel:
    ck = load_checkpoint(path)
    h = ck.header
    try:
        net = make_net(h["descriptor"])
        net.set_params(ck.params)
        norm = Normalizer.from_dict(h["normalization"])
        maze = MazeSpec.from_dict(h["maze"])
        method = h["method"]
        if method == "cdrb":
            b = h["buffer"]
            buf = ReplayBuffer(ck.arrays["buffer"], state_dim=b["state_dim"], d_max=b["d_max"], backend=b["backend"])
            s = h["schedule"]
            sched = DistanceSchedule(s["kind"], s["d_max"], s["t"])
            return TrainedModel(method, net, norm, maze, h["include_actions"], buf, sched, None, meta=h.get("meta", {}))
        if method == "gaussian":
            noise = NoiseSchedule(ck.arrays["alpha_bar"])
            return TrainedModel(method, net, norm, maze, h["include_actions"], None, None, noise, meta=h.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: checkpoint content invalid: {exc}") from exc
    raise FormatError(f"{path}: unknown method {method!r}")


# ---------------------------------------------------------------------------
# benchmarks and ablations

ABLATIONS = ("kmeans_size", "schedule", "steps_t", "action_inclusion")


def baseline_planners(names, cfg: RunConfig, model: TrainedModel | None, maze: MazeSpec) -> list:
    from .planners import BlindPlanner, ExpertPlanner, ProjectionPlanner

    out = []
    for name in names:
        if name == "projection":
            if model is None or model.buf is None:
                raise ConfigError("projection needs a CDRB checkpoint for its buffer and normalisation")
            out.append(ProjectionPlanner(model.buf, model.norm, model.horizon, maze.dt))
        elif name == "expert":
            out.append(ExpertPlanner(maze))
        elif name == "blind":
            out.append(BlindPlanner(cfg.horizon))
        else:
            raise ConfigError(f"unknown baseline {name!r}")
    return out


def benchmark(cfg: RunConfig, planners, maze: MazeSpec | None = None, with_reference: bool = True):
    from .evaluation import run_benchmark

    maze = maze or load_maze(cfg.maze)
    return run_benchmark(
        planners,
        maze,
        cfg.episodes,
        cfg.seeds,
        gains=gains_for(cfg),
        goal_radius=cfg.goal_radius,
        step_cap=cfg.step_cap_factor * cfg.horizon,
        with_reference=with_reference,
    )


def ablation_cells(kind: str, grid, cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    if kind not in ABLATIONS:
        raise ConfigError(f"ablation kind must be one of {ABLATIONS}")
    cells = []
    for value in grid:
        if kind == "kmeans_size":
            c = cfg.replace(kmeans_k=int(value))
        elif kind == "schedule":
            c = cfg.replace(schedule=str(value))
        elif kind == "steps_t":
            c = cfg.replace(t=int(value))
        else:
            flag = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
            c = cfg.replace(include_actions=flag)
        cells.append((f"{kind}={value}", c))
    return cells


def ablate(kind: str, grid, cfg: RunConfig, ds: DemoDataset | None = None, with_reference: bool = False):
    """Train and evaluate CDRB once per grid cell.

    Returns one EvalReport per cell (named after the cell) and the training-loss
    curve of every cell as plot data.
    """
    maze = load_maze(cfg.maze)
    cfg = cfg.replace(method="cdrb")
    ds = ds if ds is not None else dataset_for(cfg, maze)
    reports, curves = [], {}
    for label, cell in ablation_cells(kind, grid, cfg):
        model = train_model(cell, ds, maze)
        rep = benchmark(cell, [model.planner(cell.sampler, cell.pin, name=label)], maze, with_reference)[0]
        reports.append(rep)
        curves[label] = model.losses
    return reports, curves
