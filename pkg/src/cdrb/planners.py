"""Planning methods behind one interface: world-coordinate starts/goals in, state plans out.

Every planner exposes ``name`` and ``plan_batch(starts, goals, rng)`` returning a
``(B, T, 4)`` array of world states whose first and last entries are the
requested start and the goal at rest.
"""

from __future__ import annotations

import numpy as np

from .buffer import ReplayBuffer
from .diffusion import NoiseSchedule, SamplerConfig, project_trajectory, sample_cdrb, sample_gaussian
from .env import MazeSpec
from .expert import generate_demo
from .normalize import Normalizer

STATE_DIM = 4


def goal_states(goals: np.ndarray) -> np.ndarray:
    g = np.atleast_2d(np.asarray(goals, dtype=float))
    return np.concatenate([g[:, :2], np.zeros((len(g), 2))], axis=1)


def _endpoints(norm: Normalizer, starts, goals, include_actions: bool):
    s0 = np.atleast_2d(np.asarray(starts, dtype=float))[:, :STATE_DIM]
    sT = goal_states(goals)
    if include_actions:
        zero = np.zeros((len(s0), norm.dim - STATE_DIM))
        s0 = np.concatenate([s0, zero], axis=1)
        sT = np.concatenate([sT, zero], axis=1)
    return norm.normalize(s0), norm.normalize(sT)


def _to_world(norm: Normalizer, X: np.ndarray, starts, goals) -> np.ndarray:
    W = norm.denormalize(X)[..., :STATE_DIM].copy()
    W[:, 0] = np.atleast_2d(starts)[:, :STATE_DIM]
    W[:, -1] = goal_states(goals)
    return W


class CDRBPlanner:
    def __init__(self, net, buf: ReplayBuffer, cfg: SamplerConfig, norm: Normalizer, name: str = "cdrb"):
        self.net, self.buf, self.cfg, self.norm, self.name = net, buf, cfg, norm, name
        self.include_actions = buf.dim > STATE_DIM

    def plan_batch(self, starts, goals, rng, callback=None) -> np.ndarray:
        s0, sT = _endpoints(self.norm, starts, goals, self.include_actions)
        X = sample_cdrb(self.net, self.buf, self.cfg, s0, sT, rng, callback=callback)
        return _to_world(self.norm, X, starts, goals)


class GaussianPlanner:
    def __init__(self, net, noise: NoiseSchedule, norm: Normalizer, clip: bool = True, name: str = "gaussian"):
        self.net, self.noise, self.norm, self.clip, self.name = net, noise, norm, clip, name
        self.include_actions = net.state_dim > STATE_DIM

    def plan_batch(self, starts, goals, rng, callback=None) -> np.ndarray:
        s0, sT = _endpoints(self.norm, starts, goals, self.include_actions)
        X = sample_gaussian(self.net, self.noise, s0, sT, rng, clip=self.clip, callback=callback)
        return _to_world(self.norm, X, starts, goals)


def straight_line(starts, goals, horizon: int, dt: float) -> np.ndarray:
    """Constant-velocity world-state lines from each start position to its goal."""
    s0 = np.atleast_2d(np.asarray(starts, dtype=float))[:, :2]
    g = np.atleast_2d(np.asarray(goals, dtype=float))[:, :2]
    frac = np.linspace(0.0, 1.0, horizon + 1)[None, :, None]
    pos = s0[:, None, :] + frac * (g - s0)[:, None, :]
    vel = np.broadcast_to(((g - s0) / (horizon * dt))[:, None, :], pos.shape)
    return np.concatenate([pos, vel], axis=2)


class ProjectionPlanner:
    """Straight line between the endpoints, every entry snapped to its nearest buffer state."""

    def __init__(self, buf: ReplayBuffer, norm: Normalizer, horizon: int, dt: float, name: str = "projection"):
        self.buf, self.norm, self.horizon, self.dt, self.name = buf, norm, horizon, dt, name

    def plan_batch(self, starts, goals, rng=None, callback=None) -> np.ndarray:
        line = straight_line(starts, goals, self.horizon, self.dt)
        Z = self.norm.normalize(line)
        snapped = project_trajectory(Z, _state_view(self.buf))
        return _to_world(self.norm, snapped, starts, goals)


def _state_view(buf: ReplayBuffer) -> ReplayBuffer:
    if buf.dim == buf.state_dim:
        return buf
    return ReplayBuffer(buf.points[:, : buf.state_dim], d_max=buf.d_max, backend=buf.backend)


class ExpertPlanner:
    """Oracle: a fresh scripted-expert demonstration for each episode."""

    name = "expert"

    def __init__(self, maze: MazeSpec):
        self.maze = maze

    def plan_batch(self, starts, goals, rng=None, callback=None) -> list[np.ndarray]:
        plans = []
        for s, g in zip(np.atleast_2d(starts), np.atleast_2d(goals)):
            demo = generate_demo(self.maze, s, g).states
            if len(demo) < 2:
                demo = np.concatenate([demo, demo])
            plans.append(demo)
        return plans


class BlindPlanner:
    """Stays put: the start state repeated over the horizon."""

    name = "blind"

    def __init__(self, horizon: int):
        self.horizon = horizon

    def plan_batch(self, starts, goals, rng=None, callback=None) -> np.ndarray:
        s0 = np.atleast_2d(np.asarray(starts, dtype=float))[:, :STATE_DIM]
        return np.repeat(s0[:, None, :], self.horizon + 1, axis=1)
