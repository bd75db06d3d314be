"""Cold diffusion on the replay buffer, and the Gaussian diffusion baseline.

Trajectory batches are arrays of shape ``(B, T, D)`` in normalised coordinates
with ``T = H + 1``. Entry 0 is the start and entry ``T - 1`` the goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .buffer import ReplayBuffer
from .errors import ConfigError, DimensionMismatch, HorizonMismatch, NonFiniteOutput, StepOutOfRange
from .model import Adam
from .schedule import DistanceSchedule

SAMPLERS = ("alg2", "eq5")


@dataclass
class NoisyTrajectory:
    entries: np.ndarray  # (T, D)
    step: int
    pinned: tuple[bool, bool]
    indices: np.ndarray  # buffer index per entry, -1 where the clean entry was kept


@dataclass(frozen=True)
class SamplerConfig:
    schedule: DistanceSchedule
    sampler_kind: str = "alg2"
    pin_endpoints: bool = True

    def __post_init__(self):
        if self.sampler_kind not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler_kind!r}; choose from {SAMPLERS}")

    @property
    def t(self) -> int:
        return self.schedule.t


def _interior_mask(T: int, pin: bool) -> np.ndarray:
    mask = np.ones(T, dtype=bool)
    if pin:
        mask[0] = mask[-1] = False
    return mask


# ---------------------------------------------------------------------------
# degradation


def degrade_batch(
    X: np.ndarray,
    ks,
    buf: ReplayBuffer,
    sched: DistanceSchedule,
    rng: np.random.Generator,
    pin: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Replace every (non-pinned) entry by a buffer point from its ``eps_k`` ball.

    Returns the degraded batch and the buffer index chosen per entry (-1 where pinned).
    """
    X = np.asarray(X, dtype=float)
    B, T, D = X.shape
    if D != buf.dim:
        raise DimensionMismatch(f"trajectory dim {D} != buffer dim {buf.dim}")
    ks = np.broadcast_to(np.asarray(ks), (B,))
    if np.any(ks < 0) or np.any(ks > sched.t):
        raise StepOutOfRange(f"step outside [0, {sched.t}]")
    eps = np.broadcast_to(np.asarray(sched.epsilon(ks), dtype=float)[:, None], (B, T))
    mask = np.broadcast_to(_interior_mask(T, pin), (B, T))
    idx = np.full((B, T), -1, dtype=np.int64)
    idx[mask] = buf.ball_sample_indices(X[mask], eps[mask], rng)
    out = X.copy()
    out[mask] = buf.points[idx[mask]]
    return out, idx


def degrade_cdrb(
    traj0: np.ndarray,
    k: int,
    buf: ReplayBuffer,
    sched: DistanceSchedule,
    rng: np.random.Generator,
    pin: bool = True,
) -> NoisyTrajectory:
    X = np.asarray(traj0, dtype=float)
    out, idx = degrade_batch(X[None], np.array([k]), buf, sched, rng, pin)
    return NoisyTrajectory(out[0], int(k), (pin, pin), idx[0])


def project_trajectory(X: np.ndarray, buf: ReplayBuffer) -> np.ndarray:
    """Snap every entry to its nearest buffer point."""
    X = np.asarray(X, dtype=float)
    flat = X.reshape(-1, X.shape[-1])
    return buf.points[buf.nearest_index(flat)].reshape(X.shape[:-1] + (buf.dim,))


# ---------------------------------------------------------------------------
# restoration training and sampling


def train_restoration(
    data: np.ndarray,
    buf: ReplayBuffer,
    sched: DistanceSchedule,
    net,
    opt: Adam,
    steps: int,
    batch: int,
    rng: np.random.Generator,
    pin: bool = True,
    callback: Callable[[int, float], None] | None = None,
) -> np.ndarray:
    """Fit ``net`` to map degraded trajectories back to clean ones; returns per-step losses.

    Steps ``k < t`` use the ball degradation. Step ``t`` is trained on the sampler's
    own starting point, independent uniform buffer draws, because the ``eps_t`` ball
    does not cover the buffer from its corners and the first reverse step would
    otherwise see inputs the net was never fitted on.
    """
    data = np.asarray(data, dtype=float)
    n, T, D = data.shape
    if T != net.horizon + 1 or D != net.state_dim:
        raise HorizonMismatch(f"data shape (T={T}, D={D}) does not match network ({net.horizon + 1}, {net.state_dim})")
    if net.t != sched.t:
        raise ConfigError(f"network built for t={net.t}, schedule has t={sched.t}")
    losses = np.empty(steps)
    for i in range(steps):
        clean = data[rng.integers(n, size=batch)]
        ks = rng.integers(1, sched.t + 1, size=batch)
        noisy, _ = degrade_batch(clean, ks, buf, sched, rng, pin)
        full = ks == sched.t
        if full.any():
            noisy[full] = uniform_draw(clean[full], buf, rng, pin)[0]
        loss, grad = net.loss_and_grad(noisy.reshape(batch, -1), clean.reshape(batch, -1), ks)
        opt.step(net.params, grad)
        losses[i] = loss
        if callback is not None:
            callback(i, loss)
    return losses


def uniform_draw(X: np.ndarray, buf: ReplayBuffer, rng: np.random.Generator, pin: bool = True):
    """Full degradation: every (non-pinned) entry an independent uniform buffer point."""
    B, T = X.shape[:2]
    idx = rng.integers(len(buf), size=(B, T))
    out = buf.points[idx].copy()
    if pin:
        _pin(out, X[:, 0], X[:, -1])
        idx[:, 0] = idx[:, -1] = -1
    return out, idx


def _pin(X: np.ndarray, s0: np.ndarray, sT: np.ndarray) -> None:
    X[:, 0] = s0
    X[:, -1] = sT


def sample_cdrb(
    net,
    buf: ReplayBuffer,
    cfg: SamplerConfig,
    s0: np.ndarray,
    sT: np.ndarray,
    rng: np.random.Generator,
    callback: Callable[[int, np.ndarray, np.ndarray | None], None] | None = None,
) -> np.ndarray:
    """Generate ``B`` trajectories between pinned endpoints by iterated restore/degrade.

    ``s0`` and ``sT`` are ``(B, D)`` (or ``(D,)`` for one plan). ``callback(k, X, idx)``
    sees every intermediate ``tau(k)``, ``k = t .. 0``, with the buffer indices of its
    entries (``idx`` is None for the eq5 sampler, whose iterates leave the buffer).
    Returns the last restoration estimate with endpoints pinned.
    """
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    sT = np.atleast_2d(np.asarray(sT, dtype=float))
    B, D, T = len(s0), buf.dim, net.horizon + 1
    if s0.shape[1] != D or sT.shape != s0.shape:
        raise DimensionMismatch("endpoint dims must match the buffer")
    if net.t != cfg.t:
        raise ConfigError(f"network built for t={net.t}, sampler has t={cfg.t}")
    pin = cfg.pin_endpoints
    sched = cfg.schedule
    ends = np.zeros((B, T, D))
    ends[:, 0], ends[:, -1] = s0, sT
    X, idx = uniform_draw(ends, buf, rng, pin)
    if callback is not None:
        callback(cfg.t, X, idx)
    mask = _interior_mask(T, pin)
    X0 = X
    for k in range(cfg.t, 0, -1):
        X0 = net.forward(X.reshape(B, -1), k).reshape(B, T, D)
        if not np.all(np.isfinite(X0)):
            raise NonFiniteOutput(f"restoration produced non-finite values at step {k}")
        if cfg.sampler_kind == "alg2":
            X, idx = degrade_batch(X0, k - 1, buf, sched, rng, pin)
        else:
            centers = X0[:, mask].reshape(-1, D)
            u = rng.random(len(centers))
            a, b = buf.ranked_pair_indices(centers, sched.epsilon(k), sched.epsilon(k - 1), u)
            X = X.copy()
            X[:, mask] = X[:, mask] - buf.points[a].reshape(B, -1, D) + buf.points[b].reshape(B, -1, D)
            idx = None
        if pin:
            _pin(X, s0, sT)
        if callback is not None:
            callback(k - 1, X, idx)
    out = X0.copy()
    if pin:
        _pin(out, s0, sT)
    return out


# ---------------------------------------------------------------------------
# Gaussian baseline


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule given by cumulative signal fractions ``alpha_bar[0..t]``."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        if ab.ndim != 1 or len(ab) < 2 or ab[0] != 1.0:
            raise ConfigError("alpha_bar must start at 1 and cover steps 0..t")
        if np.any(np.diff(ab) > 0) or np.any(ab < 0):
            raise ConfigError("alpha_bar must be non-increasing in [0, 1]")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def t(self) -> int:
        return len(self.alpha_bar) - 1

    def alpha(self, k):
        return np.sqrt(self.alpha_bar[k])

    def sigma(self, k):
        return np.sqrt(1.0 - self.alpha_bar[k])

    @classmethod
    def cosine(cls, t: int, s: float = 0.008, max_beta: float = 0.999) -> "NoiseSchedule":
        f = np.cos((np.arange(t + 1) / t + s) / (1 + s) * math.pi / 2) ** 2
        raw = f / f[0]
        betas = np.minimum(1.0 - raw[1:] / raw[:-1], max_beta)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @classmethod
    def zero_noise(cls, t: int) -> "NoiseSchedule":
        return cls(np.ones(t + 1))


def gaussian_forward(X0: np.ndarray, k, noise: NoiseSchedule, rng: np.random.Generator):
    """``alpha(k) X0 + sigma(k) z``; returns the noisy batch and ``z``."""
    X0 = np.asarray(X0, dtype=float)
    ks = np.asarray(k)
    if np.any(ks < 0) or np.any(ks > noise.t):
        raise StepOutOfRange(f"step outside [0, {noise.t}]")
    shape = (-1,) + (1,) * (X0.ndim - 1) if ks.ndim else ()
    a = np.reshape(noise.alpha(ks), shape)
    s = np.reshape(noise.sigma(ks), shape)
    z = rng.standard_normal(X0.shape)
    return a * X0 + s * z, z


def train_gaussian(
    data: np.ndarray,
    noise: NoiseSchedule,
    net,
    opt: Adam,
    steps: int,
    batch: int,
    rng: np.random.Generator,
    pin: bool = True,
    callback: Callable[[int, float], None] | None = None,
) -> np.ndarray:
    """Noise-prediction training with uniform step weighting; pinned entries stay clean.

    The network returns a clean-trajectory estimate ``x0_hat`` and the noise
    estimate is derived from it, ``eps_hat = (x - alpha_k x0_hat) / sigma_k``.
    The noise-prediction error then equals ``(alpha_k / sigma_k)^2 |x0_hat - x0|^2``,
    which is the loss minimised here. A direct noise head has to output values of
    order ``1 / sigma_k`` at low noise and trains far more slowly.
    """
    data = np.asarray(data, dtype=float)
    n, T, D = data.shape
    if T != net.horizon + 1 or D != net.state_dim:
        raise HorizonMismatch(f"data shape (T={T}, D={D}) does not match network")
    if net.t != noise.t:
        raise ConfigError(f"network built for t={net.t}, noise schedule has t={noise.t}")
    if np.any(noise.alpha_bar[1:] >= 1.0):
        raise ConfigError("training needs positive noise at every step k >= 1")
    losses = np.empty(steps)
    for i in range(steps):
        clean = data[rng.integers(n, size=batch)]
        ks = rng.integers(1, noise.t + 1, size=batch)
        noisy, _ = gaussian_forward(clean, ks, noise, rng)
        if pin:
            # endpoints stay clean, as the sampler pins them
            noisy[:, 0], noisy[:, -1] = clean[:, 0], clean[:, -1]
        w = (noise.alpha(ks) / noise.sigma(ks)) ** 2
        loss, grad = net.loss_and_grad(noisy.reshape(batch, -1), clean.reshape(batch, -1), ks, weights=w)
        opt.step(net.params, grad)
        losses[i] = loss
        if callback is not None:
            callback(i, loss)
    return losses


def sample_gaussian(
    net,
    noise: NoiseSchedule,
    s0: np.ndarray,
    sT: np.ndarray,
    rng: np.random.Generator,
    pin: bool = True,
    clip: bool = True,
    init: np.ndarray | None = None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Ancestral sampling from pure noise with endpoints re-pinned after every step.

    ``net(x, k)`` is the clean-trajectory estimate that ``train_gaussian`` fits.
    """
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    sT = np.atleast_2d(np.asarray(sT, dtype=float))
    B, D, T = len(s0), s0.shape[1], net.horizon + 1
    if net.t != noise.t:
        raise ConfigError(f"network built for t={net.t}, noise schedule has t={noise.t}")
    X = rng.standard_normal((B, T, D)) if init is None else np.array(init, dtype=float).reshape(B, T, D)
    if pin:
        _pin(X, s0, sT)
    if callback is not None:
        callback(noise.t, X)
    ab = noise.alpha_bar
    for k in range(noise.t, 0, -1):
        var_k = 1.0 - ab[k]
        if var_k > 0:
            x0 = net.forward(X.reshape(B, -1), k).reshape(B, T, D)
            if clip:
                x0 = np.clip(x0, -1.0, 1.0)
            beta = 1.0 - ab[k] / ab[k - 1]
            mean = (math.sqrt(ab[k - 1]) * beta / var_k) * x0 + (
                math.sqrt(1.0 - beta) * (1.0 - ab[k - 1]) / var_k
            ) * X
            var = beta * (1.0 - ab[k - 1]) / var_k
            X = mean + (math.sqrt(var) * rng.standard_normal(X.shape) if k > 1 and var > 0 else 0.0)
            if not np.all(np.isfinite(X)):
                raise NonFiniteOutput(f"Gaussian sampler produced non-finite values at step {k}")
        else:
            X = X.copy()
        if pin:
            _pin(X, s0, sT)
        if callback is not None:
            callback(k - 1, X)
    return X
