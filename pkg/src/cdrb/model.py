"""Restoration networks with hand-written reverse-mode gradients, and Adam.

All parameters live in one flat float64 vector; named views into it are laid
out in a fixed declared order, which is also the checkpoint order.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NonFiniteLoss, SizeMismatch, StepOutOfRange

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(z: np.ndarray) -> np.ndarray:
    return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z**3)))


def gelu_grad(z: np.ndarray) -> np.ndarray:
    u = _GELU_C * (z + 0.044715 * z**3)
    th = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * z**2)
    return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th**2) * du


class _FlatParams:
    """Holds ``self.params`` and named reshaped views over it."""

    def _allocate(self, layout: list[tuple[str, tuple[int, ...]]]):
        self.layout = layout
        total = sum(int(np.prod(shape)) for _, shape in layout)
        self.params = np.zeros(total)
        self.views = self._views_of(self.params)

    def _views_of(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        views, off = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            views[name] = flat[off : off + size].reshape(shape)
            off += size
        return views

    @property
    def n_params(self) -> int:
        return self.params.size

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self.params.shape:
            raise SizeMismatch(f"expected {self.params.size} parameters, got {flat.size}")
        self.params[...] = flat

    def _check(self, x: np.ndarray, k) -> tuple[np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_size:
            raise SizeMismatch(f"input size {x.shape[1]} != {self.input_size}")
        k = np.broadcast_to(np.asarray(k, dtype=np.int64), (len(x),))
        if np.any(k < 0) or np.any(k > self.t):
            raise StepOutOfRange(f"step outside [0, {self.t}]")
        return x, k, single

    def forward(self, x, k) -> np.ndarray:
        x, k, single = self._check(x, k)
        out, _ = self._forward(x, k)
        return out[0] if single else out

    def __call__(self, x, k) -> np.ndarray:
        return self.forward(x, k)

    def loss_and_grad(self, noisy, clean, k, weights=None) -> tuple[float, np.ndarray]:
        """Mean squared error over every output coordinate and its parameter gradient.

        ``weights`` optionally scales each batch row's squared error.
        """
        x, k, _ = self._check(noisy, k)
        target = np.asarray(clean, dtype=float).reshape(x.shape)
        if len(x) == 0:
            raise ValueError("empty batch")
        out, cache = self._forward(x, k)
        r = out - target
        wr = r if weights is None else np.asarray(weights, dtype=float).reshape(-1, 1) * r
        loss = float(np.mean(wr * r))
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss is {loss}")
        grad = self._backward(cache, 2.0 * wr / r.size)
        return loss, grad


class RestorationNet(_FlatParams):
    """Residual MLP over a flattened trajectory plus a learned step embedding.

    ``forward(x, k)`` returns ``x + correction(x, k)`` (or only the correction
    when ``residual`` is false).
    The correction is an MLP plus a zero-initialised per-step gain ``gain[k] * x``,
    which lets each step rescale or cancel its input directly; without it the net
    is slow to fit maps close to ``c - x``.
    """

    arch = "mlp"

    def __init__(
        self,
        horizon: int,
        state_dim: int,
        t: int,
        hidden: tuple[int, ...] = (512, 512, 512),
        emb_dim: int = 32,
        residual: bool = True,
        rng: np.random.Generator | None = None,
        zero_head: bool = True,
    ):
        if horizon < 1 or state_dim < 1 or t < 1 or not hidden:
            raise ConfigError("invalid network shape")
        self.horizon, self.state_dim, self.t = horizon, state_dim, t
        self.hidden, self.emb_dim, self.residual = tuple(int(h) for h in hidden), emb_dim, residual
        self.input_size = (horizon + 1) * state_dim
        self._allocate(self.param_layout(self.input_size, self.hidden, emb_dim, t))
        self.init(rng if rng is not None else np.random.default_rng(0), zero_head)

    @staticmethod
    def param_layout(D, hidden, emb_dim, t):
        layout = [("emb", (t + 1, emb_dim))]
        fan_in = D + emb_dim
        for i, h in enumerate(hidden):
            layout += [(f"W{i}", (fan_in, h)), (f"b{i}", (h,))]
            fan_in = h
        layout += [("Wout", (fan_in, D)), ("bout", (D,)), ("gain", (t + 1, D))]
        return layout

    @staticmethod
    def expected_param_count(horizon, state_dim, t, hidden, emb_dim) -> int:
        D = (horizon + 1) * state_dim
        widths = [D + emb_dim, *hidden]
        body = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        return (t + 1) * emb_dim + body + hidden[-1] * D + D + (t + 1) * D

    def init(self, rng: np.random.Generator, zero_head: bool = True) -> None:
        v = self.views
        v["emb"][...] = rng.standard_normal(v["emb"].shape)
        for i in range(len(self.hidden)):
            W = v[f"W{i}"]
            W[...] = rng.standard_normal(W.shape) / math.sqrt(W.shape[0])
            v[f"b{i}"][...] = 0.0
        if zero_head:
            v["Wout"][...] = 0.0
        else:
            v["Wout"][...] = rng.standard_normal(v["Wout"].shape) / math.sqrt(v["Wout"].shape[0])
        v["bout"][...] = 0.0
        v["gain"][...] = 0.0

    def descriptor(self) -> dict:
        return {
            "arch": self.arch,
            "horizon": self.horizon,
            "state_dim": self.state_dim,
            "t": self.t,
            "hidden": list(self.hidden),
            "emb_dim": self.emb_dim,
            "residual": self.residual,
        }

    def _forward(self, x, k):
        v = self.views
        h = np.concatenate([x, v["emb"][k]], axis=1)
        inputs, pre = [], []
        for i in range(len(self.hidden)):
            inputs.append(h)
            z = h @ v[f"W{i}"] + v[f"b{i}"]
            pre.append(z)
            h = gelu(z)
        corr = h @ v["Wout"] + v["bout"] + v["gain"][k] * x
        out = x + corr if self.residual else corr
        return out, (k, inputs, pre, h)

    def _backward(self, cache, dout):
        k, inputs, pre, h_last = cache
        grad = np.zeros_like(self.params)
        g, v = self._views_of(grad), self.views
        g["Wout"][...] = h_last.T @ dout
        g["bout"][...] = dout.sum(axis=0)
        np.add.at(g["gain"], k, dout * inputs[0][:, : self.input_size])
        da = dout @ v["Wout"].T
        for i in reversed(range(len(self.hidden))):
            dz = da * gelu_grad(pre[i])
            g[f"W{i}"][...] = inputs[i].T @ dz
            g[f"b{i}"][...] = dz.sum(axis=0)
            da = dz @ v[f"W{i}"].T
        np.add.at(g["emb"], k, da[:, self.input_size :])
        return grad


class TemporalConvNet(_FlatParams):
    """1-D convolutions along the time axis; the step embedding is broadcast as extra channels."""

    arch = "conv"

    def __init__(
        self,
        horizon: int,
        state_dim: int,
        t: int,
        channels: int = 64,
        layers: int = 3,
        kernel: int = 5,
        emb_dim: int = 16,
        residual: bool = True,
        rng: np.random.Generator | None = None,
        zero_head: bool = True,
    ):
        if kernel % 2 == 0 or kernel < 1:
            raise ConfigError("kernel size must be odd")
        if horizon < 1 or state_dim < 1 or t < 1 or layers < 1:
            raise ConfigError("invalid network shape")
        self.horizon, self.state_dim, self.t = horizon, state_dim, t
        self.channels, self.layers, self.kernel = channels, layers, kernel
        self.emb_dim, self.residual = emb_dim, residual
        self.input_size = (horizon + 1) * state_dim
        self._allocate(self.param_layout(state_dim, channels, layers, kernel, emb_dim, t))
        self.init(rng if rng is not None else np.random.default_rng(0), zero_head)

    @staticmethod
    def param_layout(d, channels, layers, kernel, emb_dim, t):
        layout = [("emb", (t + 1, emb_dim))]
        c_in = d + emb_dim
        for i in range(layers):
            layout += [(f"W{i}", (kernel * c_in, channels)), (f"b{i}", (channels,))]
            c_in = channels
        layout += [("Wout", (kernel * c_in, d)), ("bout", (d,))]
        return layout

    @staticmethod
    def expected_param_count(state_dim, t, channels, layers, kernel, emb_dim) -> int:
        first = kernel * (state_dim + emb_dim) * channels + channels
        rest = (layers - 1) * (kernel * channels * channels + channels)
        return (t + 1) * emb_dim + first + rest + kernel * channels * state_dim + state_dim

    def init(self, rng, zero_head=True):
        v = self.views
        v["emb"][...] = rng.standard_normal(v["emb"].shape)
        for i in range(self.layers):
            W = v[f"W{i}"]
            W[...] = rng.standard_normal(W.shape) / math.sqrt(W.shape[0])
            v[f"b{i}"][...] = 0.0
        if zero_head:
            v["Wout"][...] = 0.0
        else:
            v["Wout"][...] = rng.standard_normal(v["Wout"].shape) / math.sqrt(v["Wout"].shape[0])
        v["bout"][...] = 0.0

    def descriptor(self) -> dict:
        return {
            "arch": self.arch,
            "horizon": self.horizon,
            "state_dim": self.state_dim,
            "t": self.t,
            "channels": self.channels,
            "layers": self.layers,
            "kernel": self.kernel,
            "emb_dim": self.emb_dim,
            "residual": self.residual,
        }

    def _im2col(self, H):
        p = self.kernel // 2
        T = H.shape[1]
        Hp = np.pad(H, ((0, 0), (p, p), (0, 0)))
        cols = np.stack([Hp[:, j : j + T, :] for j in range(self.kernel)], axis=2)
        return cols.reshape(H.shape[0], T, -1)

    def _col2im(self, dcols, C):
        p = self.kernel // 2
        B, T, _ = dcols.shape
        dcols = dcols.reshape(B, T, self.kernel, C)
        dHp = np.zeros((B, T + 2 * p, C))
        for j in range(self.kernel):
            dHp[:, j : j + T, :] += dcols[:, :, j, :]
        return dHp[:, p : p + T, :]

    def _forward(self, x, k):
        v = self.views
        B, T, d = len(x), self.horizon + 1, self.state_dim
        X = x.reshape(B, T, d)
        E = np.broadcast_to(v["emb"][k][:, None, :], (B, T, self.emb_dim))
        h = np.concatenate([X, E], axis=2)
        cols_list, pre = [], []
        for i in range(self.layers):
            cols = self._im2col(h)
            cols_list.append(cols)
            z = cols @ v[f"W{i}"] + v[f"b{i}"]
            pre.append(z)
            h = gelu(z)
        cols = self._im2col(h)
        corr = (cols @ v["Wout"] + v["bout"]).reshape(B, -1)
        out = x + corr if self.residual else corr
        return out, (k, cols_list, pre, cols)

    def _backward(self, cache, dout):
        k, cols_list, pre, cols_out = cache
        v = self.views
        grad = np.zeros_like(self.params)
        g = self._views_of(grad)
        B, T = dout.shape[0], self.horizon + 1
        dY = dout.reshape(B, T, self.state_dim)
        g["Wout"][...] = cols_out.reshape(B * T, -1).T @ dY.reshape(B * T, -1)
        g["bout"][...] = dY.sum(axis=(0, 1))
        dh = self._col2im(dY @ v["Wout"].T, self.channels)
        for i in reversed(range(self.layers)):
            dz = dh * gelu_grad(pre[i])
            cols = cols_list[i]
            g[f"W{i}"][...] = cols.reshape(B * T, -1).T @ dz.reshape(B * T, -1)
            g[f"b{i}"][...] = dz.sum(axis=(0, 1))
            c_in = self.channels if i > 0 else self.state_dim + self.emb_dim
            dh = self._col2im(dz @ v[f"W{i}"].T, c_in)
        np.add.at(g["emb"], k, dh[:, :, self.state_dim :].sum(axis=1))
        return grad


def make_net(descriptor: dict, rng: np.random.Generator | None = None):
    d = dict(descriptor)
    arch = d.pop("arch")
    if arch == "mlp":
        d["hidden"] = tuple(d["hidden"])
        return RestorationNet(rng=rng, **d)
    if arch == "conv":
        return TemporalConvNet(rng=rng, **d)
    raise ConfigError(f"unknown architecture {arch!r}")


class Adam:
    """Adaptive-moment optimiser with bias correction over a flat parameter vector."""

    def __init__(self, n_params: int, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Update ``params`` in place and return it."""
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise SizeMismatch(f"optimizer expects shape {self.m.shape}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grads
        self.v *= b2
        self.v += (1 - b2) * grads * grads
        m_hat = self.m / (1 - b1**self.step_count)
        v_hat = self.v / (1 - b2**self.step_count)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def cosine_lr(base: float, step: int, total: int) -> float:
    """Learning rate after update ``step`` (0-based) of ``total`` under cosine annealing to zero."""
    return base * 0.5 * (1.0 + math.cos(math.pi * (step + 1) / total))


def adam_step(opt: Adam, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    return opt.step(params, grads)
