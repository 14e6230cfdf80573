"""Parameter containers and the neural building blocks used by every model."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ContractViolation
from . import tensor as T
from .ops import conv2d, lstm
from .tensor import Tensor, get_default_dtype


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Variance-preserving init for tanh/sigmoid-facing weights."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Variance-preserving init for weights followed by a ReLU."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=get_default_dtype())


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Base class; parameters are discovered by walking instance attributes."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in self._children():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            else:
                out.update(value.named_parameters(prefix=f"{key}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ContractViolation(f"state is missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ContractViolation(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def zero_parameters(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        if zero:
            self.weight = parameter(np.zeros((n_in, n_out), dtype=get_default_dtype()))
            self.bias = parameter(np.zeros(n_out, dtype=get_default_dtype()))
        else:
            self.weight = parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out))
            self.bias = parameter(zeros(n_out))

    def forward(self, x):
        return x @ self.weight + self.bias


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel=(3, 3),
        rng: np.random.Generator | None = None,
        dilation=(1, 1),
        stride=(1, 1),
        zero: bool = False,
    ):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        shape = (c_out, c_in, kh, kw)
        fan_in = c_in * kh * kw
        if zero:
            self.weight = parameter(np.zeros(shape, dtype=get_default_dtype()))
            self.bias = parameter(np.zeros(c_out, dtype=get_default_dtype()))
        else:
            self.weight = parameter(he_uniform(rng, shape, fan_in))
            self.bias = parameter(zeros(c_out))
        self.dilation = dilation
        self.stride = stride

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, dilation=self.dilation, stride=self.stride)


class LSTM(Module):
    """One direction of one recurrent layer."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_ih = parameter(glorot_uniform(rng, (n_in, 4 * hidden), n_in, hidden))
        self.w_hh = parameter(glorot_uniform(rng, (hidden, 4 * hidden), hidden, hidden))
        # gate order i, f, g, o; a unit forget bias keeps early gradients flowing through time
        bias = zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        self.bias = parameter(bias)

    def forward(self, x, reverse: bool = False):
        return lstm(x, self.w_ih, self.w_hh, self.bias, reverse=reverse)


class BiLSTM(Module):
    """Stacked bidirectional LSTM with an optional tanh projection after each layer.

    Input (B, T, D).  Returns ``(outputs, last_fwd, last_bwd)`` where
    ``last_fwd`` is the top layer's forward state after the final frame and
    ``last_bwd`` the backward state after the first frame.
    """

    def __init__(
        self,
        n_in: int,
        hidden: int,
        layers: int,
        rng: np.random.Generator,
        projection: int | None = None,
    ):
        self.fwd = []
        self.bwd = []
        self.proj = []
        size = n_in
        for _ in range(layers):
            self.fwd.append(LSTM(size, hidden, rng))
            self.bwd.append(LSTM(size, hidden, rng))
            if projection:
                self.proj.append(Dense(2 * hidden, projection, rng))
                size = projection
            else:
                size = 2 * hidden
        self.out_dim = size

    def forward(self, x):
        if x.shape[1] < 1:
            raise ContractViolation("BiLSTM needs at least one frame")
        h = x
        for layer, (f, b) in enumerate(zip(self.fwd, self.bwd)):
            hf = f(h)
            hb = b(h, reverse=True)
            h = T.concat([hf, hb], axis=-1)
            if self.proj:
                h = T.tanh(self.proj[layer](h))
        return h, hf[:, -1], hb[:, 0]


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator):
        self.table = parameter(uniform_init(rng, (n, dim), dim))

    def forward(self, ids):
        return self.table[np.asarray(ids, dtype=np.int64)]


class SequenceNorm(Module):
    """Batch-norm run in per-sequence mode: statistics over the length axis.

    Input (B, C, L); each (sequence, channel) row is standardised then scaled.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        self.scale = parameter(np.ones(channels, dtype=get_default_dtype()))
        self.shift = parameter(np.zeros(channels, dtype=get_default_dtype()))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / T.sqrt(var + self.eps)
        return normed * self.scale[:, None] + self.shift[:, None]
