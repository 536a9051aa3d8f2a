"""Small module system over the tensor ops: parameter registration + common layers.

Weight init follows N(0, 0.02) for linear/conv weights and zeros for biases;
layers that must start as the identity map of their input (decoder heads)
pass zero_init=True.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class; submodules and Tensors assigned as attributes are tracked."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters plus persistent buffers (running stats), for checkpoints."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            out[name] = buf
        return out

    def named_buffers(self, prefix: str = ""):
        for name, buf in getattr(self, "_buffers", {}).items():
            yield (prefix + name, buf)
        for name, mod in self._modules.items():
            yield from mod.named_buffers(prefix + name + ".")

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        if not hasattr(self, "_buffers"):
            object.__setattr__(self, "_buffers", {})
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data[...] = arrays[name]
        for name, buf in self.named_buffers():
            buf[...] = arrays[name]


def param(shape, rng: np.random.Generator | None = None, std: float = 0.02,
          zero: bool = False, fill: float | None = None) -> Tensor:
    if zero:
        data = np.zeros(shape, dtype=np.float32)
    elif fill is not None:
        data = np.full(shape, fill, dtype=np.float32)
    elif rng is not None:
        data = (rng.standard_normal(shape) * std).astype(np.float32)
    else:
        data = np.zeros(shape, dtype=np.float32)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        self.w = param((din, dout), rng, zero=zero_init)
        self.b = param((dout,), zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0):
        super().__init__()
        self.w = param((cout, cin, k, k), rng)
        self.b = param((cout,), zero=True)
        self.stride, self.pad = stride, pad

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        return T.add_channel_bias(y, self.b)


class ConvTranspose2d(Module):
    """Fixed 4x4 / stride-2 / pad-1 upsampler (exactly doubles H and W)."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.w = param((cin, cout, 4, 4), rng)
        self.b = param((cout,), zero=True)

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv_transpose2d(x, self.w)
        return T.add_channel_bias(y, self.b)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = param((d,), fill=1.0)
        self.beta = param((d,), zero=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = param((c,), fill=1.0)
        self.beta = param((c,), zero=True)
        self.register_buffer("running_mean", np.zeros(c, dtype=np.float32))
        self.register_buffer("running_var", np.ones(c, dtype=np.float32))
        self.eps, self.momentum = eps, momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, training, self.momentum, self.eps)


class SelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.attention(self.wq(x), self.wk(x), self.wv(x), self.heads,
                           wo=self.wo.w, bo=self.wo.b)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(LN(x)), then x + mlp(LN(x)); GELU MLP, ratio 4."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4):
        super().__init__()
        self.ln1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, d * mlp_ratio, rng)
        self.fc2 = Linear(d * mlp_ratio, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x)))
        h = self.fc2(T.gelu(self.fc1(self.ln2(x))))
        return T.add(x, h)
