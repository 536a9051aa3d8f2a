"""Reverse-mode autodiff over float32 numpy buffers.

A Tensor wraps a C-contiguous float32 ndarray plus the tape metadata needed
for a reverse sweep: its parent tensors and a closure that maps the incoming
output gradient to per-parent gradients. The tape is rebuilt on every forward
pass; grad() runs one topological sweep from a scalar output.

Broadcasting is deliberately restricted: elementwise ops accept equal shapes,
a python scalar, or a trailing-suffix operand (bias add). Anything else is a
ShapeError so shape bugs fail loudly instead of silently broadcasting.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

_DEBUG_FINITE = False


def set_debug(enabled: bool) -> None:
    """Toggle post-op finiteness assertions (slow; for tests/debugging)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """float32 array + tape node. Immutable after creation except via optimizer steps."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}, data={self.data!r})"

    # arithmetic sugar; all routed through the op functions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Create a non-leaf tensor. `backward(g)` returns one grad array per parent.

    Strided (non-contiguous) float32 outputs are kept as-is; ops that need
    contiguity (reshape) make their own copies.
    """
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float32 else np.asarray(data, np.float32)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    if _DEBUG_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by an op in debug mode")
    return out


def grad(scalar_output: Tensor, inputs: list[Tensor]) -> list[Tensor]:
    """Reverse-mode sweep from a scalar output; unreachable inputs get zero grads.

    Also stores the gradient on each input's .grad (accumulating if present),
    which is what the optimizer consumes.
    """
    if scalar_output.shape != ():
        raise ContractError(
            f"grad() needs a scalar output, got shape {scalar_output.shape}"
        )
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(scalar_output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(scalar_output): np.ones((), dtype=np.float32)}
    owned: set[int] = set()  # ids whose buffer we may accumulate into in place
    for node in reversed(topo):
        if node._backward is None:
            continue  # leaves keep their accumulated entry for collection below
        g = grads.pop(id(node), None)
        owned.discard(id(node))
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg)
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg
            else:
                if id(p) not in owned:
                    acc = acc.astype(np.float32, copy=True)
                    grads[id(p)] = acc
                    owned.add(id(p))
                acc += pg
    out: list[Tensor] = []
    for inp in inputs:
        g = grads.get(id(inp))
        if g is None:
            g = np.zeros(inp.shape, dtype=np.float32)
        g = np.ascontiguousarray(g, dtype=np.float32)
        if inp.grad is None:
            inp.grad = g.copy()
        else:
            inp.grad += g
        out.append(Tensor(g))
    return out


# ---------------------------------------------------------------------------
# elementwise / broadcast rules
# ---------------------------------------------------------------------------


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> str:
    """Classify the allowed broadcast: 'same' | 'suffix' | 'scalar_b' | 'scalar_a'."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar_b"
    if a.ndim == 0:
        return "scalar_a"
    if b.ndim < a.ndim and a.shape[a.ndim - b.ndim :] == b.shape:
        return "suffix"
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} vs {b.shape}")


def _reduce_suffix(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(range(g.ndim - len(shape)))
    return g.sum(axis=axes) if axes else g


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b)
    kind = _binary_shapes(a, b, "add")
    out = a.data + b.data

    def backward(g):
        ga = g if kind != "scalar_a" else np.float32(g.sum())
        if kind == "same":
            gb = g
        elif kind == "suffix":
            gb = _reduce_suffix(g, b.shape)
        elif kind == "scalar_b":
            gb = np.asarray(g.sum(), dtype=np.float32)
        else:
            gb = g
        if kind == "scalar_a":
            ga = np.asarray(g.sum(), dtype=np.float32)
        return ga, gb

    return _make(out, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b)
    kind = _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        if kind == "same":
            gb = -g
        elif kind == "suffix":
            gb = -_reduce_suffix(g, b.shape)
        elif kind == "scalar_b":
            gb = np.asarray(-g.sum(), dtype=np.float32)
        else:
            gb = -g
        ga = np.asarray(g.sum(), dtype=np.float32) if kind == "scalar_a" else g
        return ga, gb

    return _make(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b)
    kind = _binary_shapes(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = g * bd
        gb = g * ad
        if kind == "suffix":
            gb = _reduce_suffix(gb, b.shape)
        elif kind == "scalar_b":
            gb = np.asarray(gb.sum(), dtype=np.float32)
        elif kind == "scalar_a":
            ga = np.asarray(ga.sum(), dtype=np.float32)
        return ga, gb

    return _make(out, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b)
    kind = _binary_shapes(a, b, "div")
    out = a.data / b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        if kind == "suffix":
            gb = _reduce_suffix(gb, b.shape)
        elif kind == "scalar_b":
            gb = np.asarray(gb.sum(), dtype=np.float32)
        elif kind == "scalar_a":
            ga = np.asarray(ga.sum(), dtype=np.float32)
        return ga, gb

    return _make(out, (a, b), backward)


def pow_(a: Tensor, p: float) -> Tensor:
    out = a.data**p
    ad = a.data
    return _make(out, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (g * 2.0 * ad,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def abs_(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def minimum(a: Tensor, cap: float) -> Tensor:
    """Elementwise min with a constant; gradient is zero where clamped."""
    mask = a.data < cap
    out = np.where(mask, a.data, np.float32(cap))
    return _make(out, (a,), lambda g: (g * mask,))


def maximum(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor
    out = np.where(mask, a.data, np.float32(floor))
    return _make(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    ad = a.data
    out = np.where(ad >= 0, ad, np.float32(slope) * ad)
    return _make(out, (a,), lambda g: (g * np.where(ad >= 0, np.float32(1.0), np.float32(slope)),))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # tanh form avoids exp overflow on large |x|
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(np.float32)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_stable(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    # log1p(exp(x)) with the standard overflow-safe split
    ad = a.data
    out = np.where(ad > 20, ad, np.log1p(np.exp(np.minimum(ad, 20)))).astype(np.float32)
    sig = _sigmoid_stable(ad)
    return _make(out, (a,), lambda g: (g * sig,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Smooth GELU (tanh form), used inside transformer/decoder MLP blocks."""
    x = a.data
    x2 = x * x
    inner = x * x2
    inner *= np.float32(0.044715)
    inner += x
    inner *= np.float32(_GELU_C)
    t = np.tanh(inner)
    out = x * (t + 1.0)
    out *= np.float32(0.5)

    def backward(g):
        dinner = np.float32(3 * 0.044715) * x2
        dinner += 1.0
        dinner *= np.float32(_GELU_C)
        dt = (1.0 - t * t) * dinner
        dt *= x
        dt += 1.0 + t
        return (np.float32(0.5) * g * dt,)

    return _make(out, (a,), backward)


def activation(a: Tensor, kind: str) -> Tensor:
    """Dispatch by name; `kind` in {leaky_relu, sigmoid, softplus, tanh, gelu}."""
    table = {
        "leaky_relu": leaky_relu,
        "sigmoid": sigmoid,
        "softplus": softplus,
        "tanh": tanh,
        "gelu": gelu,
    }
    if kind not in table:
        raise ConfigError(f"unknown activation kind {kind!r}")
    return table[kind](a)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, shape),)

    return _make(np.asarray(out, dtype=np.float32), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[i] for i in axis]))
    else:
        n = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    data = a.data if a.data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(a.data)
    out = data.reshape(shape)
    return _make(out, (a,), lambda g: (np.ascontiguousarray(g).reshape(old),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(int(i) for i in np.argsort(axes))
    out = a.data.transpose(axes)
    return _make(out, (a,), lambda g: (g.transpose(inv),))


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    ref = datas[0].shape
    for d in datas[1:]:
        if d.shape[:axis] + d.shape[axis + 1 :] != ref[:axis] + ref[axis + 1 :]:
            raise ShapeError(f"concat: shapes {ref} vs {d.shape} differ off axis {axis}")
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(datas)):
            slicer[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            grads.append(np.ascontiguousarray(g[tuple(slicer)]))
        return tuple(grads)

    return _make(out, tuple(parts), backward)


def take(a: Tensor, idx) -> Tensor:
    """Basic slicing/int indexing; backward scatters into zeros."""
    out = a.data[idx]
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape, dtype=np.float32)
        ga[idx] = g
        return (ga,)

    return _make(np.ascontiguousarray(out), (a,), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup a[idx] for an integer index array; duplicates accumulate in backward."""
    idx = np.asarray(idx)
    out = a.data[idx]
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape, dtype=np.float32)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.ascontiguousarray(out), (a,), backward)


def scatter_rows(rows: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Place rows[i] at out[idx[i]] in a zero (n_rows, ...) tensor. idx must be unique."""
    idx = np.asarray(idx)
    out = np.zeros((n_rows,) + rows.shape[1:], dtype=np.float32)
    out[idx] = rows.data
    return _make(out, (rows,), lambda g: (np.ascontiguousarray(g[idx]),))


def expand0(a: Tensor, n: int) -> Tensor:
    """Tile a tensor n times along a new leading axis: (...,) -> (n, ...)."""
    out = np.broadcast_to(a.data, (n,) + a.shape).copy()
    return _make(out, (a,), lambda g: (g.sum(axis=0),))


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x (N, C, H, W) + per-channel bias b (C,); the conv-bias broadcast case."""
    if x.ndim != 4 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_channel_bias: x {x.shape} vs bias {b.shape}")
    out = x.data + b.data.reshape(1, -1, 1, 1)
    return _make(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))


def scale_lastdim(x: Tensor, r: Tensor) -> Tensor:
    """x (..., D) * r (..., 1): the keepdims-reduction broadcast (normalization)."""
    if r.shape != x.shape[:-1] + (1,):
        raise ShapeError(f"scale_lastdim: x {x.shape} needs r {x.shape[:-1] + (1,)}, got {r.shape}")
    out = x.data * r.data
    xd, rd = x.data, r.data

    def backward(g):
        return g * rd, (g * xd).sum(axis=-1, keepdims=True)

    return _make(out, (x, r), backward)


def normalize_lastdim(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm over the last axis."""
    sq = sum_(square(x), axis=-1, keepdims=True)
    return scale_lastdim(x, pow_(add(sq, eps), -0.5))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims disagree {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.swapaxes(-1, -2)
        gb = ad.swapaxes(-1, -2) @ g
        return ga, gb

    return _make(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w + b for x (..., Din), w (Din, Dout), b (Dout,)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: x {x.shape} incompatible with w {w.shape}")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match w {w.shape}")
        out = out + b.data
    xd, wd = x.data, w.data

    def backward(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if b is None:
            return gx, gw
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    e = np.exp(ad - m)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine scale/shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: params {gamma.shape}/{beta.shape} vs feature dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).astype(np.float32)

    def backward(g):
        gg = (g * xhat).reshape(-1, d).sum(axis=0)
        gb = g.reshape(-1, d).sum(axis=0)
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx.astype(np.float32), gg, gb

    return _make(out, (x, gamma, beta), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch norm over (N, C, H, W) or (N, C): stats per channel C.

    In training mode the per-channel reduction must cover >= 2 samples
    (a single-sample batch has no variance estimate); running statistics
    are updated in place and used verbatim in inference mode.
    """
    if x.ndim == 4:
        axes = (0, 2, 3)
        view = (1, -1, 1, 1)
    elif x.ndim == 2:
        axes = (0,)
        view = (1, -1)
    else:
        raise ShapeError(f"batch_norm: expected 2-D or 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: params {gamma.shape}/{beta.shape} vs channels {c}")
    xd = x.data
    if training:
        count = int(np.prod([xd.shape[i] for i in axes]))
        if count < 2:
            from .errors import DegenerateBatchError

            raise DegenerateBatchError(
                f"batch_norm: training step needs >=2 samples per channel, got {count}"
            )
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
        count = 0
    inv = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    xhat = (xd - mu.reshape(view)) * inv.reshape(view)
    out = (xhat * gamma.data.reshape(view) + beta.data.reshape(view)).astype(np.float32)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(view)
        if training:
            m = float(count)
            gx = (
                inv.reshape(view)
                * (
                    gxhat
                    - gxhat.mean(axis=axes).reshape(view)
                    - xhat * (gxhat * xhat).mean(axis=axes).reshape(view)
                )
            )
        else:
            gx = gxhat * inv.reshape(view)
        return gx.astype(np.float32), gg.astype(np.float32), gb.astype(np.float32)

    return _make(out, (x, gamma, beta), backward)


def normalize(x: Tensor, kind: str, gamma: Tensor, beta: Tensor, **kw) -> Tensor:
    """Unified entry point: kind in {layer, batch}."""
    if kind == "layer":
        return layer_norm(x, gamma, beta, eps=kw.get("eps", 1e-5))
    if kind == "batch":
        return batch_norm(x, gamma, beta, **kw)
    raise ConfigError(f"normalize: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _conv2d_raw(x: Tensor, w: Tensor, stride: int, pad: int) -> Tensor:
    n, c, h, wd_ = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {ci} (x {x.shape}, w {w.shape})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd_ + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # N,C,Ho,Wo,kh,kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(co, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    xd = x.data

    def backward(g):
        gcols = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, co)
        gw = (gcols.T @ cols).reshape(co, c, kh, kw)
        dcols = (gcols @ wmat).reshape(n, ho, wo, c, kh, kw)
        gx_pad = np.zeros((n, c, h + 2 * pad, wd_ + 2 * pad), dtype=np.float32)
        for i in range(kh):
            for j in range(kw):
                gx_pad[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gx_pad[:, :, pad : pad + h, pad : pad + wd_] if pad else gx_pad
        return np.ascontiguousarray(gx), gw

    return _make(np.ascontiguousarray(out), (x, w), backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation for 1x1 / 3x3 kernels; pad=1 keeps 3x3 stride-1 same-size."""
    if w.shape[2] not in (1, 3) or w.shape[2] != w.shape[3]:
        raise ConfigError(f"conv2d: only square 1x1 or 3x3 kernels supported, got {w.shape}")
    return _conv2d_raw(x, w, stride, pad)


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 2, pad: int = 1, k: int = 4) -> Tensor:
    """Transposed conv, fixed 4x4/stride-2/pad-1: doubles H and W exactly.

    Kernel layout is (Cin, Cout, 4, 4). Forward equals the gradient of the
    matching conv2d w.r.t. its input (transpose duality).
    """
    if (k, stride, pad) != (4, 2, 1):
        raise ConfigError(f"conv_transpose2d: unsupported config k={k} stride={stride} pad={pad}")
    n, ci, h, wd_ = x.shape
    wci, co, kh, kw = w.shape
    if (kh, kw) != (4, 4):
        raise ConfigError(f"conv_transpose2d: kernel must be 4x4, got {w.shape}")
    if wci != ci:
        raise ShapeError(f"conv_transpose2d: input channels {ci} != kernel channels {wci}")
    ho, wo = 2 * h, 2 * wd_
    opad = np.zeros((n, co, ho + 2, wo + 2), dtype=np.float32)
    xd = x.data
    wdta = w.data
    # scatter each kernel tap onto the stride-2 output lattice
    contrib = np.einsum("nchw,cokl->noklhw", xd, wdta, optimize=True)
    for i in range(4):
        for j in range(4):
            opad[:, :, i : i + 2 * h : 2, j : j + 2 * wd_ : 2] += contrib[:, :, i, j]
    out = np.ascontiguousarray(opad[:, :, 1 : 1 + ho, 1 : 1 + wo])

    def backward(g):
        gpad = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(gpad, (4, 4), axis=(2, 3))[:, :, ::2, ::2]
        # win: N,Co,H,W,4,4
        gx = np.einsum("nohwij,coij->nchw", win, wdta, optimize=True)
        gw = np.einsum("nchw,nohwij->coij", xd, win, optimize=True)
        return np.ascontiguousarray(gx.astype(np.float32)), np.ascontiguousarray(gw.astype(np.float32))

    return _make(out, (x, w), backward)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    wo: Tensor | None = None,
    bo: Tensor | None = None,
) -> Tensor:
    """Multi-head scaled dot-product attention over (N, T, D) with optional out-projection."""
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention: q/k/v shapes differ {q.shape} {k.shape} {v.shape}")
    n, t, d = q.shape
    if d % heads != 0:
        raise ConfigError(f"attention: dim {d} not divisible by heads {heads}")
    dh = d // heads

    def split(x):
        return transpose(reshape(x, (n, t, heads, dh)), (0, 2, 1, 3))  # N,h,T,dh

    qh, kh, vh = split(q), split(k), split(v)
    scores = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)  # N,h,T,dh
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t, d))
    if wo is not None:
        return linear(merged, wo, bo)
    return merged


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------


def grid_sample_bilinear(feature_map: Tensor, coords: Tensor) -> Tensor:
    """Sample a (C, H, W) map at (M, 2) normalized coords (x, y) in [-1, 1].

    Half-pixel convention: x=-1 maps to the left edge of texel column 0 and
    x=+1 to the right edge of the last column; out-of-range coords clamp to
    the border. Differentiable w.r.t. both the map and the coords (coord
    gradients vanish where clamped).
    """
    c, h, w = feature_map.shape
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"grid_sample_bilinear: coords must be (M, 2), got {coords.shape}")
    fm = feature_map.data
    cd = coords.data
    qx = (cd[:, 0] + 1.0) * 0.5 * w - 0.5
    qy = (cd[:, 1] + 1.0) * 0.5 * h - 0.5
    inx = (qx > 0.0) & (qx < w - 1.0)
    iny = (qy > 0.0) & (qy < h - 1.0)
    qxc = np.clip(qx, 0.0, w - 1.0)
    qyc = np.clip(qy, 0.0, h - 1.0)
    x0 = np.floor(qxc).astype(np.int64)
    y0 = np.floor(qyc).astype(np.int64)
    x0 = np.minimum(x0, w - 2) if w > 1 else x0 * 0
    y0 = np.minimum(y0, h - 2) if h > 1 else y0 * 0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (qxc - x0).astype(np.float32)
    fy = (qyc - y0).astype(np.float32)

    f00 = fm[:, y0, x0]  # C,M
    f01 = fm[:, y0, x1]
    f10 = fm[:, y1, x0]
    f11 = fm[:, y1, x1]
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = (f00 * w00 + f01 * w01 + f10 * w10 + f11 * w11).T  # M,C

    def backward(g):
        gt = g.T  # C,M
        gmap = np.zeros_like(fm)
        flat = gmap.reshape(c, -1)
        np.add.at(flat, (slice(None), y0 * w + x0), gt * w00)
        np.add.at(flat, (slice(None), y0 * w + x1), gt * w01)
        np.add.at(flat, (slice(None), y1 * w + x0), gt * w10)
        np.add.at(flat, (slice(None), y1 * w + x1), gt * w11)
        # d(out)/d(fx), d(out)/d(fy) per sample, chain to normalized coords
        dfx = ((f01 - f00) * (1 - fy) + (f11 - f10) * fy) * gt
        dfy = ((f10 - f00) * (1 - fx) + (f11 - f01) * fx) * gt
        gx = dfx.sum(axis=0) * inx * (0.5 * w)
        gy = dfy.sum(axis=0) * iny * (0.5 * h)
        gcoords = np.stack([gx, gy], axis=1).astype(np.float32)
        return gmap, gcoords

    return _make(np.ascontiguousarray(out.astype(np.float32)), (feature_map, coords), backward)
