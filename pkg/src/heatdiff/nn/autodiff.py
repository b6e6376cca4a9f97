"""Reverse-mode autodiff over numpy arrays in NCHW layout.

Every operator builds a Tensor node whose backward closure writes exact
analytic gradients into its parents.  Arrays are float32 by default; float64
inputs keep their dtype so gradient checks can run at full precision.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(np.float32)
    return arr


class Tensor:
    """Autograd node holding a value array and an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, _backward=None, _parents=()):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = _backward
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this node, seeded with ``grad`` (default: ones)."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _backward=backward if req else None, _parents=tuple(p for p in parents if p.requires_grad))


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) addition."""
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from e

    def backward(g):
        if a.requires_grad:
            a.accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_sum_to_shape(g, b.data.shape))

    return _make(out, (a, b), backward)


def add_channel_bias(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-sample channel vector (N, C) onto an (N, C, H, W) map."""
    if x.data.ndim != 4 or v.data.ndim != 2 or x.data.shape[:2] != v.data.shape:
        raise ShapeError(f"add_channel_bias: got x{x.shape}, v{v.shape}")
    out = x.data + v.data[:, :, None, None]

    def backward(g):
        if x.requires_grad:
            x.accumulate(g)
        if v.requires_grad:
            v.accumulate(g.sum(axis=(2, 3)))

    return _make(out, (x, v), backward)


def scale_shift(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Channelwise x * (1 + gamma) + beta with per-sample (N, C) modulation."""
    if x.data.ndim != 4 or gamma.data.shape != x.data.shape[:2] or beta.data.shape != x.data.shape[:2]:
        raise ShapeError(
            f"scale_shift: got x{x.shape}, gamma{gamma.shape}, beta{beta.shape}"
        )
    g4 = gamma.data[:, :, None, None]
    out = x.data * (1.0 + g4) + beta.data[:, :, None, None]

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * (1.0 + g4))
        if gamma.requires_grad:
            gamma.accumulate((g * x.data).sum(axis=(2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(2, 3)))

    return _make(out, (x, gamma, beta), backward)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * (sig * (1.0 + x.data * (1.0 - sig))))

    return _make(out, (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (N, F_in) @ w (F_in, F_out) + b (F_out,)."""
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear: x{x.shape} incompatible with w{w.shape}")
    out = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return _make(out, (x, w, b), backward)


def _reflect_pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")


def _fold_reflect_pad1(g: np.ndarray) -> np.ndarray:
    """Adjoint of reflect padding by one pixel on H and W."""
    h = g.shape[2] - 2
    mid = g[:, :, 1 : h + 1, :].copy()
    mid[:, :, 1, :] += g[:, :, 0, :]
    mid[:, :, h - 2, :] += g[:, :, h + 1, :]
    w = g.shape[3] - 2
    out = mid[:, :, :, 1 : w + 1].copy()
    out[:, :, :, 1] += mid[:, :, :, 0]
    out[:, :, :, w - 2] += mid[:, :, :, w + 1]
    return out


def _cols(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (n, c, kh, kw, oh, ow), (sn, sc, sh, sw, sh * stride, sw * stride)
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3x3 (reflect pad 1) or 1x1 convolution; stride 1 or 2.

    x: (N, C, H, W); w: (OC, C, kh, kw); b: (OC,).
    """
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D, got {x.shape}")
    oc, ic, kh, kw = w.data.shape
    if x.data.shape[1] != ic:
        raise ShapeError(
            f"conv2d: input channels {x.data.shape[1]} != weight channels {ic}"
        )
    if kh == 1 and kw == 1 and stride == 1:
        # pointwise fast path
        out = np.tensordot(x.data, w.data[:, :, 0, 0], axes=([1], [1]))
        out = np.moveaxis(out, 3, 1) + b.data[None, :, None, None]

        def backward_1x1(g):
            if x.requires_grad:
                x.accumulate(np.moveaxis(np.tensordot(g, w.data[:, :, 0, 0], axes=([1], [0])), 3, 1))
            if w.requires_grad:
                gw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
                w.accumulate(gw[:, :, None, None])
            if b.requires_grad:
                b.accumulate(g.sum(axis=(0, 2, 3)))

        return _make(out, (x, w, b), backward_1x1)

    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d supports 3x3 or 1x1 kernels, got {kh}x{kw}")
    if x.data.shape[2] < 2 or x.data.shape[3] < 2:
        raise ShapeError(f"conv2d: spatial dims too small for reflect padding: {x.shape}")
    xp = _reflect_pad1(x.data)
    cols = _cols(xp, 3, 3, stride)
    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3]))  # (N, OH, OW, OC)
    out = np.moveaxis(out, 3, 1) + b.data[None, :, None, None]
    oh, ow = out.shape[2], out.shape[3]

    def backward(g):
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))  # (OC, C, kh, kw)
            w.accumulate(gw)
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    contrib = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))  # (N, OH, OW, C)
                    gp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += np.moveaxis(
                        contrib, 3, 1
                    )
            x.accumulate(_fold_reflect_pad1(gp))

    return _make(out, (x, w, b), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest2: input must be 4-D, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        if x.requires_grad:
            n, c, h2, w2 = g.shape
            x.accumulate(g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _make(out, (x,), backward)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int = 8, eps: float = 1e-5) -> Tensor:
    """Group normalization over channel groups of an (N, C, H, W) tensor."""
    n, c, h, w = x.data.shape
    if c % groups != 0:
        raise ShapeError(f"group_norm: channels {c} not divisible by {groups} groups")
    xg = x.data.reshape(n, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gh = (g * gamma.data[None, :, None, None]).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            m = gh.shape[2]
            dot1 = gh.mean(axis=2, keepdims=True)
            dot2 = (gh * xh).mean(axis=2, keepdims=True)
            dx = inv * (gh - dot1 - xh * dot2)
            x.accumulate(dx.reshape(n, c, h, w))

    return _make(out, (x, gamma, beta), backward)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    """Columns [lo, hi) of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols: input must be 2-D, got {x.shape}")
    out = x.data[:, lo:hi]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            x.accumulate(full)

    return _make(out, (x,), backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along an axis; backward splits the gradient."""
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])

    return _make(out, tuple(tensors), backward)


def pad_to_multiple(x: Tensor, multiple: int) -> tuple[Tensor, tuple[int, int]]:
    """Zero-pad bottom/right so H and W are divisible by ``multiple``."""
    n, c, h, w = x.data.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (0, 0)
    out = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)))

    def backward(g):
        if x.requires_grad:
            x.accumulate(g[:, :, :h, :w])

    return _make(out, (x,), backward), (ph, pw)


def crop_rb(x: Tensor, ph: int, pw: int) -> Tensor:
    """Remove bottom/right padding added by :func:`pad_to_multiple`."""
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.data.shape
    out = x.data[:, :, : h - ph, : w - pw]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, :, : h - ph, : w - pw] = g
            x.accumulate(full)

    return _make(out, (x,), backward)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise ShapeError(f"mse_loss: target {target.shape} != prediction {pred.shape}")
    diff = pred.data - target
    out = np.array((diff * diff).mean(), dtype=pred.data.dtype)

    def backward(g):
        if pred.requires_grad:
            pred.accumulate(g * (2.0 / diff.size) * diff)

    return _make(out, (pred,), backward)
