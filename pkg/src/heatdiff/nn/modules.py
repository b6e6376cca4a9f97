"""Parameterized layers over the autodiff core."""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    add,
    conv2d,
    slice_cols,
    group_norm,
    linear,
    scale_shift,
    silu,
    upsample_nearest2,
)


class Module:
    """Parameter container; submodules and Tensors register via attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(f"{prefix}{name}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()


class Conv(Module):
    """3x3 (reflect-padded) or 1x1 convolution with He or zero initialization."""

    def __init__(self, rng: np.random.Generator, in_ch: int, out_ch: int, kernel: int = 3,
                 stride: int = 1, zero_init: bool = False):
        if zero_init:
            w = np.zeros((out_ch, in_ch, kernel, kernel), dtype=np.float32)
        else:
            std = np.sqrt(2.0 / (in_ch * kernel * kernel))
            w = rng.normal(0.0, std, (out_ch, in_ch, kernel, kernel)).astype(np.float32)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride)


class Dense(Module):
    def __init__(self, rng: np.random.Generator, in_f: int, out_f: int):
        std = np.sqrt(2.0 / in_f)
        self.w = Tensor(rng.normal(0.0, std, (in_f, out_f)).astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(out_f, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.gamma, self.beta, groups=self.groups)


class ResBlock(Module):
    """norm-silu-conv x2 with scale-shift embedding modulation and identity/1x1 skip.

    The embedding projects to a per-channel (scale, shift) pair applied after
    the second normalization, so timestep/metadata signals can gate features
    multiplicatively, not just bias them.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, embed_dim: int):
        self.norm1 = GroupNorm(in_ch)
        self.conv1 = Conv(rng, in_ch, out_ch)
        self.emb_proj = Dense(rng, embed_dim, 2 * out_ch)
        self.norm2 = GroupNorm(out_ch)
        self.conv2 = Conv(rng, out_ch, out_ch)
        self.skip = Conv(rng, in_ch, out_ch, kernel=1) if in_ch != out_ch else None
        self.out_ch = out_ch

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        gb = self.emb_proj(silu(emb))
        gamma = slice_cols(gb, 0, self.out_ch)
        beta = slice_cols(gb, self.out_ch, 2 * self.out_ch)
        h = scale_shift(self.norm2(h), gamma, beta)
        h = self.conv2(silu(h))
        return add(h, self.skip(x) if self.skip is not None else x)


class UpConv(Module):
    """Nearest 2x upsample followed by a 3x3 convolution."""

    def __init__(self, rng, in_ch: int, out_ch: int):
        self.conv = Conv(rng, in_ch, out_ch)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(upsample_nearest2(x))
