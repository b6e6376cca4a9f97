"""Conditional denoising U-Net with a residual-injecting control branch.

The main U-Net sees only the noisy target map and the shared embedding; all
conditioning imagery enters through the control branch, whose per-skip and
middle outputs pass through zero-initialized 1x1 projections so conditioning
starts as an exact no-op.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..grids import GeoMeta
from .autodiff import Tensor, add, concat, crop_rb, pad_to_multiple, silu
from .modules import Conv, Dense, GroupNorm, Module, ResBlock, UpConv


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    cond_channels: int = 7
    base_width: int = 32
    depth: int = 3
    blocks_per_resolution: int = 2
    embed_dim: int = 128

    def __post_init__(self):
        if self.in_channels < 1 or self.cond_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.base_width < 8 or self.base_width % 8 != 0:
            raise ConfigError(f"base_width must be a positive multiple of 8, got {self.base_width}")
        if self.depth < 1 or self.blocks_per_resolution < 1:
            raise ConfigError("depth and blocks_per_resolution must be >= 1")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ConfigError(f"embed_dim must be a positive even number, got {self.embed_dim}")

    @property
    def widths(self) -> list[int]:
        return [self.base_width * (2**level) for level in range(self.depth)]

    @property
    def n_residuals(self) -> int:
        return self.blocks_per_resolution * self.depth + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**d)


def timestep_embedding(t, embed_dim: int) -> np.ndarray:
    """Sinusoidal features at geometric frequencies; accepts a scalar or an array.

    Layout is [sin(t * f_0..f_{h-1}), cos(...)], so t = 0 maps to all-zero sin
    components and all-one cos components.
    """
    half = embed_dim // 2
    freqs = np.power(10000.0, -np.arange(half, dtype=np.float64) / half)
    t_arr = np.asarray(t, dtype=np.float64)
    angles = t_arr[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1).astype(np.float32)


def meta_vector(meta: GeoMeta) -> np.ndarray:
    """Normalized 9-feature metadata vector (month encoded cyclically)."""
    month_angle = 2.0 * np.pi * (meta.month % 12) / 12.0
    return np.array(
        [
            meta.latitude / 90.0,
            meta.longitude / 180.0,
            meta.cloud_cover,
            (meta.year - 2008) / 10.0,
            np.sin(month_angle),
            np.cos(month_angle),
            meta.day / 31.0,
            meta.gsd / 100.0,
            1.0,
        ],
        dtype=np.float32,
    )


class MetadataEmbedding(Module):
    """Two-layer network mapping the 9-vector to the embedding width."""

    def __init__(self, rng, embed_dim: int):
        self.fc1 = Dense(rng, 9, embed_dim)
        self.fc2 = Dense(rng, embed_dim, embed_dim)

    def __call__(self, meta_vecs: np.ndarray) -> Tensor:
        return self.fc2(silu(self.fc1(Tensor(meta_vecs))))


class _Encoder(Module):
    """Shared topology of the U-Net encoder and its control-branch copy."""

    def __init__(self, rng, cfg: UNetConfig):
        widths = cfg.widths
        self.blocks = [
            ResBlock(rng, widths[level], widths[level], cfg.embed_dim)
            for level in range(cfg.depth)
            for _ in range(cfg.blocks_per_resolution)
        ]
        self.downs = [
            Conv(rng, widths[level], widths[level + 1], stride=2) for level in range(cfg.depth - 1)
        ]
        self.mid1 = ResBlock(rng, widths[-1], widths[-1], cfg.embed_dim)
        self.mid2 = ResBlock(rng, widths[-1], widths[-1], cfg.embed_dim)
        self.bpr = cfg.blocks_per_resolution
        self.depth = cfg.depth

    def __call__(self, h: Tensor, emb: Tensor) -> tuple[list[Tensor], Tensor]:
        skips = []
        idx = 0
        for level in range(self.depth):
            for _ in range(self.bpr):
                h = self.blocks[idx](h, emb)
                skips.append(h)
                idx += 1
            if level < self.depth - 1:
                h = self.downs[level](h)
        h = self.mid2(self.mid1(h, emb), emb)
        return skips, h


class UNet(Module):
    """Denoising U-Net; control residuals add onto encoder skips and the middle."""

    def __init__(self, rng, cfg: UNetConfig):
        widths = cfg.widths
        self.cfg = cfg
        self.stem = Conv(rng, cfg.in_channels, widths[0])
        self.encoder = _Encoder(rng, cfg)
        self.dec_blocks = [
            ResBlock(rng, widths[level] * 2, widths[level], cfg.embed_dim)
            for level in range(cfg.depth - 1, -1, -1)
            for _ in range(cfg.blocks_per_resolution)
        ]
        self.ups = [UpConv(rng, widths[level], widths[level - 1]) for level in range(cfg.depth - 1, 0, -1)]
        self.out_norm = GroupNorm(widths[0])
        self.out_conv = Conv(rng, widths[0], cfg.in_channels, zero_init=True)

    def __call__(self, z_t: Tensor, emb: Tensor, residuals: list[Tensor] | None = None) -> Tensor:
        cfg = self.cfg
        if residuals is not None and len(residuals) != cfg.n_residuals:
            raise ShapeError(
                f"expected {cfg.n_residuals} control residuals, got {len(residuals)}"
            )
        skips, mid = self.encoder(self.stem(z_t), emb)
        if residuals is not None:
            for i, (s, r) in enumerate(zip(skips, residuals[:-1])):
                if r.data.shape != s.data.shape:
                    raise ShapeError(
                        f"control residual {i} shape {r.data.shape} != skip shape {s.data.shape}"
                    )
                skips[i] = add(s, r)
            if residuals[-1].data.shape != mid.data.shape:
                raise ShapeError("middle control residual shape mismatch")
            mid = add(mid, residuals[-1])
        h = mid
        idx = 0
        for level in range(cfg.depth - 1, -1, -1):
            for _ in range(cfg.blocks_per_resolution):
                h = self.dec_blocks[idx](concat([h, skips.pop()]), emb)
                idx += 1
            if level > 0:
                h = self.ups[cfg.depth - 1 - level](h)
        return self.out_conv(silu(self.out_norm(h)))


class ControlBranch(Module):
    """Encoder copy over the noisy target concatenated with projected conditions."""

    def __init__(self, rng, cfg: UNetConfig):
        widths = cfg.widths
        self.cfg = cfg
        self.cond_proj = Conv(rng, cfg.cond_channels, widths[0])
        self.stem = Conv(rng, cfg.in_channels + widths[0], widths[0])
        self.encoder = _Encoder(rng, cfg)
        skip_widths = [
            widths[level] for level in range(cfg.depth) for _ in range(cfg.blocks_per_resolution)
        ]
        self.zero_projs = [Conv(rng, w, w, kernel=1, zero_init=True) for w in skip_widths]
        self.zero_mid = Conv(rng, widths[-1], widths[-1], kernel=1, zero_init=True)

    def __call__(self, z_t: Tensor, cond: Tensor, emb: Tensor) -> list[Tensor]:
        if cond.data.shape[1] != self.cfg.cond_channels:
            raise ShapeError(
                f"conditions have {cond.data.shape[1]} channels, expected {self.cfg.cond_channels}"
            )
        if cond.data.shape[2:] != z_t.data.shape[2:]:
            raise ShapeError(
                f"condition spatial dims {cond.data.shape[2:]} != target {z_t.data.shape[2:]}"
            )
        h = self.stem(concat([z_t, self.cond_proj(cond)]))
        skips, mid = self.encoder(h, emb)
        residuals = [proj(s) for proj, s in zip(self.zero_projs, skips)]
        residuals.append(self.zero_mid(mid))
        return residuals


class Denoiser(Module):
    """Full velocity-prediction model: embeddings + control branch + U-Net."""

    def __init__(self, cfg: UNetConfig, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
        self.cfg = cfg
        self.meta_mlp = MetadataEmbedding(rng, cfg.embed_dim)
        self.trunk1 = Dense(rng, cfg.embed_dim, cfg.embed_dim)
        self.trunk2 = Dense(rng, cfg.embed_dim, cfg.embed_dim)
        self.unet = UNet(rng, cfg)
        self.control = ControlBranch(rng, cfg)

    def embed(self, t, meta_vecs: np.ndarray) -> Tensor:
        """Trunk embedding from timesteps (scalar or (N,)) and metadata vectors (N, 9)."""
        sin = timestep_embedding(np.atleast_1d(np.asarray(t)), self.cfg.embed_dim)
        emb = add(Tensor(sin), self.meta_mlp(np.atleast_2d(meta_vecs)))
        return self.trunk2(silu(self.trunk1(emb)))

    def __call__(self, z_t: Tensor, cond: Tensor, t, meta_vecs: np.ndarray,
                 use_control: bool = True) -> Tensor:
        emb = self.embed(t, meta_vecs)
        align = 2 ** (self.cfg.depth - 1)
        z_p, (ph, pw) = pad_to_multiple(z_t, align)
        residuals = None
        if use_control:
            cond_p, _ = pad_to_multiple(cond, align)
            residuals = self.control(z_p, cond_p, emb)
        out = self.unet(z_p, emb, residuals)
        return crop_rb(out, ph, pw)
