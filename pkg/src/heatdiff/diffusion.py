"""Anchored diffusion processes, velocity targets, and deterministic samplers.

The forward process blends the clean target toward an anchor image (the
surface-temperature map) instead of Gaussian noise:

    z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * anchor

with abar_0 = 1 and abar_T = 0 exactly, so the reverse process starts from
the anchor itself.  The network predicts the velocity

    v = sqrt(abar_t) * anchor - sqrt(1 - abar_t) * z0

which inverts algebraically: sqrt(abar_t) * z_t - sqrt(1 - abar_t) * v
recovers z0 for any t.  The ablation mode swaps the anchor for seeded
Gaussian noise and keeps every formula unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, InpaintError, ShapeError
from .grids import NormSpec, Raster, denormalize

DEFAULT_T = 1000
DEFAULT_STEPS = 50


class ScheduleMode(str, enum.Enum):
    LST_ANCHORED = "lst_anchored"
    PURE_NOISE = "pure_noise"


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal coefficients abar_0..abar_T (endpoints exactly 1 and 0)."""

    T: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.T + 1,):
            raise ConfigError(f"alpha_bar must have T+1 entries, got {ab.shape}")
        if ab[0] != 1.0 or ab[-1] != 0.0:
            raise ConfigError("alpha_bar endpoints must be exactly 1 and 0")
        if not np.all(np.diff(ab) < 0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "alpha_bar", ab)

    def coeffs(self, t) -> tuple[np.ndarray, np.ndarray]:
        """(sqrt(abar_t), sqrt(1 - abar_t)) for scalar or per-sample integer t."""
        ab = self.alpha_bar[np.asarray(t)]
        return np.sqrt(ab), np.sqrt(1.0 - ab)


def make_schedule(T: int = DEFAULT_T, shape: str = "cosine") -> DiffusionSchedule:
    """Monotone schedule with exact zero terminal signal.

    ``cosine`` follows the squared-cosine profile with offset 0.008; ``linear``
    is the cumulative product of a linear variance ramp.  Both are affinely
    rescaled so abar_0 = 1 and abar_T = 0 exactly.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    if shape == "cosine":
        s = 0.008
        raw = np.cos(((t / T + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    elif shape == "linear":
        betas = np.linspace(1e-4, 0.02, T, dtype=np.float64)
        raw = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    else:
        raise ConfigError(f"unknown schedule shape {shape!r}")
    rescaled = (raw - raw[-1]) / (raw[0] - raw[-1])
    rescaled[0] = 1.0
    rescaled[-1] = 0.0
    return DiffusionSchedule(T=T, alpha_bar=rescaled)


def _check_pair(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _bcast(c: np.ndarray, arr: np.ndarray) -> np.ndarray:
    """Reshape per-sample coefficients for broadcasting over (N, C, H, W)."""
    c = np.asarray(c)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (arr.ndim - 1))


def forward_blend(z0: np.ndarray, zy: np.ndarray, t, sched: DiffusionSchedule) -> np.ndarray:
    """z_t on the anchored path: sqrt(abar_t) z0 + sqrt(1-abar_t) anchor."""
    _check_pair(z0, zy, "forward_blend")
    a, b = sched.coeffs(t)
    return _bcast(a, z0) * z0 + _bcast(b, zy) * zy


def forward_noise(z0: np.ndarray, eps: np.ndarray, t, sched: DiffusionSchedule) -> np.ndarray:
    """z_t on the pure-noise path (ablation mode)."""
    _check_pair(z0, eps, "forward_noise")
    a, b = sched.coeffs(t)
    return _bcast(a, z0) * z0 + _bcast(b, eps) * eps


def v_target(z0: np.ndarray, anchor: np.ndarray, t, sched: DiffusionSchedule) -> np.ndarray:
    """Training target: sqrt(abar_t) anchor - sqrt(1-abar_t) z0."""
    _check_pair(z0, anchor, "v_target")
    a, b = sched.coeffs(t)
    return _bcast(a, anchor) * anchor - _bcast(b, z0) * z0


def predict_z0(z_t: np.ndarray, v_hat: np.ndarray, t, sched: DiffusionSchedule) -> np.ndarray:
    """Recover the clean map estimate: sqrt(abar_t) z_t - sqrt(1-abar_t) v_hat."""
    _check_pair(z_t, v_hat, "predict_z0")
    a, b = sched.coeffs(t)
    return _bcast(a, z_t) * z_t - _bcast(b, v_hat) * v_hat


def reverse_step(
    z_t: np.ndarray,
    v_hat: np.ndarray,
    anchor: np.ndarray,
    t: int,
    t_prev: int,
    sched: DiffusionSchedule,
) -> np.ndarray:
    """One deterministic reverse update from t to t_prev (supports strides)."""
    if t_prev >= t:
        raise ConfigError(f"t_prev {t_prev} must be < t {t}")
    _check_pair(z_t, anchor, "reverse_step")
    z0_hat = predict_z0(z_t, v_hat, t, sched)
    a_prev, b_prev = sched.coeffs(t_prev)
    return _bcast(a_prev, z0_hat) * z0_hat + _bcast(b_prev, anchor) * anchor


def strided_timesteps(T: int, steps: int) -> list[int]:
    """Uniformly strided descending timesteps T..0 with ``steps`` intervals."""
    if not 1 <= steps <= T:
        raise ConfigError(f"steps must satisfy 1 <= steps <= T={T}, got {steps}")
    ts = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))
    return list(ts[::-1])


def _check_normalized(arr: np.ndarray, what: str) -> None:
    if arr.size and np.abs(arr).max() > 1.0 + 1e-5:
        raise ContractError(
            f"{what} must be normalized to [-1, 1]; max abs value {np.abs(arr).max():.3f}"
        )


def sample_batch(
    model,
    cond: np.ndarray,
    anchor: np.ndarray,
    metas: np.ndarray,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    mode: ScheduleMode = ScheduleMode.LST_ANCHORED,
    noise_seed: int = 0,
    v_oracle=None,
) -> np.ndarray:
    """Deterministic reverse sampling in normalized space.

    cond: (N, C, H, W) normalized condition stack; anchor: (N, 1, H, W)
    normalized anchor map; metas: (N, 9).  In pure-noise mode the anchor role
    is played by a seeded Gaussian field.  Returns (N, 1, H, W).
    ``v_oracle(z_t, t)`` replaces the network when given (testing hook).
    """
    from .nn.autodiff import Tensor  # local import keeps numpy-only users light

    _check_normalized(cond, "conditions")
    _check_normalized(anchor, "anchor")
    if mode == ScheduleMode.PURE_NOISE:
        # one field shared across the batch so per-sample results do not
        # depend on batch composition (batched == serial)
        rng = np.random.default_rng(np.random.SeedSequence([noise_seed, 42]))
        field = rng.standard_normal(anchor.shape[1:]).astype(np.float32)
        start = np.tile(field[None], (anchor.shape[0], 1, 1, 1))
    else:
        start = anchor.astype(np.float32)
    z = start.copy()
    ts = strided_timesteps(sched.T, steps)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        if v_oracle is not None:
            v_hat = v_oracle(z, t)
        else:
            t_arr = np.full(z.shape[0], t, dtype=np.int64)
            v_hat = model(Tensor(z), Tensor(cond), t_arr, metas).data
        z = reverse_step(z, v_hat, start, t, t_prev, sched).astype(np.float32)
    return z


def sample(
    model,
    cond: np.ndarray,
    anchor: np.ndarray,
    meta_vec: np.ndarray,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    mode: ScheduleMode = ScheduleMode.LST_ANCHORED,
    norm: NormSpec = NormSpec(),
    out_gsd: float = 100.0,
    noise_seed: int = 0,
) -> Raster:
    """Single-scene sampling returning a denormalized degC raster."""
    z0 = sample_batch(
        model, cond[None], anchor[None], meta_vec[None], sched, steps, mode, noise_seed
    )
    return denormalize(Raster(z0[0, 0], out_gsd), norm)


def inpaint_sample(
    model,
    partial: Raster,
    cond: np.ndarray,
    meta_vec: np.ndarray,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    mode: ScheduleMode = ScheduleMode.PURE_NOISE,
    norm: NormSpec = NormSpec(),
    noise_seed: int = 0,
    anchor: np.ndarray | None = None,
) -> Raster:
    """Fill invalid pixels of ``partial`` by clamped reverse sampling.

    At every reverse step the observed pixels of the current state are
    overwritten with the forward process applied to the observations, so the
    generation agrees with them; the output equals the input on observed
    pixels (up to normalization rounding) and carries a fully valid mask.
    In anchored mode the normalized anchor map (1, H, W) must be supplied;
    pure-noise mode draws a seeded Gaussian field instead.
    """
    from .grids import normalize
    from .nn.autodiff import Tensor

    mask = partial.mask_or_full()
    if not mask.any():
        raise InpaintError("cannot inpaint a fully invalid raster")
    if mask.all():
        return Raster(partial.values.copy(), partial.gsd)

    known = normalize(partial, norm).values[:, :, 0].astype(np.float32)[None, None]
    m = mask.astype(np.float32)[None, None]
    _check_normalized(cond, "conditions")

    if mode == ScheduleMode.PURE_NOISE:
        rng = np.random.default_rng(np.random.SeedSequence([noise_seed, 43]))
        anchor = rng.standard_normal(known.shape).astype(np.float32)
    else:
        if anchor is None:
            raise ContractError("anchored inpainting requires the normalized anchor map")
        anchor = anchor.reshape(known.shape).astype(np.float32)

    z = anchor.copy()
    ts = strided_timesteps(sched.T, steps)
    metas = meta_vec[None]
    for t, t_prev in zip(ts[:-1], ts[1:]):
        t_arr = np.array([t], dtype=np.int64)
        v_hat = model(Tensor(z), Tensor(cond[None]), t_arr, metas).data
        z = reverse_step(z, v_hat, anchor, t, t_prev, sched).astype(np.float32)
        clamp = forward_blend(known, anchor, t_prev, sched)
        z = m * clamp + (1.0 - m) * z
    out = denormalize(Raster(z[0, 0], partial.gsd), norm)
    return out
