"""Training loops for the temperature predictor and the land-cover-to-LST model.

The loss is the mean squared error between the predicted and true velocity.
Batch order, timestep draws, noise draws, and mask augmentation each consume
their own seeded stream, so switching the schedule mode changes only the
forward construction and the target, never which samples are visited.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import (
    ScheduleMode,
    forward_blend,
    forward_noise,
    make_schedule,
    sample_batch,
    v_target,
)
from .errors import ConfigError, TrainingError
from .grids import NormSpec, SceneSample, normalize
from .nn import Adam, Denoiser, Tensor, UNetConfig, save_checkpoint
from .nn.autodiff import mse_loss
from .taskseval import TaskSetting, build_conditions, build_rgb_conditions, evaluate


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 4
    max_steps: int = 3000
    seed: int = 0
    mode: str = ScheduleMode.LST_ANCHORED.value
    task: str = "same_resolution"
    point_stride: int = 16
    base_width: int = 32
    depth: int = 3
    blocks_per_resolution: int = 2
    embed_dim: int = 128
    schedule_T: int = 1000
    schedule_shape: str = "cosine"
    norm_min: float = -30.0
    norm_max: float = 60.0
    eval_interval: int = 0
    eval_steps: int = 50
    eval_batch: int = 8
    cloud_augment: float = 0.0
    checkpoint_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        ScheduleMode(self.mode)

    @property
    def norm(self) -> NormSpec:
        return NormSpec(self.norm_min, self.norm_max)

    @property
    def task_setting(self) -> TaskSetting:
        return TaskSetting(self.task, self.point_stride)

    @property
    def schedule_mode(self) -> ScheduleMode:
        return ScheduleMode(self.mode)

    def unet_config(self, cond_channels: int) -> UNetConfig:
        return UNetConfig(
            in_channels=1,
            cond_channels=cond_channels,
            base_width=self.base_width,
            depth=self.depth,
            blocks_per_resolution=self.blocks_per_resolution,
            embed_dim=self.embed_dim,
        )

    def extra(self, target: str) -> dict:
        return {
            "mode": self.mode,
            "task": self.task,
            "point_stride": self.point_stride,
            "norm_min": self.norm_min,
            "norm_max": self.norm_max,
            "schedule_T": self.schedule_T,
            "schedule_shape": self.schedule_shape,
            "target": target,
        }


def batch_schedule(seed: int, n_scenes: int, batch_size: int, max_steps: int) -> np.ndarray:
    """Epoch-shuffled scene indices, (max_steps, batch_size); mode-independent."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 201]))
    out = np.empty((max_steps, batch_size), dtype=np.int64)
    pool: list[int] = []
    for step in range(max_steps):
        while len(pool) < batch_size:
            pool.extend(rng.permutation(n_scenes).tolist())
        out[step] = pool[:batch_size]
        pool = pool[batch_size:]
    return out


def timestep_schedule(seed: int, T: int, batch_size: int, max_steps: int) -> np.ndarray:
    """Uniform draws from [1, T], (max_steps, batch_size); mode-independent."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    return rng.integers(1, T + 1, size=(max_steps, batch_size))


def _cloud_blob(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Boolean blob mask covering roughly 5-25 percent of the grid."""
    from .synthscene import unit_field

    cover = float(rng.uniform(0.05, 0.25))
    f = unit_field(rng, h, w, max(2.0, h / 8.0))
    return f > np.quantile(f, 1.0 - cover)


class _Logger:
    def __init__(self, path: str | None):
        self.fh = open(path, "w") if path else None
        self.records: list[dict] = []

    def log(self, rec: dict) -> None:
        self.records.append(rec)
        if self.fh:
            self.fh.write(json.dumps(rec) + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def _train_loop(
    config: TrainConfig,
    model: Denoiser,
    targets: np.ndarray,
    conds: np.ndarray,
    anchors: np.ndarray | None,
    metas: np.ndarray,
    mode: ScheduleMode,
    val_fn=None,
) -> list[dict]:
    sched = make_schedule(config.schedule_T, config.schedule_shape)
    n = targets.shape[0]
    batches = batch_schedule(config.seed, n, config.batch_size, config.max_steps)
    tsteps = timestep_schedule(config.seed, sched.T, config.batch_size, config.max_steps)
    rng_noise = np.random.default_rng(np.random.SeedSequence([config.seed, 203]))
    rng_augment = np.random.default_rng(np.random.SeedSequence([config.seed, 204]))

    opt = Adam(model.named_parameters(), lr=config.lr)
    logger = _Logger(config.log_path)
    try:
        for step in range(config.max_steps):
            idx = batches[step]
            t = tsteps[step]
            z0 = targets[idx]
            cond = conds[idx]
            if config.cloud_augment > 0.0:
                cond = cond.copy()
                for k in range(len(idx)):
                    if rng_augment.random() < config.cloud_augment:
                        blob = _cloud_blob(rng_augment, cond.shape[2], cond.shape[3])
                        cond[k, :, blob] = 0.0
            if mode == ScheduleMode.LST_ANCHORED:
                anchor = anchors[idx]
            else:
                anchor = rng_noise.standard_normal(z0.shape).astype(np.float32)
            z_t = forward_blend(z0, anchor, t, sched).astype(np.float32)
            v = v_target(z0, anchor, t, sched).astype(np.float32)

            opt.zero_grad()
            v_hat = model(Tensor(z_t), Tensor(cond), t, metas[idx])
            loss = mse_loss(v_hat, v)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingError(f"non-finite loss at step {step}")
            loss.backward()
            opt.step()

            rec = {"step": step, "loss": loss_val, "lr": config.lr}
            if val_fn and config.eval_interval and (step + 1) % config.eval_interval == 0:
                rec.update(val_fn(model))
            logger.log(rec)
    finally:
        logger.close()
    return logger.records


def train(
    config: TrainConfig,
    train_scenes: list[SceneSample],
    val_scenes: list[SceneSample] | None = None,
) -> tuple[Denoiser, list[dict]]:
    """Train the temperature predictor; returns the model and the step log."""
    if not train_scenes:
        raise ConfigError("training requires at least one scene")
    task = config.task_setting
    norm = config.norm
    mode = config.schedule_mode
    sched = make_schedule(config.schedule_T, config.schedule_shape)

    built = [build_conditions(s, task, norm) for s in train_scenes]
    conds = np.stack([b[0] for b in built])
    anchors = np.stack([b[1] for b in built])
    metas = np.stack([b[2] for b in built])
    targets = np.stack([np.moveaxis(normalize(s.ta, norm).values, 2, 0) for s in train_scenes])

    model = Denoiser(config.unet_config(task.cond_channels), seed=config.seed)

    val_fn = None
    if val_scenes:
        def val_fn(m):
            report = evaluate(
                m, val_scenes, task, sched, steps=config.eval_steps, mode=mode,
                norm=norm, batch_size=config.eval_batch,
            )
            return {"val_rmse": report.rmse, "val_mae": report.mae, "val_ssim": report.ssim}

    history = _train_loop(config, model, targets, conds, anchors, metas, mode, val_fn)
    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, model, step=config.max_steps,
                        seed=config.seed, extra=config.extra(target="ta"))
    return model, history


def train_rgb2lst(config: TrainConfig, scenes: list[SceneSample]) -> tuple[Denoiser, list[dict]]:
    """Train the land-cover-to-surface-temperature model (pure-noise schedule)."""
    if not scenes:
        raise ConfigError("training requires at least one scene")
    norm = config.norm
    built = [build_rgb_conditions(s, norm) for s in scenes]
    conds = np.stack([b[0] for b in built])
    metas = np.stack([b[1] for b in built])
    targets = np.stack([np.moveaxis(normalize(s.lst, norm).values, 2, 0) for s in scenes])

    model = Denoiser(config.unet_config(3), seed=config.seed)
    history = _train_loop(config, model, targets, conds, None, metas, ScheduleMode.PURE_NOISE)
    if config.checkpoint_path:
        extra = config.extra(target="lst")
        extra["mode"] = ScheduleMode.PURE_NOISE.value
        save_checkpoint(config.checkpoint_path, model, step=config.max_steps,
                        seed=config.seed, extra=extra)
    return model, history


def predict_lst_batch(
    model: Denoiser,
    scenes: list[SceneSample],
    steps: int = 50,
    schedule_T: int = 1000,
    schedule_shape: str = "cosine",
    norm: NormSpec = NormSpec(),
    noise_seed: int = 0,
) -> np.ndarray:
    """Sample surface-temperature maps (degC, (N, H, W)) from land-cover inputs."""
    sched = make_schedule(schedule_T, schedule_shape)
    built = [build_rgb_conditions(s, norm) for s in scenes]
    conds = np.stack([b[0] for b in built])
    metas = np.stack([b[1] for b in built])
    shape = (len(scenes), 1, scenes[0].lst.height, scenes[0].lst.width)
    out = sample_batch(
        model, conds, np.zeros(shape, dtype=np.float32), metas, sched, steps,
        ScheduleMode.PURE_NOISE, noise_seed=noise_seed,
    )
    return (out[:, 0].astype(np.float64) + 1.0) / 2.0 * norm.span + norm.physical_min
