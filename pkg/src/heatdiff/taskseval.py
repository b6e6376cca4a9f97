"""Task condition assembly, inference drivers, and valid-pixel metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import DEFAULT_STEPS, DiffusionSchedule, ScheduleMode, sample_batch
from .errors import ContractError, MetricError
from .grids import NormSpec, Raster, SceneSample, denormalize, normalize, resample_bilinear
from .nn.unet import meta_vector

SAME_RESOLUTION = "same_resolution"
SUPER_RESOLUTION = "super_resolution"
POINT_SR = "point_sr"
TASKS = (SAME_RESOLUTION, SUPER_RESOLUTION, POINT_SR)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class TaskSetting:
    """Which conditioning channels the model receives."""

    kind: str = SAME_RESOLUTION
    point_stride: int = 16

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ContractError(f"unknown task {self.kind!r}; expected one of {TASKS}")
        if self.kind == POINT_SR and self.point_stride < 1:
            raise ContractError(f"point_stride must be >= 1, got {self.point_stride}")

    @property
    def channels(self) -> list[str]:
        base = ["lst", "red", "green", "blue", "ndvi", "ndbi", "ndwi"]
        if self.kind == SUPER_RESOLUTION:
            return base + ["ta_lowres"]
        if self.kind == POINT_SR:
            return base + ["point_values", "point_mask"]
        return base

    @property
    def cond_channels(self) -> int:
        return len(self.channels)


def _masked_channel(r: Raster, values: np.ndarray) -> np.ndarray:
    """Zero-fill invalid pixels of a normalized channel."""
    if r.valid_mask is None:
        return values
    return values * r.valid_mask[:, :, None]


def build_conditions(
    s: SceneSample, task: TaskSetting, norm: NormSpec = NormSpec()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(conditions (C, H, W), anchor (1, H, W), meta 9-vector), all normalized.

    Channel order: [lst, r, g, b, ndvi, ndbi, ndwi] then the task extras.
    Satellite-grid layers are resampled onto the ta grid first; invalid
    pixels contribute zeros.
    """
    from .dataprep import make_point_condition, make_sr_condition

    th, tw = s.ta.height, s.ta.width
    lst_n = normalize(s.lst, norm)
    layers = [_masked_channel(lst_n, lst_n.values)]
    sat = {}
    for name in ("rgb", "ndvi", "ndbi", "ndwi"):
        r = getattr(s, name)
        sat[name] = r if (r.height, r.width) == (th, tw) else resample_bilinear(r, tw, th)
    rgb = sat["rgb"]
    layers.append(_masked_channel(rgb, (2.0 * rgb.values - 1.0).astype(np.float32)))
    for name in ("ndvi", "ndbi", "ndwi"):
        layers.append(_masked_channel(sat[name], sat[name].values))

    if task.kind == SUPER_RESOLUTION:
        low = make_sr_condition(s.ta)
        layers.append(normalize(low, norm).values)
    elif task.kind == POINT_SR:
        values, mask = make_point_condition(s.ta, task.point_stride)
        layers.append((normalize(values, norm).values * mask.values).astype(np.float32))
        layers.append(mask.values)

    cond = np.concatenate(layers, axis=2).astype(np.float32)  # (H, W, C)
    cond = np.clip(np.moveaxis(cond, 2, 0), -1.0, 1.0)
    anchor = np.moveaxis(_masked_channel(lst_n, lst_n.values), 2, 0).astype(np.float32)
    return cond, anchor, meta_vector(s.meta)


def build_rgb_conditions(
    s: SceneSample, norm: NormSpec = NormSpec()
) -> tuple[np.ndarray, np.ndarray]:
    """(rgb conditions (3, H, W) on the ta grid, meta 9-vector) for the LST model."""
    th, tw = s.ta.height, s.ta.width
    rgb = s.rgb if (s.rgb.height, s.rgb.width) == (th, tw) else resample_bilinear(s.rgb, tw, th)
    cond = _masked_channel(rgb, (2.0 * rgb.values - 1.0).astype(np.float32))
    cond = np.clip(np.moveaxis(cond, 2, 0), -1.0, 1.0).astype(np.float32)
    return cond, meta_vector(s.meta)


def _joint_mask(pred: Raster, truth: Raster) -> np.ndarray:
    if (pred.height, pred.width) != (truth.height, truth.width):
        raise MetricError(
            f"metric inputs differ in size: {pred.height}x{pred.width} vs {truth.height}x{truth.width}"
        )
    return pred.mask_or_full() & truth.mask_or_full()


def mae(pred: Raster, truth: Raster) -> float:
    """Mean absolute error over jointly valid pixels (degC)."""
    m = _joint_mask(pred, truth)
    if not m.any():
        raise MetricError("no jointly valid pixels")
    diff = pred.values[:, :, 0][m] - truth.values[:, :, 0][m]
    return float(np.abs(diff).mean())


def rmse(pred: Raster, truth: Raster) -> float:
    """Root mean squared error over jointly valid pixels (degC)."""
    m = _joint_mask(pred, truth)
    if not m.any():
        raise MetricError("no jointly valid pixels")
    diff = pred.values[:, :, 0][m] - truth.values[:, :, 0][m]
    return float(np.sqrt((diff.astype(np.float64) ** 2).mean()))


def _gaussian_kernel2d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def ssim(pred: Raster, truth: Raster, norm: NormSpec = NormSpec()) -> float:
    """Mean windowed structural similarity over fully valid 11x11 windows.

    Gaussian window sigma 1.5, K1 = 0.01, K2 = 0.03; the dynamic range is the
    span of the normalization spec so scores are comparable across scenes.
    Weighted moments use the plain (uncorrected) window expectation.
    """
    m = _joint_mask(pred, truth)
    h, w = m.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise MetricError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    kernel = _gaussian_kernel2d(SSIM_WINDOW, SSIM_SIGMA)
    x = pred.values[:, :, 0].astype(np.float64)
    y = truth.values[:, :, 0].astype(np.float64)

    def filt(img):
        windows = np.lib.stride_tricks.sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y

    L = norm.span
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    valid_windows = np.lib.stride_tricks.sliding_window_view(m, (SSIM_WINDOW, SSIM_WINDOW)).all(
        axis=(2, 3)
    )
    if not valid_windows.any():
        raise MetricError("no fully valid ssim windows")
    return float(ssim_map[valid_windows].mean())


@dataclass
class SceneMetrics:
    scene_id: str
    rmse: float
    mae: float
    ssim: float
    valid_px: int


@dataclass
class EvalReport:
    """Per-scene metrics plus valid-pixel-weighted aggregates."""

    task: str
    checkpoint_id: str
    scenes: list[SceneMetrics] = field(default_factory=list)

    @property
    def scene_count(self) -> int:
        return len(self.scenes)

    def _weighted(self, attr: str) -> float:
        weights = np.array([s.valid_px for s in self.scenes], dtype=np.float64)
        values = np.array([getattr(s, attr) for s in self.scenes], dtype=np.float64)
        return float((values * weights).sum() / weights.sum())

    @property
    def rmse(self) -> float:
        return self._weighted("rmse")

    @property
    def mae(self) -> float:
        return self._weighted("mae")

    @property
    def ssim(self) -> float:
        return self._weighted("ssim")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "checkpoint_id": self.checkpoint_id,
            "aggregate": {"rmse": self.rmse, "mae": self.mae, "ssim": self.ssim},
            "scene_count": self.scene_count,
            "scenes": [vars(s) for s in self.scenes],
        }

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def write_summary_csv(path: str | Path, rows: list[tuple[str, EvalReport]]) -> None:
    """Summary table with the (method/task, RMSE, MAE, SSIM) column layout."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rmse", "mae", "ssim"])
        for label, report in rows:
            writer.writerow([label, f"{report.rmse:.4f}", f"{report.mae:.4f}", f"{report.ssim:.4f}"])


def predict_scene_batch(
    model,
    scenes: list[SceneSample],
    task: TaskSetting,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    mode: ScheduleMode = ScheduleMode.LST_ANCHORED,
    norm: NormSpec = NormSpec(),
    noise_seed: int = 0,
) -> list[Raster]:
    """Sample predicted temperature rasters for same-shaped scenes in one batch."""
    conds, anchors, metas = zip(*(build_conditions(s, task, norm) for s in scenes))
    out = sample_batch(
        model,
        np.stack(conds),
        np.stack(anchors),
        np.stack(metas),
        sched,
        steps,
        mode,
        noise_seed=noise_seed,
    )
    return [
        denormalize(Raster(out[i, 0], s.ta.gsd), norm) for i, s in enumerate(scenes)
    ]


def evaluate(
    model,
    scenes: list[SceneSample],
    task: TaskSetting,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    mode: ScheduleMode = ScheduleMode.LST_ANCHORED,
    norm: NormSpec = NormSpec(),
    checkpoint_id: str = "",
    batch_size: int = 8,
    scene_ids: list[str] | None = None,
    noise_seed: int = 0,
) -> EvalReport:
    """Run the sampler over scenes and report RMSE / MAE / SSIM on valid pixels."""
    if scene_ids is None:
        scene_ids = [f"scene{i:05d}" for i in range(len(scenes))]
    report = EvalReport(task=task.kind, checkpoint_id=checkpoint_id)
    for lo in range(0, len(scenes), batch_size):
        chunk = scenes[lo : lo + batch_size]
        preds = predict_scene_batch(model, chunk, task, sched, steps, mode, norm, noise_seed)
        for s, sid, pred in zip(chunk, scene_ids[lo : lo + batch_size], preds):
            m = _joint_mask(pred, s.ta)
            report.scenes.append(
                SceneMetrics(
                    scene_id=sid,
                    rmse=rmse(pred, s.ta),
                    mae=mae(pred, s.ta),
                    ssim=ssim(pred, s.ta, norm),
                    valid_px=int(m.sum()),
                )
            )
    return report


def build_conditions_30m(
    s: SceneSample, base_ta: Raster, task: TaskSetting, norm: NormSpec = NormSpec()
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Condition stack on the satellite grid for cross-resolution inference.

    Land-cover layers stay native; the surface-temperature anchor and the
    coarse temperature condition are bilinearly upsampled.  The point grid
    stride scales with the resolution ratio so the station spacing keeps its
    ground distance.
    """
    from .dataprep import make_point_condition

    sh, sw = s.rgb.height, s.rgb.width
    lst_up = resample_bilinear(s.lst, sw, sh)
    lst_n = normalize(lst_up, norm)
    layers = [_masked_channel(lst_n, lst_n.values)]
    layers.append(_masked_channel(s.rgb, (2.0 * s.rgb.values - 1.0).astype(np.float32)))
    for name in ("ndvi", "ndbi", "ndwi"):
        r = getattr(s, name)
        layers.append(_masked_channel(r, r.values))

    base_up = resample_bilinear(base_ta, sw, sh)
    if task.kind == SUPER_RESOLUTION:
        layers.append(normalize(base_up, norm).values)
    elif task.kind == POINT_SR:
        scale = sw / s.ta.width
        stride = max(1, int(round(task.point_stride * scale)))
        values, mask = make_point_condition(base_up, stride)
        layers.append((normalize(values, norm).values * mask.values).astype(np.float32))
        layers.append(mask.values)
    else:
        raise ContractError("cross-resolution inference requires an SR or point-SR model")

    cond = np.concatenate(layers, axis=2).astype(np.float32)
    cond = np.clip(np.moveaxis(cond, 2, 0), -1.0, 1.0)
    anchor = np.moveaxis(_masked_channel(lst_n, lst_n.values), 2, 0).astype(np.float32)
    return cond, anchor, meta_vector(s.meta)


def infer_30m(
    model,
    s: SceneSample,
    base_ta: Raster,
    task: TaskSetting,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    norm: NormSpec = NormSpec(),
) -> Raster:
    """Predict a satellite-resolution temperature map from coarse conditions."""
    cond, anchor, meta = build_conditions_30m(s, base_ta, task, norm)
    out = sample_batch(model, cond[None], anchor[None], meta[None], sched, steps,
                       ScheduleMode.LST_ANCHORED)
    return denormalize(Raster(out[0, 0], s.rgb.gsd), norm)


def evaluate_30m(
    model,
    scenes: list[SceneSample],
    task: TaskSetting,
    sched: DiffusionSchedule,
    steps: int = DEFAULT_STEPS,
    norm: NormSpec = NormSpec(),
    checkpoint_id: str = "",
) -> EvalReport:
    """Downsample 30m predictions back to the coarse grid and score against truth."""
    report = EvalReport(task=f"{task.kind}+30m", checkpoint_id=checkpoint_id)
    for i, s in enumerate(scenes):
        pred30 = infer_30m(model, s, s.ta, task, sched, steps, norm)
        pred = resample_bilinear(pred30, s.ta.width, s.ta.height)
        pred.gsd = s.ta.gsd
        m = _joint_mask(pred, s.ta)
        report.scenes.append(
            SceneMetrics(
                scene_id=f"scene{i:05d}",
                rmse=rmse(pred, s.ta),
                mae=mae(pred, s.ta),
                ssim=ssim(pred, s.ta, norm),
                valid_px=int(m.sum()),
            )
        )
    return report
