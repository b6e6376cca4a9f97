"""Feature derivation, patching, task-condition construction, splits, and tabular flattening."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError
from .grids import GeoMeta, Raster, SceneSample, resample_bilinear

log = logging.getLogger(__name__)

# Column order of the flattened per-pixel dataset.  Metadata scalars share the
# normalization used by the model's metadata embedding (month is kept as a
# single month/12 scalar here to preserve the 14-column layout).
FEATURE_COLUMNS = (
    "lst",
    "ndvi",
    "ndbi",
    "ndwi",
    "red",
    "green",
    "blue",
    "lat_norm",
    "lon_norm",
    "cloud_cover",
    "year_norm",
    "month_norm",
    "day_norm",
    "gsd_norm",
)

DEFAULT_TRAIN_YEARS = frozenset(range(2008, 2016))
DEFAULT_TEST_YEARS = frozenset({2016, 2017})


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint year sets assigning scenes to train and test."""

    train_years: frozenset[int] = DEFAULT_TRAIN_YEARS
    test_years: frozenset[int] = DEFAULT_TEST_YEARS

    def __post_init__(self):
        train = frozenset(self.train_years)
        test = frozenset(self.test_years)
        object.__setattr__(self, "train_years", train)
        object.__setattr__(self, "test_years", test)
        if not train or not test:
            raise ConfigError("train_years and test_years must both be non-empty")
        if train & test:
            raise ConfigError(f"split years overlap: {sorted(train & test)}")


@dataclass
class SpectralBands:
    """Single-channel optical/thermal bands sharing one grid."""

    red: Raster
    green: Raster
    blue: Raster
    nir: Raster
    swir: Raster
    tir: Raster

    def __post_init__(self):
        ref = self.red
        for name in ("green", "blue", "nir", "swir", "tir"):
            r = getattr(self, name)
            if (r.width, r.height, r.gsd) != (ref.width, ref.height, ref.gsd):
                raise AlignmentError(f"band {name} does not share the grid of red")
            if r.channels != 1:
                raise AlignmentError(f"band {name} must be single-channel")


@dataclass
class TabularSet:
    """Per-pixel rows (one per valid pixel) with provenance for map reassembly."""

    features: np.ndarray  # (rows, 14) float32, columns per FEATURE_COLUMNS
    targets: np.ndarray  # (rows,) float32, air temperature degC
    scene_index: np.ndarray  # (rows,) int32 index into scene_ids
    pixel_index: np.ndarray  # (rows,) int32 flat row-major index into the ta grid
    scene_ids: list[str]

    def __post_init__(self):
        n = len(self.targets)
        if self.features.shape != (n, len(FEATURE_COLUMNS)):
            raise ConfigError(f"features shape {self.features.shape} inconsistent with {n} rows")
        if len(self.scene_index) != n or len(self.pixel_index) != n:
            raise ConfigError("provenance arrays must match the row count")

    @property
    def n_rows(self) -> int:
        return len(self.targets)


def _normalized_difference(a: Raster, b: Raster) -> tuple[np.ndarray, np.ndarray]:
    """(a - b) / (a + b) with zero-denominator pixels set to 0 and flagged invalid."""
    av = a.values[:, :, 0].astype(np.float64)
    bv = b.values[:, :, 0].astype(np.float64)
    denom = av + bv
    ok = denom != 0.0
    out = np.zeros_like(av)
    np.divide(av - bv, denom, out=out, where=ok)
    valid = ok & a.mask_or_full() & b.mask_or_full()
    return out.astype(np.float32), valid


def compute_indices(b: SpectralBands) -> tuple[Raster, Raster, Raster]:
    """Vegetation, built-up, and water indices from the nir/red/swir bands.

    ndvi = (nir - red) / (nir + red)
    ndbi = (swir - nir) / (swir + nir)
    ndwi = (nir - swir) / (nir + swir)
    """
    ndvi_v, ndvi_m = _normalized_difference(b.nir, b.red)
    ndbi_v, ndbi_m = _normalized_difference(b.swir, b.nir)
    ndwi_v, ndwi_m = _normalized_difference(b.nir, b.swir)
    gsd = b.red.gsd
    return (
        Raster(ndvi_v, gsd, ndvi_m),
        Raster(ndbi_v, gsd, ndbi_m),
        Raster(ndwi_v, gsd, ndwi_m),
    )


def scale_lst(tir: Raster, m: float, a: float) -> Raster:
    """Affine radiometric calibration of the thermal band: m * tir + a."""
    if not (np.isfinite(m) and np.isfinite(a)):
        raise ConfigError(f"calibration constants must be finite, got m={m}, a={a}")
    out = (tir.values.astype(np.float64) * m + a).astype(np.float32)
    return tir.with_values(out)


def _crop_pad(r: Raster, x0: int, y0: int, size: int) -> Raster:
    """Window [y0:y0+size, x0:x0+size] zero-padded (and masked) beyond the raster."""
    h, w = r.height, r.width
    out = np.zeros((size, size, r.channels), dtype=np.float32)
    mask = np.zeros((size, size), dtype=bool)
    sy0, sy1 = max(y0, 0), min(y0 + size, h)
    sx0, sx1 = max(x0, 0), min(x0 + size, w)
    if sy1 > sy0 and sx1 > sx0:
        dy0, dx0 = sy0 - y0, sx0 - x0
        out[dy0 : dy0 + (sy1 - sy0), dx0 : dx0 + (sx1 - sx0)] = r.values[sy0:sy1, sx0:sx1]
        mask[dy0 : dy0 + (sy1 - sy0), dx0 : dx0 + (sx1 - sx0)] = r.mask_or_full()[sy0:sy1, sx0:sx1]
    needs_mask = r.valid_mask is not None or not mask.all()
    return Raster(out, r.gsd, mask if needs_mask else None)


def partition_patches(s: SceneSample, sat_patch: int) -> list[SceneSample]:
    """Tile the satellite grid into sat_patch x sat_patch windows with paired crops.

    Edge windows are zero-padded and masked.  The paired temperature rasters
    are cropped to the matching ground windows, so the coarse patch edge must
    land on whole coarse pixels.
    """
    if sat_patch < 1:
        raise ConfigError(f"sat_patch must be >= 1, got {sat_patch}")
    sw, sh = s.rgb.width, s.rgb.height
    tw, th = s.ta.width, s.ta.height
    if (sat_patch * tw) % sw != 0 or (sat_patch * th) % sh != 0:
        raise ConfigError(
            f"sat_patch {sat_patch} is incompatible with the {sw}:{tw} satellite:target ratio"
        )
    ta_patch = sat_patch * tw // sw
    nx = -(-sw // sat_patch)
    ny = -(-sh // sat_patch)
    patches = []
    for py in range(ny):
        for px in range(nx):
            sat = {
                name: _crop_pad(r, px * sat_patch, py * sat_patch, sat_patch)
                for name, r in s.sat_bands().items()
            }
            patches.append(
                SceneSample(
                    ta=_crop_pad(s.ta, px * ta_patch, py * ta_patch, ta_patch),
                    lst=_crop_pad(s.lst, px * ta_patch, py * ta_patch, ta_patch),
                    meta=s.meta,
                    **sat,
                )
            )
    return patches


def align_lst(s: SceneSample) -> SceneSample:
    """Bilinearly resample LST onto the ta grid (identity when already aligned)."""
    lst = resample_bilinear(s.lst, s.ta.width, s.ta.height)
    lst.gsd = s.ta.gsd
    return replace(s, lst=lst)


def make_sr_condition(ta: Raster) -> Raster:
    """Downsample by 3x then upsample back, producing the low-resolution conditioning map."""
    if ta.width < 3 or ta.height < 3:
        raise ConfigError(f"raster too small for 3x reduction: {ta.width}x{ta.height}")
    low = resample_bilinear(ta, ta.width // 3, ta.height // 3)
    up = resample_bilinear(low, ta.width, ta.height)
    up.gsd = ta.gsd
    return up


def make_point_condition(ta: Raster, stride: int) -> tuple[Raster, Raster]:
    """Sparse grid samples of ta: a values raster and a 0/1 sampling-mask raster.

    Grid points sit at offset stride // 2 with spacing ``stride`` on both axes.
    """
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    off = stride // 2
    values = np.zeros((ta.height, ta.width, 1), dtype=np.float32)
    mask = np.zeros((ta.height, ta.width, 1), dtype=np.float32)
    values[off::stride, off::stride] = ta.values[off::stride, off::stride, :1]
    mask[off::stride, off::stride] = 1.0
    return Raster(values, ta.gsd), Raster(mask, ta.gsd)


def split_by_year(
    scenes: list[SceneSample], spec: SplitSpec = SplitSpec()
) -> tuple[list[SceneSample], list[SceneSample]]:
    """Partition scenes by acquisition year; unrecognized years are dropped with a warning."""
    train, test, dropped = [], [], 0
    for s in scenes:
        if s.meta.year in spec.train_years:
            train.append(s)
        elif s.meta.year in spec.test_years:
            test.append(s)
        else:
            dropped += 1
    if dropped:
        log.warning("split_by_year dropped %d scene(s) with years outside the split", dropped)
    if not train or not test:
        raise ConfigError(
            f"year split produced an empty partition (train={len(train)}, test={len(test)})"
        )
    return train, test


def meta_scalars(meta: GeoMeta) -> np.ndarray:
    """The 7 normalized metadata scalars of the tabular layout."""
    return np.array(
        [
            meta.latitude / 90.0,
            meta.longitude / 180.0,
            meta.cloud_cover,
            (meta.year - 2008) / 10.0,
            meta.month / 12.0,
            meta.day / 31.0,
            meta.gsd / 100.0,
        ],
        dtype=np.float32,
    )


def scene_pixel_table(s: SceneSample) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel (features, targets, flat pixel indices) for one scene's valid pixels."""
    th, tw = s.ta.height, s.ta.width
    layers = [s.lst]
    valid = s.ta.mask_or_full() & s.lst.mask_or_full()
    for r in (s.ndvi, s.ndbi, s.ndwi, s.rgb):
        at_ta = r if (r.width, r.height) == (tw, th) else resample_bilinear(r, tw, th)
        layers.append(at_ta)
        valid &= at_ta.mask_or_full()
    pixel_feats = np.concatenate([r.values for r in layers], axis=2)  # (th, tw, 7)
    idx = np.flatnonzero(valid.ravel())
    feats = pixel_feats.reshape(th * tw, -1)[idx]
    metas = np.broadcast_to(meta_scalars(s.meta), (len(idx), 7))
    features = np.concatenate([feats, metas], axis=1).astype(np.float32)
    targets = s.ta.values[:, :, 0].ravel()[idx].astype(np.float32)
    return features, targets, idx.astype(np.int32)


def flatten_tabular(scenes: list[SceneSample], scene_ids: list[str] | None = None) -> TabularSet:
    """One row per jointly valid pixel across all feature layers of each scene."""
    if scene_ids is None:
        scene_ids = [f"scene{i:05d}" for i in range(len(scenes))]
    feats, targets, scene_idx, pixel_idx = [], [], [], []
    for i, s in enumerate(scenes):
        f, t, p = scene_pixel_table(s)
        feats.append(f)
        targets.append(t)
        pixel_idx.append(p)
        scene_idx.append(np.full(len(t), i, dtype=np.int32))
    return TabularSet(
        features=np.concatenate(feats) if feats else np.zeros((0, 14), dtype=np.float32),
        targets=np.concatenate(targets) if targets else np.zeros(0, dtype=np.float32),
        scene_index=np.concatenate(scene_idx) if scene_idx else np.zeros(0, dtype=np.int32),
        pixel_index=np.concatenate(pixel_idx) if pixel_idx else np.zeros(0, dtype=np.int32),
        scene_ids=scene_ids,
    )


def tabular_to_csv(ts: TabularSet, path: str | Path) -> None:
    """CSV export: scene_id, pixel_index, the 14 feature columns, ta."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "pixel_index", *FEATURE_COLUMNS, "ta"])
        for i in range(ts.n_rows):
            writer.writerow(
                [
                    ts.scene_ids[ts.scene_index[i]],
                    int(ts.pixel_index[i]),
                    *(repr(float(v)) for v in ts.features[i]),
                    repr(float(ts.targets[i])),
                ]
            )
