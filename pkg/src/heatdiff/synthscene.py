"""Procedural scene generator with a known generative law.

Scenes are built from a latent land-class map (water / vegetation / built /
bare) drawn by thresholding separable-Gaussian-filtered white noise at fixed
quantiles.  Band reflectances come from per-class prototypes plus seeded
noise, surface temperature from a latitude/season base plus class offsets,
and air temperature from a blurred mix of surface temperature plus a smooth
drift field that no conditioning input explains.  Everything is deterministic
in (seed, size, metadata, law).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataprep import SpectralBands, compute_indices, scale_lst
from .errors import ConfigError, RejectionError
from .grids import GeoMeta, Raster, SceneSample, resample_bilinear

CLASS_NAMES = ("water", "vegetation", "bare", "built")

# band reflectance prototypes: rgb, nir, swir
CLASS_PROTOTYPES = {
    "water": ((0.05, 0.09, 0.18), 0.05, 0.01),
    "vegetation": ((0.06, 0.22, 0.09), 0.55, 0.30),
    "bare": ((0.32, 0.28, 0.22), 0.38, 0.42),
    "built": ((0.42, 0.40, 0.38), 0.30, 0.48),
}

# Landsat-style thermal calibration used to synthesize digital numbers
TIR_GAIN = 0.00341802
TIR_BIAS = -124.15


@dataclass(frozen=True)
class SynthLaw:
    """Constants of the synthetic generative law (test fixtures, not physics)."""

    t_ref: float = 30.0  # degC at zero latitude, annual mean
    lat_slope: float = 0.35  # degC lost per degree latitude
    seasonal_amp: float = 10.0  # degC seasonal swing amplitude
    class_offsets: tuple[float, float, float, float] = (-6.0, -2.0, 0.0, 5.0)  # per CLASS_NAMES
    noise_amp: float = 1.5  # degC spatial noise on surface temperature
    class_sigma: float = 13.0  # px smoothing of the class-map field
    ta_blur_sigma: float = 2.0  # px
    ta_mix: float = 0.7  # weight of blurred LST vs scene mean in T_a
    residual_amp: float = 0.5  # degC class-linked residual on T_a
    # smooth T_a-only field (unexplained by inputs), as a fraction of the
    # scene's LST std so T_a always stays narrower-ranged than LST
    drift_rel: float = 0.4
    drift_sigma: float = 12.0  # px on the ta grid
    band_noise: float = 0.02  # reflectance noise

    def __post_init__(self):
        if not 0.0 <= self.ta_mix <= 1.0:
            raise ConfigError(f"ta_mix must be in [0, 1], got {self.ta_mix}")
        if not self.ta_blur_sigma > 0:
            raise ConfigError(f"ta_blur_sigma must be > 0, got {self.ta_blur_sigma}")

    def base_temp(self, meta: GeoMeta) -> float:
        """Seasonal base temperature from latitude and month."""
        peak_month = 7.0 if meta.latitude >= 0 else 1.0
        season = np.cos(2.0 * np.pi * (meta.month - peak_month) / 12.0)
        return self.t_ref - self.lat_slope * abs(meta.latitude) + self.seasonal_amp * float(season)

    def offset_of(self, class_idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.class_offsets, dtype=np.float64)[class_idx]


DEFAULT_LAW = SynthLaw()


def gaussian_blur(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with reflect padding, truncated at 3 sigma."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = field.astype(np.float64)
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)], mode="reflect")
        acc = np.zeros_like(out)
        for k, w in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(k, k + out.shape[axis])
            acc += w * padded[tuple(sl)]
        out = acc
    return out


def unit_field(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    """Smoothed white noise normalized to zero mean, unit variance."""
    f = gaussian_blur(rng.standard_normal((height, width)), sigma)
    return (f - f.mean()) / max(f.std(), 1e-12)


def class_map(seed: int, sat_size: int, law: SynthLaw = DEFAULT_LAW) -> np.ndarray:
    """Per-pixel class index (into CLASS_NAMES) on the satellite grid."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    f = unit_field(rng, sat_size, sat_size, law.class_sigma)
    q_water, q_veg, q_bare = np.quantile(f, [0.15, 0.50, 0.75])
    idx = np.full((sat_size, sat_size), 3, dtype=np.int8)  # built
    idx[f <= q_bare] = 2
    idx[f <= q_veg] = 1
    idx[f <= q_water] = 0
    return idx


def _ta_size(sat_size: int) -> int:
    if (sat_size * 3) % 10 != 0:
        raise ConfigError(
            f"sat_size {sat_size} incompatible with the 10:3 satellite:target ratio"
        )
    return sat_size * 3 // 10


def gen_scene(seed: int, sat_size: int, meta: GeoMeta, law: SynthLaw = DEFAULT_LAW) -> SceneSample:
    """Generate one paired scene; pure function of (seed, sat_size, meta, law)."""
    ta_size = _ta_size(sat_size)
    classes = class_map(seed, sat_size, law)
    rng_bands = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng_lst = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    rng_drift = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    proto_rgb = np.array([CLASS_PROTOTYPES[c][0] for c in CLASS_NAMES])
    proto_nir = np.array([CLASS_PROTOTYPES[c][1] for c in CLASS_NAMES])
    proto_swir = np.array([CLASS_PROTOTYPES[c][2] for c in CLASS_NAMES])

    def band(values: np.ndarray) -> Raster:
        noisy = values + rng_bands.normal(0.0, law.band_noise, values.shape)
        return Raster(np.clip(noisy, 0.0, 1.0).astype(np.float32), meta.gsd)

    rgb_vals = proto_rgb[classes]  # (H, W, 3)
    red = band(rgb_vals[:, :, 0])
    green = band(rgb_vals[:, :, 1])
    blue = band(rgb_vals[:, :, 2])
    nir = band(proto_nir[classes])
    swir = band(proto_swir[classes])

    base = law.base_temp(meta)
    lst_sat = (
        base
        + law.offset_of(classes)
        + law.noise_amp * unit_field(rng_lst, sat_size, sat_size, 2.0)
    )
    tir = Raster(((lst_sat - TIR_BIAS) / TIR_GAIN).astype(np.float32), meta.gsd)
    lst_sat_r = scale_lst(tir, TIR_GAIN, TIR_BIAS)

    bands = SpectralBands(red=red, green=green, blue=blue, nir=nir, swir=swir, tir=tir)
    ndvi, ndbi, ndwi = compute_indices(bands)
    rgb = Raster(
        np.concatenate([red.values, green.values, blue.values], axis=2), meta.gsd
    )

    lst_ta = resample_bilinear(lst_sat_r, ta_size, ta_size)
    ta_gsd = meta.gsd * sat_size / ta_size
    lst_ta.gsd = ta_gsd

    offset_norm = law.offset_of(classes) / max(np.abs(law.class_offsets).max(), 1e-12)
    residual_sat = Raster(gaussian_blur(offset_norm, 2.0).astype(np.float32), meta.gsd)
    residual_ta = resample_bilinear(residual_sat, ta_size, ta_size).values[:, :, 0]

    lst_vals = lst_ta.values[:, :, 0].astype(np.float64)
    explained = (
        law.ta_mix * gaussian_blur(lst_vals, law.ta_blur_sigma)
        + (1.0 - law.ta_mix) * lst_vals.mean()
        + law.residual_amp * residual_ta
    )
    # orthogonalize the drift against the explained part so the two variances
    # add exactly and T_a stays narrower-ranged than LST on every seed
    drift = unit_field(rng_drift, ta_size, ta_size, law.drift_sigma)
    centered = explained - explained.mean()
    denom = float((centered * centered).sum())
    if denom > 0:
        drift = drift - (float((drift * centered).sum()) / denom) * centered
    drift = (drift - drift.mean()) / max(drift.std(), 1e-12)
    ta_vals = explained + law.drift_rel * lst_vals.std() * drift
    ta = Raster(ta_vals.astype(np.float32), ta_gsd)

    return SceneSample(ta=ta, lst=lst_ta, ndvi=ndvi, ndbi=ndbi, ndwi=ndwi, rgb=rgb, meta=meta)


def apply_cloud_mask(
    s: SceneSample, seed: int, cover: float, max_cover: float = 0.2
) -> SceneSample:
    """Invalidate contiguous cloud-shaped blobs on all satellite-derived rasters.

    ``cover`` above the acceptance policy (default 20 percent) raises
    RejectionError, mirroring the corpus filter.
    """
    if cover < 0:
        raise ConfigError(f"cover must be >= 0, got {cover}")
    if cover > max_cover:
        raise RejectionError(f"cloud cover {cover} exceeds policy limit {max_cover}")
    if cover == 0:
        return s
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
    sat = s.rgb.height
    field = unit_field(rng, sat, sat, sat / 10.0)
    threshold = np.quantile(field, 1.0 - cover)
    cloud_sat = field > threshold

    field_ta = resample_bilinear(Raster(field.astype(np.float32), s.rgb.gsd), s.ta.width, s.ta.height)
    cloud_ta = field_ta.values[:, :, 0] > threshold

    def masked(r: Raster, cloud: np.ndarray) -> Raster:
        return Raster(r.values.copy(), r.gsd, r.mask_or_full() & ~cloud)

    measured = float(cloud_sat.mean())
    return SceneSample(
        ta=s.ta,
        lst=masked(s.lst, cloud_ta),
        ndvi=masked(s.ndvi, cloud_sat),
        ndbi=masked(s.ndbi, cloud_sat),
        ndwi=masked(s.ndwi, cloud_sat),
        rgb=masked(s.rgb, cloud_sat),
        meta=replace(s.meta, cloud_cover=measured),
    )


def apply_scanline_mask(s: SceneSample, seed: int) -> SceneSample:
    """Invalidate periodic diagonal stripes, emulating a failed scan-line corrector."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    period = int(rng.integers(8, 17))
    width = int(rng.integers(1, 4))
    phase = int(rng.integers(0, period))

    def stripes(h: int, w: int, scale: float) -> np.ndarray:
        p = max(2, int(round(period * scale)))
        sw = max(1, int(round(width * scale)))
        yy, xx = np.mgrid[0:h, 0:w]
        return (yy + xx + int(round(phase * scale))) % p < sw

    sat_stripe = stripes(s.rgb.height, s.rgb.width, 1.0)
    ratio = s.ta.width / s.rgb.width
    ta_stripe = stripes(s.lst.height, s.lst.width, ratio)

    def masked(r: Raster, stripe: np.ndarray) -> Raster:
        return Raster(r.values.copy(), r.gsd, r.mask_or_full() & ~stripe)

    return SceneSample(
        ta=s.ta,
        lst=masked(s.lst, ta_stripe),
        ndvi=masked(s.ndvi, sat_stripe),
        ndbi=masked(s.ndbi, sat_stripe),
        ndwi=masked(s.ndwi, sat_stripe),
        rgb=masked(s.rgb, sat_stripe),
        meta=s.meta,
    )


def corpus_meta(i: int, count: int, seed: int, sat_gsd: float = 30.0) -> GeoMeta:
    """Deterministic metadata for corpus scene ``i`` honoring the 3:1 year split."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, i, 20]))
    n_train = (count * 3) // 4
    if i < n_train:
        year = 2008 + i % 8
    else:
        year = 2016 + i % 2
    return GeoMeta(
        latitude=float(rng.uniform(35.0, 60.0)),
        longitude=float(rng.uniform(-10.0, 30.0)),
        cloud_cover=0.0,
        year=year,
        month=int(rng.integers(1, 13)),
        day=int(rng.integers(1, 29)),
        gsd=sat_gsd,
    )


def gen_corpus(
    count: int,
    seed: int,
    sat_size: int = 160,
    law: SynthLaw = DEFAULT_LAW,
    cloud_fraction: float = 0.0,
    scanline_fraction: float = 0.0,
) -> list[SceneSample]:
    """Generate ``count`` scenes; optional fractions get cloud or scan-line masks."""
    scenes = []
    for i in range(count):
        meta = corpus_meta(i, count, seed)
        s = gen_scene(seed * 1_000_003 + i, sat_size, meta, law)
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, 21]))
        if rng.random() < cloud_fraction:
            cover = float(rng.uniform(0.05, 0.2))
            s = apply_cloud_mask(s, seed * 1_000_003 + i, cover)
        if rng.random() < scanline_fraction:
            s = apply_scanline_mask(s, seed * 1_000_003 + i)
        scenes.append(s)
    return scenes
