"""Raster and scene data model, resampling, normalization, and the scene container format.

A scene on disk is a directory (or a single ``.zip`` container) holding a
``scene.json`` sidecar plus one little-endian float32 band-sequential binary
per raster and one uint8 binary per validity mask.  All values are 32-bit
reals; masks store 1 for observed pixels and 0 for invalid ones.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError

SCENE_SIDECAR = "scene.json"
SCENE_FORMAT = "heatdiff-scene"
SCENE_VERSION = 1
BAND_NAMES = ("ta", "lst", "ndvi", "ndbi", "ndwi", "rgb")


@dataclass
class Raster:
    """A width x height x channels grid of float32 values on a square-pixel grid.

    ``values`` is row-major, channel-last with shape (height, width, channels).
    ``valid_mask`` is an optional (height, width) boolean grid, True = observed.
    ``gsd`` is the ground separation distance in meters per pixel.
    """

    values: np.ndarray
    gsd: float
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise DimensionError(f"raster values must be 2-D or 3-D, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise DimensionError(f"raster dimensions must be positive, got {arr.shape}")
        self.values = arr
        if not (self.gsd > 0):
            raise DimensionError(f"gsd must be > 0, got {self.gsd}")
        self.gsd = float(self.gsd)
        if self.valid_mask is not None:
            mask = np.asarray(self.valid_mask, dtype=bool)
            if mask.shape != (arr.shape[0], arr.shape[1]):
                raise DimensionError(
                    f"valid_mask shape {mask.shape} does not match raster {arr.shape[:2]}"
                )
            self.valid_mask = mask

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def mask_or_full(self) -> np.ndarray:
        """Validity mask, materialized as all-True when absent."""
        if self.valid_mask is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.valid_mask

    def with_values(self, values: np.ndarray) -> "Raster":
        return Raster(values, self.gsd, None if self.valid_mask is None else self.valid_mask.copy())


@dataclass(frozen=True)
class GeoMeta:
    """Per-scene acquisition metadata."""

    latitude: float
    longitude: float
    cloud_cover: float
    year: int
    month: int
    day: int
    gsd: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ConfigError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ConfigError(f"longitude out of range: {self.longitude}")
        if not 0.0 <= self.cloud_cover <= 1.0:
            raise ConfigError(f"cloud_cover out of range: {self.cloud_cover}")
        if not 1 <= self.month <= 12:
            raise ConfigError(f"month out of range: {self.month}")
        days = _DAYS_IN_MONTH[self.month] + (1 if self.month == 2 and _is_leap(self.year) else 0)
        if not 1 <= self.day <= days:
            raise ConfigError(f"day {self.day} invalid for {self.year}-{self.month:02d}")
        if not self.gsd > 0:
            raise ConfigError(f"gsd must be > 0, got {self.gsd}")

    def to_dict(self) -> dict:
        return {
            "latitude": self.latitude,
            "longitude": self.longitude,
            "cloud_cover": self.cloud_cover,
            "year": self.year,
            "month": self.month,
            "day": self.day,
            "gsd": self.gsd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeoMeta":
        return cls(
            latitude=float(d["latitude"]),
            longitude=float(d["longitude"]),
            cloud_cover=float(d["cloud_cover"]),
            year=int(d["year"]),
            month=int(d["month"]),
            day=int(d["day"]),
            gsd=float(d["gsd"]),
        )


_DAYS_IN_MONTH = {1: 31, 2: 28, 3: 31, 4: 30, 5: 31, 6: 30, 7: 31, 8: 31, 9: 30, 10: 31, 11: 30, 12: 31}


def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


@dataclass
class SceneSample:
    """One paired sample: target air temperature plus its satellite-derived inputs.

    ``ta`` and ``lst`` live on the coarse temperature grid and must agree in
    size and gsd.  ``rgb`` and the three indices live on the finer satellite
    grid, which covers the same ground extent within one coarse pixel.
    """

    ta: Raster
    lst: Raster
    ndvi: Raster
    ndbi: Raster
    ndwi: Raster
    rgb: Raster
    meta: GeoMeta

    def __post_init__(self):
        for name, ch in (("ta", 1), ("lst", 1), ("ndvi", 1), ("ndbi", 1), ("ndwi", 1), ("rgb", 3)):
            r = getattr(self, name)
            if r.channels != ch:
                raise DimensionError(f"{name} must have {ch} channel(s), got {r.channels}")
        if (self.ta.width, self.ta.height) != (self.lst.width, self.lst.height) or self.ta.gsd != self.lst.gsd:
            raise DimensionError("ta and lst must share dimensions and gsd")
        sat = (self.rgb.width, self.rgb.height, self.rgb.gsd)
        for name in ("ndvi", "ndbi", "ndwi"):
            r = getattr(self, name)
            if (r.width, r.height, r.gsd) != sat:
                raise DimensionError(f"{name} does not share the satellite grid")
        extent_sat = self.rgb.gsd * self.rgb.width
        extent_ta = self.lst.gsd * self.lst.width
        if abs(extent_sat - extent_ta) > self.lst.gsd:
            raise DimensionError(
                f"satellite extent {extent_sat} m and temperature extent {extent_ta} m "
                "differ by more than one coarse pixel"
            )

    def bands(self) -> dict[str, Raster]:
        return {name: getattr(self, name) for name in BAND_NAMES}

    def sat_bands(self) -> dict[str, Raster]:
        """Rasters on the satellite grid."""
        return {name: getattr(self, name) for name in ("ndvi", "ndbi", "ndwi", "rgb")}


@dataclass(frozen=True)
class NormSpec:
    """Linear map from a physical range in degC to the model range [-1, 1]."""

    physical_min: float = -30.0
    physical_max: float = 60.0

    def __post_init__(self):
        if not self.physical_max > self.physical_min:
            raise ConfigError(
                f"degenerate normalization range [{self.physical_min}, {self.physical_max}]"
            )

    @property
    def span(self) -> float:
        return self.physical_max - self.physical_min


DEFAULT_NORM = NormSpec()


def normalize(r: Raster, spec: NormSpec = DEFAULT_NORM) -> Raster:
    """Map [physical_min, physical_max] to [-1, 1], clamping out-of-range values."""
    clipped = np.clip(r.values, spec.physical_min, spec.physical_max)
    out = (2.0 * (clipped.astype(np.float64) - spec.physical_min) / spec.span - 1.0).astype(np.float32)
    return r.with_values(out)


def denormalize(r: Raster, spec: NormSpec = DEFAULT_NORM) -> Raster:
    """Inverse of :func:`normalize` (no clamping)."""
    out = ((r.values.astype(np.float64) + 1.0) / 2.0 * spec.span + spec.physical_min).astype(np.float32)
    return r.with_values(out)


def resample_bilinear(src: Raster, out_width: int, out_height: int) -> Raster:
    """Bilinear resample with pixel-center alignment.

    Output pixel (i, j) samples source coordinate
    ``x = (j + 0.5) * src_w / out_w - 0.5`` (likewise for y) from its four
    clamped neighbors.  Invalid source pixels get zero interpolation weight
    and the remaining weights are renormalized; an output pixel whose four
    neighbors are all invalid is itself invalid (value 0).
    """
    if out_width < 1 or out_height < 1:
        raise DimensionError(f"output dimensions must be >= 1, got {out_width}x{out_height}")
    sh, sw = src.height, src.width
    xs = (np.arange(out_width, dtype=np.float64) + 0.5) * (sw / out_width) - 0.5
    ys = (np.arange(out_height, dtype=np.float64) + 0.5) * (sh / out_height) - 0.5
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = np.clip(x0f.astype(np.int64), 0, sw - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, sw - 1)
    y0 = np.clip(y0f.astype(np.int64), 0, sh - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, sh - 1)

    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]
    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    weights = (wy0 * wx0, wy0 * wx1, wy1 * wx0, wy1 * wx1)
    corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))

    vals = src.values.astype(np.float64)
    if src.valid_mask is None:
        acc = np.zeros((out_height, out_width, src.channels), dtype=np.float64)
        for w, (yy, xx) in zip(weights, corners):
            acc += w[:, :, None] * vals[np.ix_(yy, xx)]
        return Raster(acc.astype(np.float32), src.gsd * (sw / out_width))

    mask = src.valid_mask.astype(np.float64)
    acc = np.zeros((out_height, out_width, src.channels), dtype=np.float64)
    wsum = np.zeros((out_height, out_width), dtype=np.float64)
    for w, (yy, xx) in zip(weights, corners):
        m = mask[np.ix_(yy, xx)]
        acc += (w * m)[:, :, None] * vals[np.ix_(yy, xx)]
        wsum += w * m
    out_valid = wsum > 0.0
    safe = np.where(out_valid, wsum, 1.0)
    out = np.where(out_valid[:, :, None], acc / safe[:, :, None], 0.0).astype(np.float32)
    return Raster(out, src.gsd * (sw / out_width), out_valid)


def _band_payload(r: Raster) -> bytes:
    # band-sequential little-endian f32: plane 0 row-major, plane 1, ...
    planes = np.ascontiguousarray(np.moveaxis(r.values, 2, 0), dtype="<f4")
    return planes.tobytes()


def _mask_payload(mask: np.ndarray) -> bytes:
    return np.ascontiguousarray(mask, dtype=np.uint8).tobytes()


def _sha256(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _scene_files(s: SceneSample) -> dict[str, bytes]:
    """Container entries (file name -> payload) for ``s``."""
    files: dict[str, bytes] = {}
    bands = []
    for name, r in s.bands().items():
        payload = _band_payload(r)
        fname = f"{name}.f32"
        files[fname] = payload
        entry = {
            "name": name,
            "width": r.width,
            "height": r.height,
            "channels": r.channels,
            "gsd": r.gsd,
            "dtype": "<f4",
            "file": fname,
            "sha256": _sha256(payload),
            "mask_file": None,
            "mask_sha256": None,
        }
        if r.valid_mask is not None:
            mpayload = _mask_payload(r.valid_mask)
            mname = f"{name}.mask"
            files[mname] = mpayload
            entry["mask_file"] = mname
            entry["mask_sha256"] = _sha256(mpayload)
        bands.append(entry)
    files[SCENE_SIDECAR] = json.dumps(
        {"format": SCENE_FORMAT, "version": SCENE_VERSION, "meta": s.meta.to_dict(), "bands": bands},
        indent=1,
    ).encode()
    return files


def _zip_files(files: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for fname in sorted(files):
            zf.writestr(zipfile.ZipInfo(fname, date_time=(1980, 1, 1, 0, 0, 0)), files[fname])
    return buf.getvalue()


def write_scene(s: SceneSample, path: str | Path) -> None:
    """Write a scene container; ``path`` ending in ``.zip`` selects the single-file form."""
    files = _scene_files(s)
    path = Path(path)
    if path.suffix == ".zip":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(_zip_files(files))
    else:
        path.mkdir(parents=True, exist_ok=True)
        for fname, payload in files.items():
            (path / fname).write_bytes(payload)


def scene_to_bytes(s: SceneSample) -> bytes:
    """Scene serialized as the single-file zip container."""
    return _zip_files(_scene_files(s))


def _read_container(path: str | Path) -> dict[str, bytes]:
    path = Path(path)
    if path.is_dir():
        files = {}
        for child in path.iterdir():
            if child.is_file():
                files[child.name] = child.read_bytes()
        return files
    if path.is_file():
        try:
            with zipfile.ZipFile(path) as zf:
                return {info.filename: zf.read(info) for info in zf.infolist()}
        except zipfile.BadZipFile as e:
            raise FormatError(f"not a scene container: {path}") from e
    raise FormatError(f"scene container not found: {path}")


def read_scene(path: str | Path) -> SceneSample:
    """Read a scene container written by :func:`write_scene`."""
    files = _read_container(path)
    return scene_from_files(files, str(path))


def scene_from_bytes(payload: bytes) -> SceneSample:
    try:
        with zipfile.ZipFile(io.BytesIO(payload)) as zf:
            files = {info.filename: zf.read(info) for info in zf.infolist()}
    except zipfile.BadZipFile as e:
        raise FormatError("not a scene container") from e
    return scene_from_files(files, "<bytes>")


def scene_from_files(files: dict[str, bytes], origin: str) -> SceneSample:
    if SCENE_SIDECAR not in files:
        raise FormatError(f"{origin}: missing {SCENE_SIDECAR}")
    try:
        sidecar = json.loads(files[SCENE_SIDECAR])
    except json.JSONDecodeError as e:
        raise FormatError(f"{origin}: malformed {SCENE_SIDECAR}: {e}") from e
    if sidecar.get("format") != SCENE_FORMAT:
        raise FormatError(f"{origin}: unknown format {sidecar.get('format')!r}")
    if sidecar.get("version") != SCENE_VERSION:
        raise FormatError(f"{origin}: unsupported version {sidecar.get('version')!r}")
    by_name = {b["name"]: b for b in sidecar.get("bands", [])}
    rasters: dict[str, Raster] = {}
    for name in BAND_NAMES:
        if name not in by_name:
            raise FormatError(f"{origin}: missing band {name}")
        entry = by_name[name]
        fname = entry["file"]
        if fname not in files:
            raise FormatError(f"{origin}: missing band file {fname}")
        payload = files[fname]
        expected = entry["width"] * entry["height"] * entry["channels"] * 4
        if len(payload) != expected:
            raise FormatError(
                f"{origin}: truncated band payload {fname} "
                f"({len(payload)} bytes, expected {expected})"
            )
        if _sha256(payload) != entry["sha256"]:
            raise FormatError(f"{origin}: checksum mismatch for band {name}")
        planes = np.frombuffer(payload, dtype="<f4").reshape(
            entry["channels"], entry["height"], entry["width"]
        )
        values = np.moveaxis(planes, 0, 2).copy()
        mask = None
        if entry.get("mask_file"):
            mname = entry["mask_file"]
            if mname not in files:
                raise FormatError(f"{origin}: missing mask file {mname}")
            mpayload = files[mname]
            if len(mpayload) != entry["width"] * entry["height"]:
                raise FormatError(f"{origin}: truncated mask payload {mname}")
            if _sha256(mpayload) != entry["mask_sha256"]:
                raise FormatError(f"{origin}: checksum mismatch for mask {name}")
            mask = np.frombuffer(mpayload, dtype=np.uint8).reshape(
                entry["height"], entry["width"]
            ).astype(bool)
        rasters[name] = Raster(values, float(entry["gsd"]), mask)
    meta = GeoMeta.from_dict(sidecar["meta"])
    return SceneSample(meta=meta, **rasters)


RASTER_SIDECAR = "raster.json"


def write_raster(r: Raster, path: str | Path) -> None:
    """Single-raster container: sidecar plus one band-sequential f32 binary."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = _band_payload(r)
    (path / "data.f32").write_bytes(payload)
    sidecar = {
        "format": "heatdiff-raster",
        "version": 1,
        "width": r.width,
        "height": r.height,
        "channels": r.channels,
        "gsd": r.gsd,
        "sha256": _sha256(payload),
        "mask": r.valid_mask is not None,
    }
    if r.valid_mask is not None:
        (path / "data.mask").write_bytes(_mask_payload(r.valid_mask))
    (path / RASTER_SIDECAR).write_text(json.dumps(sidecar, indent=1))


def read_raster(path: str | Path) -> Raster:
    path = Path(path)
    sidecar_path = path / RASTER_SIDECAR
    if not sidecar_path.is_file():
        raise FormatError(f"{path}: missing {RASTER_SIDECAR}")
    sidecar = json.loads(sidecar_path.read_text())
    payload = (path / "data.f32").read_bytes()
    expected = sidecar["width"] * sidecar["height"] * sidecar["channels"] * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated raster payload")
    if _sha256(payload) != sidecar["sha256"]:
        raise FormatError(f"{path}: checksum mismatch")
    planes = np.frombuffer(payload, dtype="<f4").reshape(
        sidecar["channels"], sidecar["height"], sidecar["width"]
    )
    mask = None
    if sidecar.get("mask"):
        mask = np.frombuffer((path / "data.mask").read_bytes(), dtype=np.uint8).reshape(
            sidecar["height"], sidecar["width"]
        ).astype(bool)
    return Raster(np.moveaxis(planes, 0, 2).copy(), float(sidecar["gsd"]), mask)


def list_scene_paths(root: str | Path) -> list[Path]:
    """Scene containers directly under ``root``, sorted by name."""
    root = Path(root)
    out = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / SCENE_SIDECAR).is_file():
            out.append(child)
        elif child.is_file() and child.suffix == ".zip":
            out.append(child)
    return out
