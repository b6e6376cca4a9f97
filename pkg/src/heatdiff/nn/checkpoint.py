"""Model checkpoint container: magic + JSON header + little-endian f32 tensor blob."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError
from .autodiff import Tensor
from .unet import Denoiser, UNetConfig

MAGIC = b"HDCKPT01"


def save_checkpoint(
    path: str | Path,
    model: Denoiser,
    step: int = 0,
    seed: int = 0,
    extra: dict | None = None,
) -> None:
    """Serialize the model's named parameters with its config echo."""
    params = model.named_parameters()
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        payload = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(payload)})
        blobs.append(payload)
        offset += len(payload)
    header = {
        "config": model.cfg.to_dict(),
        "step": step,
        "seed": seed,
        "extra": extra or {},
        "tensors": tensors,
    }
    header_bytes = json.dumps(header).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for payload in blobs:
            fh.write(payload)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read (header, name -> array) from a checkpoint file."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    header_end = len(MAGIC) + 4 + header_len
    try:
        header = json.loads(raw[len(MAGIC) + 4 : header_end])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt checkpoint header: {e}") from e
    blob = raw[header_end:]
    params: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(blob):
            raise FormatError(f"{path}: truncated tensor payload for {entry['name']}")
        arr = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(entry["shape"]).copy()
        params[entry["name"]] = arr
    return header, params


def restore_model(header: dict, params: dict[str, np.ndarray],
                  expect: UNetConfig | None = None) -> Denoiser:
    """Rebuild a Denoiser from a loaded checkpoint, verifying the parameter table."""
    cfg = UNetConfig.from_dict(header["config"])
    if expect is not None and expect != cfg:
        raise ConfigError(f"checkpoint config {cfg} does not match expected {expect}")
    model = Denoiser(cfg, seed=int(header.get("seed", 0)))
    own = model.named_parameters()
    missing = sorted(set(own) - set(params))
    extraneous = sorted(set(params) - set(own))
    if missing or extraneous:
        raise FormatError(
            f"checkpoint parameter table mismatch (missing={missing[:3]}, extra={extraneous[:3]})"
        )
    for name, tensor in own.items():
        arr = params[name]
        if tuple(arr.shape) != tensor.data.shape:
            raise FormatError(
                f"parameter {name}: checkpoint shape {arr.shape} != model shape {tensor.data.shape}"
            )
        tensor.data = arr.astype(np.float32)
    return model


def load_model(path: str | Path, expect: UNetConfig | None = None) -> tuple[Denoiser, dict]:
    header, params = load_checkpoint(path)
    return restore_model(header, params, expect), header
