"""Crash-safe persistence for scenes, scenarios, and simulation results.

Layout under the data directory:

    scenes/{scene_id}/          scene container (grids format)
    scenarios/{scenario_id}.json
    results/{scenario_id}/      layers.json + one .f32 file per layer + stats.json

The in-memory index is rebuilt by scanning on startup.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..grids import Raster, SceneSample, read_scene, scene_from_bytes, write_scene
from .engine import LandEdit, SimResult


def edit_to_dict(e: LandEdit) -> dict:
    return {
        "new_class": e.new_class,
        "rect": list(e.rect) if e.rect is not None else None,
        "polygon": [list(p) for p in e.polygon] if e.polygon is not None else None,
        "texture_seed": e.texture_seed,
    }


def edit_from_dict(d: dict) -> LandEdit:
    return LandEdit(
        new_class=d["new_class"],
        rect=tuple(d["rect"]) if d.get("rect") else None,
        polygon=tuple(tuple(p) for p in d["polygon"]) if d.get("polygon") else None,
        texture_seed=int(d.get("texture_seed", 0)),
    )


class PlannerStore:
    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        (self.root / "scenes").mkdir(parents=True, exist_ok=True)
        (self.root / "scenarios").mkdir(exist_ok=True)
        (self.root / "results").mkdir(exist_ok=True)
        self._lock = threading.Lock()
        self._scene_cache: dict[str, SceneSample] = {}
        self.scenarios: dict[str, dict] = {}
        for f in sorted((self.root / "scenarios").glob("*.json")):
            rec = json.loads(f.read_text())
            self.scenarios[rec["id"]] = rec

    # scenes -------------------------------------------------------------
    def scene_ids(self) -> list[str]:
        return sorted(p.name for p in (self.root / "scenes").iterdir() if p.is_dir())

    def has_scene(self, scene_id: str) -> bool:
        return (self.root / "scenes" / scene_id).is_dir()

    def add_scene(self, scene: SceneSample) -> str:
        from ..grids import scene_to_bytes

        digest = hashlib.sha256(scene_to_bytes(scene)).hexdigest()[:12]
        scene_id = f"scn-{digest}"
        path = self.root / "scenes" / scene_id
        if not path.is_dir():
            write_scene(scene, path)
        self._scene_cache[scene_id] = scene
        return scene_id

    def add_scene_bytes(self, payload: bytes) -> str:
        return self.add_scene(scene_from_bytes(payload))

    def get_scene(self, scene_id: str) -> SceneSample:
        if scene_id not in self._scene_cache:
            path = self.root / "scenes" / scene_id
            if not path.is_dir():
                raise KeyError(scene_id)
            self._scene_cache[scene_id] = read_scene(path)
        return self._scene_cache[scene_id]

    # scenarios ----------------------------------------------------------
    def add_scenario(self, scene_id: str, edits: list[LandEdit]) -> str:
        with self._lock:
            scenario_id = f"scr-{len(self.scenarios):05d}"
            rec = {
                "id": scenario_id,
                "scene_id": scene_id,
                "edits": [edit_to_dict(e) for e in edits],
                "status": "created",
                "error": None,
            }
            self.scenarios[scenario_id] = rec
            self._write_scenario(rec)
            return scenario_id

    def _write_scenario(self, rec: dict) -> None:
        (self.root / "scenarios" / f"{rec['id']}.json").write_text(json.dumps(rec, indent=1))

    def set_scenario_status(self, scenario_id: str, status: str, error: str | None = None) -> None:
        with self._lock:
            rec = self.scenarios[scenario_id]
            rec["status"] = status
            rec["error"] = error
            self._write_scenario(rec)

    def scenario_edits(self, scenario_id: str) -> list[LandEdit]:
        return [edit_from_dict(d) for d in self.scenarios[scenario_id]["edits"]]

    # results ------------------------------------------------------------
    def save_result(self, scenario_id: str, result: SimResult) -> None:
        out = self.root / "results" / scenario_id
        out.mkdir(parents=True, exist_ok=True)
        index = {}
        for name, raster in result.layers.items():
            planes = np.ascontiguousarray(np.moveaxis(raster.values, 2, 0), dtype="<f4")
            (out / f"{name}.f32").write_bytes(planes.tobytes())
            index[name] = {
                "width": raster.width,
                "height": raster.height,
                "channels": raster.channels,
                "gsd": raster.gsd,
                "file": f"{name}.f32",
            }
        (out / "layers.json").write_text(json.dumps(index, indent=1))
        (out / "stats.json").write_text(json.dumps(result.stats, indent=1))

    def result_layer_index(self, scenario_id: str) -> dict:
        path = self.root / "results" / scenario_id / "layers.json"
        if not path.is_file():
            raise KeyError(scenario_id)
        return json.loads(path.read_text())

    def result_layer(self, scenario_id: str, name: str) -> Raster:
        index = self.result_layer_index(scenario_id)
        if name not in index:
            raise KeyError(name)
        entry = index[name]
        payload = (self.root / "results" / scenario_id / entry["file"]).read_bytes()
        expected = entry["width"] * entry["height"] * entry["channels"] * 4
        if len(payload) != expected:
            raise FormatError(f"result layer {name}: truncated payload")
        planes = np.frombuffer(payload, dtype="<f4").reshape(
            entry["channels"], entry["height"], entry["width"]
        )
        return Raster(np.moveaxis(planes, 0, 2).copy(), float(entry["gsd"]))

    def result_stats(self, scenario_id: str) -> dict:
        path = self.root / "results" / scenario_id / "stats.json"
        if not path.is_file():
            raise KeyError(scenario_id)
        return json.loads(path.read_text())
