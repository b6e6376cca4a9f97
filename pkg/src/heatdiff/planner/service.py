"""HTTP facade for the what-if engine: scenes, scenarios, jobs, result layers."""

from __future__ import annotations

import io
import queue
import threading
import time
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, Field

from ..errors import EditError, FormatError, HeatdiffError
from ..grids import GeoMeta, Raster, SceneSample
from ..nn import load_model
from .engine import LandEdit, ModelBundle, simulate_scene
from .store import PlannerStore, edit_from_dict

TEMPERATURE_STOPS = ((0.0, (15, 50, 170)), (0.35, (80, 180, 220)), (0.65, (245, 215, 95)), (1.0, (195, 35, 35)))
DIVERGING_STOPS = ((0.0, (35, 70, 200)), (0.5, (245, 245, 245)), (1.0, (200, 45, 35)))


class MetaIn(BaseModel):
    latitude: float = 48.0
    longitude: float = 16.0
    cloud_cover: float = 0.0
    year: int = 2016
    month: int = 7
    day: int = 15
    gsd: float = 30.0


class SceneGenIn(BaseModel):
    seed: int
    sat_size: int = 160
    meta: Optional[MetaIn] = None


class EditIn(BaseModel):
    new_class: Literal["water", "green", "building"]
    rect: Optional[tuple[int, int, int, int]] = None
    polygon: Optional[list[tuple[float, float]]] = None
    texture_seed: int = 0

    def to_edit(self) -> LandEdit:
        return LandEdit(
            new_class=self.new_class,
            rect=self.rect,
            polygon=tuple(tuple(p) for p in self.polygon) if self.polygon else None,
            texture_seed=self.texture_seed,
        )


class ScenarioIn(BaseModel):
    edits: list[EditIn] = Field(default_factory=list)


class SceneOut(BaseModel):
    scene_id: str


class ScenarioOut(BaseModel):
    scenario_id: str


class JobOut(BaseModel):
    job_id: str


def colormap(values: np.ndarray, stops) -> np.ndarray:
    """Map [0, 1] values through piecewise-linear RGB stops."""
    pos = np.array([p for p, _ in stops])
    cols = np.array([c for _, c in stops], dtype=np.float64)
    out = np.empty(values.shape + (3,), dtype=np.uint8)
    v = np.clip(values, 0.0, 1.0)
    for ch in range(3):
        out[..., ch] = np.clip(np.interp(v, pos, cols[:, ch]), 0, 255).astype(np.uint8)
    return out


def render_png(raster: Raster, palette: str) -> bytes:
    from PIL import Image

    vals = raster.values
    if palette == "rgb" or (raster.channels == 3 and palette == "auto"):
        img = np.clip(vals * 255.0, 0, 255).astype(np.uint8)
    else:
        v = vals[:, :, 0].astype(np.float64)
        if palette == "diverging":
            span = max(float(np.abs(v).max()), 1e-9)
            scaled = (v + span) / (2.0 * span)
            img = colormap(scaled, DIVERGING_STOPS)
        else:
            lo, hi = float(v.min()), float(v.max())
            scaled = (v - lo) / max(hi - lo, 1e-9)
            img = colormap(scaled, TEMPERATURE_STOPS)
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def raster_response(raster: Raster, fmt: str, palette: str) -> Response:
    if fmt == "png":
        return Response(
            content=render_png(raster, palette),
            media_type="image/png",
            headers={"X-Value-Min": str(float(raster.values.min())),
                     "X-Value-Max": str(float(raster.values.max()))},
        )
    planes = np.ascontiguousarray(np.moveaxis(raster.values, 2, 0), dtype="<f4")
    return Response(
        content=planes.tobytes(),
        media_type="application/octet-stream",
        headers={
            "X-Width": str(raster.width),
            "X-Height": str(raster.height),
            "X-Channels": str(raster.channels),
            "X-Gsd": str(raster.gsd),
        },
    )


class PlannerService:
    """Owns the store, the loaded models, and the single-worker job queue."""

    def __init__(self, data_dir, rgb2lst: ModelBundle | None, difftemp: ModelBundle | None,
                 sampler_steps: int = 50, queue_limit: int = 16):
        self.store = PlannerStore(data_dir)
        self.rgb2lst = rgb2lst
        self.difftemp = difftemp
        self.sampler_steps = sampler_steps
        self.jobs: dict[str, dict] = {}
        self.queue: queue.Queue = queue.Queue(maxsize=queue_limit)
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run_jobs, daemon=True)
        self._worker.start()

    def _run_jobs(self) -> None:
        while True:
            job_id = self.queue.get()
            job = self.jobs[job_id]
            scenario_id = job["scenario_id"]
            job["status"] = "running"
            job["started_at"] = time.time()
            self.store.set_scenario_status(scenario_id, "running")
            try:
                rec = self.store.scenarios[scenario_id]
                scene = self.store.get_scene(rec["scene_id"])
                edits = self.store.scenario_edits(scenario_id)
                result = simulate_scene(scene, edits, self.rgb2lst, self.difftemp,
                                        steps=self.sampler_steps)
                self.store.save_result(scenario_id, result)
                self.store.set_scenario_status(scenario_id, "done")
                job["status"] = "done"
            except Exception as e:  # job failures are reported, not raised
                self.store.set_scenario_status(scenario_id, "failed", error=str(e))
                job["status"] = "failed"
                job["error"] = str(e)
            finally:
                job["finished_at"] = time.time()
                self.queue.task_done()

    def submit(self, scenario_id: str) -> str:
        with self._lock:
            rec = self.store.scenarios.get(scenario_id)
            if rec is None:
                raise KeyError(scenario_id)
            if rec["status"] != "created":
                raise RuntimeError(f"scenario {scenario_id} is {rec['status']}")
            if self.rgb2lst is None or self.difftemp is None:
                raise RuntimeError("service started without model checkpoints")
            job_id = f"job-{len(self.jobs):05d}"
            job = {
                "id": job_id,
                "scenario_id": scenario_id,
                "status": "queued",
                "queued_at": time.time(),
                "started_at": None,
                "finished_at": None,
                "error": None,
            }
            try:
                self.jobs[job_id] = job
                self.queue.put_nowait(job_id)
            except queue.Full:
                del self.jobs[job_id]
                raise
            self.store.set_scenario_status(scenario_id, "queued")
            return job_id


def create_app(
    data_dir,
    rgb2lst: ModelBundle | str | None = None,
    difftemp: ModelBundle | str | None = None,
    sampler_steps: int = 50,
    queue_limit: int = 16,
) -> FastAPI:
    """Build the service app; model arguments accept checkpoint paths or bundles."""

    def as_bundle(arg):
        if arg is None or isinstance(arg, ModelBundle):
            return arg
        model, header = load_model(arg)
        return ModelBundle.from_header(model, header)

    svc = PlannerService(data_dir, as_bundle(rgb2lst), as_bundle(difftemp),
                         sampler_steps, queue_limit)
    app = FastAPI(title="heatdiff planner")
    app.state.service = svc

    def get_scene_or_404(scene_id: str) -> SceneSample:
        try:
            return svc.store.get_scene(scene_id)
        except (KeyError, FormatError):
            raise HTTPException(404, f"unknown scene {scene_id}")

    @app.get("/scenes")
    def list_scenes():
        return {"scenes": svc.store.scene_ids()}

    @app.post("/scenes", response_model=SceneOut)
    async def create_scene(request: Request):
        ctype = request.headers.get("content-type", "")
        if ctype.startswith("application/json"):
            body = SceneGenIn.model_validate_json(await request.body())
            from ..synthscene import gen_scene

            meta_in = body.meta or MetaIn()
            meta = GeoMeta(**meta_in.model_dump())
            try:
                scene = gen_scene(body.seed, body.sat_size, meta)
            except HeatdiffError as e:
                raise HTTPException(422, str(e))
            return SceneOut(scene_id=svc.store.add_scene(scene))
        payload = await request.body()
        try:
            return SceneOut(scene_id=svc.store.add_scene_bytes(payload))
        except FormatError as e:
            raise HTTPException(422, f"invalid scene container: {e}")

    @app.get("/scenes/{scene_id}")
    def scene_info(scene_id: str):
        scene = get_scene_or_404(scene_id)
        layers = [
            {"name": name, "width": r.width, "height": r.height,
             "channels": r.channels, "gsd": r.gsd}
            for name, r in scene.bands().items()
        ]
        return {"id": scene_id, "meta": scene.meta.to_dict(), "layers": layers}

    @app.get("/scenes/{scene_id}/layers/{name}")
    def scene_layer(scene_id: str, name: str, format: str = "f32", palette: str = "auto"):
        scene = get_scene_or_404(scene_id)
        bands = scene.bands()
        if name not in bands:
            raise HTTPException(404, f"unknown layer {name}")
        return raster_response(bands[name], format, palette)

    @app.post("/scenes/{scene_id}/scenarios", response_model=ScenarioOut)
    def create_scenario(scene_id: str, body: ScenarioIn):
        scene = get_scene_or_404(scene_id)
        edits = [e.to_edit() for e in body.edits]
        for i, e in enumerate(edits):
            try:
                e.validate(scene.rgb.width, scene.rgb.height)
                e.mask(scene.rgb.width, scene.rgb.height)
            except EditError as err:
                raise HTTPException(422, f"edit {i}: {err}")
        return ScenarioOut(scenario_id=svc.store.add_scenario(scene_id, edits))

    @app.get("/scenarios/{scenario_id}")
    def scenario_info(scenario_id: str):
        rec = svc.store.scenarios.get(scenario_id)
        if rec is None:
            raise HTTPException(404, f"unknown scenario {scenario_id}")
        return rec

    @app.post("/scenarios/{scenario_id}/simulate", response_model=JobOut)
    def simulate(scenario_id: str):
        try:
            return JobOut(job_id=svc.submit(scenario_id))
        except KeyError:
            raise HTTPException(404, f"unknown scenario {scenario_id}")
        except queue.Full:
            raise HTTPException(503, "job queue full")
        except RuntimeError as e:
            if "without model checkpoints" in str(e):
                raise HTTPException(503, str(e))
            raise HTTPException(409, str(e))

    @app.get("/jobs/{job_id}")
    def job_info(job_id: str):
        job = svc.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        out = dict(job)
        if job["status"] == "done":
            out["results_url"] = f"/scenarios/{job['scenario_id']}/results"
        return out

    @app.get("/scenarios/{scenario_id}/results/{layer}")
    def scenario_result(scenario_id: str, layer: str, format: str = "f32", palette: str = "auto"):
        if scenario_id not in svc.store.scenarios:
            raise HTTPException(404, f"unknown scenario {scenario_id}")
        if layer == "stats":
            try:
                return svc.store.result_stats(scenario_id)
            except KeyError:
                raise HTTPException(404, "results not available")
        try:
            raster = svc.store.result_layer(scenario_id, layer)
        except KeyError:
            raise HTTPException(404, f"no result layer {layer}")
        if layer == "delta_ta" and palette == "auto":
            palette = "diverging"
        return raster_response(raster, format, palette)

    return app
