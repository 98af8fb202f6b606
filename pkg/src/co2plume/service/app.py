"""HTTP prediction service: the trained surrogate plus the desk simulator.

The checkpoint is loaded once and never mutated; /predict is pure given the
request body.  /simulate runs on a bounded worker pool since a ground-truth
run takes seconds while a prediction takes milliseconds.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .. import gridio, runet
from ..data.channels import Normalizer, encode_channels
from ..sim.engine import SimConfig, SimulationError, WellSpec, simulate
from .schemas import (
    FieldUploadJSON,
    FieldUploadResponse,
    ModelInfo,
    PredictRequest,
    PredictResponse,
    SimulateRequest,
    SimulateResponse,
)


class ServiceState:
    def __init__(self, checkpoint_path, sim_workers: int = 2):
        raw = open(checkpoint_path, "rb").read()
        self.model_id = hashlib.sha256(raw).hexdigest()[:16]
        loaded = runet.load(checkpoint_path)
        self.model = loaded.model
        self.model.eval()
        self.config = loaded.config
        self.metadata = loaded.metadata or {}
        if loaded.normalizer is None:
            raise ValueError("checkpoint carries no normalizer; cannot serve")
        self.normalizer = Normalizer.from_dict(loaded.normalizer)
        self.nz, self.nr = self.config.grid
        self.dz = float(self.metadata.get("grid", {}).get("dz", 2.0))
        self.dr = float(self.metadata.get("grid", {}).get("dr", 2.0))
        self.dt_days = float(self.metadata.get("grid", {}).get("dt_days", 1.0))
        self.fields: dict[str, np.ndarray] = {}
        self.fields_lock = threading.Lock()
        self.sim_semaphore = asyncio.Semaphore(sim_workers)

    def perforation_cells(self, intervals) -> list[tuple[int, int]]:
        cells = []
        for iv in intervals:
            top = int(np.floor(iv.top_m / self.dz))
            bottom = int(np.ceil(iv.bottom_m / self.dz)) - 1
            if top < 0 or bottom >= self.nz or bottom < top:
                raise ValueError(
                    f"perforation {iv.top_m}-{iv.bottom_m} m outside the "
                    f"{self.nz * self.dz:.0f} m column")
            cells.append((top, bottom))
        cells.sort()
        for (a0, b0), (a1, _) in zip(cells, cells[1:]):
            if a1 <= b0:
                raise ValueError("perforation intervals overlap")
        return cells

    def check_grid(self, perm: np.ndarray):
        if perm.shape != (self.nz, self.nr):
            raise GridMismatch(
                f"grid {perm.shape} does not match served model grid "
                f"({self.nz}, {self.nr})")


class GridMismatch(ValueError):
    pass


def create_app(checkpoint_path, sim_workers: int = 2,
               cors_origins: list[str] | None = None) -> FastAPI:
    state = ServiceState(checkpoint_path, sim_workers=sim_workers)
    app = FastAPI(title="co2plume service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request: Request, exc: RequestValidationError):
        errors = [{"path": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
                  for e in exc.errors()]
        return JSONResponse(status_code=400, content={
            "code": "malformed_request", "message": "request validation failed",
            "errors": errors})

    @app.exception_handler(GridMismatch)
    async def _grid_handler(request: Request, exc: GridMismatch):
        return JSONResponse(status_code=422, content={
            "code": "grid_mismatch", "message": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_handler(request: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={
            "code": "invalid_scenario", "message": str(exc)})

    @app.exception_handler(SimulationError)
    async def _sim_handler(request: Request, exc: SimulationError):
        return JSONResponse(status_code=500, content={
            "code": "simulation_failed", "message": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.get("/model", response_model=ModelInfo)
    def model_info():
        return ModelInfo(config=state.config.to_dict(),
                         param_count=runet.param_count(state.model),
                         metadata=state.metadata, model_id=state.model_id,
                         grid={"nz": state.nz, "nr": state.nr,
                               "dz": state.dz, "dr": state.dr})

    def _scenario_inputs(req):
        with state.fields_lock:
            perm = req.decode_permeability(state.fields)
        state.check_grid(perm)
        cells = state.perforation_cells(req.perforations)
        well = WellSpec(perforations=cells, rate_per_m=req.rate_ton_per_day_per_m,
                        duration_days=req.duration_days)
        return perm, well

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        t0 = time.perf_counter()
        perm, well = _scenario_inputs(req)
        x = encode_channels(perm, well, state.normalizer,
                            include_rate=state.config.in_channels == 3)
        sat = state.model.predict(x[None])[0, 0]
        latency = (time.perf_counter() - t0) * 1000.0
        return PredictResponse(
            saturation=[[float(v) for v in row] for row in sat],
            latency_ms=latency, model_id=state.model_id,
            normalizer_clip_warnings=state.normalizer.perm_clip_count(perm))

    def _run_simulation(perm, well, snapshot_days, progress=None):
        cfg = SimConfig(nr=state.nr, nz=state.nz, dr=state.dr, dz=state.dz,
                        dt_days=state.dt_days,
                        snapshot_days=snapshot_days or [well.duration_days])
        return simulate(perm, well, cfg, progress=progress)

    @app.post("/simulate")
    async def simulate_endpoint(req: SimulateRequest, stream: bool = False):
        perm, well = _scenario_inputs(req)
        if stream:
            queue: asyncio.Queue = asyncio.Queue()
            loop = asyncio.get_running_loop()

            def progress(day, final_day):
                loop.call_soon_threadsafe(
                    queue.put_nowait, {"progress": {"day": day, "of": final_day}})

            async def produce():
                async with state.sim_semaphore:
                    task = loop.run_in_executor(
                        None, lambda: _run_simulation(
                            perm, well, req.snapshot_days, progress))
                    while True:
                        done = task.done()
                        try:
                            while True:
                                yield json.dumps(queue.get_nowait()) + "\n"
                        except asyncio.QueueEmpty:
                            pass
                        if done:
                            break
                        await asyncio.sleep(0.1)
                    try:
                        result = task.result()
                    except SimulationError as exc:
                        yield json.dumps({"error": {
                            "code": "simulation_failed", "message": str(exc)}}) + "\n"
                        return
                    yield json.dumps(_sim_payload(result)) + "\n"

            return StreamingResponse(produce(), media_type="application/x-ndjson")

        t0 = time.perf_counter()
        async with state.sim_semaphore:
            loop = asyncio.get_running_loop()
            result = await loop.run_in_executor(
                None, lambda: _run_simulation(perm, well, req.snapshot_days))
        payload = _sim_payload(result)
        payload["latency_ms"] = (time.perf_counter() - t0) * 1000.0
        return payload

    def _sim_payload(result):
        return {
            "saturation": [[float(v) for v in row] for row in result.final_sg],
            "audit": {k: v for k, v in result.audit.items()},
        }

    @app.post("/fields", response_model=FieldUploadResponse)
    async def upload_field(request: Request):
        ctype = request.headers.get("content-type", "")
        if ctype.startswith("application/json"):
            body = FieldUploadJSON.model_validate(await request.json())
            arr = np.asarray(body.grid, dtype=np.float32)
        else:
            arr = gridio.decode(await request.body()).astype(np.float32)
        if arr.ndim != 2:
            raise ValueError(f"field must be 2-D, got shape {arr.shape}")
        if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("field values must be finite and positive")
        field_id = uuid.uuid4().hex[:12]
        with state.fields_lock:
            state.fields[field_id] = arr
        return FieldUploadResponse(field_id=field_id,
                                   nz=arr.shape[0], nr=arr.shape[1])

    return app
